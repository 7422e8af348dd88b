# -*- coding: utf-8 -*-
"""
Training loops and the ablation of the architectural good practices.
"""

import json
import time
import itertools
from collections import OrderedDict
from dataclasses import replace

import numpy as np

from .core import no_grad
from .losses import clip_loss
from .motionnet import MotionNet, frames_to_input, infer_flow
from .optim import Adam
from .flowtools import evaluate_dataset
from .auxiliary import Container, ConfigurationError, InputError, NonFiniteError, DivergenceError


# ----------------------------------------------------------------------------------------------
# batches and metric logs
# ----------------------------------------------------------------------------------------------

def batch_indices(n_samples, batch_size, seed, step):
    """
    Sample indices of the batch for `step`. Pure function of its arguments: resuming at any step
    reproduces the batch order of an uninterrupted run.
    """
    if n_samples < 1:
        raise InputError("cannot draw batches from an empty dataset")
    rng = np.random.default_rng([int(seed), int(step)])
    return np.sort(rng.choice(n_samples, size=min(batch_size, n_samples), replace=False))


def batch_frames(dataset, indices):
    """
    :return:    Tensor [B, 3F, H, W]
    """
    return frames_to_input(np.stack([dataset[i].frames for i in indices]))


class MetricsLog(object):
    """
    Append-only log with one JSON object per line.
    """

    def __init__(self, path):
        self.path = path

    def write(self, entry):
        with open(self.path, "a") as lfile:
            lfile.write(json.dumps(entry, sort_keys=True) + "\n")


def read_metrics(path):
    with open(path) as lfile:
        return [json.loads(line) for line in lfile if line.strip()]


def _check_loss(value, step):
    if not np.isfinite(value):
        raise DivergenceError(step, value)


# ----------------------------------------------------------------------------------------------
# unsupervised training
# ----------------------------------------------------------------------------------------------

def train_motionnet(model, dataset, loss_cfg, train_cfg, optimizer=None, start_step=0, log=None, on_step=None):
    """
    Unsupervised training of `model` with the multi-scale clip loss and Adam.

    :param model:       MotionNet
    :param dataset:     sequence of ClipSample (frame count = model.cfg.input_frames)
    :param loss_cfg:    LossConfig
    :param train_cfg:   TrainConfig (steps, learning_rate, batch_size, seed)
    :param optimizer:   optional Adam instance (resume)
    :param start_step:  number of already performed steps (resume)
    :param log:         optional MetricsLog
    :param on_step:     optional callable(step, optimizer) called after every step
    :return:            Container(model, optimizer, step, history)
    """
    if optimizer is None:
        optimizer = Adam(model.named_parameters(), lr=train_cfg.learning_rate)
    history = []

    step = start_step
    for step in range(start_step + 1, train_cfg.steps + 1):
        t0 = time.time()
        frames = batch_frames(dataset, batch_indices(len(dataset), train_cfg.batch_size, train_cfg.seed, step))

        record = OrderedDict()
        try:
            loss = clip_loss(model.forward(frames), frames, loss_cfg, record=record)
        except NonFiniteError as err:
            if isinstance(err, DivergenceError):
                raise
            raise DivergenceError(step, detail=str(err))
        value = float(loss.data)
        _check_loss(value, step)

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        entry = OrderedDict(step=step, total=value)
        entry.update(record)
        entry["wall_time"] = time.time() - t0
        history.append(entry)
        if log is not None:
            log.write(entry)
        if on_step is not None:
            on_step(step, optimizer)

    return Container(model=model, optimizer=optimizer, step=step, history=history)


# ----------------------------------------------------------------------------------------------
# ablation of the good practices
# ----------------------------------------------------------------------------------------------

TOGGLES = ("small_disp", "ssim", "cdc", "smoothness", "multiscale")


def row_name(flags):
    """
    Name of an ablation row: "full", "none", "no-<toggle>" or the enabled toggles joined by "+".
    """
    enabled = [t for t in TOGGLES if flags[t]]
    if len(enabled) == len(TOGGLES):
        return "full"
    if not enabled:
        return "none"
    if len(enabled) == len(TOGGLES) - 1:
        missing, = [t for t in TOGGLES if not flags[t]]
        return "no-" + missing
    return "+".join(enabled)


def parse_row_name(name):
    name = name.strip()
    if name == "full":
        return OrderedDict((t, True) for t in TOGGLES)
    if name == "none":
        return OrderedDict((t, False) for t in TOGGLES)
    if name.startswith("no-"):
        missing = name[3:]
        if missing not in TOGGLES:
            raise ConfigurationError("unknown ablation toggle {!r} (choose from {})".format(missing, ", ".join(TOGGLES)))
        return OrderedDict((t, t != missing) for t in TOGGLES)
    enabled = name.split("+")
    for t in enabled:
        if t not in TOGGLES:
            raise ConfigurationError("unknown ablation toggle {!r} (choose from {})".format(t, ", ".join(TOGGLES)))
    return OrderedDict((t, t in enabled) for t in TOGGLES)


def ablation_grid(subset=None):
    """
    :param subset:  optional sequence of row names; default: all 2**5 toggle combinations
    :return:        list of (name, flags) pairs
    """
    if subset:
        rows = [parse_row_name(name) for name in subset]
    else:
        rows = [OrderedDict(zip(TOGGLES, values)) for values in itertools.product((True, False), repeat=len(TOGGLES))]
    return [(row_name(flags), flags) for flags in rows]


def apply_toggles(net_cfg, loss_cfg, flags):
    net_cfg = replace(net_cfg, use_small_disp=flags["small_disp"], use_cdc=flags["cdc"],
                      use_multiscale=flags["multiscale"])
    loss_cfg = replace(loss_cfg, lambda2=loss_cfg.lambda2 if flags["smoothness"] else 0.0,
                       lambda3=loss_cfg.lambda3 if flags["ssim"] else 0.0)
    return net_cfg, loss_cfg


def homogeneous_flow_variance(model, dataset):
    """
    Mean variance of the predicted flow inside homogeneous ("flat") foreground objects.
    Returns None if the dataset contains no such sample.
    """
    variances = []
    for sample in dataset:
        if sample.texture != "flat":
            continue
        with no_grad():
            flow = infer_flow(model, frames_to_input(sample.frames)).data
        flow = flow.reshape(-1, 2, *flow.shape[2:])
        for t in range(flow.shape[0]):
            inside = sample.masks[t]
            variances.append(float(np.var(flow[t, 0][inside]) + np.var(flow[t, 1][inside])))
    if not variances:
        return None
    return float(np.mean(variances))


def run_ablation(net_cfg, loss_cfg, train_cfg, train_set, eval_set, subset=None, log=None):
    """
    Train and evaluate one model per ablation row (same seed for all rows).

    :return:    list of OrderedDicts (name, toggles, epe, fl, homogeneous_variance, final_loss)
    """
    rows = []
    for name, flags in ablation_grid(subset):
        row_net_cfg, row_loss_cfg = apply_toggles(net_cfg, loss_cfg, flags)
        model = MotionNet(row_net_cfg, seed=train_cfg.seed)
        result = train_motionnet(model, train_set, row_loss_cfg, train_cfg)
        report = evaluate_dataset(model, eval_set)

        row = OrderedDict(name=name)
        row.update(flags)
        row["epe"] = report.mean_epe
        row["fl"] = report.fl_percent
        row["homogeneous_variance"] = homogeneous_flow_variance(model, eval_set)
        row["final_loss"] = result.history[-1]["total"] if result.history else None
        rows.append(row)
        if log is not None:
            log.write(row)
    return rows


def format_ablation_table(rows):
    header = ["row"] + list(TOGGLES) + ["EPE", "Fl [%]"]
    lines = [header]
    for row in rows:
        marks = ["x" if row[t] else "-" for t in TOGGLES]
        lines.append([row["name"]] + marks + ["{:.4f}".format(row["epe"]), "{:.2f}".format(row["fl"])])
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(line, widths)) for line in lines)
