# -*- coding: utf-8 -*-
"""
Command line interface:

    motiontools train CONFIG [--resume CKPT]
    motiontools infer CHECKPOINT FRAMES_GLOB OUT_DIR [--flo] [--png] [--repeats N]
    motiontools eval [CHECKPOINT] [--config CONFIG] [--data DIR] [--oracle | --zero] [--json]
    motiontools ablate CONFIG [--subset ROW,ROW] [--steps N]
    motiontools viz FLO [FLO ...] --out-dir DIR [--max-mag M]

Exit status: 0 on success, 2 for configuration and input errors, 3 if training diverged.
Set MOTIONTOOLS_DEBUG=1 to drop into an IPython shell on uncaught exceptions.
"""

import os
import sys
import glob
import json
import time
import warnings
import argparse
from dataclasses import replace

import numpy as np

from .core import no_grad
from .motionnet import MotionNet, frames_to_input, infer_flow
from .optim import Adam
from .config import RunConfig
from .checkpoint_tools import checkpoint_load, save_training_state, load_training_state
from .synthdata import make_dataset, load_exported_sample
from .flowtools import write_flo, read_flo, evaluate_dataset, oracle_predictor, zero_predictor
from .stacking import FineTuneMode, build_head, train_stacked
from .training import MetricsLog, train_motionnet, run_ablation, format_ablation_table
from .visualisation import load_image, write_flow_png
from .auxiliary import ConfigurationError, InputError, FlowFileError, CheckpointError, DivergenceError
from .release import __version__

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGED = 3

DEBUG_ENV = "MOTIONTOOLS_DEBUG"


def _checkpoint_name(step):
    return "checkpoint_{:06d}.mtck".format(step)


def _model_from_checkpoint(path):
    """
    :return:    (RunConfig, MotionNet, TemporalHead or None, loaded Container)
    """
    ckpt = checkpoint_load(path)
    if "config" not in ckpt.metadata:
        raise CheckpointError("checkpoint {} carries no run configuration".format(path))
    cfg = RunConfig.from_dict(ckpt.metadata["config"])
    model = MotionNet(cfg.motionnet, seed=cfg.train.seed)
    head = None
    if any(name.startswith("head/") for name in ckpt.tensors):
        head = build_head(model, cfg.stacked)
    load_training_state(path, model=model, head=head)
    return cfg, model, head, ckpt


# ----------------------------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------------------------

def cmd_train(args):
    cfg = RunConfig.from_file(args.config)
    tcfg = cfg.train
    out_dir = tcfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    cfg.dump(os.path.join(out_dir, "resolved.cfg"))

    model = MotionNet(cfg.motionnet, seed=tcfg.seed)
    if tcfg.init_from and not args.resume:
        load_training_state(tcfg.init_from, model=model)

    head = None
    if tcfg.task == "stacked":
        head = build_head(model, cfg.stacked, seed=tcfg.seed + 1)
        mode = cfg.stacked.fine_tune_mode
        named = [("head/" + name, p) for name, p in head.named_parameters()]
        if mode is not FineTuneMode.FIXED_MOTIONNET:
            named = [("motionnet/" + name, p) for name, p in model.named_parameters()] + named
    else:
        named = model.named_parameters()
    optimizer = Adam(named, lr=tcfg.learning_rate)

    log_path = os.path.join(out_dir, "metrics.log")
    start_step = 0
    if args.resume:
        ckpt = load_training_state(args.resume, model=model, optimizer=optimizer, head=head)
        start_step = int(ckpt.metadata["step"])
        print("resumed from {} at step {}".format(args.resume, start_step))
    elif os.path.exists(log_path):
        # a fresh run starts a fresh log
        os.remove(log_path)
    log = MetricsLog(log_path)

    metadata = dict(config=cfg.as_dict(), version=__version__, task=tcfg.task)
    saved = []

    def save(step):
        path = os.path.join(out_dir, _checkpoint_name(step))
        save_training_state(path, model, optimizer, head=head, step=step, metadata=metadata)
        saved.append(path)

    def on_step(step, _optimizer):
        if step % tcfg.checkpoint_every == 0:
            save(step)

    dataset = make_dataset(cfg.data, frames=cfg.motionnet.input_frames, split="train")
    if tcfg.task == "stacked":
        result = train_stacked(model, head, dataset, cfg.stacked.fine_tune_mode, cfg.stacked, cfg.loss, tcfg,
                               optimizer=optimizer, start_step=start_step, log=log, on_step=on_step)
    else:
        result = train_motionnet(model, dataset, cfg.loss, tcfg, optimizer=optimizer, start_step=start_step,
                                 log=log, on_step=on_step)

    if not saved or not saved[-1].endswith(_checkpoint_name(result.step)):
        save(result.step)

    if result.history:
        print("step {}: loss {:.6f}".format(result.step, result.history[-1]["total"]))
    print("checkpoint: {}".format(saved[-1]))
    return EXIT_OK


def _load_frames(pattern):
    files = sorted(glob.glob(pattern))
    if not files:
        raise InputError("no frames match {!r}".format(pattern))
    frames = [load_image(path) for path in files]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise InputError("all frames must have the same size, got {}".format(sorted(shapes)))
    return np.stack(frames)


def cmd_infer(args):
    cfg, model, _, _ = _model_from_checkpoint(args.checkpoint)
    n_frames = cfg.motionnet.input_frames
    frames = _load_frames(args.frames)
    if len(frames) < n_frames:
        raise InputError("the network expects {} frames, found {}".format(n_frames, len(frames)))
    cfg.motionnet.check_extent(*frames.shape[2:])

    # consecutive windows share their boundary frame
    starts = list(range(0, len(frames) - n_frames + 1, n_frames - 1))
    covered = starts[-1] + n_frames
    if covered < len(frames):
        warnings.warn("the last {} frame(s) do not fill a window and are skipped".format(len(frames) - covered))

    write_flo_files = args.flo or not args.png
    os.makedirs(args.out_dir, exist_ok=True)
    pair = 0
    for start in starts:
        with no_grad():
            flow = infer_flow(model, frames_to_input(frames[start:start + n_frames])).data
        for field in flow.reshape(-1, 2, *flow.shape[2:]):
            base = os.path.join(args.out_dir, "flow_{:04d}".format(pair))
            if write_flo_files:
                write_flo(base + ".flo", field)
            if args.png:
                write_flow_png(base + ".png", field)
            pair += 1

    window = frames_to_input(frames[:n_frames])
    t0 = time.time()
    for _ in range(args.repeats):
        with no_grad():
            infer_flow(model, window)
    elapsed = max(time.time() - t0, 1e-12)
    print("wrote {} flow field(s) to {}".format(pair, args.out_dir))
    print("throughput: {:.2f} pairs/sec ({} repeats)".format(args.repeats * (n_frames - 1) / elapsed, args.repeats))
    return EXIT_OK


def _exported_dataset(directory):
    if os.path.exists(os.path.join(directory, "sample.json")) or glob.glob(os.path.join(directory, "frame_*.png")):
        return [load_exported_sample(directory)]
    subdirs = sorted(os.path.join(directory, d) for d in os.listdir(directory)
                     if os.path.isdir(os.path.join(directory, d)))
    if not subdirs:
        raise InputError("no exported samples found in {}".format(directory))
    return [load_exported_sample(d) for d in subdirs]


def cmd_eval(args):
    head = None
    cfg = None
    if args.oracle:
        predictor = oracle_predictor
    elif args.zero:
        predictor = zero_predictor
    elif args.checkpoint:
        cfg, predictor, head, _ = _model_from_checkpoint(args.checkpoint)
    else:
        raise ConfigurationError("eval needs a checkpoint or one of --oracle, --zero")

    if args.config:
        cfg = RunConfig.from_file(args.config)
    elif cfg is None:
        cfg = RunConfig()

    if args.data:
        dataset = _exported_dataset(args.data)
        if any(sample.label is None for sample in dataset):
            head = None
    else:
        frames = cfg.motionnet.input_frames if cfg.data.kind == "clips" else 2
        dataset = make_dataset(cfg.data, frames=frames, split="eval")
        if cfg.data.kind != "clips":
            head = None

    report = evaluate_dataset(predictor, dataset, head=head, workers=args.workers)
    if args.json:
        print(json.dumps(report.as_dict(), sort_keys=True))
    else:
        print(report.format_table())
        for key, value in report.as_dict().items():
            print("{}={}".format(key, value))
    return EXIT_OK


def cmd_ablate(args):
    cfg = RunConfig.from_file(args.config)
    tcfg = cfg.train
    if args.steps is not None:
        tcfg = replace(tcfg, steps=args.steps).validate()
    subset = [name for name in args.subset.split(",") if name.strip()] if args.subset else None

    os.makedirs(tcfg.output_dir, exist_ok=True)
    log_path = os.path.join(tcfg.output_dir, "ablation.log")
    if os.path.exists(log_path):
        os.remove(log_path)

    train_set = make_dataset(cfg.data, frames=cfg.motionnet.input_frames, split="train")
    eval_set = make_dataset(cfg.data, frames=cfg.motionnet.input_frames, split="eval")
    rows = run_ablation(cfg.motionnet, cfg.loss, tcfg, train_set, eval_set, subset=subset, log=MetricsLog(log_path))
    print(format_ablation_table(rows))
    return EXIT_OK


def cmd_viz(args):
    os.makedirs(args.out_dir, exist_ok=True)
    for path in args.flo:
        flow = read_flo(path)
        name = os.path.splitext(os.path.basename(path))[0] + ".png"
        write_flow_png(os.path.join(args.out_dir, name), flow, max_mag=args.max_mag)
        print(os.path.join(args.out_dir, name))
    return EXIT_OK


# ----------------------------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------------------------

def make_parser():
    parser = argparse.ArgumentParser(prog="motiontools", description="unsupervised optical flow with MotionNet")
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    sub = parser.add_subparsers(dest="command")
    sub.required = True

    p = sub.add_parser("train", help="train MotionNet (or the stacked classifier)")
    p.add_argument("config")
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="estimate flow for a sequence of frames")
    p.add_argument("checkpoint")
    p.add_argument("frames", help="glob pattern of the frame images (sorted by name)")
    p.add_argument("out_dir")
    p.add_argument("--flo", action="store_true", help="write Middlebury .flo files (default)")
    p.add_argument("--png", action="store_true", help="write color coded .png files")
    p.add_argument("--repeats", type=int, default=10, help="repetitions of the throughput measurement")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="EPE / Fl (and accuracy) on a dataset")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--config", help="config file describing the evaluation data")
    p.add_argument("--data", help="directory of exported samples")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--oracle", action="store_true", help="predict the ground truth")
    group.add_argument("--zero", action="store_true", help="predict zero flow")
    p.add_argument("--json", action="store_true", help="print a single JSON object")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate the ablation rows")
    p.add_argument("config")
    p.add_argument("--subset", help="comma separated row names, e.g. full,no-ssim")
    p.add_argument("--steps", type=int, default=None, help="override [train] steps")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("viz", help="render .flo files as color coded images")
    p.add_argument("flo", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-mag", type=float, default=None)
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None):
    if os.environ.get(DEBUG_ENV):
        # noinspection PyUnresolvedReferences
        from ipydex import activate_ips_on_exception
        activate_ips_on_exception()

    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as err:
        print("error: {}".format(err), file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, InputError, FlowFileError, CheckpointError) as err:
        key = getattr(err, "key", None)
        if key and key not in str(err):
            print("error: {}: {}".format(key, err), file=sys.stderr)
        else:
            print("error: {}".format(err), file=sys.stderr)
        return EXIT_INPUT
