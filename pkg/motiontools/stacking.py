# -*- coding: utf-8 -*-
"""
Stacking a temporal classifier on top of MotionNet: the flow normalization layer, the classifier
head, the three fine-tuning modes and score fusion.
"""

import time
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import core
from .core import Tensor, as_tensor, custom_op, conv2d, leaky_relu, matmul, no_grad, upsample_flow
from .losses import cross_entropy, clip_loss
from .optim import Adam
from .flowtools import classification_accuracy
from .training import batch_indices, batch_frames, _check_loss
from .auxiliary import Container, ConfigurationError, InputError, NonFiniteError, DivergenceError


class FineTuneMode(Enum):
    FIXED_MOTIONNET = "fixed"
    ACTION_LOSS_ONLY = "action"
    JOINT_LOSS = "joint"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for mode in cls:
            if value in (mode.value, mode.name):
                return mode
        msg = "unknown fine-tune mode {!r} (choose from {})".format(value, ", ".join(m.value for m in cls))
        raise ConfigurationError(msg, key="stacked.mode")


@dataclass
class NormalizationSpec:
    clip: float = 20.0
    out_lo: float = 0.0
    out_hi: float = 255.0

    def validate(self):
        if self.clip <= 0:
            raise ConfigurationError("clip must be positive", key="stacked.clip")
        if self.out_hi <= self.out_lo:
            raise ConfigurationError("out_hi must exceed out_lo")
        return self

    @property
    def gain(self):
        return (self.out_hi - self.out_lo) / (2.0 * self.clip)


@dataclass
class StackedConfig:
    mode: str = "joint"
    clip: float = 20.0
    head_width: int = 16
    num_classes: int = 5
    action_weight: float = 1.0
    unsup_weight: float = 1.0
    fusion_weights: tuple = field(default=(1.0, 1.5))

    def validate(self):
        FineTuneMode.parse(self.mode)
        NormalizationSpec(clip=self.clip).validate()
        if self.head_width < 1:
            raise ConfigurationError("head_width must be positive", key="stacked.head_width")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be at least 2", key="stacked.num_classes")
        if self.action_weight < 0 or self.unsup_weight < 0:
            raise ConfigurationError("loss weights must be nonnegative", key="stacked.action_weight")
        if len(self.fusion_weights) != 2 or min(self.fusion_weights) < 0 or sum(self.fusion_weights) <= 0:
            msg = "fusion_weights must be two nonnegative numbers, not both 0"
            raise ConfigurationError(msg, key="stacked.fusion_weights")
        return self

    @property
    def fine_tune_mode(self):
        return FineTuneMode.parse(self.mode)

    @property
    def normalization(self):
        return NormalizationSpec(clip=self.clip)


def normalize_flow(flow, spec=None, quantize=True):
    """
    Affine map of the clipped flow [-clip, clip] onto [out_lo, out_hi] followed by rounding
    (half away from zero). The result holds integral values stored as floats.

    Backward pass (straight-through estimator): the rounding is treated as identity, the clamp
    passes gradients inside [-clip, clip] and blocks them outside. Inside, the gradient is the
    slope of the affine map, (out_hi - out_lo)/(2*clip): the rounding passes gradient 1 and the
    chain rule through the affine part contributes the slope.

    :param flow:        Tensor of flow values (pixels)
    :param spec:        NormalizationSpec
    :param quantize:    apply the rounding (False yields the differentiable affine part)
    """
    spec = (spec or NormalizationSpec()).validate()
    flow = as_tensor(flow)
    c = spec.clip
    v = flow.data
    y = spec.gain * (np.clip(v, -c, c) + c) + spec.out_lo
    if quantize:
        # y >= 0, so floor(y + 0.5) rounds half away from zero
        y = np.floor(y + 0.5)
    passing = (v >= -c) & (v <= c)

    def rule(g):
        return (g * spec.gain * passing,)

    return custom_op(y, (flow,), rule, "normalize_flow")


def denormalize_flow(q, spec=None):
    """
    Inverse of the affine part of `normalize_flow` (array in, array out).
    """
    spec = spec or NormalizationSpec()
    q = np.asarray(q.data if isinstance(q, Tensor) else q, dtype=np.float64)
    return (q - spec.out_lo) / spec.gain - spec.clip


def stack_flows(flows, expected=None):
    """
    Concatenate flow fields [N, 2, H, W] to [N, 2*len(flows), H, W] in the channel order
    [Vx_1, Vy_1, Vx_2, Vy_2, ...].

    :param expected:    optional required number of fields (F-1)
    """
    flows = [as_tensor(f) for f in flows]
    if not flows:
        raise InputError("stack_flows: no flow fields given")
    if expected is not None and len(flows) != expected:
        msg = "stack_flows: expected {} flow fields, got {}".format(expected, len(flows))
        raise InputError(msg)
    shape = flows[0].shape
    for i, f in enumerate(flows):
        if f.ndim != 4 or f.shape[1] != 2 or f.shape != shape:
            msg = "stack_flows: field {} has shape {} (expected [N,2,H,W] equal to {})".format(i, f.shape, shape)
            raise InputError(msg)
    return core.concat(flows, axis=1)


class TemporalHead(object):
    """
    Small classifier on normalized flow stacks: two strided 3x3 conv blocks, global average
    pooling and a linear layer.
    """

    def __init__(self, in_channels, num_classes, width=16, seed=0, slope=0.1):
        self.in_channels = in_channels
        self.num_classes = num_classes
        self.width = width
        self.slope = slope
        rng = np.random.default_rng(seed)

        def kaiming(shape, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

        self.params = OrderedDict()
        self.params["conv_a.weight"] = Tensor(kaiming((width, in_channels, 3, 3), 9 * in_channels), True)
        self.params["conv_a.bias"] = Tensor(np.zeros(width), True)
        self.params["conv_b.weight"] = Tensor(kaiming((width, width, 3, 3), 9 * width), True)
        self.params["conv_b.bias"] = Tensor(np.zeros(width), True)
        self.params["fc.weight"] = Tensor(rng.normal(0.0, np.sqrt(1.0 / width), size=(width, num_classes)), True)
        self.params["fc.bias"] = Tensor(np.zeros(num_classes), True)

    def forward(self, q):
        """
        :param q:   normalized flow stack [N, in_channels, H, W] with values in [0, 255]
        :return:    class scores [N, num_classes] (before softmax)
        """
        q = as_tensor(q)
        if q.ndim != 4 or q.shape[1] != self.in_channels:
            msg = "TemporalHead expects [N, {}, H, W], got {}".format(self.in_channels, q.shape)
            raise ConfigurationError(msg)
        p = self.params
        x = (q - 127.5) * (1 / 127.5)
        x = leaky_relu(conv2d(x, p["conv_a.weight"], p["conv_a.bias"], stride=2, padding=1), self.slope)
        x = leaky_relu(conv2d(x, p["conv_b.weight"], p["conv_b.bias"], stride=2, padding=1), self.slope)
        x = x.mean(axis=(2, 3))
        return matmul(x, p["fc.weight"]) + p["fc.bias"]

    __call__ = forward

    def named_parameters(self):
        return list(self.params.items())

    def parameters(self):
        return list(self.params.values())

    def state_dict(self):
        return OrderedDict((name, p.data.copy()) for name, p in self.params.items())

    def load_state_dict(self, state):
        for name, p in self.params.items():
            if name not in state:
                raise ConfigurationError("head state lacks {}".format(name))
            if state[name].shape != p.shape:
                msg = "head parameter {}: expected shape {} but got {}".format(name, p.shape, state[name].shape)
                raise ConfigurationError(msg)
            p.data = np.array(state[name], dtype=np.float64)


def build_head(model, stacked_cfg, seed=0):
    return TemporalHead(model.cfg.flow_channels, stacked_cfg.num_classes, stacked_cfg.head_width,
                        seed=seed, slope=model.cfg.activation_slope)


def stack_forward(model, head, frames, mode=FineTuneMode.JOINT_LOSS, spec=None):
    """
    frames -> MotionNet -> full resolution flow -> normalization -> class scores

    :return:    (scores, pyramid). In mode FIXED_MOTIONNET the pyramid is computed without taping,
                so no gradient can reach the MotionNet weights.
    """
    mode = FineTuneMode.parse(mode)
    if mode is FineTuneMode.FIXED_MOTIONNET:
        with no_grad():
            pyramid = model.forward(frames)
        pyramid = [Tensor(level.data) for level in pyramid]
    else:
        pyramid = model.forward(frames)
    flow = upsample_flow(pyramid[0], 4)
    scores = head.forward(normalize_flow(flow, spec))
    return scores, pyramid


def predict_scores(model, head, frames, spec=None):
    with no_grad():
        scores, _ = stack_forward(model, head, frames, FineTuneMode.FIXED_MOTIONNET, spec)
    return scores.data


def fuse_scores(score_a, score_b, weight_a=1.0, weight_b=1.5):
    """
    Weighted mean of two score arrays (before softmax):
    (weight_a*score_a + weight_b*score_b) / (weight_a + weight_b)
    """
    score_a, score_b = as_tensor(score_a), as_tensor(score_b)
    if score_a.shape != score_b.shape:
        msg = "fuse_scores: shapes {} and {} differ".format(score_a.shape, score_b.shape)
        raise InputError(msg)
    if weight_a < 0 or weight_b < 0 or weight_a + weight_b <= 0:
        msg = "fuse_scores: weights must be nonnegative and not both 0, got {} and {}".format(weight_a, weight_b)
        raise InputError(msg)
    total = float(weight_a + weight_b)
    return (score_a * weight_a + score_b * weight_b) / total


# ----------------------------------------------------------------------------------------------
# fine-tuning
# ----------------------------------------------------------------------------------------------

def _grad_norm(params):
    total = sum(float(np.sum(p.grad ** 2)) for p in params if p.grad is not None)
    return float(np.sqrt(total))


def train_stacked(model, head, dataset, mode, stacked_cfg, loss_cfg, train_cfg, optimizer=None, start_step=0,
                  log=None, on_step=None):
    """
    Fine-tune the stack MotionNet -> normalization -> TemporalHead on labeled clips.

    FIXED_MOTIONNET:    only the head is trained (MotionNet evaluated without taping)
    ACTION_LOSS_ONLY:   cross entropy is backpropagated through the normalization into MotionNet
    JOINT_LOSS:         action_weight * cross entropy + unsup_weight * unsupervised clip loss

    Every step logs both loss components ("action", "unsup"; the latter is evaluated without
    taping where it does not contribute) and the gradient norm reaching the MotionNet weights.

    :return:    Container(model, head, optimizer, mode, step, history)
    """
    mode = FineTuneMode.parse(mode)
    spec = stacked_cfg.normalization
    if any(sample.label is None for sample in dataset):
        raise InputError("train_stacked needs labeled samples")

    if optimizer is None:
        named = [("head/" + name, p) for name, p in head.named_parameters()]
        if mode is not FineTuneMode.FIXED_MOTIONNET:
            named = [("motionnet/" + name, p) for name, p in model.named_parameters()] + named
        optimizer = Adam(named, lr=train_cfg.learning_rate)

    history = []
    step = start_step
    for step in range(start_step + 1, train_cfg.steps + 1):
        t0 = time.time()
        indices = batch_indices(len(dataset), train_cfg.batch_size, train_cfg.seed, step)
        frames = batch_frames(dataset, indices)
        labels = np.array([dataset[i].label for i in indices])

        try:
            scores, pyramid = stack_forward(model, head, frames, mode, spec)
            action = cross_entropy(scores, labels)
            if mode is FineTuneMode.JOINT_LOSS:
                unsup = clip_loss(pyramid, frames, loss_cfg)
                loss = stacked_cfg.action_weight * action + stacked_cfg.unsup_weight * unsup
            else:
                with no_grad():
                    unsup = clip_loss([Tensor(level.data) for level in pyramid], frames, loss_cfg)
                loss = action
        except NonFiniteError as err:
            if isinstance(err, DivergenceError):
                raise
            raise DivergenceError(step, detail=str(err))
        value = float(loss.data)
        _check_loss(value, step)

        optimizer.zero_grad()
        model.zero_grad()
        loss.backward()
        motionnet_grad_norm = _grad_norm(model.parameters())
        optimizer.step()

        entry = OrderedDict(step=step, total=value, action=float(action.data), unsup=float(unsup.data))
        entry["motionnet_grad_norm"] = motionnet_grad_norm
        entry["batch_accuracy"] = float(np.mean(np.argmax(scores.data, axis=1) == labels))
        entry["wall_time"] = time.time() - t0
        history.append(entry)
        if log is not None:
            log.write(entry)
        if on_step is not None:
            on_step(step, optimizer)

    return Container(model=model, head=head, optimizer=optimizer, mode=mode, step=step, history=history)


def evaluate_stack(model, head, dataset, spec=None, batch_size=16):
    """
    classification accuracy of the stack on a labeled dataset
    """
    return classification_accuracy(model, head, dataset, spec=spec, batch_size=batch_size)
