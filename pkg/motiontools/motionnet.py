# -*- coding: utf-8 -*-
"""
Encoder-decoder network which predicts a pyramid of optical flow fields from a stack of frames.

Layer naming:
    conv0a, conv0b      full resolution 3x3 layers (only with use_small_disp)
    conv{k}, conv{k}_1  encoder level k (stride 2 and stride 1), features at 1/2**k
    deconv{s}           transposed convolution from 1/2**(s+1) to 1/2**s
    iconv{s}            extra 3x3 layer after deconv{s} (only with use_cdc)
    predict_flow{s}     linear 3x3 flow head at 1/2**s
"""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import core
from .core import Tensor, conv2d, conv2d_transposed, leaky_relu, concat, upsample_flow, upsample_flow2x
from .auxiliary import ConfigurationError


@dataclass
class MotionNetConfig:
    input_frames: int = 11
    base_channels: int = 16
    max_channels: int = 128
    levels: int = 6
    use_small_disp: bool = True
    use_cdc: bool = True
    use_multiscale: bool = True
    activation_slope: float = 0.1

    def validate(self):
        if self.input_frames < 2:
            raise ConfigurationError("input_frames must be at least 2", key="motionnet.input_frames")
        if self.levels < 2:
            raise ConfigurationError("levels must be at least 2", key="motionnet.levels")
        if self.base_channels < 1 or self.max_channels < self.base_channels:
            msg = "need 1 <= base_channels <= max_channels, got {} and {}".format(
                self.base_channels, self.max_channels)
            raise ConfigurationError(msg, key="motionnet.base_channels")
        if not 0 <= self.activation_slope < 1:
            raise ConfigurationError("activation_slope must be in [0, 1)", key="motionnet.activation_slope")
        return self

    @property
    def in_channels(self):
        return 3 * self.input_frames

    @property
    def flow_channels(self):
        return 2 * (self.input_frames - 1)

    @property
    def divisor(self):
        return 2 ** self.levels

    @property
    def flow_scales(self):
        """
        exponents s of the predicted flows (resolution 1/2**s), finest first
        """
        if self.use_multiscale:
            return list(range(2, self.levels + 1))
        return [2]

    def channels(self, k):
        return min(self.base_channels * 2 ** (k - 1), self.max_channels)

    def check_extent(self, height, width):
        if height % self.divisor or width % self.divisor:
            msg = "input extent {}x{} must be divisible by 2**levels = {}".format(height, width, self.divisor)
            raise ConfigurationError(msg, key="motionnet.levels")


class Layer(object):
    """
    Description of one (transposed) convolution of the network.
    """

    def __init__(self, name, in_ch, out_ch, kernel, stride, padding, transposed=False, activation=True):
        self.name = name
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.transposed = transposed
        self.activation = activation

    @property
    def weight_shape(self):
        if self.transposed:
            return (self.in_ch, self.out_ch, self.kernel, self.kernel)
        return (self.out_ch, self.in_ch, self.kernel, self.kernel)

    def __repr__(self):
        kind = "deconv" if self.transposed else "conv"
        return "<Layer {}: {} {}->{} k{} s{}>".format(self.name, kind, self.in_ch, self.out_ch,
                                                     self.kernel, self.stride)


def _conv3(name, in_ch, out_ch, stride=1, activation=True):
    return Layer(name, in_ch, out_ch, 3, stride, 1, activation=activation)


class MotionNet(object):
    """
    The flow network. Weights are kept in `self.params` (ordered: name -> Tensor).
    """

    def __init__(self, cfg, seed=0):
        self.cfg = cfg.validate()
        self.seed = seed
        self.layers = OrderedDict()
        self._build_layers()

        self.params = OrderedDict()
        rng = np.random.default_rng(seed)
        for layer in self.layers.values():
            self._init_layer(layer, rng)

    def _add(self, layer):
        self.layers[layer.name] = layer

    def _build_layers(self):
        cfg = self.cfg
        flow_ch = cfg.flow_channels
        ch = cfg.channels

        # contracting part
        if cfg.use_small_disp:
            self._add(_conv3("conv0a", cfg.in_channels, ch(1)))
            self._add(_conv3("conv0b", ch(1), ch(1)))
            self._add(_conv3("conv1", ch(1), ch(1), stride=2))
        else:
            self._add(Layer("conv1", cfg.in_channels, ch(1), 7, 2, 3))
        self._add(_conv3("conv1_1", ch(1), ch(1)))
        for k in range(2, cfg.levels + 1):
            self._add(_conv3("conv{}".format(k), ch(k - 1), ch(k), stride=2))
            self._add(_conv3("conv{}_1".format(k), ch(k), ch(k)))

        # expanding part
        L = cfg.levels
        if L in cfg.flow_scales:
            self._add(_conv3("predict_flow{}".format(L), ch(L), flow_ch, activation=False))

        current_ch = ch(L)
        for s in range(L - 1, 1, -1):
            deconv_ch = max(ch(s) // 2, 1)
            self._add(Layer("deconv{}".format(s), current_ch, deconv_ch, 4, 2, 1, transposed=True))
            concat_ch = deconv_ch + ch(s)
            if cfg.use_multiscale:
                concat_ch += flow_ch
            if cfg.use_cdc:
                self._add(_conv3("iconv{}".format(s), concat_ch, ch(s)))
                current_ch = ch(s)
            else:
                current_ch = concat_ch
            if s in cfg.flow_scales:
                self._add(_conv3("predict_flow{}".format(s), current_ch, flow_ch, activation=False))

    def _init_layer(self, layer, rng):
        shape = layer.weight_shape
        if layer.name.startswith("predict_flow"):
            # zero flow at start: identity warp
            weight = np.zeros(shape)
        else:
            fan_in = layer.in_ch * layer.kernel ** 2
            if layer.transposed:
                fan_in = fan_in / layer.stride ** 2
            gain = np.sqrt(2.0 / (1 + self.cfg.activation_slope ** 2))
            weight = rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)
        bias_len = layer.out_ch
        self.params[layer.name + ".weight"] = Tensor(weight, requires_grad=True)
        self.params[layer.name + ".bias"] = Tensor(np.zeros(bias_len), requires_grad=True)

    # --- parameter handling

    def named_parameters(self):
        return list(self.params.items())

    def parameters(self):
        return list(self.params.values())

    def parameter_count(self):
        return int(sum(p.size for p in self.params.values()))

    def freeze(self):
        for p in self.params.values():
            p.requires_grad = False

    def unfreeze(self):
        for p in self.params.values():
            p.requires_grad = True

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return OrderedDict((name, p.data.copy()) for name, p in self.params.items())

    def load_state_dict(self, state):
        missing = [name for name in self.params if name not in state]
        if missing:
            msg = "state lacks the parameters {}".format(", ".join(missing))
            raise ConfigurationError(msg)
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                msg = "parameter {}: expected shape {} but got {}".format(name, p.shape, state[name].shape)
                raise ConfigurationError(msg)
            p.data = np.array(state[name], dtype=np.float64)

    # --- evaluation

    def _apply(self, name, x):
        layer = self.layers[name]
        w = self.params[name + ".weight"]
        b = self.params[name + ".bias"]
        if layer.transposed:
            res = conv2d_transposed(x, w, b, stride=layer.stride, padding=layer.padding)
        else:
            res = conv2d(x, w, b, stride=layer.stride, padding=layer.padding)
        if layer.activation:
            res = leaky_relu(res, self.cfg.activation_slope)
        core.assert_finite(res, "layer " + name)
        return res

    def forward(self, frames):
        """
        :param frames:  Tensor [N, 3*F, H, W] (frames concatenated along the channel axis)
        :return:        flow pyramid: list of Tensors [N, 2*(F-1), H/2**s, W/2**s] for the
                        scales s in cfg.flow_scales (finest first)
        """
        cfg = self.cfg
        frames = core.as_tensor(frames)
        if frames.ndim != 4 or frames.shape[1] != cfg.in_channels:
            msg = "MotionNet expects input of shape [N, {}, H, W], got {}".format(cfg.in_channels, frames.shape)
            raise ConfigurationError(msg)
        cfg.check_extent(*frames.shape[2:])

        x = frames
        if cfg.use_small_disp:
            x = self._apply("conv0a", x)
            x = self._apply("conv0b", x)
        features = {}
        for k in range(1, cfg.levels + 1):
            x = self._apply("conv{}".format(k), x)
            x = self._apply("conv{}_1".format(k), x)
            features[k] = x

        L = cfg.levels
        flows = {}
        if L in cfg.flow_scales:
            flows[L] = self._apply("predict_flow{}".format(L), features[L])

        current = features[L]
        for s in range(L - 1, 1, -1):
            parts = [self._apply("deconv{}".format(s), current), features[s]]
            if cfg.use_multiscale:
                parts.append(upsample_flow2x(flows[s + 1]))
            current = concat(parts, axis=1)
            if cfg.use_cdc:
                current = self._apply("iconv{}".format(s), current)
            if s in cfg.flow_scales:
                flows[s] = self._apply("predict_flow{}".format(s), current)

        return [flows[s] for s in cfg.flow_scales]

    __call__ = forward

    def infer_flow(self, frames):
        return infer_flow(self, frames)

    def __repr__(self):
        return "<MotionNet F={} levels={} params={}>".format(self.cfg.input_frames, self.cfg.levels,
                                                            self.parameter_count())


def build(cfg, seed=0):
    return MotionNet(cfg, seed)


def infer_flow(model, frames):
    """
    Finest flow (1/4 resolution) upsampled to input resolution (values x4).

    :return:    Tensor [N, 2*(F-1), H, W]
    """
    pyramid = model.forward(frames)
    return upsample_flow(pyramid[0], 4)


def frames_to_input(frames):
    """
    Convert frames [F, 3, H, W] (one clip) or [N, F, 3, H, W] (batch) to network input [N, 3F, H, W].
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 4:
        frames = frames[None]
    if frames.ndim != 5 or frames.shape[2] != 3:
        msg = "expected frames of shape [F,3,H,W] or [N,F,3,H,W], got {}".format(frames.shape)
        raise ConfigurationError(msg)
    N, F, C, H, W = frames.shape
    return Tensor(frames.reshape(N, F * C, H, W))
