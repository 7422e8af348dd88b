"""
Training objectives: Charbonnier reconstruction loss, smoothness loss, SSIM loss, their per-scale
combination, the multi-scale total, the multi-frame clip loss and the classification loss.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import core
from .core import Tensor, as_tensor, concat, avg_pool2d, avg_downsample2x, log_softmax
from .warp import backward_warp
from .auxiliary import ConfigurationError, InputError


@dataclass
class LossConfig:
    """
    Weights and constants of the unsupervised loss.

    lambda1..lambda3:   per-scale weights of reconstruction, smoothness and SSIM loss
    delta:              per-scale weights from the finest (flow2) to the coarsest scale
    epsilon, alpha:     constants of the generalized Charbonnier penalty (x**2 + epsilon**2)**alpha
    ssim_window:        side length K of the square SSIM patches
    ssim_stride:        stride of the sliding SSIM window
    c1, c2:             SSIM stabilization constants
    """
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.16
    delta: tuple = field(default=(0.32, 0.08, 0.02, 0.01, 0.005))
    epsilon: float = 0.001
    alpha: float = 0.45
    ssim_window: int = 8
    ssim_stride: int = 8
    c1: float = 1e-4
    c2: float = 1e-3

    def validate(self):
        section = "loss"
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigurationError("{} must be nonnegative".format(name), key="{}.{}".format(section, name))
        if max(self.lambda1, self.lambda2, self.lambda3) <= 0:
            raise ConfigurationError("at least one of lambda1..lambda3 must be positive", key=section + ".lambda1")
        if any(d < 0 for d in self.delta) or max(self.delta, default=0) <= 0:
            msg = "delta must be nonnegative with at least one positive entry, got {}".format(self.delta)
            raise ConfigurationError(msg, key=section + ".delta")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive", key=section + ".epsilon")
        if not 0 < self.alpha <= 1:
            raise ConfigurationError("alpha must be in (0, 1]", key=section + ".alpha")
        for name in ("ssim_window", "ssim_stride"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigurationError("{} must be a positive int".format(name), key="{}.{}".format(section, name))
        for name in ("c1", "c2"):
            if getattr(self, name) <= 0:
                raise ConfigurationError("{} must be positive".format(name), key="{}.{}".format(section, name))
        return self

    @property
    def lambdas(self):
        return self.lambda1, self.lambda2, self.lambda3

    def at_extent(self, height, width):
        """
        Return a copy whose SSIM window (and stride) fit into an image of the given extent.
        Coarse scales of small inputs are smaller than the default window.
        """
        window = min(self.ssim_window, height, width)
        if window == self.ssim_window:
            return self
        msg = "SSIM window {} shrunk to {} for a {}x{} scale".format(self.ssim_window, window, height, width)
        warnings.warn(msg)
        return replace(self, ssim_window=window, ssim_stride=min(self.ssim_stride, window))


def charbonnier(x, epsilon=0.001, alpha=0.45):
    """
    generalized Charbonnier penalty (x**2 + epsilon**2)**alpha (elementwise)
    """
    if epsilon <= 0:
        msg = "charbonnier: epsilon must be positive, got {}".format(epsilon)
        raise ConfigurationError(msg)
    x = as_tensor(x)
    return core.power(x * x + epsilon ** 2, alpha)


def _check_same_shape(name, *tensors):
    shapes = [t.shape for t in tensors]
    if any(s != shapes[0] for s in shapes):
        msg = "{}: shapes disagree: {}".format(name, ", ".join(str(s) for s in shapes))
        raise ConfigurationError(msg)


def _reconstruction_term(I1, warped, cfg):
    return charbonnier(I1 - warped, cfg.epsilon, cfg.alpha).mean()


def pixel_loss(I1, I2, flow, cfg):
    """
    Mean Charbonnier penalty of the difference between I1 and I2 warped back by `flow`
    (averaged over pixels, channels and batch).
    """
    I1, I2, flow = as_tensor(I1), as_tensor(I2), as_tensor(flow)
    _check_same_shape("pixel_loss", I1, I2)
    return _reconstruction_term(I1, backward_warp(I2, flow), cfg)


def _forward_differences(flow):
    N, K, H, W = flow.shape
    dx = flow[:, :, :, 1:] - flow[:, :, :, :-1]
    dy = flow[:, :, 1:, :] - flow[:, :, :-1, :]
    dx = concat([dx, Tensor(np.zeros((N, K, H, 1)))], axis=3)
    dy = concat([dy, Tensor(np.zeros((N, K, 1, W)))], axis=2)
    return dx, dy


def smoothness_loss(flow, cfg):
    """
    Charbonnier penalty of the forward differences of both flow components in both directions.
    The differences beyond the last row and column are defined as zero.

    The four terms per pixel are summed (for stacked flows averaged over the flow pairs) and then
    averaged over pixels and batch. Thus a constant field yields 4*epsilon**(2*alpha).
    """
    flow = as_tensor(flow)
    N, K, H, W = flow.shape
    if H < 2 or W < 2:
        msg = "smoothness_loss: flow extent must be at least 2x2, got {}x{}".format(H, W)
        raise ConfigurationError(msg)
    if K % 2:
        msg = "smoothness_loss: flow must have an even number of channels, got {}".format(K)
        raise ConfigurationError(msg)

    dx, dy = _forward_differences(flow)
    penalty = charbonnier(dx, cfg.epsilon, cfg.alpha) + charbonnier(dy, cfg.epsilon, cfg.alpha)
    return penalty.sum(axis=1).mean() * (2.0 / K)


def ssim_map(x, y, window, stride, c1, c2):
    """
    SSIM index of all window x window patches (taken at `stride`) with population moments.

    :param x, y:    Tensors [N, C, H, W]
    :return:        Tensor [N, C, nh, nw]
    """
    x, y = as_tensor(x), as_tensor(y)
    mu_x = avg_pool2d(x, window, stride)
    mu_y = avg_pool2d(y, window, stride)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    sigma_xx = avg_pool2d(x * x, window, stride) - mu_xx
    sigma_yy = avg_pool2d(y * y, window, stride) - mu_yy
    sigma_xy = avg_pool2d(x * y, window, stride) - mu_xy

    numerator = (2 * mu_xy + c1) * (2 * sigma_xy + c2)
    denominator = (mu_xx + mu_yy + c1) * (sigma_xx + sigma_yy + c2)
    return numerator / denominator


def ssim_patch(p1, p2, cfg):
    """
    SSIM index of two equally shaped K x K patches (scalar Tensor).
    """
    p1, p2 = as_tensor(p1), as_tensor(p2)
    _check_same_shape("ssim_patch", p1, p2)
    if p1.ndim != 2 or p1.shape[0] != p1.shape[1]:
        msg = "ssim_patch: expected square 2d patches, got {}".format(p1.shape)
        raise ConfigurationError(msg)
    K = p1.shape[0]
    res = ssim_map(p1.reshape(1, 1, K, K), p2.reshape(1, 1, K, K), K, K, cfg.c1, cfg.c2)
    return res.reshape(())


def ssim_loss(I1, I1_rec, cfg):
    """
    Mean of (1 - SSIM) over all patches of the sliding window, all channels and the batch.
    """
    I1, I1_rec = as_tensor(I1), as_tensor(I1_rec)
    _check_same_shape("ssim_loss", I1, I1_rec)
    H, W = I1.shape[2:]
    if H < cfg.ssim_window or W < cfg.ssim_window:
        msg = "ssim_loss: image extent {}x{} is smaller than the SSIM window {}".format(H, W, cfg.ssim_window)
        raise ConfigurationError(msg, key="loss.ssim_window")
    ssim = ssim_map(I1, I1_rec, cfg.ssim_window, cfg.ssim_stride, cfg.c1, cfg.c2)
    return (1 - ssim).mean()


def _add_record(record, name, value):
    if record is not None:
        record[name] = record.get(name, 0.0) + float(value)


def scale_loss(I1, I2, flow, cfg, record=None):
    """
    lambda1*pixel_loss + lambda2*smoothness_loss + lambda3*ssim_loss at one scale. Terms with
    zero weight are not evaluated; all weights zero yields 0.

    :param record:  optional dict which receives the weighted components ("pixel", "smooth", "ssim")
    """
    I1, I2, flow = as_tensor(I1), as_tensor(I2), as_tensor(flow)
    _check_same_shape("scale_loss", I1, I2)
    lam1, lam2, lam3 = cfg.lambdas

    terms = []
    warped = backward_warp(I2, flow) if (lam1 > 0 or lam3 > 0) else None
    if lam1 > 0:
        term = lam1 * _reconstruction_term(I1, warped, cfg)
        _add_record(record, "pixel", term.data)
        terms.append(term)
    if lam2 > 0:
        term = lam2 * smoothness_loss(flow, cfg)
        _add_record(record, "smooth", term.data)
        terms.append(term)
    if lam3 > 0:
        term = lam3 * ssim_loss(I1, warped, cfg)
        _add_record(record, "ssim", term.data)
        terms.append(term)

    if not terms:
        return Tensor(0.0)
    res = terms[0]
    for term in terms[1:]:
        res = res + term
    return res


def image_pyramid(images, levels):
    """
    Downsampled copies of `images` matching the flow scales 2..levels, i.e. the resolutions
    1/4, 1/8, ..., 1/2**levels.

    :param images:  Tensor [N, C, H, W]
    :param levels:  number of encoder downsamplings (>= 2)
    :return:        list of levels-1 Tensors (finest first)
    """
    if levels < 2:
        msg = "image_pyramid: levels must be at least 2, got {}".format(levels)
        raise ConfigurationError(msg)
    current = avg_downsample2x(avg_downsample2x(as_tensor(images)))
    res = [current]
    for _ in range(levels - 2):
        current = avg_downsample2x(current)
        res.append(current)
    return res


def total_loss(pyramid, image_pyramid_pair, cfg, record=None):
    """
    Sum over scales of delta_s * scale_loss_s.

    :param pyramid:             list of flow Tensors [N, 2, h_s, w_s] (finest first)
    :param image_pyramid_pair:  list of (I1_s, I2_s) pairs with matching resolutions
    :param cfg:                 LossConfig (the SSIM window is fitted to small scales)
    :param record:              optional dict which receives the delta-weighted components
    """
    if len(pyramid) != len(image_pyramid_pair):
        msg = "total_loss: {} flow levels but {} image levels".format(len(pyramid), len(image_pyramid_pair))
        raise ConfigurationError(msg)
    if len(pyramid) > len(cfg.delta):
        msg = "total_loss: {} flow levels but only {} delta weights".format(len(pyramid), len(cfg.delta))
        raise ConfigurationError(msg, key="loss.delta")

    res = None
    for s, (flow, (I1, I2)) in enumerate(zip(pyramid, image_pyramid_pair)):
        delta = cfg.delta[s]
        if delta == 0:
            continue
        flow = as_tensor(flow)
        I1 = as_tensor(I1)
        if flow.shape[2:] != I1.shape[2:]:
            msg = "total_loss: flow level {} has extent {} but images have {}".format(
                s, flow.shape[2:], I1.shape[2:])
            raise ConfigurationError(msg)

        sub_record = {} if record is not None else None
        term = delta * scale_loss(I1, I2, flow, cfg.at_extent(*flow.shape[2:]), record=sub_record)
        if record is not None:
            for key, value in sub_record.items():
                _add_record(record, key, delta * value)

        res = term if res is None else res + term

    if res is None:
        return Tensor(0.0)
    return res


def clip_loss(pyramid, frames, cfg, record=None):
    """
    Unsupervised loss of a stacked flow pyramid: every consecutive frame pair is scored by
    `total_loss` on its 2-channel slice of each level; the results are averaged over the pairs.

    :param pyramid:     list of Tensors [N, 2*(F-1), h_s, w_s]
    :param frames:      Tensor [N, 3*F, H, W]
    """
    frames = as_tensor(frames)
    n_pairs = pyramid[0].shape[1] // 2
    if frames.shape[1] != 3 * (n_pairs + 1):
        msg = "clip_loss: {} flow pairs need {} frame channels, got {}".format(
            n_pairs, 3 * (n_pairs + 1), frames.shape[1])
        raise ConfigurationError(msg)

    frame_pyramid = image_pyramid(frames, len(pyramid) + 1)
    pair_record = {} if record is not None else None
    res = None
    for t in range(n_pairs):
        flows = [level[:, 2 * t:2 * t + 2] for level in pyramid]
        images = [(level[:, 3 * t:3 * t + 3], level[:, 3 * t + 3:3 * t + 6]) for level in frame_pyramid]
        term = total_loss(flows, images, cfg, record=pair_record)
        res = term if res is None else res + term

    if record is not None:
        for key, value in pair_record.items():
            _add_record(record, key, value / n_pairs)
    return res * (1.0 / n_pairs)


def cross_entropy(logits, labels):
    """
    Mean negative log-likelihood of the true classes under softmax(logits).

    :param logits:  Tensor [N, A]
    :param labels:  int sequence of length N with values in [0, A)
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    N, A = logits.shape
    if labels.shape[0] != N:
        msg = "cross_entropy: {} labels for {} rows of logits".format(labels.shape[0], N)
        raise InputError(msg)
    if np.any(labels < 0) or np.any(labels >= A):
        msg = "cross_entropy: labels must be in [0, {}), got {}".format(A, labels.tolist())
        raise InputError(msg)

    onehot = np.zeros((N, A))
    onehot[np.arange(N), labels] = 1.0
    return -(log_softmax(logits, axis=1) * onehot).sum() * (1.0 / N)
