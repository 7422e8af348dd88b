"""
Color coding of flow fields (Middlebury color wheel) and PNG helpers.
"""

import numpy as np

# PNG reading and writing
# noinspection PyPackageRequirements
import matplotlib.image as mpimg

from .core import Tensor
from .flowtools import UNKNOWN_FLOW_THRESHOLD
from .auxiliary import InputError

# segment lengths of the color wheel: red-yellow, yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red
WHEEL_SEGMENTS = (15, 6, 4, 11, 13, 6)


def make_colorwheel():
    """
    :return:    array [55, 3] of RGB values in [0, 255]
    """
    RY, YG, GC, CB, BM, MR = WHEEL_SEGMENTS
    wheel = np.zeros((sum(WHEEL_SEGMENTS), 3))
    col = 0

    wheel[col:col + RY, 0] = 255
    wheel[col:col + RY, 1] = np.floor(255 * np.arange(RY) / RY)
    col += RY

    wheel[col:col + YG, 0] = 255 - np.floor(255 * np.arange(YG) / YG)
    wheel[col:col + YG, 1] = 255
    col += YG

    wheel[col:col + GC, 1] = 255
    wheel[col:col + GC, 2] = np.floor(255 * np.arange(GC) / GC)
    col += GC

    wheel[col:col + CB, 1] = 255 - np.floor(255 * np.arange(CB) / CB)
    wheel[col:col + CB, 2] = 255
    col += CB

    wheel[col:col + BM, 2] = 255
    wheel[col:col + BM, 0] = np.floor(255 * np.arange(BM) / BM)
    col += BM

    wheel[col:col + MR, 2] = 255 - np.floor(255 * np.arange(MR) / MR)
    wheel[col:col + MR, 0] = 255
    return wheel


def _single_field(flow):
    flow = flow.data if isinstance(flow, Tensor) else np.asarray(flow, dtype=np.float64)
    if flow.ndim == 4 and flow.shape[0] == 1:
        flow = flow[0]
    if flow.ndim != 3 or flow.shape[0] != 2:
        msg = "expected a single flow field [2,H,W] or [1,2,H,W], got shape {}".format(flow.shape)
        raise InputError(msg)
    return flow


def flow_to_color(flow, max_mag=None):
    """
    Render a flow field: hue encodes the direction, saturation the magnitude relative to
    `max_mag` (default: 99th percentile of the magnitudes). Zero flow is white, magnitudes
    beyond max_mag are darkened. Unknown vectors (> 1e9) are rendered as zero flow.

    :param flow:    [2, H, W] or [1, 2, H, W]
    :return:        uint8 array [H, W, 3]
    """
    flow = _single_field(flow)
    u, v = flow[0].copy(), flow[1].copy()
    unknown = (np.abs(u) > UNKNOWN_FLOW_THRESHOLD) | (np.abs(v) > UNKNOWN_FLOW_THRESHOLD)
    u[unknown] = 0
    v[unknown] = 0

    mag = np.sqrt(u ** 2 + v ** 2)
    if max_mag is None:
        max_mag = float(np.percentile(mag, 99))
    if max_mag <= 0:
        max_mag = 1.0
    rad = mag / max_mag

    wheel = make_colorwheel()
    ncols = wheel.shape[0]
    angle = np.arctan2(-v, -u) / np.pi
    # +pi and -pi denote the same direction (positive u); both start the wheel
    angle[angle >= 1] = -1
    fk = (angle + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = fk - k0

    img = np.zeros(u.shape + (3,), dtype=np.uint8)
    saturated = rad <= 1
    for i in range(3):
        col = ((1 - f) * wheel[k0, i] + f * wheel[k1, i]) / 255.0
        col = np.where(saturated, 1 - rad * (1 - col), col * 0.75)
        img[:, :, i] = np.floor(255 * col)
    return img


def save_image(path, image):
    """
    :param image:   float array [3, H, W] with values in [0, 1] or uint8 array [H, W, 3]
    """
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.clip(image, 0, 1).transpose(1, 2, 0)
    mpimg.imsave(path, image)


def load_image(path):
    """
    :return:    float64 array [3, H, W] with values in [0, 1]
    """
    image = mpimg.imread(path)
    if image.dtype == np.uint8:
        image = image / 255.0
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.stack([image] * 3, axis=-1)
    return image[:, :, :3].transpose(2, 0, 1).copy()


def write_flow_png(path, flow, max_mag=None):
    save_image(path, flow_to_color(flow, max_mag))
