"""
Differentiable backward warping (bilinear sampling) of images by a flow field.

Conventions:
    flow[:, 0] is the horizontal displacement Vx (along the width axis, positive = to the right),
    flow[:, 1] is the vertical displacement Vy (along the height axis, positive = downwards).
    The output at pixel (i, j) (row, column) samples the image at (i + Vy[i, j], j + Vx[i, j]).
"""

import numpy as np

from .core import Tensor, as_tensor, custom_op
from .auxiliary import ConfigurationError


def _sample_positions(flow_data):
    """
    Compute the clamped sample positions, the (upper left) cell corner indices, the interpolation
    fractions and the masks of unclamped coordinates.
    """
    N, _, H, W = flow_data.shape
    jj = np.arange(W, dtype=np.float64)[None, None, :]
    ii = np.arange(H, dtype=np.float64)[None, :, None]

    x_raw = jj + flow_data[:, 0]
    y_raw = ii + flow_data[:, 1]
    x = np.clip(x_raw, 0, W - 1)
    y = np.clip(y_raw, 0, H - 1)

    # tie-break: at integer coordinates the cell on the positive side is used (except at the last pixel)
    x0 = np.clip(np.floor(x), 0, max(W - 2, 0)).astype(np.int64)
    y0 = np.clip(np.floor(y), 0, max(H - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = x - x0
    fy = y - y0

    inside_x = (x_raw >= 0) & (x_raw <= W - 1)
    inside_y = (y_raw >= 0) & (y_raw <= H - 1)

    return x0, x1, y0, y1, fx, fy, inside_x, inside_y


def backward_warp(image, flow):
    """
    Reconstruct the first frame by sampling `image` (the second frame) at flow-displaced positions.
    Samples outside of the image are clamped to the border.

    :param image:   Tensor [N, C, H, W]
    :param flow:    Tensor [N, 2, H, W] (pixels)
    :return:        Tensor [N, C, H, W]
    """
    image, flow = as_tensor(image), as_tensor(flow)
    if image.ndim != 4 or flow.ndim != 4 or flow.shape[1] != 2:
        msg = "backward_warp: expected image [N,C,H,W] and flow [N,2,H,W], got {} and {}".format(
            image.shape, flow.shape)
        raise ConfigurationError(msg)
    N, C, H, W = image.shape
    if (flow.shape[0], flow.shape[2], flow.shape[3]) != (N, H, W):
        msg = "backward_warp: image {} and flow {} disagree in N, H or W".format(image.shape, flow.shape)
        raise ConfigurationError(msg)

    x0, x1, y0, y1, fx, fy, inside_x, inside_y = _sample_positions(flow.data)

    # linear pixel indices of the four cell corners, shape [N, 1, H*W]
    corners = [(y0 * W + x0), (y0 * W + x1), (y1 * W + x0), (y1 * W + x1)]
    corners = [np.broadcast_to(c.reshape(N, 1, H * W), (N, C, H * W)) for c in corners]
    weights = [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]
    weights = [w[:, None, :, :] for w in weights]

    img_flat = image.data.reshape(N, C, H * W)
    values = [np.take_along_axis(img_flat, c, axis=2).reshape(N, C, H, W) for c in corners]
    Ia, Ib, Ic, Id = values

    res = weights[0] * Ia + weights[1] * Ib + weights[2] * Ic + weights[3] * Id

    def rule(g):
        g_image = g_flow = None
        if image.requires_grad:
            offsets = (np.arange(N * C) * (H * W)).reshape(N, C, 1)
            g_image = np.zeros(N * C * H * W)
            for c, w in zip(corners, weights):
                g_image += np.bincount((c + offsets).reshape(-1), weights=(g * w).reshape(-1),
                                       minlength=N * C * H * W)
            g_image = g_image.reshape(N, C, H, W)

        if flow.requires_grad:
            fx4 = fx[:, None]
            fy4 = fy[:, None]
            d_dx = (1 - fy4) * (Ib - Ia) + fy4 * (Id - Ic)
            d_dy = (1 - fx4) * (Ic - Ia) + fx4 * (Id - Ib)
            gx = np.sum(g * d_dx, axis=1) * inside_x
            gy = np.sum(g * d_dy, axis=1) * inside_y
            g_flow = np.stack([gx, gy], axis=1)

        return g_image, g_flow

    return custom_op(res, (image, flow), rule, "backward_warp")


def shift_image(image, dx, dy):
    """
    Integer shift with border clamping, i.e. out[i, j] = image[i + dy, j + dx] (clamped indices).
    This is the exact result of `backward_warp` for the constant integer flow (dx, dy).

    :param image:   array [..., H, W]
    """
    image = np.asarray(image)
    H, W = image.shape[-2:]
    rows = np.clip(np.arange(H) + int(dy), 0, H - 1)
    cols = np.clip(np.arange(W) + int(dx), 0, W - 1)
    return image[..., rows, :][..., cols]


def warp_array(image, flow):
    """
    Convenience wrapper for plain arrays (no taping).
    """
    return backward_warp(Tensor(image), Tensor(flow)).data
