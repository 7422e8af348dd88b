# -*- coding: utf-8 -*-
"""
Synthetic frame sequences with exact ground truth flow.

A scene consists of a textured background (optionally moved by a camera translation) and a disc
shaped foreground object which translates, rotates or zooms. Frames are rendered by sampling the
texture canvases (bilinear, `scipy.ndimage.map_coordinates`) at the inversely transformed pixel
positions. Thus frame t and frame t+1 satisfy frame_t(p) = frame_{t+1}(p + V_t(p)) on all pixels
which are not occluded.

All samples are pure functions of (seed, spec).
"""

import os
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .auxiliary import ConfigurationError, InputError

TEXTURES = ("checker", "noise", "gradient", "flat")
CLASSES = ("left", "right", "up", "down", "rotate")


# ----------------------------------------------------------------------------------------------
# motion models
# ----------------------------------------------------------------------------------------------

@dataclass
class Translate:
    dx: float = 0.0
    dy: float = 0.0

    def flow(self, px, py, cx, cy):
        return np.full(px.shape, float(self.dx)), np.full(px.shape, float(self.dy))

    def source(self, px, py, cx, cy, t):
        """position in the texture (relative to the moving object) of the pixel p at time t"""
        return px - t * self.dx, py - t * self.dy

    def center(self, cx, cy, t):
        return cx + t * self.dx, cy + t * self.dy

    def radius(self, r, t):
        return r

    def bound(self):
        return max(abs(self.dx), abs(self.dy))


@dataclass
class Rotate:
    angle: float = 0.0

    def _rot(self, x, y, angle):
        c, s = np.cos(angle), np.sin(angle)
        return c * x - s * y, s * x + c * y

    def flow(self, px, py, cx, cy):
        rx, ry = self._rot(px - cx, py - cy, self.angle)
        return rx - (px - cx), ry - (py - cy)

    def source(self, px, py, cx, cy, t):
        rx, ry = self._rot(px - cx, py - cy, -t * self.angle)
        return cx + rx, cy + ry

    def center(self, cx, cy, t):
        return cx, cy

    def radius(self, r, t):
        return r

    def bound(self):
        return 0.0


@dataclass
class Zoom:
    scale: float = 1.0

    def flow(self, px, py, cx, cy):
        return (self.scale - 1) * (px - cx), (self.scale - 1) * (py - cy)

    def source(self, px, py, cx, cy, t):
        s = self.scale ** t
        return cx + (px - cx) / s, cy + (py - cy) / s

    def center(self, cx, cy, t):
        return cx, cy

    def radius(self, r, t):
        return r * self.scale ** t

    def bound(self):
        return 0.0


@dataclass
class PairSpec:
    """
    Scene description.

    extent:             frame height and width
    texture:            foreground texture (one of TEXTURES)
    background_texture: background texture (None: same kind as the foreground)
    motion:             Translate, Rotate or Zoom of the foreground object
    background_motion:  camera translation (dx, dy) of the background
    radius:             radius of the foreground disc (None: extent/5)
    noise_std:          standard deviation of additive Gaussian noise (0: no noise)
    """
    extent: int = 64
    texture: str = "checker"
    background_texture: str = None
    motion: object = field(default_factory=Translate)
    background_motion: tuple = (0.0, 0.0)
    radius: float = None
    noise_std: float = 0.0


@dataclass
class ClipSample:
    """
    frames:     [F, 3, H, W] with values in [0, 1]
    gt_flows:   [F-1, 2, H, W]
    masks:      [F-1, H, W] bool, foreground pixels of frame t
    label:      class id (None for unlabeled pairs)
    """
    frames: np.ndarray
    gt_flows: np.ndarray
    masks: np.ndarray
    label: int = None
    seed: int = 0
    texture: str = None

    @property
    def frame_count(self):
        return self.frames.shape[0]

    def network_input(self):
        """frames concatenated along the channel axis: [3F, H, W]"""
        F, C, H, W = self.frames.shape
        return self.frames.reshape(F * C, H, W)

    def pair(self, t):
        return self.frames[t], self.frames[t + 1], self.gt_flows[t]


# ----------------------------------------------------------------------------------------------
# textures
# ----------------------------------------------------------------------------------------------

def _random_colors(rng, n, min_dist=0.3):
    colors = [rng.uniform(0.1, 0.9, 3)]
    while len(colors) < n:
        candidate = rng.uniform(0.1, 0.9, 3)
        if min(np.abs(candidate - c).max() for c in colors) >= min_dist:
            colors.append(candidate)
    return colors


def make_texture(kind, size, rng):
    """
    :param kind:    one of TEXTURES
    :param size:    side length of the square canvas
    :param rng:     numpy Generator
    :return:        array [3, size, size] with values in [0, 1]
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == "checker":
        cell = int(rng.integers(4, 9))
        ox, oy = rng.integers(0, cell, 2)
        pattern = ((np.floor((xx + ox) / cell) + np.floor((yy + oy) / cell)) % 2)[None]
        c0, c1 = _random_colors(rng, 2)
        tex = c0[:, None, None] * (1 - pattern) + c1[:, None, None] * pattern
    elif kind == "noise":
        raw = rng.uniform(0, 1, (3, size, size))
        tex = np.stack([ndimage.gaussian_filter(raw[c], sigma=1.5, mode="wrap") for c in range(3)])
        lo, hi = tex.min(), tex.max()
        tex = 0.1 + 0.8 * (tex - lo) / (hi - lo)
    elif kind == "gradient":
        angle = rng.uniform(0, 2 * np.pi)
        ramp = (np.cos(angle) * xx + np.sin(angle) * yy)[None]
        ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min())
        c0, c1 = _random_colors(rng, 2)
        tex = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp
    elif kind == "flat":
        c0, = _random_colors(rng, 1)
        tex = np.broadcast_to(c0[:, None, None], (3, size, size)).copy()
    else:
        msg = "unknown texture {!r} (choose from {})".format(kind, ", ".join(TEXTURES))
        raise ConfigurationError(msg, key="data.textures")
    return tex


def _sample(texture, x, y, margin):
    coords = np.stack([y + margin, x + margin])
    return np.stack([ndimage.map_coordinates(texture[c], coords, order=1, mode="nearest")
                     for c in range(texture.shape[0])])


# ----------------------------------------------------------------------------------------------
# rendering
# ----------------------------------------------------------------------------------------------

def _render_sequence(rng, spec, n_frames, center):
    """
    Render n_frames frames of the scene.

    :return:    frames [F, 3, H, W], flows [F-1, 2, H, W], masks [F-1, H, W]
    """
    H = W = spec.extent
    motion = spec.motion
    bdx, bdy = (float(v) for v in spec.background_motion)
    radius = spec.radius if spec.radius is not None else spec.extent / 5.0

    travel = (n_frames - 1) * max(motion.bound(), abs(bdx), abs(bdy))
    margin = int(np.ceil(travel + 2 * radius)) + 2
    size = spec.extent + 2 * margin

    fg_tex = make_texture(spec.texture, size, rng)
    bg_tex = make_texture(spec.background_texture or spec.texture, size, rng)

    py, px = np.mgrid[0:H, 0:W].astype(np.float64)
    cx, cy = center

    frames = []
    flows = []
    masks = []
    for t in range(n_frames):
        bg = _sample(bg_tex, px - t * bdx, py - t * bdy, margin)

        ctx, cty = motion.center(cx, cy, t)
        inside = (px - ctx) ** 2 + (py - cty) ** 2 <= motion.radius(radius, t) ** 2
        sx, sy = motion.source(px, py, cx, cy, t)
        fg = _sample(fg_tex, sx, sy, margin)
        frames.append(np.where(inside[None], fg, bg))

        if t < n_frames - 1:
            fx, fy = motion.flow(px, py, ctx, cty)
            flow = np.stack([np.where(inside, fx, bdx), np.where(inside, fy, bdy)])
            flows.append(flow)
            masks.append(inside)

    frames = np.stack(frames)
    if spec.noise_std > 0:
        frames = np.clip(frames + rng.normal(0.0, spec.noise_std, frames.shape), 0.0, 1.0)

    return frames, np.stack(flows), np.stack(masks)


def _check_bounds(spec):
    limit = spec.extent / 4.0
    motion = spec.motion
    if isinstance(motion, Translate):
        if max(abs(motion.dx), abs(motion.dy)) > limit:
            msg = "translation ({}, {}) exceeds extent/4 = {}".format(motion.dx, motion.dy, limit)
            raise InputError(msg)
    elif not isinstance(motion, (Rotate, Zoom)):
        raise InputError("unknown motion model {!r}".format(motion))
    if max(abs(v) for v in spec.background_motion) > limit:
        msg = "background motion {} exceeds extent/4 = {}".format(spec.background_motion, limit)
        raise InputError(msg)


def gen_pair(seed, spec=None):
    """
    One frame pair with ground truth flow (foreground disc centered in the frame).

    :return:    ClipSample with F=2 and label None
    """
    spec = spec or PairSpec()
    _check_bounds(spec)
    rng = np.random.default_rng(seed)
    center = ((spec.extent - 1) / 2.0, (spec.extent - 1) / 2.0)
    frames, flows, masks = _render_sequence(rng, spec, 2, center)
    return ClipSample(frames=frames, gt_flows=flows, masks=masks, label=None, seed=seed, texture=spec.texture)


def clip_label(seed, classes=CLASSES):
    return int(seed) % len(classes)


def clip_motion(class_name, speed=2.0, angle=0.08):
    if class_name == "left":
        return Translate(-speed, 0.0)
    if class_name == "right":
        return Translate(speed, 0.0)
    if class_name == "up":
        return Translate(0.0, -speed)
    if class_name == "down":
        return Translate(0.0, speed)
    if class_name == "rotate":
        return Rotate(angle)
    msg = "unknown motion class {!r} (choose from {})".format(class_name, ", ".join(CLASSES))
    raise ConfigurationError(msg)


def gen_clip(seed, spec=None, frames=11, classes=CLASSES, speed=2.0, angle=0.08):
    """
    Labeled clip of `frames` frames. The class is classes[seed % len(classes)]; its motion is
    applied to the foreground at every step (constant velocity).

    :param spec:    PairSpec (its `motion` is replaced by the class motion)
    :return:        ClipSample with label = class index
    """
    if frames < 2:
        raise InputError("a clip needs at least 2 frames, got {}".format(frames))
    spec = spec or PairSpec()
    label = clip_label(seed, classes)
    motion = clip_motion(classes[label], speed, angle)
    spec = PairSpec(extent=spec.extent, texture=spec.texture, background_texture=spec.background_texture,
                    motion=motion, background_motion=spec.background_motion, radius=spec.radius,
                    noise_std=spec.noise_std)
    _check_bounds(spec)

    radius = spec.radius if spec.radius is not None else spec.extent / 5.0
    mid = (spec.extent - 1) / 2.0
    center = [mid, mid]
    if isinstance(motion, Translate):
        travel = np.array([motion.dx, motion.dy]) * (frames - 1)
        if np.abs(travel).max() + 2 * radius > spec.extent:
            msg = "cumulative motion {} of {} frames leaves the frame (extent {}, radius {})".format(
                tuple(travel), frames, spec.extent, radius)
            raise InputError(msg)
        # start such that the path is centered in the frame
        center = [mid - travel[0] / 2.0, mid - travel[1] / 2.0]

    rng = np.random.default_rng(seed)
    frames_arr, flows, masks = _render_sequence(rng, spec, frames, center)
    return ClipSample(frames=frames_arr, gt_flows=flows, masks=masks, label=label, seed=seed,
                      texture=spec.texture)


# ----------------------------------------------------------------------------------------------
# datasets
# ----------------------------------------------------------------------------------------------

@dataclass
class DataConfig:
    """
    kind:           "pairs" (random translations), "mixed" (textured and homogeneous foregrounds)
                    or "clips" (labeled multi-frame clips)
    """
    kind: str = "pairs"
    extent: int = 64
    train_size: int = 256
    eval_size: int = 32
    max_disp: int = 5
    camera_motion: bool = True
    textures: tuple = field(default=("checker", "noise"))
    speed: float = 2.0
    noise_std: float = 0.0
    seed: int = 0

    def validate(self):
        if self.kind not in ("pairs", "mixed", "clips"):
            raise ConfigurationError("unknown dataset kind {!r}".format(self.kind), key="data.kind")
        for name in ("extent", "train_size", "eval_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError("{} must be positive".format(name), key="data." + name)
        if self.max_disp < 0 or self.max_disp > self.extent / 4.0:
            raise ConfigurationError("max_disp must be in [0, extent/4]", key="data.max_disp")
        for tex in self.textures:
            if tex not in TEXTURES:
                raise ConfigurationError("unknown texture {!r}".format(tex), key="data.textures")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be nonnegative", key="data.noise_std")
        return self


def _sample_seed(seed, index):
    return int(seed) * 1000003 + int(index)


def make_pair_dataset(n, seed=0, extent=64, max_disp=5, textures=("checker", "noise"), camera_motion=True,
                      noise_std=0.0):
    """
    Frame pairs with random integer foreground translations |d| <= max_disp and (optionally)
    random integer camera translations of the same range.
    """
    res = []
    for i in range(n):
        sample_seed = _sample_seed(seed, i)
        rng = np.random.default_rng([seed, i])
        dx, dy = rng.integers(-max_disp, max_disp + 1, 2)
        bg = rng.integers(-max_disp, max_disp + 1, 2) if camera_motion else (0, 0)
        spec = PairSpec(extent=extent, texture=str(textures[i % len(textures)]),
                        motion=Translate(float(dx), float(dy)),
                        background_motion=(float(bg[0]), float(bg[1])), noise_std=noise_std)
        res.append(gen_pair(sample_seed, spec))
    return res


def make_mixed_dataset(n, seed=0, extent=64, max_disp=5, textures=("checker", "noise"), camera_motion=True,
                       noise_std=0.0):
    """
    Like `make_pair_dataset`, but every second sample has a homogeneous ("flat") foreground
    on a textured background (the aperture problem case).
    """
    res = []
    for i in range(n):
        sample_seed = _sample_seed(seed, i)
        rng = np.random.default_rng([seed, i])
        dx, dy = rng.integers(-max_disp, max_disp + 1, 2)
        bg = rng.integers(-max_disp, max_disp + 1, 2) if camera_motion else (0, 0)
        bg_texture = str(textures[(i // 2) % len(textures)])
        fg_texture = "flat" if i % 2 else bg_texture
        spec = PairSpec(extent=extent, texture=fg_texture, background_texture=bg_texture,
                        motion=Translate(float(dx), float(dy)),
                        background_motion=(float(bg[0]), float(bg[1])), noise_std=noise_std)
        res.append(gen_pair(sample_seed, spec))
    return res


def make_clip_dataset(n, seed=0, frames=11, extent=64, speed=2.0, classes=CLASSES, textures=("checker", "noise"),
                      noise_std=0.0):
    res = []
    for i in range(n):
        spec = PairSpec(extent=extent, texture=str(textures[i % len(textures)]), noise_std=noise_std)
        res.append(gen_clip(_sample_seed(seed, i), spec, frames=frames, classes=classes, speed=speed))
    return res


def make_dataset(data_cfg, frames=2, split="train"):
    """
    Build the training or evaluation set described by a DataConfig. The evaluation set uses
    different seeds than the training set.
    """
    n = data_cfg.train_size if split == "train" else data_cfg.eval_size
    seed = data_cfg.seed if split == "train" else data_cfg.seed + 7919
    if data_cfg.kind == "clips":
        return make_clip_dataset(n, seed, frames=frames, extent=data_cfg.extent, speed=data_cfg.speed,
                                 textures=data_cfg.textures, noise_std=data_cfg.noise_std)
    if frames != 2:
        msg = "dataset kind {!r} provides frame pairs but the network expects {} frames".format(data_cfg.kind, frames)
        raise ConfigurationError(msg, key="motionnet.input_frames")
    maker = make_pair_dataset if data_cfg.kind == "pairs" else make_mixed_dataset
    return maker(n, seed, extent=data_cfg.extent, max_disp=data_cfg.max_disp, textures=data_cfg.textures,
                 camera_motion=data_cfg.camera_motion, noise_std=data_cfg.noise_std)


# ----------------------------------------------------------------------------------------------
# export
# ----------------------------------------------------------------------------------------------

def export_sample(sample, directory):
    """
    Write the frames as PNG images (frame_00.png, ...), the ground truth as Middlebury flow files
    (flow_00.flo, ...) and the label/seed as sample.json.
    """
    # imported here to avoid circular imports
    from .flowtools import write_flo
    from .visualisation import save_image

    os.makedirs(directory, exist_ok=True)
    for t, frame in enumerate(sample.frames):
        save_image(os.path.join(directory, "frame_{:02d}.png".format(t)), frame)
    for t, flow in enumerate(sample.gt_flows):
        write_flo(os.path.join(directory, "flow_{:02d}.flo".format(t)), flow)
    with open(os.path.join(directory, "sample.json"), "w") as jfile:
        json.dump(dict(label=sample.label, seed=sample.seed, frames=int(sample.frame_count)), jfile)


def load_exported_sample(directory):
    """
    Inverse of `export_sample` (frames are 8 bit quantized). Masks are not stored: all pixels
    count as foreground.
    """
    from .flowtools import read_flo
    from .visualisation import load_image

    meta_path = os.path.join(directory, "sample.json")
    meta = {}
    if os.path.exists(meta_path):
        with open(meta_path) as jfile:
            meta = json.load(jfile)

    frame_files = sorted(f for f in os.listdir(directory) if f.startswith("frame_") and f.endswith(".png"))
    flow_files = sorted(f for f in os.listdir(directory) if f.startswith("flow_") and f.endswith(".flo"))
    if len(frame_files) < 2:
        raise InputError("{}: need at least 2 frames, found {}".format(directory, len(frame_files)))
    if len(flow_files) != len(frame_files) - 1:
        msg = "{}: ground truth missing ({} frames but {} flow files)".format(
            directory, len(frame_files), len(flow_files))
        raise InputError(msg)

    frames = np.stack([load_image(os.path.join(directory, f)) for f in frame_files])
    flows = np.concatenate([read_flo(os.path.join(directory, f)) for f in flow_files])
    masks = np.ones((flows.shape[0],) + flows.shape[2:], dtype=bool)
    return ClipSample(frames=frames, gt_flows=flows, masks=masks, label=meta.get("label"), seed=meta.get("seed", 0))
