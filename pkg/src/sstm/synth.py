"""Three-frame synthetic scenes with analytic flow, occlusion and out-of-frame masks.

Textures are continuous value noise, so every frame is rendered by evaluating
the texture at the exact moved coordinates instead of resampling a raster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .losses import GtSample

SHAPES = ("rect", "disc")
MAX_MOTION = 12.0


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    bg_seed: int = 0
    fg_seed: int = 1
    fg_shape: str = "rect"
    fg_center: tuple[float, float] = (32.0, 32.0)  # (x, y) at frame 1
    fg_size: tuple[float, float] = (20.0, 16.0)  # (w, h) for rect, (d, d) for disc
    fg_motion: tuple[float, float] = (0.0, 0.0)  # px per frame
    bg_motion: tuple[float, float] = (0.0, 0.0)
    noise: float = 0.0
    cell: float = 6.0  # texture lattice spacing

    def validate(self) -> None:
        if self.height < 8 or self.width < 8:
            raise ValueError("scene must be at least 8 x 8")
        if self.fg_shape not in SHAPES:
            raise ValueError(f"foreground shape must be one of {SHAPES}")
        if min(self.fg_size) <= 0:
            raise ValueError("foreground size must be positive")
        for m in (self.fg_motion, self.bg_motion):
            if math.hypot(*m) > MAX_MOTION:
                raise ValueError(f"motion {m} exceeds {MAX_MOTION} px per frame")
        cx, cy = self.fg_center
        hw, hh = self.fg_size[0] / 2, self.fg_size[1] / 2
        if cx - hw < 0 or cy - hh < 0 or cx + hw > self.width - 1 or cy + hh > self.height - 1:
            raise ValueError("foreground must fit inside the first frame")


class ValueNoise:
    """Smooth RGB texture: random lattice values blended with a quintic fade, two octaves."""

    def __init__(self, seed: int, cell: float, extent: int) -> None:
        rng = np.random.default_rng(seed)
        self.cell = cell
        self.margin = int(math.ceil(2 * MAX_MOTION / cell)) + 4
        n = int(math.ceil(extent / cell)) + 2 * self.margin + 2
        self.coarse = rng.uniform(0.0, 1.0, size=(3, n, n))
        self.fine = rng.uniform(0.0, 1.0, size=(3, 2 * n, 2 * n))

    @staticmethod
    def _fade(t: np.ndarray) -> np.ndarray:
        return t * t * t * (t * (t * 6 - 15) + 10)

    def _octave(self, lattice: np.ndarray, x: np.ndarray, y: np.ndarray, cell: float) -> np.ndarray:
        gx = x / cell + self.margin
        gy = y / cell + self.margin
        x0 = np.floor(gx).astype(int)
        y0 = np.floor(gy).astype(int)
        tx = self._fade(gx - x0)
        ty = self._fade(gy - y0)
        a = lattice[:, y0, x0]
        b = lattice[:, y0, x0 + 1]
        c = lattice[:, y0 + 1, x0]
        d = lattice[:, y0 + 1, x0 + 1]
        top = a + (b - a) * tx
        bot = c + (d - c) * tx
        return top + (bot - top) * ty

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        v = self._octave(self.coarse, x, y, self.cell) + 0.5 * self._octave(self.fine, x, y, self.cell / 2)
        return 255.0 * v / 1.5


@dataclass
class Sample:
    frames: list[np.ndarray]  # three 3 x H x W float32 images in 0..255
    gt: GtSample
    spec: SceneSpec
    index: int = 0

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for f in self.frames:
            h.update(np.ascontiguousarray(f).tobytes())
        return h.hexdigest()


def _inside(spec: SceneSpec, x: np.ndarray, y: np.ndarray, t: int) -> np.ndarray:
    cx = spec.fg_center[0] + spec.fg_motion[0] * t
    cy = spec.fg_center[1] + spec.fg_motion[1] * t
    if spec.fg_shape == "rect":
        hw, hh = spec.fg_size[0] / 2, spec.fg_size[1] / 2
        return (x >= cx - hw) & (x < cx + hw) & (y >= cy - hh) & (y < cy + hh)
    r = spec.fg_size[0] / 2
    return (x - cx) ** 2 + (y - cy) ** 2 < r * r


def _out_of_frame(x: np.ndarray, y: np.ndarray, flow: np.ndarray, h: int, w: int) -> np.ndarray:
    tx, ty = x + flow[0], y + flow[1]
    return (tx < 0) | (tx > w - 1) | (ty < 0) | (ty > h - 1)


def generate(spec: SceneSpec, seed: int = 0) -> Sample:
    """Render three frames (t = 0, 1, 2) and their analytic ground truth."""
    spec.validate()
    h, w = spec.height, spec.width
    extent = max(h, w)
    bg = ValueNoise(spec.bg_seed, spec.cell, extent)
    fg = ValueNoise(spec.fg_seed, spec.cell, extent)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    rng = np.random.default_rng(seed)

    frames, fg_masks = [], []
    for t in range(3):
        inside = _inside(spec, xs, ys, t)
        back = bg(xs - spec.bg_motion[0] * t, ys - spec.bg_motion[1] * t)
        front = fg(xs - spec.fg_motion[0] * t, ys - spec.fg_motion[1] * t)
        img = np.where(inside[None], front, back)
        if spec.noise > 0:
            img = img + rng.normal(0.0, spec.noise, size=img.shape)
        frames.append(np.clip(img, 0.0, 255.0).astype(np.float32))
        fg_masks.append(inside)

    def flow_at(t: int) -> np.ndarray:
        inside = fg_masks[t]
        u = np.where(inside, spec.fg_motion[0], spec.bg_motion[0])
        v = np.where(inside, spec.fg_motion[1], spec.bg_motion[1])
        return np.stack([u, v]).astype(np.float32)

    gt_f1, gt_f2 = flow_at(0), flow_at(1)
    # background pixels of frame 2 that the foreground covers in frame 3
    bx = xs + spec.bg_motion[0]
    by = ys + spec.bg_motion[1]
    occluded = ~fg_masks[1] & _inside(spec, bx, by, 2)
    gt = GtSample(
        gt_f1=gt_f1,
        gt_f2=gt_f2,
        valid1=np.ones((h, w), bool),
        valid2=np.ones((h, w), bool),
        occlusion_mask=occluded,
        oob_mask=_out_of_frame(xs, ys, gt_f2, h, w),
        fg_mask=fg_masks[1],
    )
    return Sample(frames, gt, spec)


@dataclass(frozen=True)
class SceneDistribution:
    """Random translating-foreground scenes."""

    height: int = 64
    width: int = 64
    max_fg_motion: float = 4.0
    max_bg_motion: float = 4.0
    shapes: tuple[str, ...] = SHAPES
    min_size: float = 12.0
    max_size: float = 28.0
    noise: float = 0.0
    cell_range: tuple[float, float] = (4.0, 8.0)

    def draw(self, rng: np.random.Generator) -> SceneSpec:
        def motion(limit: float) -> tuple[float, float]:
            r = limit * math.sqrt(rng.uniform())
            a = rng.uniform(0, 2 * math.pi)
            return (r * math.cos(a), r * math.sin(a))

        shape = str(rng.choice(self.shapes))
        sw = rng.uniform(self.min_size, self.max_size)
        sh = sw if shape == "disc" else rng.uniform(self.min_size, self.max_size)
        margin_x, margin_y = sw / 2 + 1, sh / 2 + 1
        cx = rng.uniform(margin_x, self.width - 1 - margin_x)
        cy = rng.uniform(margin_y, self.height - 1 - margin_y)
        return SceneSpec(
            height=self.height,
            width=self.width,
            bg_seed=int(rng.integers(2**31)),
            fg_seed=int(rng.integers(2**31)),
            fg_shape=shape,
            fg_center=(cx, cy),
            fg_size=(sw, sh),
            fg_motion=motion(self.max_fg_motion),
            bg_motion=motion(self.max_bg_motion),
            noise=self.noise,
            cell=rng.uniform(*self.cell_range),
        )


def sample_at(dist: SceneDistribution, seed: int, index: int) -> Sample:
    """The ``index``-th sample of the stream; independent of every other index."""
    rng = np.random.default_rng([seed, index])
    spec = dist.draw(rng)
    out = generate(spec, seed=int(rng.integers(2**31)))
    out.index = index
    return out


def dataset(dist: SceneDistribution, count: int, seed: int = 0, split: str = "all") -> Iterator[Sample]:
    """Deterministic sample stream; even indices train, odd indices validate."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if split not in ("all", "train", "val"):
        raise ValueError("split must be all, train or val")
    for i in range(count):
        if split == "train" and i % 2:
            continue
        if split == "val" and not i % 2:
            continue
        yield sample_at(dist, seed, i)


def split_indices(count: int) -> tuple[list[int], list[int]]:
    return list(range(0, count, 2)), list(range(1, count, 2))


def static_scene(height: int = 64, width: int = 64, seed: int = 0) -> Sample:
    """Three identical frames (zero motion everywhere)."""
    spec = SceneSpec(
        height=height,
        width=width,
        bg_seed=seed,
        fg_seed=seed + 1,
        fg_center=(width / 2, height / 2),
        fg_size=(width / 4, height / 4),
    )
    return generate(spec)
