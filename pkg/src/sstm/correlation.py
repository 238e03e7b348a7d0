"""All-pairs correlation volumes, their pooled pyramids and windowed lookup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, avg_pool2, bilinear_sample, concat, matmul, reshape, stack, transpose
from .flowpair import FlowPair

PAPER_CORR_CHANNELS = 324


def window_channels(levels: int, radius: int) -> int:
    return levels * (2 * radius + 1) ** 2


def check_corr_profile(levels: int, radius: int, profile: str = "paper") -> None:
    if levels < 1 or radius < 0:
        raise ValueError("need levels >= 1 and radius >= 0")
    if profile == "paper" and window_channels(levels, radius) != PAPER_CORR_CHANNELS:
        raise ValueError(
            f"levels={levels}, radius={radius} give {window_channels(levels, radius)} "
            f"correlation channels; the paper profile requires {PAPER_CORR_CHANNELS}"
        )


@dataclass
class CorrPyramid:
    """Pooled correlation volumes. Level ``l`` is ``(h*w, h/2^l, w/2^l)``."""

    levels: list[Tensor]
    query_hw: tuple[int, int]

    @property
    def num_levels(self) -> int:
        return len(self.levels)


@dataclass
class CorrFeatures:
    """Windowed correlation lookups for both frame pairs: ``D x 2 x h x w``."""

    data: Tensor
    levels: int = 4
    radius: int = 4
    profile: str = "paper"

    def __post_init__(self) -> None:
        check_corr_profile(self.levels, self.radius, self.profile)
        d = window_channels(self.levels, self.radius)
        if self.data.ndim != 4 or self.data.shape[0] != d or self.data.shape[1] != 2:
            raise ValueError(f"expected {d} x 2 x h x w correlation features, got {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]


def corr_all_pairs(fmap_a: Tensor, fmap_b: Tensor) -> Tensor:
    """Dot products of every pixel of ``fmap_a`` with every pixel of ``fmap_b``, over sqrt(D)."""
    if fmap_a.shape != fmap_b.shape or fmap_a.ndim != 3:
        raise ValueError(f"feature maps must share a D x h x w shape, got {fmap_a.shape} and {fmap_b.shape}")
    d, h, w = fmap_a.shape
    a = transpose(reshape(fmap_a, (d, h * w)), (1, 0))
    b = reshape(fmap_b, (d, h * w))
    vol = matmul(a, b) * (1.0 / np.sqrt(d))
    return reshape(vol, (h * w, h, w))


def build_pyramid(volume: Tensor, levels: int = 4) -> CorrPyramid:
    q, h, w = volume.shape
    if min(h, w) < 2 ** (levels - 1):
        raise ValueError(f"target extent {h}x{w} too small for {levels} pyramid levels")
    if q != h * w:
        raise ValueError(f"volume rows ({q}) must equal target pixels ({h * w})")
    out = [volume]
    for _ in range(levels - 1):
        out.append(avg_pool2(out[-1]))
    return CorrPyramid(out, (h, w))


def _window_offsets(radius: int, dtype) -> np.ndarray:
    r = np.arange(-radius, radius + 1, dtype=dtype)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.stack([dx.reshape(-1), dy.reshape(-1)])  # (2, K), row-major window


def lookup(pyr: CorrPyramid, flow: Tensor, radius: int = 4) -> Tensor:
    """Sample a ``(2r+1)^2`` window around ``pixel + flow`` at every pyramid level.

    Channels are level-major, window row-major (dy outer, dx inner). Returns
    ``L*(2r+1)^2 x h x w``; differentiable w.r.t. ``flow`` and the volumes.
    """
    h, w = pyr.query_hw
    if flow.shape != (2, h, w):
        raise ValueError(f"flow must be 2x{h}x{w}, got {flow.shape}")
    q = h * w
    dtype = flow.dtype
    ys, xs = np.meshgrid(np.arange(h, dtype=dtype), np.arange(w, dtype=dtype), indexing="ij")
    grid = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)  # (Q, 2)
    offsets = _window_offsets(radius, dtype)
    k = offsets.shape[1]
    centroid = transpose(reshape(flow, (2, q)), (1, 0)) + Tensor(grid)
    centroid = reshape(centroid, (2 * q, 1))
    spread = Tensor(np.ones((1, k), dtype))
    out = []
    for lvl, vol in enumerate(pyr.levels):
        c = matmul(centroid * (1.0 / 2**lvl), spread)
        coords = reshape(c, (q, 2, k)) + Tensor(np.broadcast_to(offsets, (q, 2, k)))
        hl, wl = vol.shape[1:]
        sampled = bilinear_sample(reshape(vol, (q, 1, hl, wl)), coords)
        out.append(reshape(sampled, (q, k)))
    feats = concat(out, axis=1)
    return reshape(transpose(feats, (1, 0)), (len(pyr.levels) * k, h, w))


def lookup_pair(pyr12: CorrPyramid, pyr23: CorrPyramid, flows: FlowPair, radius: int = 4, profile: str = "paper") -> CorrFeatures:
    flows.require("eighth")
    c1 = lookup(pyr12, flows.f1, radius)
    c2 = lookup(pyr23, flows.f2, radius)
    return CorrFeatures(stack([c1, c2], axis=1), pyr12.num_levels, radius, profile)


def corr_features(
    fmap1: Tensor,
    fmap2: Tensor,
    fmap3: Tensor,
    flows: FlowPair,
    levels: int = 4,
    radius: int = 4,
    profile: str = "paper",
) -> CorrFeatures:
    """Correlation features for (frame1, frame2) and (frame2, frame3) stacked on time."""
    check_corr_profile(levels, radius, profile)
    pyr12 = build_pyramid(corr_all_pairs(fmap1, fmap2), levels)
    pyr23 = build_pyramid(corr_all_pairs(fmap2, fmap3), levels)
    return lookup_pair(pyr12, pyr23, flows, radius, profile)
