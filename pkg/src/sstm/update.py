"""Recurrent update machinery: brightness errors, motion encoder, 3D conv GRU, flow head.

All tensors here live at 1/8 resolution with flows in 1/8-pixel units, laid
out ``C x 2 x h x w`` where the time axis holds the two frame pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    avg_pool2,
    bilinear_sample,
    channel_norm,
    concat,
    getitem,
    relu,
    sigmoid,
    stack,
    tanh,
)
from .correlation import CorrFeatures
from .flowpair import FlowPair, ResolutionError
from .layers import Shapes, Weights, conv, conv_shapes, sep_conv, sep_shapes

ERROR_PLANES = 3


@dataclass
class GruState:
    h: Tensor  # D x 2 x h x w


@dataclass
class GruStepTrace:
    z: Tensor
    r: Tensor
    h_cand: Tensor


@dataclass
class ErrorMaps:
    eps: Tensor  # 3 x h x w, one plane per warp chain


# ---------------------------------------------------------------------------
# warping and brightness errors
# ---------------------------------------------------------------------------

def pixel_grid(h: int, w: int, dtype=np.float32) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(h, dtype=dtype), np.arange(w, dtype=dtype), indexing="ij")
    return np.stack([xs, ys])


def warp(fmap: Tensor, flow: Tensor) -> Tensor:
    """Backward warp: ``out(p) = fmap(p + flow(p))``, bilinear with border clamp."""
    if fmap.shape[1:] != flow.shape[1:] or flow.shape[0] != 2:
        raise ValueError(f"flow {flow.shape} does not match feature map {fmap.shape}")
    coords = flow + Tensor(pixel_grid(*flow.shape[1:], dtype=flow.dtype))
    return bilinear_sample(fmap, coords)


def brightness_errors(fmap1: Tensor, fmap2: Tensor, fmap3: Tensor, flows: FlowPair) -> ErrorMaps:
    """Feature-space reconstruction errors of the two flows and their composition."""
    flows.require("eighth")
    warped21 = warp(fmap2, flows.f1)
    warped32 = warp(fmap3, flows.f2)
    warped31 = warp(warped32, flows.f1)
    eps = stack(
        [
            channel_norm(warped21 - fmap1),
            channel_norm(warped32 - fmap2),
            channel_norm(warped31 - fmap1),
        ],
        axis=0,
    )
    return ErrorMaps(eps)


# ---------------------------------------------------------------------------
# motion encoder
# ---------------------------------------------------------------------------

def motion_widths(motion_dim: int) -> tuple[int, int]:
    return 3 * motion_dim // 2, motion_dim // 2


def motion_encoder_shapes(corr_dim: int, motion_dim: int, use_errors: bool, prefix: str = "menc") -> Shapes:
    cc, cf = motion_widths(motion_dim)
    flow_in = 2 + (ERROR_PLANES if use_errors else 0)
    return {
        **conv_shapes(f"{prefix}.corr", corr_dim, cc, 1),
        **sep_shapes(f"{prefix}.flow", flow_in, cf, k=7),
        **sep_shapes(f"{prefix}.out", cc + cf, motion_dim),
    }


def motion_encode(
    corr: CorrFeatures, flows: FlowPair, errs: ErrorMaps | None, w: Weights, prefix: str = "menc"
) -> Tensor:
    """Compress ``[corr | flow | errors]`` of each window into motion features."""
    flows.require("eighth")
    if corr.data.shape[2:] != flows.f1.shape[1:]:
        raise ValueError(f"correlation {corr.data.shape} and flow {flows.f1.shape} extents differ")
    planes = stack([flows.f1, flows.f2], axis=1)
    if errs is not None:
        planes = concat([planes, stack([errs.eps, errs.eps], axis=1)], axis=0)
    expected = w[f"{prefix}.flow.x.w"].shape[1]
    if planes.shape[0] != expected:
        raise ValueError(f"motion encoder expects {expected} flow/error planes, got {planes.shape[0]}")
    c = relu(conv(corr.data, w, f"{prefix}.corr", "x"))
    f = relu(sep_conv(planes, w, f"{prefix}.flow"))
    return relu(sep_conv(concat([c, f], axis=0), w, f"{prefix}.out"))


# ---------------------------------------------------------------------------
# 3D conv GRU
# ---------------------------------------------------------------------------

def conv3_shapes(name: str, c_in: int, c_out: int, k: int = 3) -> Shapes:
    """x, y, t chain; a bias only on the last stage keeps it an exact 3D conv."""
    return {
        **conv_shapes(f"{name}.x", c_in, c_out, k, bias=False),
        **conv_shapes(f"{name}.y", c_out, c_out, k, bias=False),
        **conv_shapes(f"{name}.t", c_out, c_out, k),
    }


def conv3(x: Tensor, w: Weights, name: str) -> Tensor:
    x = conv(x, w, f"{name}.x", "x")
    x = conv(x, w, f"{name}.y", "y")
    return conv(x, w, f"{name}.t", "t")


def gru_shapes(hidden_dim: int, input_dim: int, prefix: str = "gru") -> Shapes:
    return {
        **conv3_shapes(f"{prefix}.z", hidden_dim + input_dim, hidden_dim),
        **conv3_shapes(f"{prefix}.r", hidden_dim + input_dim, hidden_dim),
        **conv3_shapes(f"{prefix}.q", input_dim, hidden_dim),
    }


def gru_step(state: GruState, x: Tensor, w: Weights, prefix: str = "gru") -> tuple[GruState, GruStepTrace]:
    h = state.h
    if h.shape[1:] != x.shape[1:]:
        raise ValueError(f"hidden state {h.shape} and input {x.shape} extents differ")
    expected = w[f"{prefix}.q.x.w"].shape[1]
    if x.shape[0] != expected:
        raise ValueError(f"GRU expects {expected} input channels, got {x.shape[0]}")
    hx = concat([h, x], axis=0)
    z = sigmoid(conv3(hx, w, f"{prefix}.z"))
    r = sigmoid(conv3(hx, w, f"{prefix}.r"))
    q = tanh(conv3(x, w, f"{prefix}.q") + r * h)
    h_new = z * h + (1.0 - z) * q
    return GruState(h_new), GruStepTrace(z, r, q)


def residual_due(n: int, r_interval: int) -> bool:
    if r_interval < 1:
        raise ValueError("r_interval must be positive")
    return n >= r_interval and n % r_interval == 0


def residual_hidden(n: int, r_interval: int, h_new: GruState, h_saved: GruState | None) -> GruState:
    """Add ``h_saved`` on every ``r_interval``-th step; other steps pass ``h_new`` through.

    The model passes the initial state as ``h_saved``, so every residual
    step re-injects the same anchor.
    """
    if residual_due(n, r_interval):
        if h_saved is None:
            raise ValueError(f"step {n} is a residual step and needs a saved state")
        return GruState(h_new.h + h_saved.h)
    return h_new


# ---------------------------------------------------------------------------
# flow head and resolution changes
# ---------------------------------------------------------------------------

def flow_head_shapes(hidden_dim: int, prefix: str = "head") -> Shapes:
    mid = 2 * hidden_dim
    return {**sep_shapes(f"{prefix}.1", hidden_dim, mid), **sep_shapes(f"{prefix}.2", mid, 2)}


def flow_head(state: GruState, w: Weights, prefix: str = "head") -> tuple[Tensor, Tensor]:
    """Shared head applied to each time slice of the hidden state."""
    h = state.h
    if h.ndim != 4 or h.shape[1] != 2:
        raise ValueError(f"hidden state must have temporal extent 2, got {h.shape}")
    a = relu(sep_conv(h, w, f"{prefix}.1"))
    d = sep_conv(a, w, f"{prefix}.2")
    return getitem(d, (slice(None), 0)), getitem(d, (slice(None), 1))


def apply_deltas(flows: FlowPair, d1: Tensor, d2: Tensor) -> FlowPair:
    return FlowPair(flows.f1 + d1, flows.f2 + d2, flows.resolution)


def _upsample(f: Tensor, factor: int) -> Tensor:
    _, h, w = f.shape
    big_h, big_w = h * factor, w * factor
    ys = (np.arange(big_h, dtype=f.dtype) + 0.5) / factor - 0.5
    xs = (np.arange(big_w, dtype=f.dtype) + 0.5) / factor - 0.5
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(f, Tensor(np.stack([gx, gy]))) * float(factor)


def upsample_flow(flows: FlowPair, factor: int = 8) -> FlowPair:
    """Bilinear x8 upsampling (half-pixel aligned) with values scaled to full-res pixels."""
    if flows.resolution != "eighth":
        raise ResolutionError("upsample_flow expects eighth resolution flows")
    return FlowPair(_upsample(flows.f1, factor), _upsample(flows.f2, factor), "full")


def downsample_flow(flows: FlowPair) -> FlowPair:
    """8x8 box average with values rescaled to 1/8-pixel units."""
    if flows.resolution != "full":
        raise ResolutionError("downsample_flow expects full resolution flows")

    def down(f: Tensor) -> Tensor:
        return avg_pool2(avg_pool2(avg_pool2(f))) * 0.125

    return FlowPair(down(flows.f1), down(flows.f2), "eighth")
