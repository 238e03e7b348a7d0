"""Structured differentiable kernels built on :mod:`sstm.autodiff.tensor`."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result

AXES = {"x": -1, "y": -2, "t": -3}


def conv_axis(
    x: Tensor,
    kernel: Tensor,
    axis: str,
    stride: int = 1,
    pad: int = 0,
    bias: Tensor | None = None,
) -> Tensor:
    """1D cross-correlation of a channel-first tensor along one spatial/temporal axis.

    ``x`` is ``(C_in, ..., L, ...)`` and ``kernel`` is ``(C_out, C_in, k)``.
    ``axis`` names the convolved axis counted from the end: ``x`` is the last
    axis, ``y`` the one before it, ``t`` the one before that. Zero padding.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {sorted(AXES)}, got {axis!r}")
    if kernel.ndim != 3:
        raise ValueError(f"kernel must be (out, in, k), got shape {kernel.shape}")
    ax = x.ndim + AXES[axis]
    if ax < 1:
        raise ValueError(f"axis {axis!r} needs a {1 - AXES[axis]}-d input, got {x.ndim}-d")
    c_out, c_in, k = kernel.shape
    if x.shape[0] != c_in:
        raise ValueError(f"channel mismatch: input has {x.shape[0]}, kernel expects {c_in}")
    if stride < 1 or pad < 0:
        raise ValueError("stride must be >= 1 and pad >= 0")
    length = x.shape[ax]
    padded = length + 2 * pad
    if k > padded:
        raise ValueError(f"kernel size {k} exceeds padded extent {padded}")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {bias.shape}")
    n_out = (padded - k) // stride + 1

    xm = np.moveaxis(x.data, ax, -1)
    mid = xm.shape[1:-1]
    xm = xm.reshape(c_in, -1, length)
    positions = xm.shape[1]
    if pad:
        xm = np.pad(xm, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xm, k, axis=2)[:, :, ::stride][:, :, :n_out]
    cols = win.transpose(1, 2, 0, 3).reshape(positions * n_out, c_in * k)
    wmat = kernel.data.reshape(c_out, c_in * k)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(positions, n_out, c_out).transpose(2, 0, 1).reshape((c_out,) + mid + (n_out,))
    out = np.ascontiguousarray(np.moveaxis(out, -1, ax))

    def bw(g):
        gm = np.moveaxis(g, ax, -1).reshape(c_out, positions, n_out)
        gm = gm.transpose(1, 2, 0).reshape(positions * n_out, c_out)
        gx = gk = gb = None
        if kernel.requires_grad:
            gk = (gm.T @ cols).reshape(kernel.shape)
        if bias is not None and bias.requires_grad:
            gb = gm.sum(axis=0)
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(positions, n_out, c_in, k).transpose(2, 0, 1, 3)
            gxp = np.zeros((c_in, positions, padded), dtype=g.dtype)
            span = stride * (n_out - 1) + 1
            for j in range(k):
                gxp[:, :, j : j + span : stride] += dcols[..., j]
            gx = gxp[:, :, pad : pad + length].reshape((c_in,) + mid + (length,))
            gx = np.moveaxis(gx, -1, ax)
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result(out, inputs, bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return make_result(a.data @ b.data, (a, b), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), bw)


# ---------------------------------------------------------------------------
# bilinear sampling
# ---------------------------------------------------------------------------

def _corner_weights(coord: np.ndarray, extent: int):
    """Clamp a coordinate to [0, extent-1]; return base index, frac, in-range mask."""
    inside = (coord > 0) & (coord < extent - 1)
    c = np.clip(coord, 0, extent - 1)
    if extent == 1:
        base = np.zeros(c.shape, dtype=np.int64)
        return base, np.zeros_like(c), np.zeros(c.shape, dtype=bool)
    base = np.minimum(np.floor(c).astype(np.int64), extent - 2)
    return base, c - base, inside


def _bilinear_backward(g, vals, wx, wy, idx, inx, iny, map_shape, need_map, need_coords):
    """Gradient of bilinear sampling w.r.t. the sampled map and the coordinates."""
    b, c, h, w = map_shape
    v00, v01, v10, v11 = vals
    gmap = gcoords = None
    if need_map:
        flat = (np.arange(b * c).reshape(b, c, 1) * (h * w)).astype(np.int64)
        total = np.zeros(b * c * h * w, dtype=g.dtype)
        corners = (
            (idx[0], (1 - wx) * (1 - wy)),
            (idx[1], wx * (1 - wy)),
            (idx[2], (1 - wx) * wy),
            (idx[3], wx * wy),
        )
        for index, weight in corners:
            pos = (flat + index[:, None, :]).reshape(-1)
            total += np.bincount(pos, weights=(g * weight[:, None, :]).reshape(-1), minlength=total.size)
        gmap = total.reshape(map_shape).astype(g.dtype, copy=False)
    if need_coords:
        dx = (1 - wy)[:, None, :] * (v01 - v00) + wy[:, None, :] * (v11 - v10)
        dy = (1 - wx)[:, None, :] * (v10 - v00) + wx[:, None, :] * (v11 - v01)
        gx = (g * dx).sum(axis=1) * inx
        gy = (g * dy).sum(axis=1) * iny
        gcoords = np.stack([gx, gy], axis=1).astype(g.dtype, copy=False)
    return gmap, gcoords


def bilinear_sample(fmap: Tensor, coords: Tensor) -> Tensor:
    """Sample ``fmap`` at absolute pixel positions with border clamping.

    Unbatched: ``fmap`` is ``(C, H, W)``, ``coords`` is ``(2, *S)`` holding
    (x, y); result ``(C, *S)``. Batched: ``fmap`` ``(B, C, H, W)`` with
    ``coords`` ``(B, 2, *S)`` gives ``(B, C, *S)``, each batch entry sampling
    its own map.
    """
    batched = fmap.ndim == 4
    if not batched and fmap.ndim != 3:
        raise ValueError(f"fmap must be (C,H,W) or (B,C,H,W), got {fmap.shape}")
    cdata = coords.data if batched else coords.data[None]
    mdata = fmap.data if batched else fmap.data[None]
    if cdata.shape[1] != 2 or cdata.shape[0] != mdata.shape[0]:
        raise ValueError(f"coords shape {coords.shape} does not match fmap {fmap.shape}")
    b, c, h, w = mdata.shape
    sample_shape = cdata.shape[2:]
    cflat = cdata.reshape(b, 2, -1)
    x0, wx, inx = _corner_weights(cflat[:, 0], w)
    y0, wy, iny = _corner_weights(cflat[:, 1], h)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    idx = (y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1)
    mflat = mdata.reshape(b, c, h * w)
    vals = tuple(np.take_along_axis(mflat, i[:, None, :], axis=2) for i in idx)
    v00, v01, v10, v11 = vals
    wxe, wye = wx[:, None, :], wy[:, None, :]
    out = v00 * ((1 - wxe) * (1 - wye)) + v01 * (wxe * (1 - wye)) + v10 * ((1 - wxe) * wye) + v11 * (wxe * wye)
    out = out.astype(mdata.dtype, copy=False).reshape((b, c) + sample_shape)
    if not batched:
        out = out[0]

    def bw(g):
        gb = g if batched else g[None]
        gb = gb.reshape(b, c, -1)
        gmap, gcoords = _bilinear_backward(
            gb, vals, wx, wy, idx, inx, iny, (b, c, h, w), fmap.requires_grad, coords.requires_grad
        )
        if gmap is not None and not batched:
            gmap = gmap[0]
        if gcoords is not None:
            gcoords = gcoords.reshape(cdata.shape)
            if not batched:
                gcoords = gcoords[0]
        return gmap, gcoords

    return make_result(np.ascontiguousarray(out), (fmap, coords), bw)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean over the last two axes; odd extents are edge-replicated first."""
    if x.ndim < 2:
        raise ValueError("avg_pool2 needs at least 2 dimensions")
    h, w = x.shape[-2:]
    ph, pw = h % 2, w % 2
    data = x.data
    if ph or pw:
        widths = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
        data = np.pad(data, widths, mode="edge")
    hh, ww = data.shape[-2] // 2, data.shape[-1] // 2
    lead = data.shape[:-2]
    out = data.reshape(lead + (hh, 2, ww, 2)).mean(axis=(-3, -1))

    def bw(g):
        gp = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25
        if ph:
            gp[..., h - 1, :] += gp[..., h, :]
        if pw:
            gp[..., :, w - 1] += gp[..., :, w]
        return (np.ascontiguousarray(gp[..., :h, :w]),)

    return make_result(out.astype(x.dtype, copy=False), (x,), bw)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise every slice over the last two axes to zero mean, unit variance."""
    mu = x.data.mean(axis=(-2, -1), keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=(-2, -1), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def bw(g):
        gm = g.mean(axis=(-2, -1), keepdims=True)
        gxm = (g * xhat).mean(axis=(-2, -1), keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return make_result(xhat.astype(x.dtype, copy=False), (x,), bw)


def channel_norm(x: Tensor, axis: int = 0) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is taken as zero."""
    n = np.sqrt((x.data * x.data).sum(axis=axis))

    def bw(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        return (x.data * np.expand_dims(scale, axis),)

    return make_result(n, (x,), bw)
