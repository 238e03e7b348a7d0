"""Slow, loop-based reference implementations used to cross-check the fast kernels.

Nothing here imports the autodiff layer; every function works on plain
float64 numpy arrays and favours obviousness over speed.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

AXIS_INDEX = {"x": -1, "y": -2, "t": -3}


def conv_axis(x, kernel, axis, stride=1, pad=0, bias=None):
    x = np.asarray(x, np.float64)
    kernel = np.asarray(kernel, np.float64)
    ax = x.ndim + AXIS_INDEX[axis]
    moved = np.moveaxis(x, ax, -1)
    c_out, c_in, k = kernel.shape
    n = moved.shape[-1]
    n_out = (n + 2 * pad - k) // stride + 1
    rest = moved.shape[1:-1]
    out = np.zeros((c_out,) + rest + (n_out,))
    for o in range(c_out):
        for idx in np.ndindex(*rest):
            for j in range(n_out):
                acc = 0.0 if bias is None else float(bias[o])
                for i in range(c_in):
                    for tap in range(k):
                        src = j * stride + tap - pad
                        if 0 <= src < n:
                            acc += kernel[o, i, tap] * moved[(i,) + idx + (src,)]
                out[(o,) + idx + (j,)] = acc
    return np.moveaxis(out, -1, ax)


def conv3d(x, kernel, bias=None):
    """Direct zero-padded 'same' 3D cross-correlation; ``kernel`` is ``out x in x kt x ky x kx``."""
    x = np.asarray(x, np.float64)
    c_out, c_in, kt, ky, kx = kernel.shape
    _, t, h, w = x.shape
    pt, py, px = kt // 2, ky // 2, kx // 2
    padded = np.zeros((c_in, t + 2 * pt, h + 2 * py, w + 2 * px))
    padded[:, pt : pt + t, py : py + h, px : px + w] = x
    out = np.zeros((c_out, t, h, w))
    for o in range(c_out):
        for a in range(t):
            for b in range(h):
                for c in range(w):
                    patch = padded[:, a : a + kt, b : b + ky, c : c + kx]
                    out[o, a, b, c] = np.sum(patch * kernel[o]) + (0.0 if bias is None else bias[o])
    return out


def compose_separable(wx, wy, wt):
    """Full 3D kernel equal to the x -> y -> t chain of 1D kernels."""
    return np.einsum("obt,bay,aix->oityx", wt, wy, wx)


def matmul(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = sum(float(a[i, p]) * float(b[p, j]) for p in range(k))
    return out


def sample_point(plane, x, y):
    """Bilinear value of a 2D plane at (x, y) with coordinates clamped to the border."""
    h, w = plane.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    return (
        plane[y0, x0] * (1 - fx) * (1 - fy)
        + plane[y0, x1] * fx * (1 - fy)
        + plane[y1, x0] * (1 - fx) * fy
        + plane[y1, x1] * fx * fy
    )


def bilinear_sample(fmap, coords):
    fmap = np.asarray(fmap, np.float64)
    c = fmap.shape[0]
    out_shape = coords.shape[1:]
    out = np.zeros((c,) + out_shape)
    for ch in range(c):
        for idx in np.ndindex(*out_shape):
            out[(ch,) + idx] = sample_point(fmap[ch], float(coords[(0,) + idx]), float(coords[(1,) + idx]))
    return out


def avg_pool2(x):
    x = np.asarray(x, np.float64)
    h, w = x.shape[-2:]
    if h % 2:
        x = np.concatenate([x, x[..., -1:, :]], axis=-2)
    if w % 2:
        x = np.concatenate([x, x[..., -1:]], axis=-1)
    h2, w2 = x.shape[-2] // 2, x.shape[-1] // 2
    out = np.zeros(x.shape[:-2] + (h2, w2))
    for i in range(h2):
        for j in range(w2):
            out[..., i, j] = (x[..., 2 * i, 2 * j] + x[..., 2 * i + 1, 2 * j] + x[..., 2 * i, 2 * j + 1] + x[..., 2 * i + 1, 2 * j + 1]) / 4
    return out


def corr_all_pairs(a, b):
    d, h, w = a.shape
    out = np.zeros((h * w, h, w))
    for i in range(h):
        for j in range(w):
            for k in range(h):
                for l in range(w):
                    out[i * w + j, k, l] = sum(float(a[c, i, j]) * float(b[c, k, l]) for c in range(d)) / math.sqrt(d)
    return out


def pyramid(volume, levels):
    out = [np.asarray(volume, np.float64)]
    for _ in range(levels - 1):
        out.append(avg_pool2(out[-1]))
    return out


def lookup(levels, flow, radius):
    """Per query pixel, sample the window around ``(pixel + flow) / 2^l`` on each level."""
    h, w = flow.shape[1:]
    k = (2 * radius + 1) ** 2
    out = np.zeros((len(levels) * k, h, w))
    for i in range(h):
        for j in range(w):
            q = i * w + j
            for lvl, vol in enumerate(levels):
                cx = (j + float(flow[0, i, j])) / 2**lvl
                cy = (i + float(flow[1, i, j])) / 2**lvl
                ch = lvl * k
                for dy in range(-radius, radius + 1):
                    for dx in range(-radius, radius + 1):
                        out[ch, i, j] = sample_point(vol[q], cx + dx, cy + dy)
                        ch += 1
    return out


def attend(context, motion, wq, wk, wv, alpha, heads=1):
    """Loop form of ``Y = M + alpha * softmax(q k^T / sqrt(d)) (M W_v)`` over flattened positions."""
    lc, h, w = context.shape
    lm = motion.shape[0]
    n = h * w
    cflat = context.reshape(lc, n)
    mflat = motion.reshape(lm, n)
    dk = wq.shape[1]
    step, vstep = dk // heads, lm // heads
    y = mflat.copy()
    for p in range(n):
        for head in range(heads):
            ks = range(head * step, (head + 1) * step)
            logits = []
            for s in range(n):
                q = [sum(cflat[c, p] * wq[c, kk] for c in range(lc)) for kk in ks]
                kv = [sum(cflat[c, s] * wk[c, kk] for c in range(lc)) for kk in ks]
                logits.append(sum(a * b for a, b in zip(q, kv)) / math.sqrt(step))
            top = max(logits)
            weights = [math.exp(v - top) for v in logits]
            z = sum(weights)
            for o in range(head * vstep, (head + 1) * vstep):
                acc = 0.0
                for s in range(n):
                    value = sum(mflat[c, s] * wv[c, o] for c in range(lm))
                    acc += weights[s] / z * value
                y[o, p] += alpha * acc
    return y.reshape(lm, h, w)


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def gru_step(h, x, kernels):
    """Update, reset and candidate from direct 3D convolutions.

    ``kernels[gate]`` is ``(K3, bias)`` with K3 a full ``out x in x 3 x 3 x 3`` kernel.
    """
    hx = np.concatenate([h, x], axis=0)
    z = _sigmoid(conv3d(hx, *kernels["z"]))
    r = _sigmoid(conv3d(hx, *kernels["r"]))
    q = np.tanh(conv3d(x, *kernels["q"]) + r * h)
    return z * h + (1 - z) * q, z, r, q


def warp(fmap, flow):
    h, w = flow.shape[1:]
    out = np.zeros_like(fmap, dtype=np.float64)
    for c in range(fmap.shape[0]):
        for i in range(h):
            for j in range(w):
                out[c, i, j] = sample_point(fmap[c], j + float(flow[0, i, j]), i + float(flow[1, i, j]))
    return out


def brightness_errors(f1, f2, f3, flow1, flow2):
    e1 = np.sqrt(((warp(f2, flow1) - f1) ** 2).sum(axis=0))
    e2 = np.sqrt(((warp(f3, flow2) - f2) ** 2).sum(axis=0))
    e3 = np.sqrt(((warp(warp(f3, flow2), flow1) - f1) ** 2).sum(axis=0))
    return np.stack([e1, e2, e3])


def residual_unroll(h0, fresh, r):
    """Post-residual states h_1..h_N from h_0 and the raw GRU outputs of steps 1..N.

    Every r-th step adds the initial state h_0.
    """
    return [f + h0 if n % r == 0 else f for n, f in enumerate(fresh, start=1)]


def epe(pred, gt, mask=None):
    h, w = pred.shape[1:]
    total, count = 0.0, 0
    for i in range(h):
        for j in range(w):
            if mask is not None and not mask[i, j]:
                continue
            total += math.hypot(float(pred[0, i, j] - gt[0, i, j]), float(pred[1, i, j] - gt[1, i, j]))
            count += 1
    return total / count


def chamfer_distance(mask):
    """Dijkstra over the 8-neighbour grid with edge weights 3 (axial) and 4 (diagonal), divided by 3."""
    h, w = mask.shape
    dist = np.full((h, w), np.inf)
    heap = []
    for i, j in zip(*np.nonzero(mask)):
        dist[i, j] = 0.0
        heap.append((0.0, int(i), int(j)))
    heapq.heapify(heap)
    steps = [(di, dj, 3.0 if di == 0 or dj == 0 else 4.0) for di in (-1, 0, 1) for dj in (-1, 0, 1) if di or dj]
    while heap:
        d, i, j = heapq.heappop(heap)
        if d > dist[i, j]:
            continue
        for di, dj, c in steps:
            a, b = i + di, j + dj
            if 0 <= a < h and 0 <= b < w and d + c < dist[a, b]:
                dist[a, b] = d + c
                heapq.heappush(heap, (d + c, a, b))
    return dist / 3.0
