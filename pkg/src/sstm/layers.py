"""Parameter-shape bookkeeping and the conv building blocks shared by all modules.

Every learned convolution is a 1D :func:`conv_axis` along x, y or t. A module
describes its parameters as an ordered ``{name: shape}`` mapping and reads
them back from a flat weights mapping at call time.
"""

from __future__ import annotations

from typing import Mapping

from .autodiff import Tensor, conv_axis, getitem

Weights = Mapping[str, Tensor]
Shapes = dict[str, tuple[int, ...]]


def conv_shapes(name: str, c_in: int, c_out: int, k: int, bias: bool = True) -> Shapes:
    out: Shapes = {f"{name}.w": (c_out, c_in, k)}
    if bias:
        out[f"{name}.b"] = (c_out,)
    return out


def sep_shapes(name: str, c_in: int, c_out: int, k: int = 3) -> Shapes:
    """x-conv then y-conv; only the last stage carries a bias."""
    return {**conv_shapes(f"{name}.x", c_in, c_out, k, bias=False), **conv_shapes(f"{name}.y", c_out, c_out, k)}


def conv(x: Tensor, w: Weights, name: str, axis: str, stride: int = 1, pad: int | None = None) -> Tensor:
    kernel = w[f"{name}.w"]
    k = kernel.shape[2]
    if pad is None:
        pad = k // 2
    return conv_axis(x, kernel, axis, stride, pad, w.get(f"{name}.b"))


def sep_conv(x: Tensor, w: Weights, name: str, stride: int = 1) -> Tensor:
    x = conv(x, w, f"{name}.x", "x", stride)
    return conv(x, w, f"{name}.y", "y", stride)


def subsample_hw(x: Tensor, stride: int) -> Tensor:
    if stride == 1:
        return x
    index = (Ellipsis, slice(None, None, stride), slice(None, None, stride))
    return getitem(x, index)


def count(shapes: Mapping[str, tuple[int, ...]]) -> int:
    total = 0
    for shape in shapes.values():
        n = 1
        for s in shape:
            n *= s
        total += n
    return total
