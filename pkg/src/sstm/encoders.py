"""Feature encoder and the two context encoders (separable 3D cascade, shared 2D twin).

Tensor layout is channel-first: images are ``C x H x W``, clips ``C x T x H x W``.
The feature encoder accepts either, applying the same weights to every frame.
"""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import Tensor, instance_norm, relu, stack
from .layers import Shapes, Weights, conv, conv_shapes, sep_conv, sep_shapes, subsample_hw

SPT_VARIANTS = ("SPT1", "SPT2", "SPT3", "SPT4")


# ---------------------------------------------------------------------------
# feature encoder
# ---------------------------------------------------------------------------

def feature_widths(out_dim: int) -> tuple[int, int, int]:
    return out_dim // 4, 3 * out_dim // 8, out_dim // 2


def feature_encoder_shapes(out_dim: int = 256, in_ch: int = 3, prefix: str = "fnet") -> Shapes:
    c0, c1, c2 = feature_widths(out_dim)
    return {
        **sep_shapes(f"{prefix}.stem", in_ch, c0, k=7),
        **sep_shapes(f"{prefix}.down1", c0, c1),
        **sep_shapes(f"{prefix}.down2", c1, c2),
        **sep_shapes(f"{prefix}.res.a", c2, c2),
        **sep_shapes(f"{prefix}.res.b", c2, c2),
        **conv_shapes(f"{prefix}.proj", c2, out_dim, 1),
    }


def feature_encode(image: Tensor, w: Weights, prefix: str = "fnet") -> Tensor:
    """Encode a ``3 x H x W`` image (or ``3 x T x H x W`` clip) to ``D x H/8 x W/8``."""
    h, wd = image.shape[-2:]
    if h % 8 or wd % 8:
        raise ValueError(f"image extents must be multiples of 8, got {h}x{wd}; pad first")
    x = relu(instance_norm(sep_conv(image, w, f"{prefix}.stem", stride=2)))
    x = relu(instance_norm(sep_conv(x, w, f"{prefix}.down1", stride=2)))
    x = relu(instance_norm(sep_conv(x, w, f"{prefix}.down2", stride=2)))
    y = relu(instance_norm(sep_conv(x, w, f"{prefix}.res.a")))
    y = instance_norm(sep_conv(y, w, f"{prefix}.res.b"))
    x = relu(x + y)
    return conv(x, w, f"{prefix}.proj", "x")


# ---------------------------------------------------------------------------
# separable spatiotemporal blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SptBlockSpec:
    """One separable spatiotemporal block.

    SPT1: temporal conv, then separable spatial conv.
    SPT2: separable spatial conv, then temporal conv.
    SPT3: spatial and temporal branches in parallel, summed.
    SPT4: separable spatial conv only (time preserving).
    A temporal kernel of 2 with no padding shortens the clip by one frame.
    """

    variant: str
    c_in: int
    c_out: int
    stride: int = 1
    t_kernel: int = 3
    t_pad: int = 1

    def __post_init__(self) -> None:
        if self.variant not in SPT_VARIANTS:
            raise ValueError(f"unknown SPT variant {self.variant!r}")
        if self.variant == "SPT4" and self.shrinks_time:
            raise ValueError("SPT4 has no temporal conv and cannot change the clip length")

    @property
    def shrinks_time(self) -> bool:
        return self.t_kernel - 1 != 2 * self.t_pad

    @property
    def projected(self) -> bool:
        return self.c_in != self.c_out or self.stride != 1 or self.shrinks_time


def spt_shapes(name: str, spec: SptBlockSpec) -> Shapes:
    v, ci, co, kt = spec.variant, spec.c_in, spec.c_out, spec.t_kernel
    if v == "SPT1":
        out = {**conv_shapes(f"{name}.t", ci, co, kt), **sep_shapes(f"{name}.s", co, co)}
    elif v == "SPT2":
        out = {**sep_shapes(f"{name}.s", ci, co), **conv_shapes(f"{name}.t", co, co, kt)}
    elif v == "SPT3":
        out = {**sep_shapes(f"{name}.s", ci, co), **conv_shapes(f"{name}.t", ci, co, kt)}
    else:
        out = sep_shapes(f"{name}.s", ci, co)
    if spec.projected:
        out.update(conv_shapes(f"{name}.proj", ci, co, kt if spec.shrinks_time else 1))
    return out


def spt_block(x: Tensor, spec: SptBlockSpec, w: Weights, name: str) -> Tensor:
    """Pre-activated separable block with a residual (projected when shapes change)."""
    if x.ndim != 4 or x.shape[0] != spec.c_in:
        raise ValueError(f"{name}: expected {spec.c_in} x T x H x W input, got {x.shape}")
    a = relu(x)
    v, s = spec.variant, spec.stride
    if v == "SPT1":
        a = conv(a, w, f"{name}.t", "t", pad=spec.t_pad)
        a = sep_conv(relu(a), w, f"{name}.s", stride=s)
    elif v == "SPT2":
        a = sep_conv(a, w, f"{name}.s", stride=s)
        a = conv(relu(a), w, f"{name}.t", "t", pad=spec.t_pad)
    elif v == "SPT3":
        spatial = sep_conv(a, w, f"{name}.s", stride=s)
        temporal = conv(subsample_hw(a, s), w, f"{name}.t", "t", pad=spec.t_pad)
        a = spatial + temporal
    else:
        a = sep_conv(a, w, f"{name}.s", stride=s)

    if not spec.projected:
        return x + a
    if spec.shrinks_time:
        res = conv(subsample_hw(x, s), w, f"{name}.proj", "t", pad=0)
    else:
        res = conv(subsample_hw(x, s), w, f"{name}.proj", "x", pad=0)
    return res + a


# ---------------------------------------------------------------------------
# context encoders
# ---------------------------------------------------------------------------

def context_widths(out_dim: int) -> tuple[int, int, int]:
    return out_dim // 2, 3 * out_dim // 4, out_dim


def context3d_specs(out_dim: int = 128, in_ch: int = 3) -> list[SptBlockSpec]:
    c0, c1, c2 = context_widths(out_dim)
    return [
        SptBlockSpec("SPT1", in_ch, c0, stride=2),
        SptBlockSpec("SPT2", c0, c0),
        SptBlockSpec("SPT3", c0, c1, stride=2),
        SptBlockSpec("SPT4", c1, c1),
        SptBlockSpec("SPT1", c1, c2, stride=2),
        SptBlockSpec("SPT2", c2, c2, t_kernel=2, t_pad=0),
    ]


def context2d_specs(out_dim: int = 128, in_ch: int = 3) -> list[SptBlockSpec]:
    c0, c1, c2 = context_widths(out_dim)
    return [
        SptBlockSpec("SPT4", in_ch, c0, stride=2),
        SptBlockSpec("SPT4", c0, c0),
        SptBlockSpec("SPT4", c0, c1, stride=2),
        SptBlockSpec("SPT4", c1, c1),
        SptBlockSpec("SPT4", c1, c2, stride=2),
        SptBlockSpec("SPT4", c2, c2),
    ]


def _cascade_shapes(prefix: str, specs: list[SptBlockSpec]) -> Shapes:
    out: Shapes = {}
    for i, spec in enumerate(specs, start=1):
        out.update(spt_shapes(f"{prefix}.b{i}", spec))
    return out


def context3d_shapes(out_dim: int = 128) -> Shapes:
    return _cascade_shapes("cnet3d", context3d_specs(out_dim))


def context2d_shapes(out_dim: int = 128) -> Shapes:
    return _cascade_shapes("cnet2d", context2d_specs(out_dim))


def context_encode_3d(frames: Tensor, w: Weights, out_dim: int = 128) -> Tensor:
    """Six cascaded SPT blocks over a ``3 x 3 x H x W`` clip -> ``D x 2 x H/8 x W/8``."""
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise ValueError(f"expected C x 3 x H x W frames (three in temporal order), got {frames.shape}")
    x = frames
    for i, spec in enumerate(context3d_specs(out_dim, frames.shape[0]), start=1):
        x = spt_block(x, spec, w, f"cnet3d.b{i}")
    return x


def context_encode_2d(image1: Tensor, image2: Tensor, w: Weights, out_dim: int = 128) -> Tensor:
    """Shared spatial encoder on the first two frames, stacked on a time axis."""
    if image1.shape != image2.shape or image1.ndim != 3:
        raise ValueError(f"expected two C x H x W frames of equal shape, got {image1.shape}, {image2.shape}")
    x = stack([image1, image2], axis=1)
    for i, spec in enumerate(context2d_specs(out_dim, image1.shape[0]), start=1):
        x = spt_block(x, spec, w, f"cnet2d.b{i}")
    return x
