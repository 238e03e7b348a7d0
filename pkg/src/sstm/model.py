"""End-to-end SSTM / SSTM++ assembly: config, weight registry, recurrent forward pass."""

from __future__ import annotations

import dataclasses
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .attention import AttentionWeights, aggregate_gru_input, attend_windows, attention_shapes
from .autodiff import Tensor, concat, getitem, relu, tanh
from .correlation import build_pyramid, check_corr_profile, corr_all_pairs, lookup_pair, window_channels
from .encoders import (
    context2d_shapes,
    context3d_shapes,
    context_encode_2d,
    context_encode_3d,
    feature_encode,
    feature_encoder_shapes,
)
from .flowpair import FlowPair
from .layers import Shapes, conv, conv_shapes
from .update import (
    GruState,
    GruStepTrace,
    apply_deltas,
    brightness_errors,
    downsample_flow,
    flow_head,
    flow_head_shapes,
    gru_shapes,
    gru_step,
    motion_encode,
    motion_encoder_shapes,
    residual_due,
    residual_hidden,
    upsample_flow,
)

VARIANTS = ("sstm", "sstm++")
WARM_START_MODES = ("none", "shift_pair")
CONTEXT_MODES = ("conv3d", "conv2d_twin")
H0_MODES = ("context", "zeros")
# the last flow-head layer starts small so early iterations do not overshoot
OUTPUT_GAIN = {"head.2.y.w": 0.1}
VARIANT_DEFAULTS = {
    "sstm": {"context_mode": "conv3d", "use_attention": False, "use_warp_errors": False},
    "sstm++": {"context_mode": "conv2d_twin", "use_attention": True, "use_warp_errors": True},
}


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    variant: str = "sstm++"
    iters: int = 12
    windows: int = 2
    frames: int = 3
    r_interval: int = 3
    gamma: float = 0.8
    warm_start: str = "none"
    context_mode: str = "conv2d_twin"
    use_attention: bool = True
    use_warp_errors: bool = True
    feature_dim: int = 256
    context_dim: int = 128
    hidden_dim: int = 128
    motion_dim: int = 128
    key_dim: int = 128
    heads: int = 1
    corr_levels: int = 4
    corr_radius: int = 4
    profile: str = "paper"
    h0_init: str = "context"
    freeze_alpha: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    @classmethod
    def for_variant(cls, variant: str = "sstm++", **overrides) -> "ModelConfig":
        if variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
        return cls(**{"variant": variant, **VARIANT_DEFAULTS[variant], **overrides})

    def validate(self) -> None:
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        need(self.variant in VARIANTS, f"variant must be one of {VARIANTS}")
        need(self.use_attention == (self.variant == "sstm++"), "sstm runs without attention, sstm++ with it")
        need(self.frames == 3, "this release supports exactly three input frames")
        need(self.windows == 2, "three frames give exactly two flow windows")
        need(self.iters >= 1, "iters must be >= 1")
        need(self.r_interval >= 1, "r_interval must be >= 1")
        need(0.0 < self.gamma <= 1.0, "gamma must be in (0, 1]")
        need(self.warm_start in WARM_START_MODES, f"warm_start must be one of {WARM_START_MODES}")
        need(self.context_mode in CONTEXT_MODES, f"context_mode must be one of {CONTEXT_MODES}")
        need(self.h0_init in H0_MODES, f"h0_init must be one of {H0_MODES}")
        need(self.profile in ("paper", "free"), "profile must be 'paper' or 'free'")
        for name in ("feature_dim", "context_dim", "hidden_dim", "motion_dim", "key_dim"):
            need(getattr(self, name) >= 8 and getattr(self, name) % 8 == 0, f"{name} must be a positive multiple of 8")
        need(self.key_dim % self.heads == 0 and self.motion_dim % self.heads == 0, "heads must divide key and motion dims")
        try:
            check_corr_profile(self.corr_levels, self.corr_radius, self.profile)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def scaled(self, divisor: int) -> "ModelConfig":
        """Divide every channel width by ``divisor``."""
        widths = ("feature_dim", "context_dim", "hidden_dim", "motion_dim", "key_dim")
        return self.replace(**{k: getattr(self, k) // divisor for k in widths})

    @property
    def corr_dim(self) -> int:
        return window_channels(self.corr_levels, self.corr_radius)

    @property
    def gru_input_dim(self) -> int:
        return self.context_dim + self.motion_dim * (2 if self.use_attention else 1)

    # key=value text, shared by config files and checkpoints
    def to_lines(self) -> list[str]:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name}={str(v).lower() if isinstance(v, bool) else v}")
        return out

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base: "ModelConfig | None" = None) -> "ModelConfig":
        base = base or cls()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        changes = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _parse_value(raw, getattr(base, key))
        merged = {f.name: getattr(base, f.name) for f in dataclasses.fields(cls)}
        merged.update(changes)
        return cls(**merged)

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "ModelConfig":
        return cls.from_mapping(parse_key_values(lines))


def _parse_value(raw: str, like):
    raw = raw.strip()
    if isinstance(like, bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def parse_key_values(lines: Sequence[str]) -> "OrderedDict[str, str]":
    out: OrderedDict[str, str] = OrderedDict()
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# weight registry
# ---------------------------------------------------------------------------

class ModelWeights(Mapping[str, Tensor]):
    """Ordered, name-unique registry of parameter tensors."""

    def __init__(self, tensors: Mapping[str, Tensor] | None = None) -> None:
        self._t: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name: str, t: Tensor) -> None:
        if name in self._t:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._t[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._t[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    def param_count(self) -> int:
        return sum(t.size for t in self._t.values())

    def astype(self, dtype, requires_grad: bool = True) -> "ModelWeights":
        return ModelWeights({k: Tensor(t.data.astype(dtype), requires_grad=requires_grad) for k, t in self._t.items()})

    def copy(self) -> "ModelWeights":
        return ModelWeights({k: Tensor(t.data.copy(), requires_grad=t.requires_grad) for k, t in self._t.items()})

    def zero_grad(self) -> None:
        for t in self._t.values():
            t.grad = None

    def shapes(self) -> Shapes:
        return {k: t.shape for k, t in self._t.items()}


def param_shapes(config: ModelConfig) -> Shapes:
    shapes: Shapes = {}
    shapes.update(feature_encoder_shapes(config.feature_dim))
    if config.context_mode == "conv3d":
        shapes.update(context3d_shapes(config.context_dim))
    else:
        shapes.update(context2d_shapes(config.context_dim))
    if config.h0_init == "context":
        shapes.update(conv_shapes("hinit", config.context_dim, config.hidden_dim, 1))
    shapes.update(motion_encoder_shapes(config.corr_dim, config.motion_dim, config.use_warp_errors))
    if config.use_attention:
        shapes.update(attention_shapes(config.context_dim, config.motion_dim, config.key_dim))
    shapes.update(gru_shapes(config.hidden_dim, config.gru_input_dim))
    shapes.update(flow_head_shapes(config.hidden_dim))
    return shapes


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if len(shape) == 3:  # conv (out, in, k)
        return shape[1] * shape[2]
    return shape[0]  # projection matrices (in, out)


def init_weights(config: ModelConfig, seed: int | None = None) -> ModelWeights:
    """Deterministic fan-in scaled uniform init; biases and the attention gain start at zero."""
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    weights = ModelWeights()
    for name, shape in param_shapes(config).items():
        if name.endswith(".b") or name.endswith(".alpha"):
            data = np.zeros(shape, np.float32)
        else:
            bound = np.sqrt(3.0 / _fan_in(name, shape)) * OUTPUT_GAIN.get(name, 1.0)
            data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        weights.add(name, Tensor(data, requires_grad=True))
    return weights


def trainable_names(weights: ModelWeights, config: ModelConfig) -> list[str]:
    return [k for k in weights if not (config.freeze_alpha and k.endswith(".alpha"))]


# ---------------------------------------------------------------------------
# frames and warm start
# ---------------------------------------------------------------------------

def pad_to_multiple(image: np.ndarray, multiple: int = 8) -> np.ndarray:
    h, w = image.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not ph and not pw:
        return image
    widths = [(0, 0)] * (image.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(image, widths, mode="edge")


def normalize_frame(image: np.ndarray) -> np.ndarray:
    """Map 0..255 intensities to [-1, 1]."""
    return (np.asarray(image, np.float32) / 127.5 - 1.0).astype(np.float32)


def warm_start_init(prev: FlowPair | None, mode: str, hw: tuple[int, int] | None = None, resolution: str = "eighth") -> FlowPair:
    """Initial flows for the next window: ``(prev.f2, 0)`` for shift_pair, zeros otherwise."""
    if mode not in WARM_START_MODES:
        raise ConfigError(f"warm start mode must be one of {WARM_START_MODES}, got {mode!r}")
    if prev is None:
        if hw is None:
            raise ValueError("need an extent when there is no previous estimate")
        return FlowPair.zeros(*hw, resolution=resolution)
    if mode == "none":
        return FlowPair.zeros(*prev.hw, resolution=prev.resolution, dtype=prev.f1.dtype)
    zero = Tensor(np.zeros_like(prev.f2.data))
    return FlowPair(prev.f2.detach(), zero, prev.resolution)


def _init_to_eighth(init: FlowPair, padded_hw: tuple[int, int]) -> FlowPair:
    if init.resolution == "eighth":
        if init.hw != (padded_hw[0] // 8, padded_hw[1] // 8):
            raise ValueError(f"initial flow extent {init.hw} does not match the padded input")
        return init.detach()
    f1 = Tensor(pad_to_multiple(init.f1.data))
    f2 = Tensor(pad_to_multiple(init.f2.data))
    if f1.shape[1:] != padded_hw:
        raise ValueError(f"initial flow extent {init.hw} does not match the input")
    return downsample_flow(FlowPair(f1, f2, "full")).detach()


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

@dataclass
class ForwardResult:
    flows: list[FlowPair]  # full resolution, one per iteration; the last is the estimate
    low: FlowPair  # final eighth resolution pair (warm-start source)
    states: list[GruState] = field(default_factory=list)
    pre_residual: list[GruState] = field(default_factory=list)
    traces: list[GruStepTrace] = field(default_factory=list)

    @property
    def final(self) -> FlowPair:
        return self.flows[-1]


def _crop(f: Tensor, h: int, w: int) -> Tensor:
    if f.shape[1:] == (h, w):
        return f
    return getitem(f, (slice(None), slice(0, h), slice(0, w)))


def run(
    frames: Sequence[np.ndarray],
    weights: Mapping[str, Tensor],
    config: ModelConfig,
    init: FlowPair | None = None,
    iters: int | None = None,
) -> ForwardResult:
    """Full recurrent pass returning every intermediate pair plus GRU diagnostics."""
    if len(frames) != config.frames:
        raise ValueError(f"expected {config.frames} frames, got {len(frames)}")
    imgs = [np.asarray(f, dtype=np.float32) for f in frames]
    shape = imgs[0].shape
    if any(im.shape != shape for im in imgs) or len(shape) != 3:
        raise ValueError(f"frames must share a C x H x W shape, got {[im.shape for im in imgs]}")
    if not all(np.isfinite(im).all() for im in imgs):
        raise ValueError("frames contain non-finite values")
    h, w = shape[1:]
    dtype = weights[next(iter(weights))].dtype
    padded = [normalize_frame(pad_to_multiple(im)).astype(dtype) for im in imgs]
    hp, wp = padded[0].shape[1:]
    clip = Tensor(np.stack(padded, axis=1))

    fmaps = feature_encode(clip, weights)
    f1, f2, f3 = (getitem(fmaps, (slice(None), i)) for i in range(3))
    pyr12 = build_pyramid(corr_all_pairs(f1, f2), config.corr_levels)
    pyr23 = build_pyramid(corr_all_pairs(f2, f3), config.corr_levels)

    if config.context_mode == "conv3d":
        ctx = context_encode_3d(clip, weights, config.context_dim)
    else:
        ctx = context_encode_2d(Tensor(padded[0]), Tensor(padded[1]), weights, config.context_dim)
    if config.h0_init == "context":
        state = GruState(tanh(conv(ctx, weights, "hinit", "x")))
    else:
        state = GruState(Tensor(np.zeros((config.hidden_dim,) + ctx.shape[1:], dtype)))
    ctx_in = relu(ctx)
    attn = AttentionWeights.from_registry(weights) if config.use_attention else None

    flows = _init_to_eighth(init, (hp, wp)) if init is not None else FlowPair.zeros(hp // 8, wp // 8, dtype=dtype)
    result = ForwardResult([], flows, [state])
    r = config.r_interval
    for n in range(1, (iters or config.iters) + 1):
        flows = flows.detach()
        corr = lookup_pair(pyr12, pyr23, flows, config.corr_radius, config.profile)
        errs = brightness_errors(f1, f2, f3, flows) if config.use_warp_errors else None
        motion = motion_encode(corr, flows, errs, weights)
        if attn is not None:
            y = attend_windows(ctx_in, motion, attn, config.heads)
            x = aggregate_gru_input(ctx_in, y, motion)
        else:
            x = concat([ctx_in, motion], axis=0)
        fresh, trace = gru_step(state, x, weights)
        saved = result.states[0] if residual_due(n, r) else None
        state = residual_hidden(n, r, fresh, saved)
        result.states.append(state)
        result.pre_residual.append(fresh)
        result.traces.append(trace)
        d1, d2 = flow_head(state, weights)
        flows = apply_deltas(flows, d1, d2)
        up = upsample_flow(flows)
        result.flows.append(FlowPair(_crop(up.f1, h, w), _crop(up.f2, h, w), "full"))
    result.low = flows
    return result


def forward(
    frames: Sequence[np.ndarray],
    weights: Mapping[str, Tensor],
    config: ModelConfig,
    init: FlowPair | None = None,
) -> list[FlowPair]:
    """Per-iteration full-resolution flow pairs for three ``3 x H x W`` frames (0..255)."""
    return run(frames, weights, config, init).flows


# ---------------------------------------------------------------------------
# ablation bridge
# ---------------------------------------------------------------------------

def sstm_weights_from_sstmpp(weights: ModelWeights, config: ModelConfig) -> tuple[ModelWeights, ModelConfig]:
    """Fold an SSTM++ registry (with alpha = 0) into the equivalent SSTM registry.

    With zero attention gain the aggregated motion equals the raw motion, so
    the GRU input ``[C | Y | M]`` acts like ``[C | M]`` whose motion kernel is
    the sum of the Y and M kernel slices. All other tensors map by name.
    """
    if config.variant != "sstm++":
        raise ConfigError("source registry must be sstm++")
    target = config.replace(variant="sstm", use_attention=False, freeze_alpha=False)
    shapes = param_shapes(target)
    hd, lc, lm = config.hidden_dim, config.context_dim, config.motion_dim
    out = ModelWeights()
    for name, shape in shapes.items():
        src = weights[name].data
        if name in ("gru.z.x.w", "gru.r.x.w", "gru.q.x.w"):
            lead = hd if name != "gru.q.x.w" else 0
            ctx_end = lead + lc
            folded = src[:, ctx_end : ctx_end + lm] + src[:, ctx_end + lm : ctx_end + 2 * lm]
            src = np.concatenate([src[:, :ctx_end], folded], axis=1)
        if src.shape != shape:
            raise ConfigError(f"{name}: shape {src.shape} cannot map to {shape}")
        out.add(name, Tensor(src.copy(), requires_grad=True))
    return out, target


def stack_flows(pairs: Sequence[FlowPair]) -> np.ndarray:
    return np.stack([np.stack(p.numpy()) for p in pairs])
