"""Toy-scale training on synthetic scenes: Adam with global-norm clipping."""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .autodiff import GradTape, backward, no_grad
from .losses import loss1, loss2
from .metrics import RegionSpec, band_stats, endpoint_errors, occlusion_distance, outliers
from .model import ModelConfig, ModelWeights, forward, init_weights, trainable_names
from .synth import Sample, SceneDistribution, sample_at

D_BAND = RegionSpec("occ_distance", 0.0, 10.0)

# toy scale: every channel width divided by 4, four refinement steps
TOY_WIDTH_DIVISOR = 4
TOY_ITERS = 4


def toy_model_config(variant: str = "sstm++", **overrides) -> ModelConfig:
    return ModelConfig.for_variant(variant, iters=TOY_ITERS).scaled(TOY_WIDTH_DIVISOR).replace(**overrides)


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 4e-4
    clip: float = 1.0
    log_every: int = 50
    val_count: int = 16
    seed: int = 0
    loss: str = "loss1"
    height: int = 64
    width: int = 64
    max_motion: float = 4.0
    batch: int = 16  # samples whose gradients are averaged per optimizer step
    cell_range: tuple[float, float] = (4.0, 8.0)

    def distribution(self) -> SceneDistribution:
        return SceneDistribution(
            height=self.height,
            width=self.width,
            max_fg_motion=self.max_motion,
            max_bg_motion=self.max_motion,
            cell_range=self.cell_range,
        )


class Adam:
    def __init__(self, names: Iterable[str], lr: float = 4e-4, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
        self.names = list(names)
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, weights: ModelWeights, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for name in self.names:
            g = grads.get(name)
            if g is None:
                continue
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p = weights[name]
            p.data = (p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    evals: list[tuple[int, dict]] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    def final_loss(self, window: int = 50) -> float:
        tail = self.losses[-window:]
        return float(np.mean(tail))


def train_step(
    weights: ModelWeights, config: ModelConfig, samples: list[Sample], opt: Adam, clip: float, loss_name: str
) -> float:
    """One optimizer step on the mean loss of ``samples``; returns that mean."""
    weights.zero_grad()
    loss_fn = loss1 if loss_name == "loss1" else loss2
    total = 0.0
    for sample in samples:
        with GradTape():
            preds = forward(sample.frames, weights, config)
            loss = loss_fn(preds, sample.gt, config.gamma) * (1.0 / len(samples))
            backward(loss)
        total += float(loss.item())
    grads = {n: weights[n].grad.copy() for n in opt.names if weights[n].grad is not None}
    clip_global_norm(grads, clip)
    opt.step(weights, grads)
    return total


def validation_samples(tc: TrainConfig) -> list[Sample]:
    dist = tc.distribution()
    return [sample_at(dist, tc.seed, 2 * i + 1) for i in range(tc.val_count)]


def evaluate(weights: ModelWeights, config: ModelConfig, samples: Iterable[Sample]) -> dict[str, float]:
    """Pooled EPE over both flows, Fl and the d0-10 band of the second flow."""
    n = err_sum = bad = 0
    band_n, band_sum = 0, 0.0
    epe2_sum = 0.0
    pix2 = 0
    with no_grad():
        for s in samples:
            final = forward(s.frames, weights, config)[-1]
            for pred, gt in ((final.f1.data, s.gt.gt_f1), (final.f2.data, s.gt.gt_f2)):
                e = endpoint_errors(pred, gt)
                n += e.size
                err_sum += float(e.sum())
                bad += int(outliers(pred, gt).sum())
            e2 = endpoint_errors(final.f2.data, s.gt.gt_f2)
            epe2_sum += float(e2.sum())
            pix2 += e2.size
            if s.gt.occlusion_mask is not None and s.gt.occlusion_mask.any():
                dist = occlusion_distance(s.gt.occlusion_mask)
                c, t = band_stats(final.f2.data, s.gt.gt_f2, D_BAND, dist)
                band_n += c
                band_sum += t
    return {
        "epe": err_sum / n,
        "epe_f2": epe2_sum / pix2,
        "fl": 100.0 * bad / n,
        "epe_d0-10": band_sum / band_n if band_n else math.nan,
        "count_d0-10": band_n,
    }


def train(
    config: ModelConfig,
    tc: TrainConfig,
    weights: ModelWeights | None = None,
    log: Callable[[str], None] | None = print,
) -> tuple[ModelWeights, TrainLog]:
    """Optimise the sequence loss on a fresh training sample per step (even stream indices)."""
    weights = init_weights(config) if weights is None else weights
    opt = Adam(trainable_names(weights, config), lr=tc.lr)
    dist = tc.distribution()
    val = validation_samples(tc) if tc.val_count else []
    out = TrainLog()
    start = time.perf_counter()
    for step in range(tc.steps):
        batch = [sample_at(dist, tc.seed, 2 * (step * tc.batch + j)) for j in range(tc.batch)]
        loss = train_step(weights, config, batch, opt, tc.clip, tc.loss)
        if not math.isfinite(loss):
            raise FloatingPointError(f"loss became non-finite at step {step}")
        out.losses.append(loss)
        last = step == tc.steps - 1
        if tc.log_every and (step % tc.log_every == 0 or last):
            window = out.losses[-tc.log_every :]
            line = f"step={step} loss={loss:.6f} loss_avg={np.mean(window):.6f}"
            if val:
                metrics = evaluate(weights, config, val)
                out.evals.append((step, metrics))
                line += f" val_epe={metrics['epe']:.4f} val_d0-10={metrics['epe_d0-10']:.4f}"
            if log:
                log(line)
    out.seconds = time.perf_counter() - start
    return weights, out


def ablation_configs(base: ModelConfig) -> dict[str, ModelConfig]:
    """The base configuration plus one variant per toggled design axis."""
    other_context = "conv3d" if base.context_mode == "conv2d_twin" else "conv2d_twin"
    attention = (
        base.replace(variant="sstm", use_attention=False, freeze_alpha=False)
        if base.use_attention
        else base.replace(variant="sstm++", use_attention=True)
    )
    return {
        "base": base,
        "use_warp_errors": base.replace(use_warp_errors=not base.use_warp_errors),
        "use_attention": attention,
        "context_mode": base.replace(context_mode=other_context),
    }


def ablation_deltas(
    base: ModelConfig, tc: TrainConfig, log: Callable[[str], None] | None = print
) -> dict[str, tuple[float, float]]:
    """Train every ablation on the same budget and seed; ``(val_epe, delta vs base)`` per axis."""
    val = validation_samples(tc)
    quiet = dataclasses.replace(tc, val_count=0, log_every=0)
    scores = {}
    for name, cfg in ablation_configs(base).items():
        weights, _ = train(cfg, quiet, log=None)
        scores[name] = evaluate(weights, cfg, val)["epe"]
    out = {name: (epe, epe - scores["base"]) for name, epe in scores.items()}
    if log:
        for name, (epe, delta) in out.items():
            log(f"ablation={name} val_epe={epe:.4f} delta_epe={delta:+.4f}")
    return out
