"""Named check suites shared by ``sstm selftest`` and the test-suite.

Each check returns a :class:`CheckResult`; ``group`` ties it to an
acceptance area (gradient, oracle, structural, behavioral, io).
"""

from __future__ import annotations

import math
import time
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import autodiff as ad
from ..attention import AttentionWeights, attend, attention_matrix
from ..autodiff import Tensor, grad_check
from ..correlation import CorrFeatures, build_pyramid, corr_all_pairs, corr_features, lookup
from ..encoders import (
    SptBlockSpec,
    context_encode_2d,
    context_encode_3d,
    feature_encode,
    spt_block,
    spt_shapes,
)
from ..flowpair import FlowPair
from ..layers import Shapes
from ..losses import GtSample, loss1, loss2
from ..metrics import RegionSpec, band_stats, epe, occlusion_distance
from ..model import ModelConfig, forward, init_weights, param_shapes, run
from ..update import (
    GruState,
    brightness_errors,
    flow_head,
    flow_head_shapes,
    gru_shapes,
    gru_step,
    motion_encode,
    motion_encoder_shapes,
    residual_due,
    residual_hidden,
    upsample_flow,
    warp,
)
from . import oracles

GROUPS = ("gradient", "oracle", "structural", "behavioral", "io")


@dataclass
class CheckResult:
    group: str
    name: str
    passed: bool
    detail: str = ""
    cases: int = 1
    seconds: float = 0.0


def _rand_weights(shapes: Shapes, rng: np.random.Generator, scale: float = 0.5) -> dict[str, np.ndarray]:
    return {k: rng.uniform(-scale, scale, size=s) for k, s in shapes.items()}


def _tensors(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in arrays.items()}


# ---------------------------------------------------------------------------
# gradient suite
# ---------------------------------------------------------------------------

def _scalarize(out: Tensor, proj: np.ndarray) -> Tensor:
    """Random linear read-out so that no gradient is trivially uniform."""
    return ad.tsum(out * Tensor(proj))


def _gradient_cases(rng: np.random.Generator) -> list[tuple[str, Callable, dict, bool]]:
    """(name, fn, inputs, composite) tuples. Composite checks use the looser tolerance."""
    cases = []

    def add(name, fn, inputs, composite=False):
        cases.append((name, fn, inputs, composite))

    for axis in ("x", "y", "t"):
        for stride, pad in ((1, 1), (2, 0), (2, 1)):
            x = rng.normal(size=(2, 3, 5, 6))
            k = rng.normal(size=(3, 2, 3))
            b = rng.normal(size=(3,))
            out_shape = ad.conv_axis(Tensor(x), Tensor(k), axis, stride, pad, Tensor(b)).shape
            proj = rng.normal(size=out_shape)
            add(
                f"conv_axis[{axis},s{stride},p{pad}]",
                lambda x, k, b, axis=axis, stride=stride, pad=pad, proj=proj: _scalarize(
                    ad.conv_axis(x, k, axis, stride, pad, b), proj
                ),
                {"x": x, "k": k, "b": b},
            )

    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    proj = rng.normal(size=(3, 4))
    for f in ("sigmoid", "tanh", "relu", "abs"):
        add(f"pointwise[{f}]", lambda a, f=f, proj=proj: _scalarize(ad.pointwise(a, f), proj), {"a": a})
    for f in ("add", "sub", "mul"):
        add(f"pointwise[{f}]", lambda a, b, f=f, proj=proj: _scalarize(ad.pointwise(a, f, b), proj), {"a": a, "b": b})
    add("mul[scalar]", lambda a, s, proj=proj: _scalarize(a * s, proj), {"a": a, "s": np.array([0.7])})

    m1, m2 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    add("matmul", lambda a, b, p=rng.normal(size=(3, 2)): _scalarize(ad.matmul(a, b), p), {"a": m1, "b": m2})
    s = rng.normal(size=(3, 5)) * 2
    add("softmax", lambda x, p=rng.normal(size=(3, 5)): _scalarize(ad.softmax(x, axis=1), p), {"x": s})

    fmap = rng.normal(size=(2, 5, 6))
    coords = np.stack([rng.uniform(0.1, 4.9, size=(4, 4)), rng.uniform(0.1, 3.9, size=(4, 4))])
    coords += 0.013  # keep away from integer kinks
    add("bilinear_sample", lambda m, c, p=rng.normal(size=(2, 4, 4)): _scalarize(ad.bilinear_sample(m, c), p), {"m": fmap, "c": coords})
    bmap = rng.normal(size=(3, 2, 4, 5))
    bco = np.stack([rng.uniform(0.1, 3.9, size=(3, 3, 2)), rng.uniform(0.1, 2.9, size=(3, 3, 2))], axis=1) + 0.017
    add("bilinear_sample[batched]", lambda m, c, p=rng.normal(size=(3, 2, 3, 2)): _scalarize(ad.bilinear_sample(m, c), p), {"m": bmap, "c": bco})

    add("avg_pool2", lambda x, p=rng.normal(size=(2, 2, 3)): _scalarize(ad.avg_pool2(x), p), {"x": rng.normal(size=(2, 4, 5))})
    add("instance_norm", lambda x, p=rng.normal(size=(2, 4, 4)): _scalarize(ad.instance_norm(x), p), {"x": rng.normal(size=(2, 4, 4))})
    add("channel_norm", lambda x, p=rng.normal(size=(3, 3)): _scalarize(ad.channel_norm(x), p), {"x": rng.normal(size=(4, 3, 3))})
    add(
        "shape_ops",
        lambda a, b, p=rng.normal(size=(2, 3, 4)): _scalarize(
            ad.stack([ad.getitem(ad.concat([a, b], axis=0), (slice(1, 4),)), ad.transpose(ad.reshape(b, (4, 3)), (1, 0))], axis=0), p
        ),
        {"a": rng.normal(size=(2, 4)), "b": rng.normal(size=(3, 4))},
    )
    add("reduction", lambda a: ad.mean(ad.tsum(a * a, axis=0)), {"a": rng.normal(size=(3, 4))})

    fa, fb = rng.normal(size=(4, 4, 4)), rng.normal(size=(4, 4, 4))
    add("corr_all_pairs", lambda a, b, p=rng.normal(size=(16, 4, 4)): _scalarize(corr_all_pairs(a, b), p), {"a": fa, "b": fb})
    vol = rng.normal(size=(16, 4, 4))
    flow = rng.uniform(-1.3, 1.3, size=(2, 4, 4)) + 0.011
    add(
        "lookup",
        lambda v, f, p=rng.normal(size=(2 * 9, 4, 4)): _scalarize(lookup(build_pyramid(v, 2), f, 1), p),
        {"v": vol, "f": flow},
        composite=True,
    )

    f1, f2, f3 = (rng.normal(size=(3, 5, 5)) for _ in range(3))
    fl1, fl2 = (rng.uniform(-1.2, 1.2, size=(2, 5, 5)) + 0.013 for _ in range(2))
    add("warp", lambda m, f, p=rng.normal(size=(3, 5, 5)): _scalarize(warp(m, f), p), {"m": f2, "f": fl1})
    add(
        "brightness_errors",
        lambda a, b, c, u, v, p=rng.normal(size=(3, 5, 5)): _scalarize(brightness_errors(a, b, c, FlowPair(u, v)).eps, p),
        {"a": f1, "b": f2, "c": f3, "u": fl1, "v": fl2},
        composite=True,
    )

    ctx, mot = rng.normal(size=(4, 3, 3)), rng.normal(size=(6, 3, 3))
    wq, wk, wv = rng.normal(size=(4, 4)) * 0.5, rng.normal(size=(4, 4)) * 0.5, rng.normal(size=(6, 6)) * 0.5
    for heads in (1, 2):
        add(
            f"attend[heads={heads}]",
            lambda c, m, q, k, v, al, heads=heads, p=rng.normal(size=(6, 3, 3)): _scalarize(
                attend(c, m, AttentionWeights(q, k, v, al), heads), p
            ),
            {"c": ctx, "m": mot, "q": wq, "k": wk, "v": wv, "al": np.array([0.8])},
            composite=True,
        )

    for variant, stride in (("SPT1", 2), ("SPT2", 1), ("SPT3", 2), ("SPT4", 1)):
        spec = SptBlockSpec(variant, 2, 3, stride=stride)
        shapes = spt_shapes("blk", spec)
        wts = _rand_weights(shapes, rng)
        x = rng.normal(size=(2, 3, 4, 4))
        out_shape = spt_block(Tensor(x), spec, _tensors(wts), "blk").shape
        add(
            f"spt_block[{variant}]",
            lambda x, spec=spec, wts=wts, p=rng.normal(size=out_shape), **w: _scalarize(
                spt_block(x, spec, {**_tensors(wts), **{k.replace("__", "."): v for k, v in w.items()}}, "blk"), p
            ),
            {"x": x, **{k.replace(".", "__"): v for k, v in wts.items() if k.endswith(".w")}},
            composite=True,
        )

    hid, inp = 3, 4
    gshapes = gru_shapes(hid, inp)
    gw = _rand_weights(gshapes, rng)
    h0 = np.tanh(rng.normal(size=(hid, 2, 4, 4)))
    xin = rng.normal(size=(inp, 2, 4, 4))

    def gru_fn(h, x, p=rng.normal(size=(hid, 2, 4, 4)), **w):
        reg = {**_tensors(gw), **{k.replace("__", "."): v for k, v in w.items()}}
        return _scalarize(gru_step(GruState(h), x, reg)[0].h, p)

    add("gru_step", gru_fn, {"h": h0, "x": xin, **{k.replace(".", "__"): v for k, v in gw.items()}}, composite=True)

    # full update step on a 1 x 8 x 8 instance: motion encoder, GRU, flow head
    ccfg = {"corr_dim": 2 * 9, "motion": 4, "ctx": 2, "hid": 3}
    shapes = {
        **motion_encoder_shapes(ccfg["corr_dim"], ccfg["motion"], True),
        **gru_shapes(ccfg["hid"], ccfg["ctx"] + ccfg["motion"]),
        **flow_head_shapes(ccfg["hid"]),
    }
    uw = _rand_weights(shapes, rng, 0.3)
    fm = [rng.normal(size=(1, 8, 8)) for _ in range(3)]

    def update_fn(corr, u, v, h, c, p=rng.normal(size=(2, 2, 8, 8))):
        reg = _tensors(uw)
        flows = FlowPair(u, v)
        feats = CorrFeatures(corr, levels=2, radius=1, profile="free")
        errs = brightness_errors(*(Tensor(f) for f in fm), flows)
        m = motion_encode(feats, flows, errs, reg)
        state, _ = gru_step(GruState(h), ad.concat([c, m], axis=0), reg)
        d1, d2 = flow_head(state, reg)
        return _scalarize(ad.stack([d1, d2], axis=0), p)

    add(
        "update_step",
        update_fn,
        {
            "corr": rng.normal(size=(18, 2, 8, 8)),
            "u": rng.uniform(-1, 1, size=(2, 8, 8)) + 0.013,
            "v": rng.uniform(-1, 1, size=(2, 8, 8)) + 0.013,
            "h": np.tanh(rng.normal(size=(3, 2, 8, 8))),
            "c": rng.normal(size=(2, 2, 8, 8)),
        },
        composite=True,
    )

    up = rng.normal(size=(2, 3, 3))
    add(
        "upsample_flow",
        lambda a, b, p=rng.normal(size=(2, 24, 24)): _scalarize(upsample_flow(FlowPair(a, b)).f1 + upsample_flow(FlowPair(a, b)).f2, p),
        {"a": up, "b": rng.normal(size=(2, 3, 3))},
    )

    gt = GtSample(rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4, 4)))

    def seq_loss(a1, a2, b1, b2):
        preds = [FlowPair(a1, a2, "full"), FlowPair(b1, b2, "full")]
        return loss1(preds, gt, 0.8) + loss2(preds, gt, 0.8)

    add("sequence_losses", seq_loss, {k: rng.normal(size=(2, 4, 4)) for k in ("a1", "a2", "b1", "b2")}, composite=True)
    return cases


def gradient_suite(tol: float = 1e-4, composite_tol: float = 1e-3, max_entries: int = 24) -> list[CheckResult]:
    rng = np.random.default_rng(1234)
    out = []
    with ad.precision(np.float64):
        cases = _gradient_cases(rng)
    for name, fn, inputs, composite in cases:
        t0 = time.perf_counter()
        limit = composite_tol if composite else tol
        report = grad_check(fn, inputs, eps=1e-5, tol=limit, max_entries=max_entries, seed=7)
        out.append(
            CheckResult("gradient", name, report.passed, f"max_rel_err={report.max_error:.2e} tol={limit:g}", 1, time.perf_counter() - t0)
        )
    return out


# ---------------------------------------------------------------------------
# oracle suite
# ---------------------------------------------------------------------------

def _max_err(a, b) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        return math.inf
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def _oracle_check(name: str, cases: int, tol: float, trial: Callable[[np.random.Generator], float]) -> CheckResult:
    rng = np.random.default_rng(zlib.crc32(name.encode()))  # str hash is salted per process
    t0 = time.perf_counter()
    worst = max(trial(rng) for _ in range(cases))
    return CheckResult("oracle", name, worst <= tol, f"max_abs_err={worst:.2e} tol={tol:g}", cases, time.perf_counter() - t0)


def oracle_suite(cases: int = 100, tol: float = 1e-5) -> list[CheckResult]:
    def conv_trial(rng):
        axis = str(rng.choice(["x", "y", "t"]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        k = int(rng.choice([1, 2, 3]))
        x = rng.uniform(-1, 1, size=(int(rng.integers(1, 4)), 3, int(rng.integers(3, 6)), int(rng.integers(3, 7))))
        ker = rng.uniform(-1, 1, size=(int(rng.integers(1, 4)), x.shape[0], k))
        b = rng.uniform(-1, 1, size=ker.shape[0])
        got = ad.conv_axis(Tensor(x.astype(np.float32)), Tensor(ker.astype(np.float32)), axis, stride, pad, Tensor(b.astype(np.float32)))
        return _max_err(got.data, oracles.conv_axis(x.astype(np.float32), ker.astype(np.float32), axis, stride, pad, b.astype(np.float32)))

    def matmul_trial(rng):
        a = rng.uniform(-1, 1, size=(int(rng.integers(1, 6)), int(rng.integers(1, 6)))).astype(np.float32)
        b = rng.uniform(-1, 1, size=(a.shape[1], int(rng.integers(1, 6)))).astype(np.float32)
        return _max_err(ad.matmul(Tensor(a), Tensor(b)).data, oracles.matmul(a, b))

    def bilinear_trial(rng):
        c, h, w = int(rng.integers(1, 4)), int(rng.integers(2, 7)), int(rng.integers(2, 7))
        m = rng.uniform(-1, 1, size=(c, h, w)).astype(np.float32)
        oh, ow = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        # mostly in-bounds, a few outside to exercise the clamp
        co = np.stack([rng.uniform(-1, w, size=(oh, ow)), rng.uniform(-1, h, size=(oh, ow))]).astype(np.float32)
        return _max_err(ad.bilinear_sample(Tensor(m), Tensor(co)).data, oracles.bilinear_sample(m, co))

    def pool_trial(rng):
        x = rng.uniform(-1, 1, size=(int(rng.integers(1, 3)), int(rng.integers(2, 8)), int(rng.integers(2, 8)))).astype(np.float32)
        return _max_err(ad.avg_pool2(Tensor(x)).data, oracles.avg_pool2(x))

    def corr_trial(rng):
        d, h, w = int(rng.integers(1, 6)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
        a = rng.uniform(-1, 1, size=(d, h, w)).astype(np.float32)
        b = rng.uniform(-1, 1, size=(d, h, w)).astype(np.float32)
        return _max_err(corr_all_pairs(Tensor(a), Tensor(b)).data, oracles.corr_all_pairs(a, b))

    def lookup_trial(rng):
        h, w = int(rng.integers(2, 5)) * 2, int(rng.integers(2, 5)) * 2
        levels, radius = int(rng.integers(1, 3)), int(rng.integers(0, 3))
        vol = rng.uniform(-1, 1, size=(h * w, h, w)).astype(np.float32)
        flow = rng.uniform(-2.5, 2.5, size=(2, h, w)).astype(np.float32)
        got = lookup(build_pyramid(Tensor(vol), levels), Tensor(flow), radius).data
        return _max_err(got, oracles.lookup(oracles.pyramid(vol, levels), flow, radius))

    def attend_trial(rng):
        lc, lm, h, w = int(rng.integers(1, 4)), int(rng.integers(1, 3)) * 2, int(rng.integers(1, 4)), int(rng.integers(1, 4))
        heads = int(rng.choice([1, 2]))
        dk = 2 * int(rng.integers(1, 3))
        c = rng.uniform(-1, 1, size=(lc, h, w)).astype(np.float32)
        m = rng.uniform(-1, 1, size=(lm, h, w)).astype(np.float32)
        wq, wk = (rng.uniform(-1, 1, size=(lc, dk)).astype(np.float32) for _ in range(2))
        wv = rng.uniform(-1, 1, size=(lm, lm)).astype(np.float32)
        alpha = np.float32(rng.uniform(-1, 1))
        aw = AttentionWeights(Tensor(wq), Tensor(wk), Tensor(wv), Tensor(np.array([alpha])))
        return _max_err(attend(Tensor(c), Tensor(m), aw, heads).data, oracles.attend(c, m, wq, wk, wv, float(alpha), heads))

    def gru_trial(rng):
        hid, inp = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        shapes = gru_shapes(hid, inp)
        w = {k: rng.uniform(-0.6, 0.6, size=s).astype(np.float32) for k, s in shapes.items()}
        hh, ww = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        h = np.tanh(rng.normal(size=(hid, 2, hh, ww))).astype(np.float32)
        x = rng.uniform(-1, 1, size=(inp, 2, hh, ww)).astype(np.float32)
        state, trace = gru_step(GruState(Tensor(h)), Tensor(x), _tensors(w))
        kernels = {
            g: (oracles.compose_separable(w[f"gru.{g}.x.w"], w[f"gru.{g}.y.w"], w[f"gru.{g}.t.w"]).astype(np.float64), w[f"gru.{g}.t.b"])
            for g in ("z", "r", "q")
        }
        ref, z, r, q = oracles.gru_step(h.astype(np.float64), x.astype(np.float64), kernels)
        return max(_max_err(state.h.data, ref), _max_err(trace.z.data, z), _max_err(trace.r.data, r), _max_err(trace.h_cand.data, q))

    return [
        _oracle_check("conv_axis", cases, tol, conv_trial),
        _oracle_check("matmul", cases, tol, matmul_trial),
        _oracle_check("bilinear_sample", cases, tol, bilinear_trial),
        _oracle_check("avg_pool2", cases, tol, pool_trial),
        _oracle_check("corr_all_pairs", cases, tol, corr_trial),
        _oracle_check("lookup", cases, tol, lookup_trial),
        _oracle_check("attend", cases, tol, attend_trial),
        _oracle_check("gru_step", cases, tol, gru_trial),
    ]


# ---------------------------------------------------------------------------
# invariants: structural, behavioural and I/O
# ---------------------------------------------------------------------------

def _timed(group: str, name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(group, name, bool(ok), detail, 1, time.perf_counter() - t0)


def _random_frames(rng, h=64, w=96):
    return [rng.uniform(0, 255, size=(3, h, w)).astype(np.float32) for _ in range(3)]


def structural_checks() -> list[CheckResult]:
    def params_independent_of_n():
        counts = {
            v: {init_weights(ModelConfig.for_variant(v, iters=n)).param_count() for n in (1, 4, 12)} for v in ("sstm", "sstm++")
        }
        return all(len(c) == 1 for c in counts.values()), " ".join(f"{v}={sorted(c)}" for v, c in counts.items())

    def corr_channels():
        rng = np.random.default_rng(0)
        fm = [Tensor(rng.normal(size=(8, 8, 12)).astype(np.float32)) for _ in range(3)]
        feats = corr_features(*fm, FlowPair.zeros(8, 12))
        return feats.data.shape == (324, 2, 8, 12), f"shape={feats.data.shape}"

    def feature_shape():
        cfg = ModelConfig()
        w = init_weights(cfg)
        rng = np.random.default_rng(1)
        img = Tensor(rng.uniform(-1, 1, size=(3, 64, 96)).astype(np.float32))
        out = feature_encode(img, w)
        return out.shape == (256, 8, 12), f"shape={out.shape}"

    def context_shapes():
        rng = np.random.default_rng(2)
        clip = Tensor(rng.uniform(-1, 1, size=(3, 3, 64, 96)).astype(np.float32))
        w3 = init_weights(ModelConfig.for_variant("sstm"))
        w2 = init_weights(ModelConfig.for_variant("sstm++"))
        a = context_encode_3d(clip, w3).shape
        b = context_encode_2d(Tensor(clip.data[:, 0]), Tensor(clip.data[:, 1]), w2).shape
        return a == b == (128, 2, 8, 12), f"conv3d={a} conv2d_twin={b}"

    def residual_schedule(n_steps, r):
        def check():
            # scalar unroll: distinct powers of two make every sum identifiable
            h0 = 1.0
            fresh = [2.0**k for k in range(1, n_steps + 1)]
            anchor = GruState(Tensor(np.array([h0])))
            got = [float(residual_hidden(n, r, GruState(Tensor(np.array([f]))), anchor if residual_due(n, r) else None).h.data[0])
                   for n, f in enumerate(fresh, start=1)]
            if (n_steps, r) == (4, 2):
                hand = [2.0, 4.0 + 1.0, 8.0, 16.0 + 1.0]
            else:
                hand = oracles.residual_unroll(h0, fresh, r)
            # the model's own loop: post-residual state minus raw GRU output is h_0 exactly on residual steps
            cfg = ModelConfig.for_variant("sstm", iters=n_steps, r_interval=r).scaled(16)
            res = run(_random_frames(np.random.default_rng(n_steps), 64, 64), init_weights(cfg), cfg)
            h0_model = res.states[0].h.data
            model_ok = all(
                np.array_equal(post.h.data, pre.h.data + h0_model if n % r == 0 else pre.h.data)
                for n, (post, pre) in enumerate(zip(res.states[1:], res.pre_residual), start=1)
            )
            return got == hand and model_ok, f"scalar states={got} model_schedule_ok={model_ok}"

        return check

    def only_1d_kernels():
        bad = [k for cfg in (ModelConfig.for_variant("sstm"), ModelConfig.for_variant("sstm++")) for k, s in param_shapes(cfg).items() if len(s) > 3]
        return not bad, f"non-1D tensors: {bad}" if bad else "all conv kernels are out x in x k"

    return [
        _timed("structural", "param_count_independent_of_N", params_independent_of_n),
        _timed("structural", "corr_channels_324", corr_channels),
        _timed("structural", "feature_map_256xH8xW8", feature_shape),
        _timed("structural", "context_128x2xH8xW8", context_shapes),
        _timed("structural", "residual_schedule_N4_r2", residual_schedule(4, 2)),
        _timed("structural", "residual_schedule_N12_r3", residual_schedule(12, 3)),
        _timed("structural", "registry_has_only_1d_kernels", only_1d_kernels),
    ]


def behavioral_checks() -> list[CheckResult]:
    rng = np.random.default_rng(3)

    def gru_bounds():
        cfg = ModelConfig.for_variant("sstm++", iters=12, r_interval=3).scaled(8)
        w = init_weights(cfg)
        res = run(_random_frames(rng, 64, 64), w, cfg)
        r = cfg.r_interval
        gates = all(
            (t.z.data > 0).all() and (t.z.data < 1).all() and (t.r.data > 0).all() and (t.r.data < 1).all() and (np.abs(t.h_cand.data) < 1).all()
            for t in res.traces
        )
        # before the first residual lands the state is a convex mix of values in (-1, 1)
        early = max(float(np.abs(s.h.data).max()) for s in res.pre_residual[:r])
        # a gated step stays within max(1, |h_prev|) and each residual step adds |h_0| < 1,
        # so after step n the bound is 1 + floor(n / r) <= 1 + N / r
        per_step = all(
            float(np.abs(state.h.data).max()) < 1 + n // r for n, state in enumerate(res.states[1:], start=1)
        )
        peak = max(float(np.abs(s.h.data).max()) for s in res.states)
        bound = 1 + cfg.iters / r
        detail = f"max|h| first {r} steps={early:.4f} peak|h|={peak:.4f} bound 1+N/r={bound:g} gates_in_range={gates}"
        return early < 1 and gates and per_step and peak < bound, detail

    def alpha_zero():
        c = Tensor(rng.normal(size=(4, 3, 5)).astype(np.float32))
        m = Tensor(rng.normal(size=(6, 3, 5)).astype(np.float32))
        aw = AttentionWeights(*(Tensor(rng.normal(size=s).astype(np.float32)) for s in ((4, 8), (4, 8), (6, 6))), Tensor(np.zeros(1, np.float32)))
        y = attend(c, m, aw)
        rows = attention_matrix(c, aw)[0].data.sum(axis=1)
        return np.array_equal(y.data, m.data) and np.allclose(rows, 1, atol=1e-6), "Y == M bitwise, rows sum to 1"

    def warp_identity():
        f = rng.normal(size=(5, 6, 7)).astype(np.float32)
        out = warp(Tensor(f), Tensor(np.zeros((2, 6, 7), np.float32)))
        return np.array_equal(out.data, f), "zero flow reproduces the map bitwise"

    def eps_aligned():
        f1 = rng.normal(size=(8, 6, 8)).astype(np.float32)
        shifted = np.roll(f1, 1, axis=2)
        flow = np.zeros((2, 6, 8), np.float32)
        flow[0] = 1.0
        errs = brightness_errors(Tensor(f1), Tensor(shifted), Tensor(np.roll(shifted, 1, axis=2)), FlowPair(Tensor(flow), Tensor(flow))).eps.data
        interior = errs[:, :, :-2]
        same = brightness_errors(Tensor(f1), Tensor(f1), Tensor(f1), FlowPair.zeros(6, 8)).eps.data
        ok = (errs >= 0).all() and np.abs(interior).max() < 1e-6 and not same.any()
        return ok, f"max interior eps={np.abs(interior).max():.2e}"

    def losses_hand():
        gt = GtSample(np.array([[[1.0]], [[2.0]]], np.float32), np.array([[[0.5]], [[-1.0]]], np.float32))
        perfect = [FlowPair(Tensor(gt.gt_f1), Tensor(gt.gt_f2), "full")] * 3
        zero_ok = loss1(perfect, gt).item() == 0 and loss2(perfect, gt).item() == 0
        p1 = FlowPair(Tensor(np.array([[[0.0]], [[0.0]]], np.float32)), Tensor(np.array([[[0.0]], [[0.0]]], np.float32)), "full")
        p2 = FlowPair(Tensor(np.array([[[1.5]], [[2.0]]], np.float32)), Tensor(np.array([[[0.5]], [[0.0]]], np.float32)), "full")
        # step 1: |1|+|2| = 3 and |0.5|+|1| = 1.5 ; step 2: 0.5 and 1.0
        want1 = 0.8 * (3 + 1.5) / 2 + 1.0 * (0.5 + 1.0) / 2
        want2 = 0.8 * 1.5 + 1.0 * 1.0
        got1, got2 = loss1([p1, p2], gt, 0.8).item(), loss2([p1, p2], gt, 0.8).item()
        ok = zero_ok and abs(got1 - want1) < 1e-6 and abs(got2 - want2) < 1e-6
        return ok, f"loss1={got1:.6f} (hand {want1:.6f}) loss2={got2:.6f} (hand {want2:.6f})"

    def ablation_equivalence():
        from ..model import sstm_weights_from_sstmpp

        cfg = ModelConfig.for_variant("sstm++", context_mode="conv3d", use_warp_errors=False, freeze_alpha=True, iters=3).scaled(8)
        w = init_weights(cfg, seed=5)
        frames = _random_frames(rng, 64, 64)
        a = forward(frames, w, cfg)[-1]
        w2, cfg2 = sstm_weights_from_sstmpp(w, cfg)
        b = forward(frames, w2, cfg2)[-1]
        err = max(_max_err(a.f1.data, b.f1.data), _max_err(a.f2.data, b.f2.data))
        return err <= 1e-5, f"max|sstm++(alpha=0) - sstm|={err:.2e}"

    return [
        _timed("behavioral", "gru_state_bounds", gru_bounds),
        _timed("behavioral", "attention_alpha0_passthrough", alpha_zero),
        _timed("behavioral", "warp_zero_flow_identity", warp_identity),
        _timed("behavioral", "error_maps_zero_when_aligned", eps_aligned),
        _timed("behavioral", "loss_zero_and_gamma_weighting", losses_hand),
        _timed("behavioral", "ablation_alpha0_matches_sstm", ablation_equivalence),
    ]


def io_checks() -> list[CheckResult]:
    from ..checkpoint import ChecksumError, TruncatedCheckpointError, decode_checkpoint, encode_checkpoint
    from ..flowio import FlowFile, FlowFormatError, TruncatedFlowError, decode_flo, decode_kitti, decode_png, encode_flo, encode_kitti, encode_png

    rng = np.random.default_rng(4)

    def flo_roundtrip():
        ok = True
        for _ in range(20):
            h, w = (int(v) for v in rng.integers(1, 20, size=2))
            flow = (rng.normal(size=(2, h, w)) * 10 ** rng.uniform(-3, 3)).astype(np.float32)
            raw = encode_flo(FlowFile(flow))
            back = decode_flo(raw)
            ok &= back.flow.tobytes() == flow.tobytes() and encode_flo(back) == raw
        return ok, "20 random fields bitwise stable"

    def kitti_roundtrip():
        worst = 0.0
        flags_ok = True
        for _ in range(20):
            h, w = (int(v) for v in rng.integers(1, 16, size=2))
            flow = rng.uniform(-511, 511, size=(2, h, w)).astype(np.float32)
            valid = rng.uniform(size=(h, w)) > 0.3
            back = decode_kitti(decode_png(encode_png(encode_kitti(FlowFile(flow, valid)))))
            worst = max(worst, float(np.abs(back.flow - flow)[:, valid].max(initial=0.0)))
            flags_ok &= np.array_equal(back.valid, valid)
        return worst <= 1 / 128 and flags_ok, f"max quantization error={worst:.5f} px"

    def corrupt_rejection():
        raw = encode_flo(FlowFile(rng.normal(size=(2, 2, 3)).astype(np.float32)))
        caught = 0
        for bad, kind in ((raw[:-8], TruncatedFlowError), (b"\0\0\0\0" + raw[4:], FlowFormatError), (raw + b"\0" * 4, FlowFormatError)):
            try:
                decode_flo(bad)
            except kind:
                caught += 1
        cfg = ModelConfig.for_variant("sstm").scaled(8)
        blob = encode_checkpoint(init_weights(cfg), cfg)
        try:
            decode_checkpoint(blob[: len(blob) // 2])
        except TruncatedCheckpointError:
            caught += 1
        flipped = bytearray(blob)
        flipped[len(blob) // 2] ^= 0x10  # inside tensor data
        try:
            decode_checkpoint(bytes(flipped))
        except ChecksumError:
            caught += 1
        return caught == 5, f"{caught}/5 corrupt inputs rejected with the right error"

    def partition_identity():
        pred, gt = rng.normal(size=(2, 24, 24)) * 3, rng.normal(size=(2, 24, 24)) * 3
        occ = np.zeros((24, 24), bool)
        occ[8:12, 5:9] = True
        dist = occlusion_distance(occ)
        bands = [RegionSpec("occ_distance", 0, 10), RegionSpec("occ_distance", 10, 60), RegionSpec("occ_distance", 60)]
        total = sum(band_stats(pred, gt, b, dist)[1] for b in bands)
        count = sum(band_stats(pred, gt, b, dist)[0] for b in bands)
        glob = epe(pred, gt) * pred.shape[1] * pred.shape[2]
        speed_bands = [RegionSpec("speed", 0, 10), RegionSpec("speed", 10, 40), RegionSpec("speed", 40)]
        spd = np.sqrt((gt**2).sum(axis=0))
        total_s = sum(band_stats(pred, gt, b, spd)[1] for b in speed_bands)
        err = max(abs(total - glob), abs(total_s - glob))
        return err <= 1e-6 and count == 24 * 24, f"|sum(n*band) - N*EPE|={err:.2e}"

    return [
        _timed("io", "flo_roundtrip_bitwise", flo_roundtrip),
        _timed("io", "kitti_png_roundtrip", kitti_roundtrip),
        _timed("io", "corrupt_file_rejection", corrupt_rejection),
        _timed("io", "metric_partition_identity", partition_identity),
    ]


def invariant_suite() -> list[CheckResult]:
    return structural_checks() + behavioral_checks() + io_checks()


SUITES = ("gradcheck", "oracle", "invariants")


def run_suite(name: str, tol: float | None = None, cases: int = 100) -> list[CheckResult]:
    if name == "gradcheck":
        return gradient_suite() if tol is None else gradient_suite(tol=tol, composite_tol=max(tol * 10, 1e-3))
    if name == "oracle":
        return oracle_suite(cases=cases) if tol is None else oracle_suite(cases=cases, tol=tol)
    if name == "invariants":
        return invariant_suite()
    if name == "all":
        out = []
        for s in SUITES:
            out.extend(run_suite(s, tol, cases))
        return out
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")


def format_table(results: list[CheckResult]) -> str:
    width = max((len(r.name) for r in results), default=10)
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status}  {r.group:<10}  {r.name:<{width}}  cases={r.cases:<4} {r.seconds:6.2f}s  {r.detail}")
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)
