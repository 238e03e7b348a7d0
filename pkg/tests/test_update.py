import numpy as np
import pytest

from sstm.autodiff import Tensor, precision
from sstm.checks import oracles
from sstm.correlation import CorrFeatures
from sstm.flowpair import FlowPair, ResolutionError
from sstm.update import (
    GruState,
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
    warp,
)


def registry(shapes, rng, scale=0.2, dtype=np.float64):
    return {k: Tensor((rng.standard_normal(s) * scale).astype(dtype)) for k, s in shapes.items()}


def pair(a, b, res="eighth"):
    return FlowPair(Tensor(np.asarray(a)), Tensor(np.asarray(b)), res)


def test_errors_zero_for_identical_frames(rng):
    f = Tensor(rng.standard_normal((6, 5, 7)).astype(np.float32))
    eps = brightness_errors(f, f, f, FlowPair.zeros(5, 7)).eps.data
    assert eps.shape == (3, 5, 7)
    np.testing.assert_array_equal(eps, 0.0)


def test_error_one_vanishes_under_perfect_warp(rng):
    f1 = rng.standard_normal((4, 6, 8))
    f2 = np.roll(f1, 1, axis=2)  # f2(x + 1) = f1(x)
    flow = np.zeros((2, 6, 8))
    flow[0] = 1
    with precision(np.float64):
        eps = brightness_errors(Tensor(f1), Tensor(f2), Tensor(f2), pair(flow, np.zeros_like(flow))).eps.data
    assert np.abs(eps[0][:, :-1]).max() < 1e-12
    assert (eps >= 0).all()


def test_double_warp_error_matches_oracle(rng):
    f1, f2, f3 = (rng.standard_normal((1, 4, 4)) for _ in range(3))
    a, b = rng.uniform(-1, 1, (2, 4, 4)), rng.uniform(-1, 1, (2, 4, 4))
    with precision(np.float64):
        eps = brightness_errors(Tensor(f1), Tensor(f2), Tensor(f3), pair(a, b)).eps.data
    np.testing.assert_allclose(eps, oracles.brightness_errors(f1, f2, f3, a, b), atol=1e-5)


def test_brightness_errors_reject_full_resolution(rng):
    f = Tensor(rng.standard_normal((2, 4, 4)))
    with pytest.raises(ResolutionError):
        brightness_errors(f, f, f, FlowPair.zeros(4, 4, resolution="full"))


def test_warp_zero_flow_identity(rng):
    f = rng.standard_normal((3, 5, 6)).astype(np.float32)
    np.testing.assert_array_equal(warp(Tensor(f), Tensor(np.zeros((2, 5, 6), np.float32))).data, f)


def _corr(rng, h, w, dtype=np.float64):
    return CorrFeatures(Tensor(rng.standard_normal((324, 2, h, w)).astype(dtype)))


def test_motion_encoder_shape_and_zero_weights(rng):
    shapes = motion_encoder_shapes(324, 32, use_errors=True)
    flows = pair(rng.standard_normal((2, 4, 5)), rng.standard_normal((2, 4, 5)))
    errs = brightness_errors(*(Tensor(rng.standard_normal((3, 4, 5))) for _ in range(3)), flows)
    with precision(np.float64):
        out = motion_encode(_corr(rng, 4, 5), flows, errs, registry(shapes, rng))
        assert out.shape == (32, 2, 4, 5)
        zero = motion_encode(_corr(rng, 4, 5), flows, errs, {k: Tensor(np.zeros(s)) for k, s in shapes.items()})
    np.testing.assert_array_equal(zero.data, 0.0)


def test_motion_encoder_is_shift_equivariant_on_interior(rng):
    shapes = motion_encoder_shapes(324, 16, use_errors=False)
    w = registry(shapes, rng)
    corr = rng.standard_normal((324, 2, 12, 12))
    flow = rng.standard_normal((2, 2, 12, 12))
    with precision(np.float64):
        a = motion_encode(CorrFeatures(Tensor(corr)), pair(flow[0], flow[1]), None, w).data
        rolled = motion_encode(
            CorrFeatures(Tensor(np.roll(corr, 1, axis=3))), pair(np.roll(flow[0], 1, 2), np.roll(flow[1], 1, 2)), None, w
        ).data
    # the widest stencil is 7 (radius 3) then 3 (radius 1): compare columns far from both borders
    np.testing.assert_allclose(np.roll(a, 1, axis=3)[..., 5:7], rolled[..., 5:7], atol=1e-10)


def _forced_gates(rng, hidden, inp, z_bias, r_bias):
    w = registry(gru_shapes(hidden, inp), rng, 0.0)
    w["gru.z.t.b"] = Tensor(np.full(hidden, z_bias))
    w["gru.r.t.b"] = Tensor(np.full(hidden, r_bias))
    q = registry({k: s for k, s in gru_shapes(hidden, inp).items() if k.startswith("gru.q")}, rng, 0.3)
    w.update(q)
    return w


def test_gru_frozen_when_update_gate_saturates(rng):
    w = _forced_gates(rng, 4, 3, 60.0, 0.0)
    h = np.tanh(rng.standard_normal((4, 2, 3, 3)))
    with precision(np.float64):
        new, _ = gru_step(GruState(Tensor(h)), Tensor(rng.standard_normal((3, 2, 3, 3))), w)
    np.testing.assert_allclose(new.h.data, h, atol=1e-12)


def test_gru_full_reset(rng):
    w = _forced_gates(rng, 4, 3, -60.0, -60.0)
    h = np.tanh(rng.standard_normal((4, 2, 3, 3)))
    x = rng.standard_normal((3, 2, 3, 3))
    with precision(np.float64):
        new, trace = gru_step(GruState(Tensor(h)), Tensor(x), w)
    from sstm.update import conv3

    with precision(np.float64):
        expect = np.tanh(conv3(Tensor(x), w, "gru.q").data)
    np.testing.assert_allclose(new.h.data, expect, atol=1e-12)


def test_gru_matches_direct_3d_oracle(rng):
    hidden, inp = 3, 2
    w = registry(gru_shapes(hidden, inp), rng, 0.4)
    h = np.tanh(rng.standard_normal((hidden, 2, 3, 4)))
    x = rng.standard_normal((inp, 2, 3, 4))
    with precision(np.float64):
        new, trace = gru_step(GruState(Tensor(h)), Tensor(x), w)
    kernels = {
        g: (oracles.compose_separable(w[f"gru.{g}.x.w"].data, w[f"gru.{g}.y.w"].data, w[f"gru.{g}.t.w"].data), w[f"gru.{g}.t.b"].data)
        for g in "zrq"
    }
    ref_h, ref_z, ref_r, ref_q = oracles.gru_step(h, x, kernels)
    np.testing.assert_allclose(new.h.data, ref_h, atol=1e-5)
    np.testing.assert_allclose(trace.z.data, ref_z, atol=1e-5)
    assert ((trace.r.data > 0) & (trace.r.data < 1)).all()
    assert (np.abs(trace.h_cand.data) < 1).all()


def test_residual_case_split():
    a = GruState(Tensor(np.array([1.0])))
    b = GruState(Tensor(np.array([10.0])))
    assert float(residual_hidden(2, 2, a, b).h.data[0]) == 11.0
    assert residual_hidden(1, 2, a, None) is a
    assert not residual_due(0, 3) and residual_due(3, 3) and not residual_due(4, 3)
    with pytest.raises(ValueError):
        residual_hidden(2, 2, a, None)
    with pytest.raises(ValueError):
        residual_due(1, 0)


def test_residual_unroll_n4_r2():
    fresh = [2.0, 4.0, 8.0, 16.0]
    h0 = GruState(Tensor(np.array([1.0])))
    got = [float(residual_hidden(n, 2, GruState(Tensor(np.array([f]))), h0).h.data[0]) for n, f in enumerate(fresh, 1)]
    assert got == [2.0, 5.0, 8.0, 17.0] == oracles.residual_unroll(1.0, fresh, 2)


def test_flow_head_zero_and_shared(rng):
    shapes = flow_head_shapes(8)
    w = registry(shapes, rng, 0.3)
    for k in shapes:
        if k.endswith(".b"):
            w[k] = Tensor(np.zeros(shapes[k]))
    with precision(np.float64):
        d1, d2 = flow_head(GruState(Tensor(np.zeros((8, 2, 4, 5)))), w)
        assert d1.shape == d2.shape == (2, 4, 5)
        np.testing.assert_array_equal(d1.data, 0.0)
        h = rng.standard_normal((8, 1, 4, 5))
        d1, d2 = flow_head(GruState(Tensor(np.concatenate([h, h], axis=1))), w)
    np.testing.assert_array_equal(d1.data, d2.data)


def test_upsample_scaling_and_zeros():
    ones = np.zeros((2, 3, 4), np.float32)
    ones[0] = 1
    up = upsample_flow(pair(ones, np.zeros_like(ones)))
    assert up.resolution == "full" and up.hw == (24, 32)
    np.testing.assert_allclose(up.f1.data[0], 8.0)
    np.testing.assert_array_equal(up.f1.data[1], 0.0)
    np.testing.assert_array_equal(up.f2.data, 0.0)


def test_downsample_inverts_upsample_on_ramps():
    ys, xs = np.mgrid[0:6, 0:6].astype(np.float32)
    f = np.stack([0.1 * xs + 0.05 * ys, -0.07 * ys + 0.2])
    back = downsample_flow(upsample_flow(pair(f, f))).f1.data
    # the border clamp flattens the ramp in the outermost half cell
    assert np.abs(back - f)[:, 1:-1, 1:-1].max() < 0.05


def test_resolution_tags_enforced():
    with pytest.raises(ResolutionError):
        upsample_flow(FlowPair.zeros(2, 2, resolution="full"))
    with pytest.raises(ResolutionError):
        downsample_flow(FlowPair.zeros(2, 2))
