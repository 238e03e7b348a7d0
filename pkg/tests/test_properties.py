"""Randomised invariants, one hypothesis test per stated property."""

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sstm.attention import AttentionWeights, attend, attention_matrix
from sstm.autodiff import Tensor, bilinear_sample, conv_axis, precision, softmax, tanh
from sstm.checks import oracles
from sstm.correlation import build_pyramid, corr_all_pairs, lookup
from sstm.flowio import FlowFile, FlowRangeError, decode_flo, decode_kitti, encode_flo, encode_kitti
from sstm.flowpair import FlowPair
from sstm.losses import GtSample, loss1, loss2
from sstm.metrics import RegionSpec, endpoint_errors, epe, fl_rate, occlusion_distance, partition_residual, speed_map

seeds = st.integers(0, 2**32 - 1)
finite = st.floats(-1e4, 1e4, allow_nan=False, width=32)


def field(h, w, scale, rng):
    return rng.normal(scale=scale, size=(2, h, w))


@given(seeds, st.sampled_from(["x", "y", "t"]), st.sampled_from([1, 2]), st.sampled_from([0, 1]), st.integers(1, 3))
def test_conv_axis_matches_loop(seed, axis, stride, pad, k):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(2, 3, 5, 6))
    kern = rng.uniform(-1, 1, size=(3, 2, k))
    bias = rng.uniform(-1, 1, size=3)
    with precision(np.float64):
        got = conv_axis(Tensor(x), Tensor(kern), axis, stride=stride, pad=pad, bias=Tensor(bias)).data
    np.testing.assert_allclose(got, oracles.conv_axis(x, kern, axis, stride, pad, bias), atol=1e-6)


@given(seeds)
def test_rank_one_kernel_separates(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 4, 5))
    wx, wy, wt = rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3))
    with precision(np.float64):
        out = Tensor(x)
        for w, a in ((wx, "x"), (wy, "y"), (wt, "t")):
            out = conv_axis(out, Tensor(w), a, pad=1)
    np.testing.assert_allclose(out.data, oracles.conv3d(x, oracles.compose_separable(wx, wy, wt)), atol=1e-5)


@given(seeds, st.integers(1, 4), st.integers(2, 7), st.integers(2, 7))
def test_identity_grid_is_exact(seed, c, h, w):
    fmap = np.random.default_rng(seed).normal(size=(c, h, w)).astype(np.float32)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    out = bilinear_sample(Tensor(fmap), Tensor(np.stack([xs, ys]))).data
    assert np.array_equal(out, fmap)


@given(seeds)
def test_bilinear_matches_loop(seed):
    rng = np.random.default_rng(seed)
    fmap = rng.normal(size=(2, 5, 6))
    coords = rng.uniform(-2, 8, size=(2, 3, 4))
    with precision(np.float64):
        got = bilinear_sample(Tensor(fmap), Tensor(coords)).data
    np.testing.assert_allclose(got, oracles.bilinear_sample(fmap, coords), atol=1e-9)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 9)), elements=st.floats(-50, 50)))
def test_softmax_is_a_distribution(x):
    with precision(np.float64):
        p = softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
    assert (p > 0).all() or np.ptp(x) > 30  # tiny tails underflow only for large logit gaps


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3)))
def test_tanh_range(x):
    with precision(np.float64):
        y = tanh(Tensor(x)).data
    assert (np.abs(y) <= 1).all()


@given(seeds, st.floats(-3, 3).filter(lambda c: abs(c) > 1e-3))
def test_correlation_symmetry_and_scale(seed, c):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(4, 3, 4)), rng.normal(size=(4, 3, 4))
    with precision(np.float64):
        ab = corr_all_pairs(Tensor(a), Tensor(b)).data.reshape(12, 12)
        ba = corr_all_pairs(Tensor(b), Tensor(a)).data.reshape(12, 12)
        scaled = corr_all_pairs(Tensor(c * a), Tensor(b)).data.reshape(12, 12)
    np.testing.assert_allclose(ab, ba.T, atol=1e-6)
    np.testing.assert_allclose(scaled, c * ab, atol=1e-6)


@given(seeds)
def test_zero_flow_lookup_centre_is_diagonal(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(4, 8, 8)), rng.normal(size=(4, 8, 8))
    with precision(np.float64):
        vol = corr_all_pairs(Tensor(a), Tensor(b))
        feats = lookup(build_pyramid(vol, 4), Tensor(np.zeros((2, 8, 8))), 4).data
    diag = np.diagonal(vol.data.reshape(64, 64)).reshape(8, 8)
    np.testing.assert_allclose(feats[40], diag, atol=1e-6)  # centre of the first 9x9 window


@given(seeds, st.integers(1, 2))
def test_attention_rows_and_equivariance(seed, heads):
    rng = np.random.default_rng(seed)
    lc, lm, dk, h, w = 4, 4, 4, 2, 3
    ctx, mot = rng.normal(size=(lc, h, w)), rng.normal(size=(lm, h, w))
    aw = AttentionWeights(*(Tensor(rng.normal(size=s)) for s in ((lc, dk), (lc, dk), (lm, lm))), Tensor(np.array(0.7)))
    with precision(np.float64):
        for a in attention_matrix(Tensor(ctx), aw, heads):
            np.testing.assert_allclose(a.data.sum(axis=-1), 1.0, atol=1e-6)
        y = attend(Tensor(ctx), Tensor(mot), aw, heads).data.reshape(lm, -1)
        perm = rng.permutation(h * w)
        pc = ctx.reshape(lc, -1)[:, perm].reshape(lc, h, w)
        pm = mot.reshape(lm, -1)[:, perm].reshape(lm, h, w)
        yp = attend(Tensor(pc), Tensor(pm), aw, heads).data.reshape(lm, -1)
    np.testing.assert_allclose(yp, y[:, perm], atol=1e-9)


def _preds(gt1, gt2, errs):
    return [FlowPair(Tensor(gt1 + e1), Tensor(gt2 + e2), "full") for e1, e2 in errs]


@given(seeds, st.integers(1, 4), st.floats(0.1, 1.0))
def test_losses_nonnegative_and_zero_iff_exact(seed, n, gamma):
    rng = np.random.default_rng(seed)
    g1, g2 = field(3, 4, 2, rng), field(3, 4, 2, rng)
    gt = GtSample(g1, g2)
    exact = _preds(g1, g2, [(0, 0)] * n)
    with precision(np.float64):
        assert loss1(exact, gt, gamma).item() == 0 and loss2(exact, gt, gamma).item() == 0
        noisy = _preds(g1, g2, [(field(3, 4, 1, rng), field(3, 4, 1, rng)) for _ in range(n)])
        assert loss1(noisy, gt, gamma).item() > 0 and loss2(noisy, gt, gamma).item() > 0
        # loss2 ignores the first stream entirely
        f1_only = _preds(g1, g2, [(field(3, 4, 1, rng), 0) for _ in range(n)])
        assert loss2(f1_only, gt, gamma).item() == 0


@given(seeds, st.integers(2, 4), st.data())
def test_growing_one_step_error_never_lowers_loss(seed, n, data):
    rng = np.random.default_rng(seed)
    g1, g2 = field(3, 4, 2, rng), field(3, 4, 2, rng)
    errs = [(field(3, 4, 1, rng), field(3, 4, 1, rng)) for _ in range(n)]
    step = data.draw(st.integers(0, n - 1))
    factor = data.draw(st.floats(1.0, 5.0))
    grown = list(errs)
    grown[step] = (errs[step][0] * factor, errs[step][1] * factor)
    gt = GtSample(g1, g2)
    with precision(np.float64):
        assert loss1(_preds(g1, g2, grown), gt).item() >= loss1(_preds(g1, g2, errs), gt).item() - 1e-12


@given(seeds, st.lists(st.floats(0.5, 20), min_size=1, max_size=4, unique=True))
def test_band_cover_reconciles(seed, cuts):
    rng = np.random.default_rng(seed)
    gt, pred = field(6, 7, 4, rng), field(6, 7, 4, rng)
    edges = [0.0] + sorted(cuts)
    bands = [RegionSpec("speed", lo, hi) for lo, hi in zip(edges, edges[1:])] + [RegionSpec("speed", edges[-1])]
    assert partition_residual(pred, gt, bands, speed_map(gt)) < 1e-6
    occ = rng.random((6, 7)) < 0.2
    assume(occ.any())
    d_bands = [RegionSpec("occ_distance", lo, hi) for lo, hi in zip(edges, edges[1:])] + [RegionSpec("occ_distance", edges[-1])]
    assert partition_residual(pred, gt, d_bands, occlusion_distance(occ)) < 1e-6


@given(seeds, st.integers(-3, 3), st.integers(-3, 3))
def test_fl_rate_ignores_pixel_relabelling(seed, dy, dx):
    rng = np.random.default_rng(seed)
    gt, pred = field(5, 6, 5, rng), field(5, 6, 5, rng)
    base = fl_rate(pred, gt)
    perm = rng.permutation(30)
    shuffle = lambda f: f.reshape(2, -1)[:, perm].reshape(2, 5, 6)
    assert fl_rate(shuffle(pred), shuffle(gt)) == base
    roll = lambda f: np.roll(f, (dy, dx), axis=(1, 2))
    assert fl_rate(roll(pred), roll(gt)) == base
    assert epe(roll(pred), roll(gt)) == pytest.approx(epe(pred, gt), abs=1e-12)


@given(seeds)
def test_epe_matches_loop(seed):
    rng = np.random.default_rng(seed)
    gt, pred = field(4, 5, 3, rng), field(4, 5, 3, rng)
    mask = rng.random((4, 5)) < 0.7
    assume(mask.any())
    assert epe(pred, gt, mask) == pytest.approx(oracles.epe(pred, gt, mask), abs=1e-6)
    assert endpoint_errors(pred, gt).min() >= 0


@given(seeds, st.integers(3, 12), st.integers(3, 12), st.floats(0.01, 0.4))
def test_occlusion_distance_matches_dijkstra(seed, h, w, p):
    mask = np.random.default_rng(seed).random((h, w)) < p
    assume(mask.any())
    np.testing.assert_allclose(occlusion_distance(mask), oracles.chamfer_distance(mask), atol=1e-9)


@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_flo_round_trip_bitwise(h, w, data):
    flow = data.draw(arrays(np.float32, (2, h, w), elements=finite))
    back = decode_flo(encode_flo(FlowFile(flow))).flow
    assert back.tobytes() == flow.tobytes()


@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_kitti_round_trip_or_range_error(h, w, data):
    flow = data.draw(arrays(np.float32, (2, h, w), elements=st.floats(-600, 600, width=32)))
    valid = data.draw(arrays(np.bool_, (h, w)))
    ff = FlowFile(flow, valid)
    q = np.rint(np.where(valid[None], flow, 0).astype(np.float64) * 64) + 2**15
    encodable = q.min() >= 0 and q.max() <= 65535
    if not encodable:
        with pytest.raises(FlowRangeError):
            encode_kitti(ff)
        return
    back = decode_kitti(encode_kitti(ff))
    assert np.array_equal(back.valid, valid)
    assert np.abs(back.flow - flow)[:, valid].max(initial=0) <= 1 / 128
