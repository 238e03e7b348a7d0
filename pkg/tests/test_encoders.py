import numpy as np
import pytest

from sstm.autodiff import Tensor, precision
from sstm.checks import oracles
from sstm.encoders import (
    SptBlockSpec,
    context2d_shapes,
    context3d_shapes,
    context_encode_2d,
    context_encode_3d,
    feature_encode,
    feature_encoder_shapes,
    spt_block,
    spt_shapes,
)
from sstm.layers import count


def rand_registry(shapes, rng, scale=0.3, dtype=np.float32):
    return {k: Tensor((rng.standard_normal(s) * scale).astype(dtype)) for k, s in shapes.items()}


def zero_registry(shapes):
    return {k: Tensor(np.zeros(s, np.float32)) for k, s in shapes.items()}


@pytest.fixture(scope="module")
def fnet():
    return rand_registry(feature_encoder_shapes(256), np.random.default_rng(0))


def test_feature_shape_paper_width(fnet):
    img = Tensor(np.random.default_rng(1).uniform(-1, 1, (3, 64, 96)).astype(np.float32))
    out = feature_encode(img, fnet)
    assert out.shape == (256, 8, 12)
    np.testing.assert_array_equal(out.data, feature_encode(img, fnet).data)


def test_feature_encode_zero_weights():
    w = zero_registry(feature_encoder_shapes(32))
    out = feature_encode(Tensor(np.ones((3, 16, 16), np.float32)), w)
    np.testing.assert_array_equal(out.data, 0.0)


def test_feature_encode_needs_padded_input(fnet):
    with pytest.raises(ValueError):
        feature_encode(Tensor(np.zeros((3, 60, 64), np.float32)), fnet)


@pytest.mark.parametrize("variant", ["SPT1", "SPT2", "SPT3", "SPT4"])
def test_spt_stride1_preserves_shape(rng, variant):
    spec = SptBlockSpec(variant, 4, 4)
    w = rand_registry(spt_shapes("b", spec), rng)
    x = Tensor(rng.standard_normal((4, 3, 6, 6)).astype(np.float32))
    assert spt_block(x, spec, w, "b").shape == x.shape
    out = spt_block(x, spec, zero_registry(spt_shapes("b", spec)), "b")
    np.testing.assert_array_equal(out.data, x.data)


def test_spt_rank1_instantiation_matches_full_3d_conv(rng):
    spec = SptBlockSpec("SPT4", 2, 2)
    shapes = spt_shapes("b", spec)
    w = rand_registry(shapes, rng, dtype=np.float64)
    x = rng.standard_normal((2, 2, 5, 5))
    with precision(np.float64):
        out = spt_block(Tensor(x), spec, w, "b").data
    # SPT4 is x + sep(relu(x)); sep is an x-conv then a biased y-conv
    wx, wy, b = w["b.s.x.w"].data, w["b.s.y.w"].data, w["b.s.y.b"].data
    k3 = oracles.compose_separable(wx, wy, np.eye(2)[:, :, None])
    ref = x + oracles.conv3d(np.maximum(x, 0), k3, b)
    np.testing.assert_allclose(out, ref, atol=1e-5)


def test_context_shapes_paper_width():
    rng = np.random.default_rng(2)
    clip = Tensor(rng.uniform(-1, 1, (3, 3, 64, 96)).astype(np.float32))
    w3 = rand_registry(context3d_shapes(128), rng, 0.1)
    w2 = rand_registry(context2d_shapes(128), rng, 0.1)
    c3 = context_encode_3d(clip, w3)
    c2 = context_encode_2d(Tensor(clip.data[:, 0]), Tensor(clip.data[:, 1]), w2)
    assert c3.shape == c2.shape == (128, 2, 8, 12)


def test_context3d_not_time_symmetric_and_deterministic(rng):
    w = rand_registry(context3d_shapes(32), rng, 0.3)
    clip = rng.uniform(-1, 1, (3, 3, 16, 16)).astype(np.float32)
    a = context_encode_3d(Tensor(clip), w, 32).data
    b = context_encode_3d(Tensor(clip[:, ::-1].copy()), w, 32).data
    assert not np.allclose(a, b[:, ::-1])
    np.testing.assert_array_equal(a, context_encode_3d(Tensor(clip), w, 32).data)


def test_context2d_identical_frames_identical_slices(rng):
    w = rand_registry(context2d_shapes(32), rng, 0.3)
    img = Tensor(rng.uniform(-1, 1, (3, 16, 16)).astype(np.float32))
    out = context_encode_2d(img, img, w, 32).data
    np.testing.assert_array_equal(out[:, 0], out[:, 1])


def test_context_modes_have_different_sizes():
    # the twin 2D encoder drops every temporal conv, so it is the smaller one here
    n3, n2 = count(context3d_shapes(128)), count(context2d_shapes(128))
    assert n2 < n3
