import numpy as np
import pytest

from sstm.autodiff import (
    GradTape,
    Tensor,
    avg_pool2,
    backward,
    bilinear_sample,
    conv_axis,
    grad_check,
    matmul,
    mul,
    no_grad,
    pointwise,
    precision,
    softmax,
    tanh,
    tsum,
)
from sstm.checks import oracles


def test_conv_axis_box_filter_on_ones():
    x = Tensor(np.ones((1, 1, 5)))
    k = Tensor(np.ones((1, 1, 3)))
    out = conv_axis(x, k, "x", pad=1)
    np.testing.assert_array_equal(out.data.ravel(), [2, 3, 3, 3, 2])


@pytest.mark.parametrize("axis", ["x", "y", "t"])
def test_conv_axis_identity_kernel(rng, axis):
    x = rng.standard_normal((2, 4, 5, 6)).astype(np.float32)
    k = np.zeros((2, 2, 3), np.float32)
    k[0, 0, 1] = k[1, 1, 1] = 1.0
    out = conv_axis(Tensor(x), Tensor(k), axis, pad=1)
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 2), (2, 1)])
def test_conv_axis_matches_loop(rng, stride, pad):
    x = rng.standard_normal((2, 3, 7))
    k = rng.standard_normal((4, 2, 3))
    b = rng.standard_normal(4)
    with precision(np.float64):
        out = conv_axis(Tensor(x), Tensor(k), "x", stride=stride, pad=pad, bias=Tensor(b))
    np.testing.assert_allclose(out.data, oracles.conv_axis(x, k, "x", stride, pad, b), atol=1e-6)


def test_conv_axis_rejects_bad_axis():
    with pytest.raises(ValueError):
        conv_axis(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 1, 1))), "z")


def test_pointwise_basics(rng):
    assert float(pointwise(Tensor(0.0), "sigmoid").item()) == 0.5
    x = Tensor(rng.standard_normal(50) * 30)
    y = pointwise(x, "tanh").data
    assert np.all(np.abs(y) <= 1.0)
    assert np.all(np.abs(pointwise(Tensor(rng.standard_normal(50)), "tanh").data) < 1.0)
    np.testing.assert_array_equal(pointwise(Tensor([-1.0, 2.0]), "relu").data, [0.0, 2.0])
    np.testing.assert_array_equal(pointwise(Tensor([-1.0, 2.0]), "abs").data, [1.0, 2.0])
    with pytest.raises(ValueError):
        pointwise(x, "exp")


def test_mul_gradient_is_other_operand(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    rep = grad_check(lambda a, b: tsum(mul(a, b)), {"a": a, "b": b})
    assert rep.passed, rep
    with GradTape():
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        backward(tsum(mul(ta, tb)))
    np.testing.assert_allclose(ta.grad, b, rtol=1e-6)


def test_matmul_identity_and_oracle(rng):
    a = rng.standard_normal((2, 3))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(np.eye(3))).data, a, rtol=1e-6)
    b = rng.standard_normal((3, 2))
    with precision(np.float64):
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, oracles.matmul(a, b), atol=1e-6)
    with pytest.raises(ValueError):
        matmul(Tensor(a), Tensor(a))


def test_matmul_gradient_transpose_rule(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((3, 4))
    with precision(np.float64), GradTape():
        ta = Tensor(a, requires_grad=True)
        backward(tsum(matmul(ta, Tensor(b))))
    np.testing.assert_allclose(ta.grad, np.ones((2, 4)) @ b.T, rtol=1e-10)
    assert grad_check(lambda a, b: tsum(matmul(a, b)), {"a": a, "b": b}).passed


def test_softmax_cases(rng):
    np.testing.assert_allclose(softmax(Tensor(np.full((2, 5), 3.0)), axis=1).data, 0.2, rtol=1e-6)
    np.testing.assert_allclose(softmax(Tensor([0.0, 200.0])).data, [0.0, 1.0], atol=1e-12)
    x = rng.standard_normal((3, 4))
    proj = rng.standard_normal((3, 4))
    rep = grad_check(lambda x: tsum(mul(softmax(x, axis=1), Tensor(proj))), {"x": x})
    assert rep.passed, rep


def _grid(h, w):
    ys, xs = np.mgrid[0:h, 0:w]
    return np.stack([xs, ys]).astype(np.float64)


def test_bilinear_identity_and_integer_shift(rng):
    fmap = rng.standard_normal((3, 5, 6)).astype(np.float32)
    same = bilinear_sample(Tensor(fmap), Tensor(_grid(5, 6).astype(np.float32)))
    np.testing.assert_array_equal(same.data, fmap)
    coords = _grid(5, 6)
    coords[0] += 1
    shifted = bilinear_sample(Tensor(fmap), Tensor(coords.astype(np.float32))).data
    expect = np.concatenate([fmap[:, :, 1:], fmap[:, :, -1:]], axis=2)
    np.testing.assert_array_equal(shifted, expect)


def test_bilinear_matches_oracle_and_gradcheck(rng):
    fmap = rng.standard_normal((2, 4, 5))
    coords = np.stack([rng.uniform(0, 4, (3, 3)), rng.uniform(0, 3, (3, 3))])
    with precision(np.float64):
        out = bilinear_sample(Tensor(fmap), Tensor(coords)).data
    np.testing.assert_allclose(out, oracles.bilinear_sample(fmap, coords), atol=1e-6)
    proj = rng.standard_normal((2, 3, 3))
    rep = grad_check(lambda m, c: tsum(mul(bilinear_sample(m, c), Tensor(proj))), {"m": fmap, "c": coords}, tol=1e-4)
    assert rep.passed, rep


def test_avg_pool2_cases(rng):
    np.testing.assert_allclose(avg_pool2(Tensor(np.full((2, 4, 6), 7.0))).data, 7.0)
    assert float(avg_pool2(Tensor([[1.0, 2.0], [3.0, 4.0]])).item()) == 2.5
    x = rng.standard_normal((4, 4))
    with precision(np.float64):
        np.testing.assert_allclose(avg_pool2(Tensor(x)).data, oracles.avg_pool2(x), atol=1e-12)


def test_backward_simple_roots(rng):
    x = rng.standard_normal((3, 2))
    with precision(np.float64), GradTape():
        t = Tensor(x, requires_grad=True)
        backward(tsum(t))
    np.testing.assert_array_equal(t.grad, np.ones_like(x))
    with precision(np.float64), GradTape():
        t = Tensor(x, requires_grad=True)
        backward(tsum(mul(t, t)))
    np.testing.assert_allclose(t.grad, 2 * x)


def test_conv_tanh_chain_gradcheck(rng):
    x, k = rng.standard_normal((2, 3, 6)), rng.standard_normal((3, 2, 3))
    rep = grad_check(lambda x, k: tsum(tanh(conv_axis(x, k, "x", pad=1))), {"x": x, "k": k})
    assert rep.passed, rep


def test_grad_check_linear_is_exact(rng):
    a = rng.standard_normal(6)
    coef = rng.standard_normal(6)
    rep = grad_check(lambda a: tsum(mul(a, Tensor(coef))), {"a": a}, tol=1e-10)
    assert rep.passed and rep.max_error < 1e-9


def test_grad_check_flags_wrong_backward(monkeypatch, rng):
    from sstm.autodiff import ops

    real = ops._bilinear_backward

    def flipped(*args, **kwargs):
        return [None if g is None else -g for g in real(*args, **kwargs)]

    monkeypatch.setattr(ops, "_bilinear_backward", flipped)
    fmap = rng.standard_normal((2, 4, 5))
    coords = np.stack([rng.uniform(0.2, 3.8, (3, 3)), rng.uniform(0.2, 2.8, (3, 3))])
    rep = grad_check(lambda m, c: tsum(bilinear_sample(m, c)), {"m": fmap, "c": coords})
    assert not rep.passed


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with GradTape() as tape, no_grad():
        tsum(mul(x, x))
    assert len(tape) == 0


def test_tape_clear_frees_records():
    x = Tensor(np.ones(3), requires_grad=True)
    with GradTape() as tape:
        tsum(mul(x, x))
    assert len(tape) > 0
    tape.clear()
    assert len(tape) == 0


def test_default_precision_and_switch():
    assert Tensor([1.0]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32
