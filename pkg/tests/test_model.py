import numpy as np
import pytest

from sstm.autodiff import Tensor, precision
from sstm.encoders import context2d_shapes, context3d_shapes
from sstm.flowpair import FlowPair
from sstm.layers import count
from sstm.model import (
    ConfigError,
    ModelConfig,
    forward,
    init_weights,
    param_shapes,
    pad_to_multiple,
    run,
    sstm_weights_from_sstmpp,
    trainable_names,
    warm_start_init,
)

TINY = dict(feature_dim=16, context_dim=16, hidden_dim=16, motion_dim=16, key_dim=16)


def frames(rng, h=64, w=64):
    return [rng.uniform(0, 255, (3, h, w)).astype(np.float32) for _ in range(3)]


def test_variant_laws():
    with pytest.raises(ConfigError):
        ModelConfig(variant="sstm", use_attention=True)
    with pytest.raises(ConfigError):
        ModelConfig(variant="sstm++", use_attention=False)
    with pytest.raises(ConfigError):
        ModelConfig(frames=4)
    with pytest.raises(ConfigError):
        ModelConfig(corr_levels=3)
    plus = param_shapes(ModelConfig.for_variant("sstm++"))
    plain = param_shapes(ModelConfig.for_variant("sstm"))
    assert any(k.startswith("attn.") for k in plus)
    assert not any(k.startswith("attn.") for k in plain)


def test_config_text_round_trip():
    cfg = ModelConfig.for_variant("sstm", iters=5, gamma=0.9, warm_start="shift_pair").scaled(4)
    assert ModelConfig.from_lines(cfg.to_lines()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_lines(["bogus=1"])


def test_init_deterministic():
    cfg = ModelConfig.for_variant("sstm++").scaled(8)
    a, b = init_weights(cfg, seed=3), init_weights(cfg, seed=3)
    assert list(a) == list(b)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    c = init_weights(cfg, seed=4)
    assert any(not np.array_equal(a[k].data, c[k].data) for k in a if not k.endswith(".b"))


def test_context_mode_param_delta_is_the_encoder_difference():
    base = ModelConfig.for_variant("sstm")
    twin = base.replace(context_mode="conv2d_twin")
    delta = count(param_shapes(base)) - count(param_shapes(twin))
    assert delta == count(context3d_shapes(128)) - count(context2d_shapes(128)) != 0


def test_param_count_independent_of_iterations():
    counts = {count(param_shapes(ModelConfig.for_variant("sstm++", iters=n))) for n in (1, 4, 12, 20)}
    assert len(counts) == 1


def test_forward_lengths_and_shapes(rng):
    cfg = ModelConfig.for_variant("sstm++", **TINY)
    w = init_weights(cfg)
    out = forward(frames(rng, 62, 70), w, cfg)
    assert len(out) == 12
    assert all(p.resolution == "full" and p.hw == (62, 70) for p in out)
    one = forward(frames(rng), w, cfg.replace(iters=1))
    assert len(one) == 1


def test_forward_paper_widths_default_iterations(rng):
    cfg = ModelConfig.for_variant("sstm")
    out = forward(frames(rng), init_weights(cfg), cfg)
    assert len(out) == 12


def test_forward_deterministic_and_validates(rng):
    cfg = ModelConfig.for_variant("sstm", iters=2, **TINY)
    w = init_weights(cfg)
    fr = frames(rng)
    a, b = forward(fr, w, cfg)[-1], forward(fr, w, cfg)[-1]
    np.testing.assert_array_equal(a.f1.data, b.f1.data)
    with pytest.raises(ValueError):
        forward(fr[:2], w, cfg)
    bad = [f.copy() for f in fr]
    bad[1][0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        forward(bad, w, cfg)


def test_pad_to_multiple_edges():
    img = np.arange(2 * 5 * 6, dtype=np.float32).reshape(2, 5, 6)
    out = pad_to_multiple(img)
    assert out.shape == (2, 8, 8)
    np.testing.assert_array_equal(out[:, :5, :6], img)
    np.testing.assert_array_equal(out[:, 7, :6], img[:, 4])


def test_warm_start_modes():
    prev = FlowPair(Tensor(np.ones((2, 3, 4), np.float32)), Tensor(np.stack([np.full((3, 4), 2.0), np.full((3, 4), 1.0)]).astype(np.float32)))
    none = warm_start_init(prev, "none")
    assert not none.f1.data.any() and not none.f2.data.any()
    shifted = warm_start_init(prev, "shift_pair")
    np.testing.assert_array_equal(shifted.f1.data, prev.f2.data)
    np.testing.assert_array_equal(shifted.f2.data, 0.0)
    first = warm_start_init(None, "shift_pair", hw=(3, 4))
    assert first.hw == (3, 4) and not first.f1.data.any()
    with pytest.raises(ConfigError):
        warm_start_init(prev, "repeat")


def test_warm_start_init_only_changes_the_starting_flows(rng):
    cfg = ModelConfig.for_variant("sstm", iters=1, **TINY)
    w = init_weights(cfg)
    fr = frames(rng)
    zero = run(fr, w, cfg)
    start = FlowPair(Tensor(np.ones((2, 8, 8), np.float32)), Tensor(np.zeros((2, 8, 8), np.float32)))
    warm = run(fr, w, cfg, init=start)
    assert not np.array_equal(zero.final.f1.data, warm.final.f1.data)
    np.testing.assert_array_equal(zero.states[0].h.data, warm.states[0].h.data)


def test_frozen_alpha_is_not_trainable():
    cfg = ModelConfig.for_variant("sstm++", freeze_alpha=True, **TINY)
    names = trainable_names(init_weights(cfg), cfg)
    assert "attn.alpha" not in names and "attn.wq" in names


def test_alpha_zero_sstmpp_matches_sstm_on_shared_weights(rng):
    cfg = ModelConfig.for_variant("sstm++", iters=3, freeze_alpha=True, **TINY)
    w = init_weights(cfg, seed=7)
    for k in w:  # generic nonzero weights everywhere except the gain
        if k != "attn.alpha":
            w[k].data = rng.uniform(-0.3, 0.3, w[k].shape).astype(np.float32)
    folded, plain_cfg = sstm_weights_from_sstmpp(w, cfg)
    fr = frames(rng)
    with precision(np.float64):
        w64, f64 = w.astype(np.float64), folded.astype(np.float64)
        a = forward(fr, w64, cfg)
        b = forward(fr, f64, plain_cfg)
    for p, q in zip(a, b):
        np.testing.assert_allclose(p.f1.data, q.f1.data, atol=1e-5)
        np.testing.assert_allclose(p.f2.data, q.f2.data, atol=1e-5)
