import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sthsep import autodiff as ad
from sthsep.autodiff import GradCheckConfig, ParamStore, grad_check
from sthsep.config import ModelConfig
from sthsep.errors import ConfigError
from sthsep.model import _uniform
from sthsep.temporal import (
    PatchSpec,
    avg_pool_nodes,
    embed_inputs,
    init_temporal_params,
    layer_params,
    lora_adapt,
    patch_index,
    patchify,
    project_trend,
    prompt_stats,
    temporal_branch,
    transformer_forward,
    transformer_layer,
)
from sthsep.train import Adam

GC = GradCheckConfig()


def test_avg_pool_examples():
    series = np.arange(6.0).reshape(1, 1, 6, 1)
    same = np.repeat(series, 3, axis=1)
    assert np.array_equal(avg_pool_nodes(same).data, series[:, 0])
    two = np.stack([np.ones((4, 1)), 3 * np.ones((4, 1))])[None]
    out = avg_pool_nodes(two).data
    assert out.shape == (1, 4, 1)
    assert np.array_equal(out, np.full((1, 4, 1), 2.0))


def test_patch_count_reference():
    assert PatchSpec(16, 8).count(48) == 6
    assert patchify(np.arange(48.0), PatchSpec(16, 8)).shape == (6, 16)


def test_patch_count_t_equals_p():
    x = np.arange(16.0)
    p = patchify(x, PatchSpec(16, 8)).data
    assert p.shape == (2, 16)
    assert np.array_equal(p[0], x)
    assert np.array_equal(p[1], np.r_[x[8:], np.full(8, 15.0)])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 64), st.data())
def test_patch_coverage(P, data):
    S = data.draw(st.integers(1, P))
    T = data.draw(st.integers(P, 200))
    idx = patch_index(T, PatchSpec(P, S))
    assert set(range(T)) <= set(idx.ravel().tolist())
    assert len(idx) == (T + S - P) // S + 1


def test_patch_rejects_bad_spec():
    with pytest.raises(ConfigError):
        PatchSpec(4, 5)
    with pytest.raises(ConfigError):
        PatchSpec(16, 8).count(10)


def test_prompt_stats_ramp_and_constant():
    r = prompt_stats(np.arange(1.0, 25.0))
    assert r.slope_sign == 1 and r.min == 1.0 and r.max == 24.0
    c = prompt_stats(np.full(24, 2.5))
    assert c.slope_sign == 0 and c.min == c.max == c.median == 2.5


def _acf_oracle(x):
    # direct O(L^2) circular autocorrelation
    xc = x - x.mean()
    L = len(x)
    return np.array([sum(xc[t] * xc[(t + k) % L] for t in range(L)) for k in range(L)])


def test_prompt_stats_daily_sine_lag():
    x = np.sin(2 * np.pi * np.arange(96) / 24)
    lags = prompt_stats(x).top_lags
    assert 24 in lags
    acf = _acf_oracle(x)
    assert np.argmax(acf[1:49]) + 1 == 24
    assert len(lags) == 5


def test_embed_zero_weights_and_length():
    rng = np.random.default_rng(0)
    patches, stats = rng.standard_normal((2, 6, 16)), rng.standard_normal((2, 9))
    b_p, b_s = rng.standard_normal(8), rng.standard_normal(8)
    z = embed_inputs(patches, stats, np.zeros((16, 8)), b_p, np.zeros((9, 8)), b_s, np.zeros((7, 8))).data
    assert z.shape == (2, 7, 8)
    assert np.array_equal(z[:, 0], np.broadcast_to(b_s, (2, 8)))
    assert np.array_equal(z[:, 1:], np.broadcast_to(b_p, (2, 6, 8)))


def test_embed_stats_touch_only_prefix():
    rng = np.random.default_rng(1)
    args = [rng.standard_normal(s) for s in [(1, 6, 16), (1, 9), (16, 8), (8,), (9, 8), (8,), (7, 8)]]
    z0 = embed_inputs(*args).data
    args[1] = args[1] + np.eye(9)[4]
    z1 = embed_inputs(*args).data
    assert not np.allclose(z0[:, 0], z1[:, 0])
    assert np.array_equal(z0[:, 1:], z1[:, 1:])


def _transformer(seed, layers=2, rank=0, d=8, F=16, L=24, P=8, S=4):
    cfg = ModelConfig()
    cfg.update({"window.L": L, "window.H": 5, "patch.P": P, "patch.S": S, "transformer.layers": layers,
                "transformer.heads": 2, "transformer.d_m": d, "transformer.ffn_width": F,
                "transformer.adapter_rank": rank})
    rng = np.random.default_rng(seed)
    store = ParamStore()
    init_temporal_params(store, cfg, rng, _uniform(rng))
    return cfg, store


def test_attention_rows_sum_to_one_and_causal():
    cfg, store = _transformer(0)
    z = np.random.default_rng(2).standard_normal((3, 7, 8))
    attn = []
    out = transformer_forward(z, store, cfg.transformer, attn).data
    for a in attn:
        assert np.max(np.abs(a.sum(axis=-1) - 1)) < 1e-12
        assert np.all(np.triu(a[0, 0], 1) == 0)
    z2 = z.copy()
    z2[:, 4] += 1.0
    out2 = transformer_forward(z2, store, cfg.transformer).data
    assert np.array_equal(out[:, :4], out2[:, :4])
    assert not np.allclose(out[:, 4:], out2[:, 4:])


def test_transformer_zero_weights_is_double_layernorm():
    cfg, store = _transformer(0, layers=1)
    for name in store.names():
        if name.startswith("temporal.layer0.") and ".ln" not in name:
            store[name].data[...] = 0.0
    z = np.random.default_rng(3).standard_normal((2, 7, 8))
    ln = ad.layer_norm
    eps = cfg.transformer.ln_eps
    expect = ln(ln(ad.Tensor(z), eps=eps), eps=eps).data
    assert np.max(np.abs(transformer_forward(z, store, cfg.transformer).data - expect)) < 1e-12


def test_lora_identity_at_init_and_frozen_base():
    cfg0, base = _transformer(4, rank=0)
    cfg2, lora = _transformer(4, rank=2)
    for name in base.names():
        lora[name].data = base[name].data.copy()
    z = np.random.default_rng(5).standard_normal((2, 7, 8))
    a = transformer_forward(z, base, cfg0.transformer).data
    b = transformer_forward(z, lora, cfg2.transformer).data
    assert np.array_equal(a, b)
    assert lora.is_frozen("temporal.layer0.ffn.W1")
    assert not lora.is_frozen("temporal.layer0.ffn.W1.lora_B")
    W_before = lora["temporal.layer0.ffn.W1"].data.copy()
    lora.zero_grad()
    transformer_forward(z, lora, cfg2.transformer).sum().backward()
    assert np.array_equal(lora.grad("temporal.layer0.ffn.W1"), np.zeros_like(W_before))
    opt = Adam(lora, lr=1e-2)
    opt.step()
    c = transformer_forward(z, lora, cfg2.transformer).data
    assert not np.array_equal(b, c)
    assert np.array_equal(lora["temporal.layer0.ffn.W1"].data, W_before)


def test_lora_adapt_value():
    W, A, B = np.ones((3, 2)), np.ones((3, 1)), np.full((1, 2), 2.0)
    assert np.array_equal(lora_adapt(W, A, B).data, np.full((3, 2), 3.0))
    assert np.array_equal(lora_adapt(W).data, W)


def test_project_trend_broadcast_and_bias():
    rng = np.random.default_rng(6)
    z = rng.standard_normal((2, 3, 4))
    out = project_trend(z, rng.standard_normal((12, 5)), rng.standard_normal(5), 6).data
    assert out.shape == (2, 5, 6)
    assert all(np.array_equal(out[:, :, 0], out[:, :, j]) for j in range(6))
    b = rng.standard_normal(5)
    zero = project_trend(z, np.zeros((12, 5)), b, 3).data
    assert np.array_equal(zero, np.broadcast_to(b[None, :, None], (2, 5, 3)))


def test_temporal_branch_shape():
    cfg, store = _transformer(7)
    X = np.random.default_rng(8).standard_normal((3, 24, 4))
    out = temporal_branch(X, store, cfg).data
    assert out.shape == (3, 5, 4)


def test_transformer_layer_gradients():
    cfg, store = _transformer(9, layers=1, rank=2)
    store["temporal.layer0.ffn.W2.lora_B"].data = np.random.default_rng(11).standard_normal((2, 8))
    layer = layer_params(store, 0, cfg.transformer)
    keys = ["Wq", "Wo", "ln1.g", "ffn.W2.A", "ffn.W2.B"]

    def f(z, *weights):
        return transformer_layer(z, {**layer, **dict(zip(keys, weights))}, cfg.transformer)

    z = np.random.default_rng(10).standard_normal((1, 4, 8))
    assert grad_check(f, [z, *(layer[k].data.copy() for k in keys)], GC).passed


def test_patchify_gradient():
    spec = PatchSpec(8, 4)
    x = np.random.default_rng(12).standard_normal((2, 20))
    assert grad_check(lambda t: patchify(t, spec), [x], GC).passed
