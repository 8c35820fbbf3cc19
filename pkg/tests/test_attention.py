import math

import numpy as np
import pytest

from maskattn import tensor as T
from maskattn.attention import ManLayer, ManLayerConfig, ParamStore, cross_attention_forward, man_layer_forward
from maskattn.errors import ConfigError, DimensionError
from maskattn.gradcheck import check_gradients
from maskattn.masks import AllOnes, Banded, Identity, batch_mask
from maskattn.tensor import Tensor


def brute_force_attention(hq, hk, wq, wk, wv, wh, heads, mask=None):
    """Element-by-element multi-head attention with an optional mask."""
    d_k = wq.shape[1] // heads
    d_v = wv.shape[1] // heads
    tq, tk = hq.shape[0], hk.shape[0]
    cat = np.zeros((tq, heads * d_v))
    for i in range(heads):
        q = hq @ wq[:, i * d_k:(i + 1) * d_k]
        k = hk @ wk[:, i * d_k:(i + 1) * d_k]
        v = hk @ wv[:, i * d_v:(i + 1) * d_v]
        for t in range(tq):
            weights = []
            for s in range(tk):
                m = 1.0 if mask is None else mask[t, s]
                weights.append(m * math.exp(sum(q[t, j] * k[s, j] for j in range(d_k)) / math.sqrt(d_k)))
            z = sum(weights)
            for c in range(d_v):
                cat[t, i * d_v + c] = sum(weights[s] * v[s, c] for s in range(tk)) / z
    return cat @ wh


def make(cfg, seed=0):
    store = ParamStore(np.random.default_rng(seed))
    return ManLayer(cfg, store, "l"), store


class TestConfig:
    def test_head_product_must_match(self):
        with pytest.raises(ConfigError):
            ManLayerConfig(d=8, d_k=3, heads=2)

    def test_ffn_single_head(self):
        with pytest.raises(ConfigError):
            ManLayerConfig(d=8, d_k=1, heads=2, mask=Identity(), use_qk=False, activation="relu")

    def test_ffn_inner_width_defaults_to_twice_d(self):
        cfg = ManLayerConfig.ffn(10)
        assert (cfg.heads, cfg.d_v, cfg.activation, cfg.use_qk) == (1, 20, "relu", False)

    def test_bad_activation(self):
        with pytest.raises(ConfigError):
            ManLayerConfig(d=4, d_k=4, activation="gelu")


class TestDegeneracy:
    @pytest.mark.parametrize("seed", range(5))
    def test_all_ones_identity_is_self_attention(self, seed):
        rng = np.random.default_rng(seed)
        layer, _ = make(ManLayerConfig(d=8, d_k=2, heads=4), seed)
        h = rng.standard_normal((6, 8))
        got = layer.transform(h).data
        want = brute_force_attention(h, h, layer.wq.data, layer.wk.data, layer.wv.data, layer.wh.data, 4)
        assert np.max(np.abs(got - want)) < 1e-10

    @pytest.mark.parametrize("seed", range(5))
    def test_identity_relu_single_head_is_ffn(self, seed):
        rng = np.random.default_rng(seed)
        layer, _ = make(ManLayerConfig.ffn(6), seed)
        h = rng.standard_normal((5, 6))
        want = np.maximum(h @ layer.wv.data, 0) @ layer.wh.data
        assert np.max(np.abs(layer.transform(h).data - want)) < 1e-10

    def test_ffn_degeneracy_even_with_query_key_projections(self, rng):
        # the identity mask makes the scores irrelevant
        layer, _ = make(ManLayerConfig(d=6, d_k=6, heads=1, d_v=12, activation="relu", mask=Identity()))
        h = rng.standard_normal((5, 6))
        want = np.maximum(h @ layer.wv.data, 0) @ layer.wh.data
        assert np.max(np.abs(layer.transform(h).data - want)) < 1e-10

    def test_band_zero_equals_identity(self, rng):
        layer, _ = make(ManLayerConfig(d=8, d_k=4, heads=2, mask=Banded(0)))
        h = rng.standard_normal((7, 8))
        a = layer.transform(h).data
        b = layer.transform(h, masks=batch_mask(Identity(), 7)).data
        assert np.array_equal(a, b)

    def test_full_sublayer_adds_residual_and_norm(self, rng):
        layer, _ = make(ManLayerConfig.san(8, 2))
        h = rng.standard_normal((4, 8))
        y = h + layer.transform(h).data
        y = (y - y.mean(1, keepdims=True)) / np.sqrt(y.var(1, keepdims=True) + 1e-5)
        np.testing.assert_allclose(layer.forward(h).data, y, atol=1e-12)
        np.testing.assert_allclose(man_layer_forward(h, layer, batch_mask(AllOnes(), 4)).data, y, atol=1e-12)


class TestMaskedLayer:
    def test_banded_matches_brute_force(self, rng):
        layer, _ = make(ManLayerConfig(d=6, d_k=3, heads=2, mask=Banded(1)))
        h = rng.standard_normal((5, 6))
        mask = batch_mask(Banded(1), 5).data[0, 0]
        want = brute_force_attention(h, h, layer.wq.data, layer.wk.data, layer.wv.data, layer.wh.data, 2, mask)
        np.testing.assert_allclose(layer.transform(h).data, want, atol=1e-10)

    def test_dynamic_layer_gradients(self, rng):
        layer, store = make(ManLayerConfig.dman(8, 2, max_rel=3))
        for t in layer.mask_params.named().values():
            t.data[...] = rng.standard_normal(t.shape) * 0.5
        h = Tensor(rng.standard_normal((2, 6, 8)), requires_grad=True)
        valid = np.array([[1, 1, 1, 1, 1, 0], [1, 1, 1, 1, 1, 1]], dtype=bool)
        w = Tensor(rng.standard_normal((2, 6, 8)))
        f = lambda: T.sum(T.mul(layer.forward(h, key_valid=valid), w))  # noqa: E731
        assert check_gradients(f, list(store.values()) + [h]) < 1e-4

    def test_width_mismatch(self, rng):
        layer, _ = make(ManLayerConfig.san(8, 2))
        with pytest.raises(DimensionError):
            layer.transform(rng.standard_normal((3, 6)))

    def test_padded_keys_get_no_attention(self, rng):
        layer, _ = make(ManLayerConfig.san(8, 2))
        valid = np.array([[True, True, True, False, False]])
        layer.forward(rng.standard_normal((1, 5, 8)), key_valid=valid, capture=True)
        att = layer.last_attention[0]
        assert np.all(att[:, :3, 3:] == 0)


class TestCrossAttention:
    def test_single_key(self, rng):
        layer, _ = make(ManLayerConfig.san(8, 2))
        enc = rng.standard_normal((1, 8))
        out = cross_attention_forward(rng.standard_normal((4, 8)), enc, layer).data
        want = (enc @ layer.wv.data) @ layer.wh.data
        np.testing.assert_allclose(out, np.repeat(want, 4, axis=0), atol=1e-12)

    def test_uniform_logits_average_values(self, rng):
        layer, _ = make(ManLayerConfig.san(8, 2))
        layer.wq.data[:] = 0
        enc = rng.standard_normal((5, 8))
        out = cross_attention_forward(rng.standard_normal((3, 8)), enc, layer).data
        want = (enc @ layer.wv.data).mean(axis=0) @ layer.wh.data
        np.testing.assert_allclose(out, np.tile(want, (3, 1)), atol=1e-12)

    def test_against_brute_force(self, rng):
        layer, _ = make(ManLayerConfig.san(8, 4))
        dec, enc = rng.standard_normal((3, 8)), rng.standard_normal((6, 8))
        want = brute_force_attention(dec, enc, layer.wq.data, layer.wk.data, layer.wv.data, layer.wh.data, 4)
        np.testing.assert_allclose(cross_attention_forward(dec, enc, layer).data, want, atol=1e-10)

    def test_padded_source_ignored(self, rng):
        layer, _ = make(ManLayerConfig.san(8, 2))
        dec, enc = rng.standard_normal((1, 3, 8)), rng.standard_normal((1, 6, 8))
        full = cross_attention_forward(dec, enc[:, :4], layer).data
        padded = cross_attention_forward(dec, enc, layer, enc_valid=np.array([[1, 1, 1, 1, 0, 0]], bool)).data
        np.testing.assert_allclose(padded, full, atol=1e-12)

    def test_shape_mismatch(self, rng):
        layer, _ = make(ManLayerConfig.san(8, 2))
        with pytest.raises(DimensionError):
            cross_attention_forward(rng.standard_normal((3, 8)), rng.standard_normal((4, 6)), layer)
