import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskattn.analysis import (
    AttnRecord,
    capture_attention,
    distance_bound_check,
    dump_attention,
    head_average,
    locality_report,
    locality_statistic,
    per_head_locality,
    tightness_witness,
    verify_degeneracy,
)
from maskattn.errors import ContractError
from maskattn.model import ModelConfig, Seq2SeqModel


def record_of(mats, kind="SAN", layer=1):
    mats = [np.asarray(m, dtype=float) for m in mats]
    return AttnRecord(lengths=[m.shape[0] for m in mats],
                      mean=[{(layer, kind): m} for m in mats],
                      heads=[{(layer, kind): m[None]} for m in mats])


def small_model(ordering="C5", seed=0):
    cfg = ModelConfig(vocab_size=10, d_model=8, heads=2, enc_layers=2, dec_layers=1, ordering=ordering,
                      max_rel=4, max_len=12)
    return Seq2SeqModel(cfg, seed=seed)


class TestLocality:
    @pytest.mark.parametrize("w", [0, 1, 3, 10])
    def test_identity_attention_is_one(self, w):
        rec = record_of([np.eye(5), np.eye(3), np.eye(1)])
        assert locality_statistic(rec, w, 1, "SAN") == 1.0

    def test_uniform_attention_hand_enumeration(self):
        # window sizes per query position are 2, 3, 3, 3, 2
        rec = record_of([np.full((5, 5), 0.2)])
        assert locality_statistic(rec, 1, 1, "SAN") == pytest.approx(0.52, abs=1e-15)

    def test_average_over_sentences(self):
        rec = record_of([np.full((5, 5), 0.2), np.eye(4)])
        assert locality_statistic(rec, 1, 1, "SAN") == pytest.approx((0.52 + 1.0) / 2, abs=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 9), seed=st.integers(0, 10_000))
    def test_monotone_in_window_and_reaches_one(self, n, seed):
        raw = np.random.default_rng(seed).uniform(size=(n, n))
        rec = record_of([raw / raw.sum(1, keepdims=True)])
        vals = [locality_statistic(rec, w, 1, "SAN") for w in range(n + 1)]
        assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
        assert vals[n - 1] == pytest.approx(1.0, abs=1e-12)
        assert all(0.0 <= v <= 1.0 + 1e-12 for v in vals)

    def test_errors(self):
        with pytest.raises(ContractError):
            locality_statistic(AttnRecord(), 1, 1, "SAN")
        rec = record_of([np.eye(3)])
        with pytest.raises(ContractError):
            locality_statistic(rec, -1, 1, "SAN")
        with pytest.raises(ContractError):
            locality_statistic(rec, 1, 2, "SAN")

    def test_per_head_mean_matches_head_average(self):
        a, b = np.eye(4), np.full((4, 4), 0.25)
        rec = AttnRecord(lengths=[4], mean=[{(1, "DMAN"): head_average([a, b])}],
                         heads=[{(1, "DMAN"): np.stack([a, b])}])
        per_head = per_head_locality(rec, 1, 1, "DMAN")
        np.testing.assert_allclose(per_head, [1.0, 10 / 16])
        assert locality_statistic(rec, 1, 1, "DMAN") == pytest.approx(per_head.mean())

    def test_report_formatting(self):
        rec = record_of([np.full((5, 5), 0.2)])
        rep = locality_report(rec, windows=(1, 2))
        assert rep.to_csv() == "kind,w,layer,value_percent\nSAN,1,1,52.00\nSAN,2,1,76.00\n"
        assert rep.value("SAN", 2, 1) == pytest.approx(0.76)
        assert rep.dataset_size == 1


class TestCapture:
    def test_head_average_of_known_matrices(self):
        a = np.array([[1.0, 0.0], [0.5, 0.5]])
        b = np.array([[0.0, 1.0], [0.25, 0.75]])
        np.testing.assert_allclose(head_average([a, b]), [[0.5, 0.5], [0.375, 0.625]])
        np.testing.assert_array_equal(head_average([a]), a)

    def test_rows_normalized_and_real_tokens_only(self):
        model = small_model()
        data = [np.array([3, 4, 5]), np.array([6, 7, 8, 9, 3, 4])]
        rec = capture_attention(model, data, "toy")
        assert rec.lengths == [3, 6]
        assert rec.layers == [1, 2]
        assert rec.kinds == ["DMAN", "SAN", "FFN"]
        for n, mats in zip(rec.lengths, rec.mean):
            for m in mats.values():
                assert m.shape == (n, n)
                np.testing.assert_allclose(m.sum(1), 1.0, atol=1e-9)

    def test_ffn_sublayer_is_identity(self):
        rec = capture_attention(small_model(), [np.array([3, 4, 5, 6])])
        assert np.array_equal(rec.mean[0][(1, "FFN")], np.eye(4))

    def test_padding_does_not_leak(self):
        model = small_model(seed=3)
        short = np.array([3, 4, 5])
        alone = capture_attention(model, [short])
        batched = capture_attention(model, [short, np.array([6, 7, 8, 9, 3, 4, 5])])
        for key, m in alone.mean[0].items():
            np.testing.assert_allclose(batched.mean[0][key], m, atol=1e-12)

    def test_deterministic(self):
        model = small_model()
        data = [np.array([3, 4, 5, 6, 7])]
        a = capture_attention(model, data)
        b = capture_attention(model, data)
        for key in a.keys():
            assert np.array_equal(a.mean[0][key], b.mean[0][key])

    def test_decoder_stack_is_causal(self):
        rec = capture_attention(small_model(), [(np.array([3, 4, 5]), np.array([5, 4, 3]))], stack="decoder")
        m = rec.mean[0][(1, "DMAN")]
        assert m.shape == (4, 4)
        assert np.all(m[np.triu_indices(4, 1)] == 0)

    def test_dump(self, tmp_path):
        rec = capture_attention(small_model(), [np.array([3, 4, 5])])
        paths = dump_attention(rec, tmp_path)
        assert len(paths) == 6
        back = np.loadtxt(tmp_path / "sent0000_layer1_DMAN.csv", delimiter=",")
        np.testing.assert_array_equal(back, rec.mean[0][(1, "DMAN")])


class TestDegeneracy:
    def test_passes_at_float64(self):
        rep = verify_degeneracy(seed=0, draws=100)
        assert rep.passed
        assert rep.san_max_dev < 1e-10 and rep.ffn_max_dev < 1e-10

    def test_perturbed_mask_is_reported(self):
        rep = verify_degeneracy(seed=0, draws=10, perturb=True)
        assert not rep.passed
        assert {which for _, which, _ in rep.failures} == {"SAN", "FFN"}

    def test_float32_bound(self):
        rep = verify_degeneracy(seed=1, draws=50, dtype=np.float32)
        assert rep.tol == 1e-4 and rep.passed


class TestDistanceBound:
    def test_equal_inputs(self, rng):
        v, w = rng.standard_normal(4), rng.standard_normal((4, 3))
        assert distance_bound_check(v, v, v, w, w) == (0.0, 0.0, True)

    def test_random_trials(self, rng):
        for _ in range(10_000):
            d, dk = rng.integers(1, 6, size=2)
            a, b, c = (rng.standard_normal(d) * rng.uniform(0.1, 10) for _ in range(3))
            wq, wk = rng.standard_normal((d, dk)), rng.standard_normal((d, dk))
            lhs, rhs, holds = distance_bound_check(a, b, c, wq, wk)
            assert holds, (lhs, rhs)

    def test_tightness_witness(self):
        lhs, rhs, holds = distance_bound_check(*tightness_witness(np.array([1.0, -2.0, 0.5])))
        assert holds and lhs == rhs == 9 * 5.25
