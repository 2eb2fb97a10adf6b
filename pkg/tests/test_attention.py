import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from combaccel.attention import (
    AttentionWeights, ExactBackend, OracleBackend, SimulatedBackend, SoftmaxLut, attention_head,
    collapse_qk, dmmm_exact_float, fidelity_report, multihead, quantize_rows, scale_scores,
    softmax_exact, softmax_lut,
)
from combaccel.errors import ValidationError
from combaccel.mmm import dmmm_oracle
from combaccel.mvm import SimFlags
from oracles import attention_dense, matmul_int, softmax_dense


def _weights(rng, d, bits=4, **kw):
    top = (1 << bits) - 1
    return AttentionWeights(*(rng.integers(0, top + 1, (d, d)) for _ in range(3)), bits=bits, **kw)


@pytest.mark.parametrize("d", [2, 4, 8])
def test_collapse_identity(d):
    # X (W_Q W_K^T) X^T == (X W_Q)(X W_K)^T in exact integers.
    rng = np.random.default_rng(d)
    for _ in range(1000):
        x, wq, wk = (rng.integers(0, 16, (d, d)) for _ in range(3))
        c = collapse_qk(wq, wk, 4)
        lhs = matmul_int(matmul_int(x.tolist(), c.product.tolist()), x.T.tolist())
        q, k = matmul_int(x.tolist(), wq.tolist()), matmul_int(x.tolist(), wk.tolist())
        assert lhs == matmul_int(q, np.array(k).T.tolist())


def test_collapse_quantisation():
    c = collapse_qk([[1, 2], [3, 4]], [[1, 0], [0, 1]], 4)
    np.testing.assert_array_equal(c.product, [[1, 2], [3, 4]])
    assert c.scale == pytest.approx(4 / 15)
    # Half-up: 15 p / 4 rounded.
    np.testing.assert_array_equal(c.codes, [[4, 8], [11, 15]])
    z = collapse_qk(np.zeros((2, 2), int), np.zeros((2, 2), int), 4)
    assert z.scale == 1.0 and not z.codes.any()
    with pytest.raises(ValidationError):
        collapse_qk(np.zeros((2, 3), int), np.zeros((2, 3), int), 4)


@given(c=st.integers(-1024, 1024), m=st.integers(0, 6))
def test_scale_scores_is_floor_division(c, m):
    assert int(scale_scores(c, m)) == math.floor(c / 2**m)


def test_scale_scores_examples():
    assert int(scale_scores(-7, 1)) == -4
    assert int(scale_scores(7, 1)) == 3
    with pytest.raises(ValidationError):
        scale_scores(1, -1)


def test_lut_sizes():
    lut = SoftmaxLut.build(8)
    assert lut.exp_table.size == 1537 and lut.log_table.size == 1024
    assert lut.step == 2.0 ** -7
    assert lut.error_bound() <= 2.0 ** -6
    assert SoftmaxLut.build(1).error_bound() == 0.0


@given(rows=arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 32)),
                   elements=st.integers(-3000, 3000).map(lambda v: v / 128)))
def test_lut_softmax_within_bound(rows):
    lut = SoftmaxLut.build(rows.shape[1])
    bound = lut.error_bound()
    for row in rows:
        got = softmax_lut(row, lut)
        ref = softmax_dense(row)
        assert np.max(np.abs(got - ref)) <= bound + 1e-12
        assert abs(got.sum() - 1.0) <= bound * 1.0 + 1e-12
        assert np.all(got >= 0)


@given(row=arrays(np.float64, 16, elements=st.integers(-500, 500).map(lambda v: v / 128)),
       shift=st.integers(-4000, 4000))
def test_lut_softmax_shift_invariant(row, shift):
    np.testing.assert_array_equal(softmax_lut(row), softmax_lut(row + shift / 128))


def test_lut_edge_cases():
    np.testing.assert_array_equal(softmax_lut([3.0]), [1.0])
    out = softmax_lut([0.0, -100.0])
    assert out[1] == 0.0 and out[0] == pytest.approx(1.0, abs=2**-6)
    with pytest.raises(ValidationError):
        softmax_lut([])
    with pytest.raises(ValidationError):
        softmax_lut([1.0, 2.0], SoftmaxLut.build(3))


def test_quantize_rows():
    codes, scale = quantize_rows(np.array([[0.5, 0.25, 0.0], [0.0, 0.0, 0.0]]), 4)
    np.testing.assert_array_equal(codes, [[15, 8, 0], [0, 0, 0]])
    np.testing.assert_allclose(scale, [0.5 / 15, 1.0])


@pytest.mark.parametrize("n,d", [(4, 4), (8, 4), (3, 8), (1, 2)])
def test_exact_backend_matches_dense(n, d):
    rng = np.random.default_rng(n * 10 + d)
    w = _weights(rng, d)
    x = rng.integers(0, 16, (n, d))
    res = attention_head(x, w)
    ref = attention_dense(x.tolist(), w.w_q.tolist(), w.w_k.tolist(), w.w_v.tolist(), 4,
                          w.collapsed.score_gain, w.shift)
    np.testing.assert_allclose(res.output, ref, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(res.probs.sum(axis=1), 1.0)
    if n == 1:
        np.testing.assert_array_equal(res.probs, [[1.0]])


def test_shift_defaults():
    rng = np.random.default_rng(0)
    assert _weights(rng, 4).shift == 1
    assert _weights(rng, 8).shift == 1
    assert _weights(rng, 16).shift == 2
    assert _weights(rng, 4, d_k=64).shift == 3
    with pytest.raises(ValidationError):
        _weights(rng, 4, d_k=6)
    with pytest.raises(ValidationError):
        _weights(rng, 4, shift=-1)


def test_ablation_unquantised_matches_exact():
    rng = np.random.default_rng(11)
    for d in (2, 4, 8):
        w = _weights(rng, d)
        x = rng.integers(0, 16, (d, d))
        ex = attention_head(x, w, ExactBackend())
        ab = attention_head(x, w, OracleBackend(quantize=False))
        rep = fidelity_report(ex, ab)
        for stage in rep["stages"].values():
            assert stage["max_abs"] < 1e-12


def test_oracle_pipeline_stages():
    rng = np.random.default_rng(12)
    w = _weights(rng, 4)
    x = rng.integers(0, 16, (4, 4))
    res = attention_head(x, w, OracleBackend())
    c = dmmm_oracle(x, w.w_c, x.T, 4)
    np.testing.assert_array_equal(res.scores, np.floor(c / 2**w.shift))
    codes, scale = quantize_rows(res.probs, 4)
    expected = dmmm_oracle(codes, x, w.w_v, 4) * scale[:, None] * 16
    np.testing.assert_allclose(res.output, expected)


@pytest.mark.parametrize("d", [4, 8])
def test_simulated_equals_oracle(d):
    rng = np.random.default_rng(20 + d)
    sim = SimulatedBackend()
    for _ in range(5):
        w = _weights(rng, d)
        x = rng.integers(0, 16, (d, d))
        a = attention_head(x, w, OracleBackend())
        b = attention_head(x, w, sim)
        np.testing.assert_array_equal(a.output, b.output)
        np.testing.assert_array_equal(a.scores, b.scores)


def test_simulated_noise_is_deterministic():
    rng = np.random.default_rng(3)
    w = _weights(rng, 4)
    x = rng.integers(0, 16, (4, 4))
    flags = SimFlags(noise=True, seed=9, nonlinearity="calibrated")
    a = attention_head(x, w, SimulatedBackend(flags=flags))
    b = attention_head(x, w, SimulatedBackend(flags=flags))
    np.testing.assert_array_equal(a.output, b.output)


def test_simulated_bits_mismatch():
    rng = np.random.default_rng(4)
    w = _weights(rng, 4, bits=3)
    with pytest.raises(ValidationError):
        attention_head(rng.integers(0, 8, (4, 4)), w, SimulatedBackend())


def test_quantised_error_within_one_output_lsb():
    # One output code is sigma_i * n * d in real units; final rounding
    # spends half of it, score flooring and S requantisation the rest.
    rng = np.random.default_rng(5)
    for _ in range(50):
        w = _weights(rng, 8)
        x = rng.integers(0, 16, (8, 8))
        q = attention_head(x, w, OracleBackend())
        lsb = np.array(q.meta["s_scale"])[:, None] * 64
        assert np.all(np.abs(q.output - attention_head(x, w).output) <= lsb)


def test_multihead_identity_projection():
    rng = np.random.default_rng(6)
    d, h = 4, 2
    heads = [_weights(rng, d) for _ in range(h)]
    x = rng.integers(0, 16, (4, d))
    # W_O stacking two identities sums the heads.
    w_o = np.vstack([15 * np.eye(d, dtype=int)] * h)
    res = multihead(x, heads, w_o)
    np.testing.assert_allclose(res.output, sum(attention_head(x, w).output for w in heads))


def test_multihead_dense_and_quantised():
    rng = np.random.default_rng(7)
    d, h = 4, 2
    heads = [_weights(rng, d) for _ in range(h)]
    w_o = rng.integers(0, 16, (h * d, d))
    x = rng.integers(0, 16, (4, d))
    ex = multihead(x, heads, w_o)
    concat = np.hstack([attention_head(x, w).output for w in heads])
    np.testing.assert_allclose(ex.output, concat @ (w_o / 15))
    orc = multihead(x, heads, w_o, OracleBackend())
    sim = multihead(x, heads, w_o, SimulatedBackend())
    np.testing.assert_array_equal(orc.output, sim.output)
    rep = fidelity_report(ex, orc)
    assert set(rep["stages"]) == {"concat", "heads"}
    assert rep["rms"] < 0.1 * float(np.abs(ex.output).max())
    with pytest.raises(ValidationError):
        multihead(x, heads, w_o[:4])
    with pytest.raises(ValidationError):
        multihead(x, [], w_o)


def test_fidelity_report_arrays():
    rep = fidelity_report(np.zeros(4), np.array([0.0, 0.0, 0.0, 2.0]))
    assert rep == {"max_abs": 2.0, "rms": 1.0}
    with pytest.raises(ValidationError):
        fidelity_report(np.zeros(2), np.zeros(3))


def test_dmmm_exact_float():
    v = dmmm_exact_float([[15]], [[15]], [[8]], 4)
    assert v[0, 0] == 8.0


def test_exact_softmax_rows():
    np.testing.assert_allclose(softmax_exact([[0.0, 0.0]]), [[0.5, 0.5]])


def test_input_validation():
    rng = np.random.default_rng(8)
    w = _weights(rng, 4)
    with pytest.raises(ValidationError):
        attention_head(np.zeros((4, 3), int), w)
    with pytest.raises(ValidationError):
        attention_head(np.full((4, 4), 16), w)


def test_lut_sizing_threads_through():
    from combaccel.attention import LutSizing

    coarse = LutSizing(range=8.0, frac_bits=5, log_entries=256)
    lut = coarse.build(8)
    assert lut.exp_table.size == 8 * 32 + 1 and lut.log_table.size == 256
    assert lut.error_bound() > LutSizing().build(8).error_bound()
    rng = np.random.default_rng(9)
    w = _weights(rng, 8)
    x = rng.integers(0, 16, (8, 8))
    res = attention_head(x, w, OracleBackend(), coarse)
    ref = softmax_exact(res.scores)
    assert np.max(np.abs(res.probs - ref)) <= lut.error_bound() + 1e-12
