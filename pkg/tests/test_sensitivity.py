import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fgmp import blockquant as bq
from fgmp import numerics
from fgmp import sensitivity as sens

from oracles import seq_weighted_sq_sum


def test_error_delta_single_element():
    # high exact, low off by -0.5 on one element (the 2.5 -> 2.0 tie case)
    v = np.zeros(16)
    v[0] = 2.5
    low = bq.nvfp4_reconstruct(bq.quantize_nvfp4(v, numerics.FP8_CODE_ONE), numerics.FP8_CODE_ONE)
    codes8, s8 = bq.quantize_fp8_tensor(v.reshape(1, -1))
    high = bq.fp8_reconstruct(codes8, s8).ravel()
    np.testing.assert_array_equal(high, v.astype(np.float32))  # 2.5 exact in E4M3
    d = sens.error_delta(v, low, high)
    assert d[0] == -0.5 and (d[1:] == 0).all()


def test_error_delta_identical_is_zero():
    v = np.arange(16.0)
    assert (sens.error_delta(v, v, v) == 0).all()


def test_error_delta_composes_both_errors():
    # low errs by -1.0, high errs by -0.25: delta = -0.75
    v, lo, hi = np.array([7.0]), np.array([6.0]), np.array([6.75])
    assert sens.error_delta(v, lo, hi)[0] == -0.75


def test_impact_fisher_cases():
    delta = np.zeros(16)
    delta[0] = -0.5
    g2 = np.zeros(16)
    g2[0] = 4.0
    assert sens.impact_fisher(g2, delta) == 1.0
    assert sens.impact_fisher(np.zeros(16), delta) == 0.0
    assert sens.impact_fisher(g2, np.zeros(16)) == 0.0
    with pytest.raises(ValueError):
        sens.impact_fisher(-g2, delta)


def test_impact_qe_cases():
    assert sens.impact_qe(np.zeros(16)) == 0.0
    d = np.zeros(16)
    d[0], d[5] = 0.5, -1.5
    assert sens.impact_qe(d) == 0.25 + 2.25


def test_impact_oe_cases():
    d = np.zeros(16)
    d[2] = 2.0
    q2 = np.zeros(16)
    q2[2] = 3.0
    assert sens.impact_oe(d, q2) == 12.0
    assert sens.impact_oe(np.zeros(16), q2) == 0.0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_fisher_with_unit_weights_is_bitwise_qe(seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=16)
    assert sens.impact_fisher(np.ones(16), d) == sens.impact_qe(d)
    assert sens.impact_oe(d, np.ones(16)) == sens.impact_qe(d)


@given(st.integers(0, 2**32 - 1), st.floats(min_value=1e-3, max_value=1e3))
@settings(max_examples=50, deadline=None)
def test_fisher_homogeneity_in_g2(seed, c):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=16)
    g2 = rng.uniform(0, 2, size=16)
    a = sens.impact_fisher(g2 * c, d)
    b = sens.impact_fisher(g2, d) * c
    assert a == pytest.approx(b, rel=1e-12)


def test_score_zero_iff_weighted_elements_agree(rng):
    d = rng.normal(size=16)
    g2 = (d == d.max()).astype(float)  # only one element weighted
    d2 = d.copy()
    d2[d != d.max()] = 0.0
    assert sens.impact_fisher(g2, d) > 0
    d[d.argmax()] = 0.0
    assert sens.impact_fisher(g2, d) == 0.0


def test_weighted_sq_sums_matches_scalar_order(rng):
    w = rng.uniform(0, 3, size=(64, 16))
    d = rng.normal(size=(64, 16))
    got = sens.weighted_sq_sums(w, d)
    want = np.array([seq_weighted_sq_sum(w[i], d[i]) for i in range(64)])
    np.testing.assert_array_equal(got, want)


def test_calibrate_channel_stats_cases():
    one = sens.calibrate_channel_stats([np.array([[1.0, 2.0]])])
    np.testing.assert_array_equal(one.values, [1.0, 4.0])
    two = sens.calibrate_channel_stats([np.array([[1.0, 2.0], [3.0, 2.0]])])
    np.testing.assert_array_equal(two.values, [5.0, 4.0])
    # same result when the rows arrive as separate samples
    split = sens.calibrate_channel_stats([np.array([[1.0, 2.0]]), np.array([[3.0, 2.0]])])
    np.testing.assert_array_equal(split.values, two.values)
    zero = sens.calibrate_channel_stats([np.zeros((4, 3))])
    np.testing.assert_array_equal(zero.values, np.zeros(3))
    with pytest.raises(ValueError):
        sens.calibrate_channel_stats([])
    with pytest.raises(ValueError):
        sens.calibrate_channel_stats([np.zeros((1, 3)), np.zeros((1, 4))])


def test_fisher_map_validation():
    with pytest.raises(ValueError):
        sens.FisherMap("per_element", np.zeros(16))
    with pytest.raises(ValueError):
        sens.FisherMap("per_channel", np.zeros((2, 16)))
    with pytest.raises(ValueError):
        sens.FisherMap("per_channel", -np.ones(16))
    with pytest.raises(ValueError):
        sens.FisherMap("diag", np.zeros(16))
    m = sens.FisherMap("per_channel", np.ones(16))
    assert m.values.dtype == np.float64


def test_impact_score_dataclass():
    s = sens.ImpactScore(0.5, "fisher", ("w", 3))
    assert s.value == 0.5
    with pytest.raises(ValueError):
        sens.ImpactScore(-1.0, "qe")


def test_score_block_all_policies(rng):
    v = rng.normal(size=16)
    low = np.float32(v + rng.normal(0, 0.1, size=16))
    high = np.float32(v)
    g2 = rng.uniform(0, 2, size=16)
    delta = sens.error_delta(v, low, high)
    got_f = sens.score_block(v, low, high, "fisher", g2, origin=("w", 0))
    assert got_f.value == sens.impact_fisher(g2, delta)
    assert got_f.origin == ("w", 0) and got_f.policy == "fisher"
    assert sens.score_block(v, low, high, "qe").value == sens.impact_qe(delta)
    assert sens.score_block(v, low, high, "oe", g2).value == sens.impact_oe(delta, g2)
    with pytest.raises(ValueError):
        sens.score_block(v, low, high, "entropy")
