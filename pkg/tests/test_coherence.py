import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from superbunch.coherence import (CoherenceModel, g1, g2, g3, gN, gN_zero, permanent,
                                  permanent_oracle, sinc, slice_model_diag, slice_model_t1_eq_t2,
                                  slice_model_t1_eq_t3, stage_bracket, surface)

W = 2 * math.pi * 5e3
TC = 2 * math.pi / W

times = st.floats(-5 * TC, 5 * TC, allow_nan=False)
triples = st.tuples(times, times, times)


def taylor_sinc(x, terms=30):
    return sum((-1) ** k * x ** (2 * k) / math.factorial(2 * k + 1) for k in range(terms))


def ryser(m):
    n = m.shape[0]
    total = 0.0
    for subset in range(1, 1 << n):
        cols = [j for j in range(n) if subset >> j & 1]
        total += (-1) ** len(cols) * np.prod(m[:, cols].sum(axis=1))
    return (-1) ** n * total


def test_g1_trivial_values():
    assert g1(0.0, W) == 1.0
    assert abs(g1(2 * math.pi / W, W)) < 1e-15


@pytest.mark.parametrize("x", [1e-9, 1e-6, 5e-5, 9.9e-5, 1.01e-4, 1e-3, 0.01, 0.1, 0.5, 1.0])
def test_g1_matches_taylor_series(x):
    tau = 2 * x / W
    assert abs(g1(tau, W) - taylor_sinc(x)) < 1e-12
    assert abs(g1(-tau, W) - taylor_sinc(x)) < 1e-12


def test_g1_rejects_non_positive_bandwidth():
    with pytest.raises(ValueError):
        g1(1.0, 0.0)


def test_sinc_vectorized():
    x = np.array([0.0, 1e-5, 1.0, np.pi])
    np.testing.assert_allclose(sinc(x), [1.0, taylor_sinc(1e-5), math.sin(1.0), 0.0], atol=1e-15)


def test_stage_bracket_equal_times():
    assert stage_bracket((0.3, 0.3, 0.3), W) == pytest.approx(6.0, abs=1e-15)


def test_stage_bracket_far_apart():
    sep = 150 * TC
    assert abs(stage_bracket((0.0, sep, 2.37 * sep), W) - 1.0) < 1e-3


def test_permanent_oracle_trivial():
    assert permanent_oracle((1.0, 1.0, 1.0), W) == pytest.approx(6.0)
    assert permanent_oracle((0.0, 1e3 * TC, 2.1e3 * TC), W) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_permanent_against_ryser(rng, n):
    m = rng.normal(size=(n, n))
    assert permanent(m) == pytest.approx(ryser(m), rel=1e-10, abs=1e-10)


def test_permanent_identity_and_ones():
    assert permanent(np.eye(4)) == 1.0
    assert permanent(np.ones((4, 4))) == 24.0


def test_bracket_equals_permanent_on_random_triples(rng):
    t = rng.uniform(-5 * TC, 5 * TC, size=(1000, 3))
    closed = stage_bracket(t.T, W)
    oracle = np.array([permanent_oracle(row, W) for row in t])
    assert np.max(np.abs(closed - oracle)) < 1e-12


@given(triples)
def test_bracket_equals_permanent(t):
    assert abs(stage_bracket(t, W) - permanent_oracle(t, W)) < 1e-12


@given(triples, st.integers(0, 4))
def test_g3_permutation_symmetric(t, n):
    model = CoherenceModel(3, [W * (1 + 0.3 * k) for k in range(n)])
    ref = g3(t, model)
    for p in itertools.permutations(t):
        assert abs(g3(p, model) - ref) < 1e-12 * max(1.0, ref)


def test_bracket_lower_bound(rng):
    # include near-node regions where individual sinc factors are ~0 or negative
    t = rng.uniform(-5 * TC, 5 * TC, size=(10_000, 3))
    nodes = rng.integers(1, 5, size=(2000, 1)) * TC
    t2 = np.column_stack([np.zeros(2000), nodes[:, 0], -nodes[:, 0] * rng.choice([1, 2], 2000)])
    b = stage_bracket(np.vstack([t, t2]).T, W)
    assert b.min() >= 1.0 - 1e-12


def test_g3_values():
    assert g3((0.0, 0.0, 0.0), CoherenceModel(3, [W, W])) == pytest.approx(36.0)
    assert g3((0.0, 0.0, 0.0), CoherenceModel(3, [W])) == pytest.approx(6.0)
    assert g3((0.1, -2.0, 4.0), CoherenceModel(3, [])) == 1.0


def test_g3_requires_order_3():
    with pytest.raises(ValueError):
        g3((0, 0, 0), CoherenceModel(2, [W]))


@pytest.mark.parametrize("order, n, expected", [
    (3, 3, 216), (3, 4, 1296), (2, 2, 4), (3, 2, 36), (3, 1, 6), (5, 0, 1), (1, 7, 1)])
def test_gN_zero(order, n, expected):
    assert gN_zero(order, n) == expected
    assert isinstance(gN_zero(order, n), int)


def test_gN_zero_rejects_bad_input():
    with pytest.raises(ValueError):
        gN_zero(0, 1)
    with pytest.raises(ValueError):
        gN_zero(3, -1)


@pytest.mark.parametrize("n", range(5))
def test_zero_delay_law(n):
    model = CoherenceModel(3, [W] * n)
    assert g3((1.0, 1.0, 1.0), model) == gN_zero(3, n)


@pytest.mark.parametrize("order", range(1, 7))
def test_general_order_zero_delay_via_permanent(order):
    model = CoherenceModel(order, [W, 1.7 * W])
    assert gN([0.2] * order, model) == pytest.approx(gN_zero(order, 2))


def test_general_order_limit():
    with pytest.raises(ValueError):
        gN([0.0] * 7, CoherenceModel(7, [W]))


@given(times)
def test_g2_closed_form_matches_permanent(tau):
    model = CoherenceModel(2, [W, 2 * W])
    assert abs(gN((tau, 0.0), model) - g2(tau, [W, 2 * W])) < 1e-12


@given(triples)
def test_gN_order3_matches_g3(t):
    model = CoherenceModel(3, [W, 0.6 * W])
    assert abs(gN(t, model) - g3(t, model)) < 1e-11


def test_slice_t1_eq_t3_values():
    assert slice_model_t1_eq_t3(0.0, [W, W]) == pytest.approx(9.0)
    assert slice_model_t1_eq_t3(0.0, [W]) == pytest.approx(3.0)
    assert abs(slice_model_t1_eq_t3(1e4 * TC, [W, W]) - 1.0) < 1e-7


def test_slice_diag_values():
    assert slice_model_diag(0.0, [W, W]) == pytest.approx(36.0)
    assert abs(slice_model_diag(1e4 * TC, [W, W]) - 1.0) < 1e-7


@given(times, st.floats(-1.0, 1.0))
def test_slices_consistent_with_g3(tau, t):
    bws = [W, 1.3 * W]
    model = CoherenceModel(3, bws)
    assert abs(slice_model_diag(tau, bws) - g3((t + tau, t, t - tau), model)) < 1e-12 * 36
    # background of t1 = t3 is two g2 ridges, 2 per stage
    assert abs(slice_model_t1_eq_t3(tau, bws) - g3((t + tau, t, t + tau), model) / 4) < 1e-12 * 9
    assert abs(slice_model_t1_eq_t2(tau, bws) - g3((t, t, t - tau), model) / 4) < 1e-12 * 9


def test_surface_grid():
    tau = np.linspace(-3 * TC, 3 * TC, 21)
    s = surface(tau, tau, [W, W])
    assert s.shape == (21, 21)
    assert s[10, 10] == pytest.approx(36.0)
    i, j = 4, 15
    assert s[i, j] == pytest.approx(g3((tau[i] + tau[j], tau[j], 0.0), CoherenceModel(3, [W, W])))
