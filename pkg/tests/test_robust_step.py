import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gamehedge.errors import NoMartingaleMeasure
from gamehedge.oracles import lp_robust_sup
from gamehedge.robust_step import (
    FactorSet,
    OneStepMeasure,
    one_step_superhedge,
    robust_sup,
    robust_sup_arrays,
    sample_measure,
    superhedge_arrays,
    vertex_measures,
)


def _pair_brute_force(factors, values):
    best = -math.inf
    for (u, vu), (d, vd) in itertools.product(zip(factors, values), repeat=2):
        if u > 1 > d:
            p = (1 - d) / (u - d)
            best = max(best, p * vu + (1 - p) * vd)
        if u == d == 1:
            best = max(best, vu)
    return best


@st.composite
def factor_maps(draw, max_size=8):
    logs = draw(st.lists(st.floats(-0.5, 0.5, allow_nan=False), min_size=1, max_size=max_size))
    # keep factors either exactly 1 or clearly away from it
    logs = sorted({0.0 if abs(x) < 1e-3 else round(x, 6) for x in logs})
    has_up = any(x > 0 for x in logs)
    has_down = any(x < 0 for x in logs)
    if not (has_up and has_down) and 0.0 not in logs:
        logs = sorted(logs + [0.0])
    factors = np.exp(np.asarray(logs))
    values = np.asarray(draw(st.lists(st.floats(-3, 3, allow_nan=False), min_size=len(factors), max_size=len(factors))))
    return factors, values


def test_signed_pair_example():
    value, q = robust_sup({2.0: 1.0, 0.5: 0.0})
    assert value == pytest.approx(1 / 3, abs=1e-15)
    assert dict(q.support) == pytest.approx({2.0: 1 / 3, 0.5: 2 / 3})


def test_constant_values():
    value, q = robust_sup({0.8: 0.4, 1.0: 0.4, 1.3: 0.4})
    assert value == pytest.approx(0.4, abs=1e-15)
    assert q.is_valid()


def test_convex_map_picks_extreme_pair():
    a, b = 0.1, 0.2
    factors = np.exp([-b, -a, a, b])
    values = np.maximum(factors - 1, 0.0)
    value, probs = robust_sup_arrays(factors, values)
    pb = (1 - math.exp(-b)) / (math.exp(b) - math.exp(-b))
    assert value == pytest.approx(pb * (math.exp(b) - 1), abs=1e-14)
    assert np.flatnonzero(probs).tolist() == [0, 3]
    assert value == pytest.approx(_pair_brute_force(factors, values), abs=1e-14)
    assert value == pytest.approx(lp_robust_sup(factors, values), abs=1e-9)


def test_no_martingale_measure():
    with pytest.raises(NoMartingaleMeasure):
        robust_sup({1.1: 0.0, 1.3: 1.0})


def test_superhedge_examples():
    capital, gamma = one_step_superhedge(1.0, {2.0: 1.0, 0.5: 0.0})
    assert capital == pytest.approx(1 / 3, abs=1e-15)
    assert gamma == pytest.approx(2 / 3, abs=1e-15)
    capital, gamma = one_step_superhedge(1.7, {0.9: 0.25, 1.0: 0.25, 1.2: 0.25})
    assert (capital, gamma) == (pytest.approx(0.25), pytest.approx(0.0, abs=1e-15))
    f = np.array([0.8, 0.95, 1.1, 1.25])
    capital, gamma = one_step_superhedge(2.0, dict(zip(f, 2.0 * f - 2.0)))
    assert capital == pytest.approx(0.0, abs=1e-12)
    assert gamma == pytest.approx(1.0, abs=1e-12)


def test_sample_measure_unique_on_signed_pair():
    fs = FactorSet((0.5, 2.0))
    for seed in range(5):
        assert sample_measure(fs, seed).probs == pytest.approx((2 / 3, 1 / 3), abs=1e-15)


def test_sample_measure_deterministic_and_valid():
    fs = FactorSet(tuple(np.exp([-0.2, -0.1, 0.0, 0.1, 0.2])))
    assert sample_measure(fs, 11) == sample_measure(fs, 11)
    rng = np.random.default_rng(4)
    for _ in range(200):
        q = sample_measure(fs, rng)
        q.check()


def test_vertex_measures_are_valid():
    fs = FactorSet(tuple(np.exp([-0.3, -0.1, 0.0, 0.2])))
    verts = vertex_measures(fs)
    assert len(verts) == 1 + 2 * 1  # point mass plus 2 downs x 1 up
    for q in verts:
        q.check()


def test_measure_check_rejects_bad_laws():
    assert not OneStepMeasure((0.5, 2.0), (0.5, 0.5)).is_valid()
    assert not OneStepMeasure((0.5, 2.0), (1.2, -0.2)).is_valid()


@settings(max_examples=500, deadline=None)
@given(data=factor_maps(), spot=st.floats(0.1, 10.0))
def test_superhedge_duality_and_coverage(data, spot):
    f, v = data
    capital, gamma, sup = superhedge_arrays(spot, f, v)
    assert abs(capital - sup) <= 1e-9 * max(1.0, abs(sup))
    assert np.all(capital + gamma * spot * (f - 1) >= v - 1e-9)


@settings(max_examples=500, deadline=None)
@given(data=factor_maps())
def test_sup_dominates_sampled_measures(data):
    f, v = data
    value, probs = robust_sup_arrays(f, v)
    OneStepMeasure(tuple(f), tuple(probs)).check()
    assert probs @ v == pytest.approx(value, abs=1e-12)
    fs = FactorSet(tuple(f))
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_measure(fs, rng).expect(v) <= value + 1e-12


@settings(max_examples=300, deadline=None)
@given(data=factor_maps(), bump=st.lists(st.floats(0, 1), min_size=8, max_size=8))
def test_sup_is_monotone(data, bump):
    f, v = data
    w = v + np.asarray(bump[: len(v)])
    assert robust_sup_arrays(f, w)[0] >= robust_sup_arrays(f, v)[0] - 1e-12


@settings(max_examples=300, deadline=None)
@given(data=factor_maps())
def test_sup_matches_oracles(data):
    f, v = data
    value, _ = robust_sup_arrays(f, v)
    assert value == pytest.approx(_pair_brute_force(f, v), abs=1e-12)
    assert value == pytest.approx(lp_robust_sup(f, v), abs=1e-7)
