import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexcast import risk
from flexcast.battery import SampleSpaces
from flexcast.risk import RobustConstraint, UncertaintyLevel

import oracles

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vectors = st.lists(finite, min_size=1, max_size=12)


# -- cvar ------------------------------------------------------------------------


@pytest.mark.parametrize("alpha, expected", [(1.0, -2.5), (0.25, -1.0), (0.5, -1.5)])
def test_cvar_examples(alpha, expected):
    assert risk.cvar([1, 2, 3, 4], alpha) == pytest.approx(expected, abs=1e-15)


def test_cvar_rejects_bad_input():
    with pytest.raises(ValueError):
        risk.cvar([1, 2], 0.0)
    with pytest.raises(ValueError):
        risk.cvar([1, 2], 0.5, probabilities=[0.7, 0.7])


def test_cvar_nonuniform():
    # Mass 0.2 on the worst outcome, cap 0.2 / 0.5 = 0.4; the rest goes to the next.
    assert risk.cvar([-1.0, 0.0, 2.0], 0.5, [0.2, 0.5, 0.3]) == pytest.approx(0.4)


@settings(max_examples=200, deadline=None)
@given(vectors, st.floats(0.1, 10), st.integers(1, 12))
def test_cvar_positive_homogeneity(x, lam, j):
    j = min(j, len(x))
    a = j / len(x)
    assert abs(risk.cvar(np.multiply(lam, x), a) - lam * risk.cvar(x, a)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(vectors, finite, st.integers(1, 12))
def test_cvar_translation(x, c, j):
    j = min(j, len(x))
    a = j / len(x)
    assert abs(risk.cvar(np.add(x, c), a) - (risk.cvar(x, a) - c)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(vectors, st.data(), st.integers(1, 12))
def test_cvar_monotone(x, data, j):
    bump = data.draw(st.lists(st.floats(0, 5), min_size=len(x), max_size=len(x)))
    j = min(j, len(x))
    a = j / len(x)
    assert risk.cvar(x, a) >= risk.cvar(np.add(x, bump), a) - 1e-12


@settings(max_examples=100, deadline=None)
@given(vectors)
def test_cvar_endpoints(x):
    assert abs(risk.cvar(x, 1.0) + np.mean(x)) <= 1e-12
    assert risk.cvar(x, 1 / len(x)) == -min(x)


# -- uncertainty levels ------------------------------------------------------------


def test_level_from_alpha_suggests_neighbours():
    with pytest.raises(ValueError, match="220/441"):
        UncertaintyLevel.from_alpha(0.5, 441)
    assert UncertaintyLevel.from_alpha(0.5, 440).j == 220
    with pytest.raises(ValueError):
        UncertaintyLevel(0, 4)


# -- worst-case parameters and support -------------------------------------------


def test_worst_case_example():
    spaces = SampleSpaces([0.1, 0.2, 0.3], [0.1, 0.4], [])
    w = risk.worst_case_params(spaces, UncertaintyLevel(3, 6))
    assert w.a_plus_tilde == pytest.approx(0.8 / 3, abs=1e-15)
    best, _ = oracles.j_point_coordinate_extremes([0.1, 0.2, 0.3], 2, 3)
    assert w.a_plus_tilde == best


def test_worst_case_extremes_of_j():
    spaces = SampleSpaces([0.1, 0.2, 0.3], [0.1, 0.4], [])
    w1 = risk.worst_case_params(spaces, UncertaintyLevel(1, 6))
    assert (w1.a_plus_tilde, w1.a_minus_tilde) == (0.3, 0.4)
    wn = risk.worst_case_params(spaces, UncertaintyLevel(6, 6))
    assert wn.a_plus_tilde == pytest.approx(0.2) and wn.a_plus_floor == pytest.approx(0.2)
    assert wn.a_minus_tilde == pytest.approx(0.25) and wn.a_minus_floor == pytest.approx(0.25)


def test_worst_case_level_mismatch():
    with pytest.raises(ValueError):
        risk.worst_case_params(SampleSpaces([0.1], [0.2], []), UncertaintyLevel(1, 2))


def test_worst_case_brute_force_small():
    rng = np.random.default_rng(0)
    for n1 in range(1, 4):
        for n2 in range(1, 4):
            spaces = SampleSpaces(rng.uniform(0.05, 0.2, n1), rng.uniform(0.05, 0.2, n2), [])
            for j in range(1, n1 * n2 + 1):
                w = risk.worst_case_params(spaces, UncertaintyLevel(j, n1 * n2))
                assert (w.a_plus_tilde, w.a_plus_floor) == oracles.j_point_coordinate_extremes(list(spaces.p_plus), n2, j)
                assert (w.a_minus_tilde, w.a_minus_floor) == oracles.j_point_coordinate_extremes(list(spaces.p_minus), n1, j)


def test_count_vector_oracle_matches_subsets():
    vals = [0.11, 0.3, 0.07]
    for j in range(1, 7):
        assert oracles.j_point_coordinate_extremes(vals, 2, j) == oracles.j_point_coordinate_extremes(vals, 2, j, max_subsets=0)


def _random_spaces(rng, max_total=12):
    while True:
        n1, n2 = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        if n1 * n2 <= max_total:
            return SampleSpaces(rng.uniform(0.02, 0.3, n1), rng.uniform(0.02, 0.3, n2), [])


def test_support_examples():
    spaces = SampleSpaces([0.1, 0.2, 0.3], [0.1, 0.4], [])
    level = UncertaintyLevel(3, 6)
    assert risk.support_function(spaces, level, (1, 0)) == risk.worst_case_params(spaces, level).a_plus_tilde
    assert risk.support_function(spaces, level, (0, 1)) == risk.worst_case_params(spaces, level).a_minus_tilde
    assert risk.support_function(spaces, level, (0, 0)) == 0.0


def test_support_matches_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(100):
        spaces = _random_spaces(rng)
        j = int(rng.integers(1, min(4, spaces.n_total) + 1))
        d = rng.normal(size=2)
        assert risk.support_function(spaces, UncertaintyLevel(j, spaces.n_total), d) == oracles.vertex_support(
            d, spaces.pairs(), j
        )


def test_support_nesting_and_sublinearity():
    rng = np.random.default_rng(2)
    for _ in range(200):
        spaces = _random_spaces(rng, 25)
        N = spaces.n_total
        j1, j2 = sorted(rng.integers(1, N + 1, size=2))
        d1, d2 = rng.normal(size=2), rng.normal(size=2)
        l1, l2 = UncertaintyLevel(int(j1), N), UncertaintyLevel(int(j2), N)
        assert risk.support_function(spaces, l2, d1) <= risk.support_function(spaces, l1, d1) + 1e-15
        lhs = risk.support_function(spaces, l1, d1 + d2)
        assert lhs <= risk.support_function(spaces, l1, d1) + risk.support_function(spaces, l1, d2) + 1e-12


def test_worst_case_equals_coordinate_support():
    rng = np.random.default_rng(3)
    for _ in range(50):
        spaces = _random_spaces(rng, 25)
        level = UncertaintyLevel(int(rng.integers(1, spaces.n_total + 1)), spaces.n_total)
        w = risk.worst_case_params(spaces, level)
        assert w.a_plus_tilde == risk.support_function(spaces, level, (1, 0))
        assert w.a_minus_tilde == risk.support_function(spaces, level, (0, 1))
        assert w.a_plus_floor == -risk.support_function(spaces, level, (-1, 0))
        assert w.a_minus_floor == -risk.support_function(spaces, level, (0, -1))


# -- robust constraints ----------------------------------------------------------


def test_request_free_constraint():
    spaces = SampleSpaces([0.1, 0.2], [0.3], [])
    level = UncertaintyLevel(1, 2)
    for c, ok in [(0.0, True), (0.5, True), (1.0, True), (-0.01, False), (1.01, False)]:
        assert risk.robust_feasible(RobustConstraint.from_decomposition(c, (0.0, 0.0)), spaces, level) is ok


def test_full_level_is_deterministic_check():
    spaces = SampleSpaces([0.1, 0.3], [0.2, 0.4], [])
    level = UncertaintyLevel(4, 4)
    # At j = N the set is the single mean point (0.2, 0.3).
    assert risk.robust_feasible(RobustConstraint(2.0, -1.0, 0.05, 0.15), spaces, level)
    assert not risk.robust_feasible(RobustConstraint(2.0, -1.0, 0.11, 0.15), spaces, level)
    assert not risk.robust_feasible(RobustConstraint(2.0, -1.0, 0.0, 0.09), spaces, level)


def test_robust_feasible_matches_vertex_enumeration():
    rng = np.random.default_rng(4)
    agree = feasible = 0
    for _ in range(200):
        spaces = _random_spaces(rng)
        j = int(rng.integers(1, min(4, spaces.n_total) + 1))
        cp, cm = rng.normal(size=2) * 3
        vals = cp * spaces.pairs()[:, 0] + cm * spaces.pairs()[:, 1]
        lo, hi = np.sort(rng.uniform(vals.min() - 0.1, vals.max() + 0.1, 2))
        c = RobustConstraint(cp, cm, lo, hi)
        got = risk.robust_feasible(c, spaces, UncertaintyLevel(j, spaces.n_total))
        want = oracles.vertex_feasible(cp, cm, lo, hi, spaces.pairs(), j)
        agree += got == want
        feasible += want
    assert agree == 200
    assert 0 < feasible < 200
