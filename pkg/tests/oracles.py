"""Brute-force reference implementations used by the tests."""

import itertools
import math

import numpy as np


def _compositions(total, caps):
    """All count vectors ``c`` with ``0 <= c_i <= caps[i]`` and ``sum(c) == total``."""
    if not caps:
        if total == 0:
            yield ()
        return
    for c in range(min(caps[0], total) + 1):
        for rest in _compositions(total - c, caps[1:]):
            yield (c,) + rest


def j_point_coordinate_extremes(values, multiplicity, j, max_subsets=20000):
    """Max and min over all j-subsets of the pair set of the mean of one coordinate.

    ``values`` are the distinct-index samples of that coordinate, each occurring
    ``multiplicity`` times in the pair set. Subsets are enumerated directly when
    there are few enough; otherwise every achievable count vector is enumerated,
    which covers the same set of averages.
    """
    expanded = [v for v in values for _ in range(multiplicity)]
    n = len(expanded)
    if math.comb(n, j) <= max_subsets:
        means = [math.fsum(expanded[i] for i in idx) / j for idx in itertools.combinations(range(n), j)]
    else:
        means = [
            math.fsum(v for v, c in zip(values, counts) for _ in range(c)) / j
            for counts in _compositions(j, [multiplicity] * len(values))
        ]
    return max(means), min(means)


def j_point_vertices(pairs, j):
    """All j-point averages of the rows of ``pairs``, as index tuples."""
    return itertools.combinations(range(len(pairs)), j)


def vertex_feasible(coeff_plus, coeff_minus, lower, upper, pairs, j):
    """Check ``lower <= c . v <= upper`` at every j-point average ``v``."""
    vals = [coeff_plus * a + coeff_minus * b for a, b in np.asarray(pairs)]
    for idx in j_point_vertices(pairs, j):
        x = math.fsum(vals[i] for i in idx) / j
        if x < lower or x > upper:
            return False
    return True


def vertex_support(direction, pairs, j):
    vals = [direction[0] * a + direction[1] * b for a, b in np.asarray(pairs)]
    return max(math.fsum(vals[i] for i in idx) / j for idx in j_point_vertices(pairs, j))


def pair_subset_extremes(p_plus, p_minus, j, max_subsets=20000):
    """``(max a+, min a+, max a-, min a-)`` over all j-point averages of ``P+ x P-``.

    Enumerates j-subsets of the pairs when there are at most ``max_subsets``;
    otherwise falls back to count vectors per coordinate (every a+ sample occurs
    once per a- sample and vice versa in the product set).
    """
    plus = [float(x) for x in p_plus]
    minus = [float(x) for x in p_minus]
    pairs = list(itertools.product(plus, minus))
    n = len(pairs)
    if math.comb(n, j) <= max_subsets:
        best = [-math.inf, math.inf, -math.inf, math.inf]
        for idx in itertools.combinations(range(n), j):
            ap = math.fsum(pairs[i][0] for i in idx) / j
            am = math.fsum(pairs[i][1] for i in idx) / j
            best = [max(best[0], ap), min(best[1], ap), max(best[2], am), min(best[3], am)]
        return tuple(best)
    hi_p, lo_p = j_point_coordinate_extremes(plus, len(minus), j, max_subsets=0)
    hi_m, lo_m = j_point_coordinate_extremes(minus, len(plus), j, max_subsets=0)
    return hi_p, lo_p, hi_m, lo_m


def bisect_true_duration(config, trace, p, t0, cap, tol):
    """Largest k <= cap for which the open-loop plant stays in band, by bisection."""
    from flexcast import sim

    def held(k):
        if k == 0:
            return True
        u = np.clip(trace.power_fraction[t0 : t0 + k] + p, 0.0, 1.0)
        temps = sim.simulate_open_loop(config, trace.weather.slice(t0, t0 + k), u, trace.indoor_temp[t0])[1:]
        return bool(np.all((temps >= config.temp_min - tol) & (temps <= config.temp_max + tol)))

    if held(cap):
        return cap
    lo, hi = 0, cap
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if held(mid):
            lo = mid
        else:
            hi = mid
    return lo
