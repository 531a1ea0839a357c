"""
CVaR and the robust uncertainty sets it induces on the battery parameters.

With uniform probabilities over the ``N = n+ * n-`` parameter pairs and
``alpha = j / N``, the CVaR uncertainty set is the convex hull of all j-point
averages of the pairs. Its support function in direction ``d`` is the mean of
the ``j`` largest values of ``d . a`` over the pairs, which makes robust
linear constraints cheap to check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from flexcast.battery import SampleSpaces


@dataclass(frozen=True)
class UncertaintyLevel:
    """Risk level ``alpha = j / n_total``."""

    j: int
    n_total: int

    def __post_init__(self):
        if self.n_total < 1 or not 1 <= self.j <= self.n_total:
            raise ValueError(f"need 1 <= j <= N, got j={self.j}, N={self.n_total}")

    @property
    def alpha(self) -> float:
        return self.j / self.n_total

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.j, self.n_total)

    @classmethod
    def from_alpha(cls, alpha: float, n_total: int, tol: float = 1e-9) -> "UncertaintyLevel":
        """Level for ``alpha``; it must be a multiple of ``1 / n_total``."""
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
        j = alpha * n_total
        if abs(j - round(j)) > tol * n_total:
            lo = max(1, math.floor(j))
            hi = min(n_total, math.ceil(j))
            raise ValueError(
                f"alpha={alpha} is not of the form j/{n_total}; nearest valid values: "
                f"{lo}/{n_total} = {lo / n_total:.6g}, {hi}/{n_total} = {hi / n_total:.6g}"
            )
        return cls(int(round(j)), n_total)

    @classmethod
    def nearest(cls, alpha: float, n_total: int) -> "UncertaintyLevel":
        return cls(min(n_total, max(1, int(round(alpha * n_total)))), n_total)


def cvar(samples, alpha: float, probabilities=None) -> float:
    """Conditional value at risk of outcomes ``X`` (losses are negative outcomes).

    ``max_q sum_i -q_i X_i`` over distributions ``q`` with
    ``q_i <= P_i / alpha``. The maximizer puts as much mass as allowed on
    the smallest outcomes first.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 1 or len(X) == 0:
        raise ValueError("samples must be a non-empty vector")
    if probabilities is None:
        P = np.full(len(X), 1.0 / len(X))
    else:
        P = np.asarray(probabilities, dtype=float)
        if P.shape != X.shape or np.any(P < 0) or abs(P.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be a distribution over the samples")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    order = np.argsort(X, kind="stable")
    caps = P[order] / alpha
    q = np.zeros(len(X))
    remaining = 1.0
    for pos, c in enumerate(caps):
        if remaining <= 0.0:
            break
        q[pos] = min(c, remaining)
        remaining -= q[pos]
    return -math.fsum(q * X[order])


def top_j_mean(values, j: int) -> float:
    """Mean of the ``j`` largest entries (exactly rounded sum)."""
    values = np.sort(np.asarray(values, dtype=float))
    return math.fsum(values[len(values) - j :]) / j


def bottom_j_mean(values, j: int) -> float:
    values = np.sort(np.asarray(values, dtype=float))
    return math.fsum(values[:j]) / j


@dataclass(frozen=True)
class WorstCaseParams:
    """Extreme j-point averages of each parameter over the pair set."""

    a_plus_tilde: float
    a_minus_tilde: float
    a_plus_floor: float
    a_minus_floor: float

    def to_dict(self) -> dict:
        return {
            "a_plus_tilde": self.a_plus_tilde,
            "a_minus_tilde": self.a_minus_tilde,
            "a_plus_floor": self.a_plus_floor,
            "a_minus_floor": self.a_minus_floor,
        }


def _check_level(spaces: SampleSpaces, level: UncertaintyLevel):
    if level.n_total != spaces.n_total:
        raise ValueError(f"level is for N={level.n_total}, sample spaces have N={spaces.n_total}")


def worst_case_params(spaces: SampleSpaces, level: UncertaintyLevel) -> WorstCaseParams:
    """Largest and smallest j-point averages of a+ and a-.

    In the pair set every a+ sample occurs ``n-`` times and every a- sample
    ``n+`` times; the extreme j-point averages take the j largest (smallest)
    entries of these expanded lists.
    """
    _check_level(spaces, level)
    plus = np.repeat(spaces.p_plus, spaces.n_minus)
    minus = np.repeat(spaces.p_minus, spaces.n_plus)
    j = level.j
    return WorstCaseParams(
        a_plus_tilde=top_j_mean(plus, j),
        a_minus_tilde=top_j_mean(minus, j),
        a_plus_floor=bottom_j_mean(plus, j),
        a_minus_floor=bottom_j_mean(minus, j),
    )


def support_function(spaces: SampleSpaces, level: UncertaintyLevel, direction) -> float:
    """``max d . a`` over the convex hull of j-point averages of the parameter pairs."""
    _check_level(spaces, level)
    d_plus, d_minus = (float(x) for x in direction)
    pairs = spaces.pairs()
    return top_j_mean(d_plus * pairs[:, 0] + d_minus * pairs[:, 1], level.j)


@dataclass(frozen=True)
class RobustConstraint:
    """``lower <= coeff_plus * a+ + coeff_minus * a- <= upper`` for all parameters in the set.

    Built from one step of the decomposed battery state: with
    ``s_l = c_l + R_l . a``, keeping ``0 <= s_l <= 1`` means
    ``lower = -c_l`` and ``upper = 1 - c_l``.
    """

    coeff_plus: float
    coeff_minus: float
    lower: float
    upper: float

    @classmethod
    def from_decomposition(cls, offset: float, coeffs) -> "RobustConstraint":
        return cls(float(coeffs[0]), float(coeffs[1]), -offset, 1.0 - offset)


def robust_feasible(constraint: RobustConstraint, spaces: SampleSpaces, level: UncertaintyLevel) -> bool:
    d = (constraint.coeff_plus, constraint.coeff_minus)
    highest = support_function(spaces, level, d)
    lowest = -support_function(spaces, level, (-d[0], -d[1]))
    return lowest >= constraint.lower and highest <= constraint.upper
