"""
Flexibility envelopes from the battery model.

An envelope cell ``(p_i, t_j)`` holds the number of steps a constant relative
request ``p_i`` can be held from start step ``t_j`` while the predicted state
stays in ``[0, 1]`` for every parameter in the risk-level uncertainty set.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from flexcast import battery, risk

DEFAULT_CAP_STEPS = 288


@dataclass(frozen=True, eq=False)
class FlexibilityEnvelope:
    """Sustainable durations, rows = power levels, columns = start steps."""

    power_grid: np.ndarray
    time_grid: np.ndarray
    durations: np.ndarray
    alpha: float | None = None
    cap_steps: int = DEFAULT_CAP_STEPS

    def __post_init__(self):
        object.__setattr__(self, "power_grid", np.asarray(self.power_grid, dtype=float))
        object.__setattr__(self, "time_grid", np.asarray(self.time_grid, dtype=int))
        d = np.asarray(self.durations)
        if d.shape != (len(self.power_grid), len(self.time_grid)):
            raise ValueError(f"durations shape {d.shape} does not match the grids")
        if d.size and (np.any(d != np.round(d)) or d.min() < 0 or d.max() > self.cap_steps):
            raise ValueError("durations must be integers in [0, cap_steps]")
        object.__setattr__(self, "durations", d.astype(int))

    def same_grid(self, other: "FlexibilityEnvelope") -> bool:
        return (
            np.array_equal(self.power_grid, other.power_grid)
            and np.array_equal(self.time_grid, other.time_grid)
            and self.cap_steps == other.cap_steps
        )


@dataclass(frozen=True)
class EnvelopeMetrics:
    infeasible_fraction: float
    mean_abs_error: float
    n_cells: int
    per_day: dict = field(default_factory=dict)  # day -> (infeasible_fraction, mean_abs_error)


# -- constant requests -------------------------------------------------------


def _worst_scalar(p: float, worst, floor: bool = False) -> float:
    if p > 0:
        return worst.a_plus_floor if floor else worst.a_plus_tilde
    return worst.a_minus_floor if floor else worst.a_minus_tilde


def constant_path(p: float, s0: float, f_values, a: float) -> np.ndarray:
    """Predicted states ``s_0..s_k`` for a constant nonzero request with gain ``a``."""
    f_values = np.asarray(f_values, dtype=float)
    steps = np.arange(len(f_values))
    return s0 + a * p * steps + (f_values - f_values[0])


def _in_unit_interval(path: np.ndarray) -> np.ndarray:
    return (path >= 0.0) & (path <= 1.0)


def feasible_constant(p: float, k: int, s0: float, f_values, worst, b_f: float = 0.0, strict: bool = False) -> bool:
    """Whether ``p`` can be held for ``k`` steps under the worst-case gain.

    ``b_f`` is accepted for symmetry with the general model; it never acts
    while a nonzero request is active. In ``strict`` mode the path under the
    smallest gain must stay feasible too, which guards the opposite bound
    when the nominal drift works against the request.
    """
    if p == 0:
        raise ValueError("zero request is trivially feasible; handle it at the caller")
    f_values = np.asarray(f_values, dtype=float)
    if len(f_values) < k + 1:
        raise ValueError(f"need {k + 1} nominal values, got {len(f_values)}")
    f = f_values[: k + 1]
    ok = _in_unit_interval(constant_path(p, s0, f, _worst_scalar(p, worst))).all()
    if strict and ok:
        ok = _in_unit_interval(constant_path(p, s0, f, _worst_scalar(p, worst, floor=True))).all()
    return bool(ok)


def max_duration(
    p: float, s0: float, f_values, worst, cap_steps: int, strict: bool = False, early_exit: bool = True
) -> int:
    """Largest ``k <= cap_steps`` for which :func:`feasible_constant` holds.

    Feasibility of a constant request is prefix-monotone, so the first
    violated step ends the search. ``early_exit=False`` tests every ``k``
    independently; it exists to check that shortcut.
    """
    if p == 0:
        return cap_steps
    f_values = np.asarray(f_values, dtype=float)[: cap_steps + 1]
    if len(f_values) < cap_steps + 1:
        raise ValueError("forecast too short for the duration cap")
    if not early_exit:
        feasible = [k for k in range(cap_steps + 1) if feasible_constant(p, k, s0, f_values, worst, strict=strict)]
        return max(feasible) if feasible else 0
    ok = _in_unit_interval(constant_path(p, s0, f_values, _worst_scalar(p, worst)))
    if strict:
        ok &= _in_unit_interval(constant_path(p, s0, f_values, _worst_scalar(p, worst, floor=True)))
    bad = np.flatnonzero(~ok)
    if len(bad) == 0:
        return cap_steps
    return max(int(bad[0]) - 1, 0)


# -- general trajectories ----------------------------------------------------


def feasible_trajectory(requests, s0: float, f_values, spaces, level, b_f: float, mode: str = "strict") -> bool:
    """Membership of an arbitrary request trajectory in the tightened feasible set.

    ``mode="strict"`` checks, for every prefix length ``l = 0..k``, that
    ``0 <= s_l <= 1`` for all parameters in the uncertainty set (via
    :func:`flexcast.risk.robust_feasible`). ``mode="worst_case"`` evaluates the
    state only at the worst-case pair ``(a+~, a-~)``.
    """
    requests = np.asarray(requests, dtype=float)
    f_values = np.asarray(f_values, dtype=float)
    if len(f_values) != len(requests) + 1:
        raise ValueError("need k requests and k+1 nominal values")
    if mode not in ("strict", "worst_case"):
        raise ValueError(f"unknown mode {mode!r}")
    worst = risk.worst_case_params(spaces, level) if mode == "worst_case" else None
    for l in range(len(requests) + 1):
        dec = battery.decompose(s0, requests[:l], f_values[: l + 1], b_f)
        if mode == "strict":
            constraint = risk.RobustConstraint.from_decomposition(dec.offset, dec.coeffs)
            if not risk.robust_feasible(constraint, spaces, level):
                return False
        else:
            s = dec.offset + dec.coeffs[0] * worst.a_plus_tilde + dec.coeffs[1] * worst.a_minus_tilde
            if not 0.0 <= s <= 1.0:
                return False
    return True


# -- envelopes ---------------------------------------------------------------


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FLEXCAST_THREADS", "1")))
    except ValueError:
        return 1


def envelope_from_nominal(
    f_values,
    worst,
    power_grid: Sequence[float],
    time_grid: Sequence[int],
    cap_steps: int = DEFAULT_CAP_STEPS,
    strict: bool = False,
    initial_state: float | None = None,
    alpha: float | None = None,
    n_jobs: int | None = None,
) -> FlexibilityEnvelope:
    """Envelope given nominal states along the forecast horizon.

    Each column starts from the nominal state at its start step, except that
    ``initial_state`` (e.g. a measured state) replaces it in the first column.
    """
    f_values = np.asarray(f_values, dtype=float)
    power = np.asarray(power_grid, dtype=float)
    times = np.asarray(time_grid, dtype=int)
    if len(times) and (times.min() < 0 or times.max() + cap_steps >= len(f_values)):
        raise ValueError(
            f"forecast of {len(f_values)} steps too short for start {times.max()} plus {cap_steps} steps"
        )

    def column(j: int) -> np.ndarray:
        t0 = times[j]
        window = f_values[t0 : t0 + cap_steps + 1]
        if not np.all(np.isfinite(window)):
            raise ValueError(f"nominal prediction undefined near step {t0}; extend the forecast history")
        s0 = window[0] if (initial_state is None or j > 0) else float(initial_state)
        return np.array([max_duration(p, s0, window, worst, cap_steps, strict) for p in power], dtype=int)

    n_jobs = n_jobs or _threads()
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            cols = list(pool.map(column, range(len(times))))
    else:
        cols = [column(j) for j in range(len(times))]
    durations = np.column_stack(cols) if cols else np.zeros((len(power), 0), dtype=int)
    return FlexibilityEnvelope(power, times, durations, alpha=alpha, cap_steps=cap_steps)


def predict_envelope(
    artifact,
    forecast,
    power_grid: Sequence[float],
    time_grid: Sequence[int],
    level,
    cap_steps: int = DEFAULT_CAP_STEPS,
    strict: bool = False,
    initial_state: float | None = None,
) -> FlexibilityEnvelope:
    """Predicted envelope for a forecast weather series.

    Args:
        artifact: Anything with ``nominal`` (fitted model) and ``spaces``.
        forecast: Weather-like series covering the lag history before the
            first start step and ``cap_steps`` beyond the last one.
        level: :class:`flexcast.risk.UncertaintyLevel`.
    """
    worst = risk.worst_case_params(artifact.spaces, level)
    f_values = artifact.nominal.predict_weather(forecast)
    return envelope_from_nominal(
        f_values, worst, power_grid, time_grid, cap_steps, strict, initial_state, alpha=level.alpha
    )


def evaluate(predicted: FlexibilityEnvelope, truth: FlexibilityEnvelope, steps_per_day: int = 288) -> EnvelopeMetrics:
    """Share of optimistic cells (predicted > true) and mean absolute error in steps."""
    if not predicted.same_grid(truth):
        raise ValueError("predicted and true envelopes are on different grids")
    pred = predicted.durations
    true = truth.durations

    def score(cols) -> tuple[float, float]:
        p, t = pred[:, cols], true[:, cols]
        if p.size == 0:
            return 0.0, 0.0
        return float(np.mean(p > t)), float(np.mean(np.abs(p - t)))

    days = predicted.time_grid // steps_per_day
    per_day = {int(d): score(days == d) for d in np.unique(days)}
    frac, mae = score(slice(None))
    return EnvelopeMetrics(frac, mae, int(pred.size), per_day)
