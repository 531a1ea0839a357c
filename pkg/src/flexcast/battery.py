"""
Virtual battery model of a building's thermal state.

One step of the model is

    s' = s + a+ r+ + a- r- + b_f (f_now - s) [r == 0] + f_next - f_now

where ``f`` is the nominal (request-free) state predicted from weather.
Requests move the state linearly; without a request the state relaxes towards
the nominal trajectory at rate ``b_f``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

SATURATION_BAND = (0.02, 0.98)
DEFAULT_DELTA = 0.05
SAMPLE_FLOOR = 1e-4
MIN_REQUEST_SUM = 1e-6


class RejectedSample(ValueError):
    """An episode that cannot produce a physically meaningful sample."""


class IdentificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BatteryParams:
    a_plus: float
    a_minus: float
    b_f: float

    def __post_init__(self):
        if not (self.a_plus > 0 and self.a_minus > 0):
            raise ValueError("a_plus and a_minus must be positive")
        if not 0.0 <= self.b_f <= 1.0:
            raise ValueError("b_f must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class SampleSpaces:
    """Identified samples of a+ and a-, each sorted ascending."""

    p_plus: np.ndarray
    p_minus: np.ndarray
    b_f_candidates: np.ndarray = np.empty(0)

    def __post_init__(self):
        for name in ("p_plus", "p_minus", "b_f_candidates"):
            object.__setattr__(self, name, np.sort(np.asarray(getattr(self, name), dtype=float)))
        if len(self.p_plus) == 0 or len(self.p_minus) == 0:
            raise ValueError("sample spaces must be non-empty")

    @property
    def n_plus(self) -> int:
        return len(self.p_plus)

    @property
    def n_minus(self) -> int:
        return len(self.p_minus)

    @property
    def n_total(self) -> int:
        return self.n_plus * self.n_minus

    def pairs(self) -> np.ndarray:
        """All ``(a+, a-)`` combinations, shape ``(N, 2)``, a+ varying slowest."""
        plus, minus = np.meshgrid(self.p_plus, self.p_minus, indexing="ij")
        return np.column_stack([plus.ravel(), minus.ravel()])

    def __eq__(self, other):
        if not isinstance(other, SampleSpaces):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in ("p_plus", "p_minus", "b_f_candidates")
        )

    def to_dict(self) -> dict:
        return {
            "p_plus": self.p_plus.tolist(),
            "p_minus": self.p_minus.tolist(),
            "b_f_candidates": self.b_f_candidates.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleSpaces":
        return cls(np.array(d["p_plus"]), np.array(d["p_minus"]), np.array(d.get("b_f_candidates", [])))


# -- propagation -------------------------------------------------------------


def step(s: float, r: float, f_now: float, f_next: float, params: BatteryParams) -> float:
    """One step of the battery model. The result is deliberately unbounded."""
    r_plus = max(r, 0.0)
    r_minus = min(r, 0.0)
    relax = params.b_f * (f_now - s) if r == 0 else 0.0
    return s + params.a_plus * r_plus + params.a_minus * r_minus + relax + f_next - f_now


def iterate(s0: float, requests, f_values, params: BatteryParams) -> np.ndarray:
    """States ``s_0..s_k`` by repeated :func:`step`."""
    requests, f_values = _check_lengths(requests, f_values)
    out = np.empty(len(requests) + 1)
    out[0] = s = float(s0)
    for i, r in enumerate(requests):
        s = step(s, float(r), f_values[i], f_values[i + 1], params)
        out[i + 1] = s
    return out


def _check_lengths(requests, f_values):
    requests = np.asarray(requests, dtype=float)
    f_values = np.asarray(f_values, dtype=float)
    if requests.ndim != 1 or f_values.ndim != 1 or len(f_values) != len(requests) + 1:
        raise ValueError(f"need k requests and k+1 nominal values, got {len(requests)} and {len(f_values)}")
    return requests, f_values


def zero_counts(requests) -> np.ndarray:
    """``q[l]`` = number of zero requests in positions ``l..k-1``, for ``l = 0..k``."""
    chi = (np.asarray(requests) == 0).astype(np.int64)
    q = np.zeros(len(chi) + 1, dtype=np.int64)
    q[:-1] = np.cumsum(chi[::-1])[::-1]
    return q


class Decomposition(NamedTuple):
    """``s_k = offset + coeffs @ (a+, a-)``.

    ``weights_plus``/``weights_minus`` are the per-step multipliers of
    ``a+ r+`` and ``a- r-`` (identical, since both decay only through
    request-free steps).
    """

    offset: float
    weights_plus: np.ndarray
    weights_minus: np.ndarray
    coeffs: np.ndarray


def decompose(s0: float, requests, f_values, b_f: float) -> Decomposition:
    """Split the closed-form state after ``k`` steps into request-free and request parts."""
    requests, f_values = _check_lengths(requests, f_values)
    q = zero_counts(requests)
    decay = 1.0 - b_f
    weights = np.power(decay, q[1:].astype(float))
    chi = requests == 0
    free = f_values[:-1] * b_f * chi + np.diff(f_values)
    offset = decay ** float(q[0]) * float(s0) + float(weights @ free)
    coeffs = np.array([weights @ np.maximum(requests, 0.0), weights @ np.minimum(requests, 0.0)])
    return Decomposition(offset, weights, weights.copy(), coeffs)


def propagate(s0: float, requests, f_values, params: BatteryParams) -> float:
    """State after ``len(requests)`` steps, evaluated in closed form."""
    dec = decompose(s0, requests, f_values, params.b_f)
    return dec.offset + dec.coeffs[0] * params.a_plus + dec.coeffs[1] * params.a_minus


# -- episodes and samples ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class RequestEpisode:
    """A run of same-signed nonzero requests and the states around it.

    ``states``/``nominal`` have ``k + 1`` entries, ``requests`` has ``k``.
    ``saturation_index`` is the first index whose state lies in the
    saturation band, or ``k + 1`` if none does.
    """

    start: int
    states: np.ndarray
    requests: np.ndarray
    nominal: np.ndarray
    saturation_index: int

    @property
    def sign(self) -> int:
        return 1 if self.requests[0] > 0 else -1


@dataclass(frozen=True, eq=False)
class RecoveryEpisode:
    """Request-free window right after a request; ``exit_index`` is the first
    index within ``delta`` of nominal, or ``k + 1``."""

    start: int
    states: np.ndarray
    nominal: np.ndarray
    exit_index: int


def _runs(values: np.ndarray):
    """Maximal runs ``(start, stop, sign)`` of constant ``np.sign``."""
    signs = np.sign(values)
    if len(signs) == 0:
        return []
    edges = np.flatnonzero(np.diff(signs)) + 1
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [len(signs)]])
    return [(int(a), int(b), int(signs[a])) for a, b in zip(starts, stops)]


def _nominal_values(trace, nominal) -> np.ndarray:
    if hasattr(nominal, "predict_weather"):
        return nominal.predict_weather(trace)
    f = np.asarray(nominal, dtype=float)
    if f.shape != (len(trace.state),):
        raise ValueError("nominal values must align with the trace")
    return f


def extract_episodes(
    trace,
    nominal,
    delta: float = DEFAULT_DELTA,
    band: tuple[float, float] = SATURATION_BAND,
) -> tuple[list[RequestEpisode], list[RecoveryEpisode]]:
    """Cut a trace into request and recovery episodes.

    Args:
        trace: Anything with ``state`` and ``request`` arrays (and weather
            columns if ``nominal`` is a model).
        nominal: A fitted :class:`~flexcast.nominal.NominalModel` or an array
            of nominal states aligned with the trace.
        delta: Recovery is considered complete once ``|s - f| <= delta``.
        band: States at or beyond these limits count as saturated.
    """
    states = np.asarray(trace.state, dtype=float)
    requests = np.asarray(trace.request, dtype=float)
    f = _nominal_values(trace, nominal)
    n = len(states)
    lo, hi = band
    req_eps: list[RequestEpisode] = []
    rec_eps: list[RecoveryEpisode] = []
    prev_sign = 0
    for a, b, sign in _runs(requests):
        last = min(b, n - 1)  # index of the final state in the window
        k = last - a
        if k >= 1 and np.all(np.isfinite(f[a : last + 1])):
            s = states[a : last + 1]
            fv = f[a : last + 1]
            if sign != 0:
                saturated = np.flatnonzero((s <= lo) | (s >= hi))
                l = int(saturated[0]) if len(saturated) else k + 1
                req_eps.append(RequestEpisode(a, s.copy(), requests[a:last].copy(), fv.copy(), l))
            elif prev_sign != 0:
                close = np.flatnonzero(np.abs(s - fv) <= delta)
                l = int(close[0]) if len(close) else k + 1
                rec_eps.append(RecoveryEpisode(a, s.copy(), fv.copy(), l))
        prev_sign = sign
    if not req_eps and not rec_eps and np.any(requests != 0):
        raise IdentificationError("no usable episodes found; the trace lacks excitation")
    return req_eps, rec_eps


def sample_a(episode: RequestEpisode, floor: float = SAMPLE_FLOOR) -> float:
    """Request-gain sample from the last unsaturated state of an episode."""
    l = episode.saturation_index
    if l < 2:
        raise RejectedSample("saturated before the first request took effect")
    m = l - 1
    total = float(np.sum(episode.requests[:m]))
    if abs(total) < MIN_REQUEST_SUM:
        raise RejectedSample("request sum too small")
    change = (episode.states[m] - episode.nominal[m]) - (episode.states[0] - episode.nominal[0])
    a = change / total
    if not a >= floor:
        raise RejectedSample(f"non-physical sample {a:.3g}")
    return float(a)


def _golden_section(fun, lo: float, hi: float, tol: float = 1e-10) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    return (a + b) / 2.0


def b_f_residual(b: float, episode: RecoveryEpisode) -> float:
    m = episode.exit_index - 1
    d0 = episode.states[0] - episode.nominal[0]
    return ((1.0 - b) ** m * d0 + episode.nominal[m] - episode.states[m]) ** 2


def sample_b_f(episode: RecoveryEpisode, delta: float = DEFAULT_DELTA) -> float:
    """Recovery-rate sample minimizing the squared geometric-decay residual on ``[0, 1]``."""
    l = episode.exit_index
    d0 = episode.states[0] - episode.nominal[0]
    if abs(d0) <= delta:
        raise RejectedSample("recovery starts within delta of nominal")
    if l < 2:
        raise RejectedSample("recovery window too short")
    m = l - 1
    ratio = (episode.states[m] - episode.nominal[m]) / d0
    if 0.0 <= ratio <= 1.0:
        return float(1.0 - ratio ** (1.0 / m))
    candidates = [_golden_section(lambda b: b_f_residual(b, episode), 0.0, 1.0), 0.0, 1.0]
    return float(min(candidates, key=lambda b: b_f_residual(b, episode)))


def identify(
    traces: Sequence,
    nominal,
    delta: float = DEFAULT_DELTA,
    b_f_mode: str = "mean",
    cap_percentile: float = 99.0,
    floor: float = SAMPLE_FLOOR,
) -> tuple[SampleSpaces, float]:
    """Collect a+/a-/b_f samples from request traces.

    Samples above the ``cap_percentile`` of their space are clipped to it.
    ``b_f`` is fixed as the mean or maximum of its candidates (0 if none).

    Args:
        traces: Request-period traces.
        nominal: Fitted nominal model, or one nominal-state array per trace.
    """
    if b_f_mode not in ("mean", "max"):
        raise ValueError(f"unknown b_f mode {b_f_mode!r}")
    plus, minus, bs = [], [], []
    rejected = 0
    per_trace = nominal if isinstance(nominal, (list, tuple)) else [nominal] * len(traces)
    for trace, nom in zip(traces, per_trace):
        req_eps, rec_eps = extract_episodes(trace, nom, delta)
        for ep in req_eps:
            try:
                (plus if ep.sign > 0 else minus).append(sample_a(ep, floor))
            except RejectedSample:
                rejected += 1
        for ep in rec_eps:
            try:
                bs.append(sample_b_f(ep, delta))
            except RejectedSample:
                rejected += 1
    log.info("identified %d a+ / %d a- / %d b_f samples (%d rejected)", len(plus), len(minus), len(bs), rejected)
    if not plus or not minus:
        raise IdentificationError(
            f"identification failed: {len(plus)} a+ and {len(minus)} a- samples; "
            "the request data needs both positive and negative requests"
        )

    def cap(values):
        values = np.asarray(values)
        return np.minimum(values, np.percentile(values, cap_percentile))

    b_values = np.asarray(bs)
    if len(b_values) == 0:
        log.warning("no recovery samples; fixing b_f = 0")
        b_f = 0.0
    else:
        b_f = float(b_values.mean() if b_f_mode == "mean" else b_values.max())
    return SampleSpaces(cap(plus), cap(minus), b_values), b_f
