"""
Single-zone RC building with a heat pump and PI controller.

Plant (forward Euler, time in hours):

    C dT/dt = (T_out - T) / R + P_max * u + A_sol * I / 1000 + noise

with C in kWh/K, R in K/kW, P_max in kW and the irradiance I in W/m2.
The controller tracks a setpoint when no request is active. During a request
it applies ``clip(u_baseline + r, 0, 1)`` unless that would push the indoor
temperature out of the comfort band at the next step, in which case it applies
the input that holds the bound.

The reported state follows the availability-time definition for heat pumps:

    delta_under = C (T - T_min) / P_loss
    delta_over  = C (T_max - T) / (P_max - P_loss)
    state       = delta_under / (delta_under + delta_over)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from flexcast.envelope import FlexibilityEnvelope

TRACE_COLUMNS = (
    "timestamp",
    "t_out",
    "irradiance",
    "t_in",
    "state",
    "u",
    "u_baseline",
    "request",
    "delta_under",
    "delta_over",
)
WEATHER_COLUMNS = ("timestamp", "t_out", "irradiance")

# Ground-truth violation tolerance in K, absorbs Euler discretization error.
TRUTH_TOLERANCE = 0.05


@dataclass(frozen=True)
class SimConfig:
    """Plant, heat pump, controller and comfort parameters."""

    thermal_resistance: float = 10.0  # K/kW
    thermal_capacitance: float = 1.0  # kWh/K
    hp_max_thermal_power: float = 5.0  # kW
    solar_aperture: float = 2.0  # m2 effective
    temp_min: float = 19.0  # degC
    temp_max: float = 24.0  # degC
    pi_gain_p: float = 0.5  # 1/K
    pi_gain_i: float = 0.25  # 1/(K h)
    setpoint: float = 21.5  # degC
    timestep: float = 5.0  # minutes
    noise_std: float = 0.0  # K per step

    def __post_init__(self):
        for name in ("thermal_resistance", "thermal_capacitance", "hp_max_thermal_power", "timestep"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value!r}")
        if not self.temp_min < self.setpoint < self.temp_max:
            raise ValueError(
                f"need temp_min < setpoint < temp_max, got "
                f"{self.temp_min} / {self.setpoint} / {self.temp_max}"
            )
        if self.noise_std < 0 or self.solar_aperture < 0:
            raise ValueError("noise_std and solar_aperture must be non-negative")

    @property
    def dt_hours(self) -> float:
        return self.timestep / 60.0

    @property
    def steps_per_day(self) -> int:
        return int(round(24 * 60 / self.timestep))

    def steps(self, hours: float) -> int:
        """Number of timesteps in ``hours``."""
        return int(round(hours * 60.0 / self.timestep))


def _check_series_lengths(obj, names):
    lengths = {name: len(getattr(obj, name)) for name in names}
    if len(set(lengths.values())) > 1:
        raise ValueError(f"series lengths differ: {lengths}")


def _check_uniform(timestamps: np.ndarray):
    if len(timestamps) < 2:
        return
    diffs = np.diff(timestamps)
    if np.any(diffs <= np.timedelta64(0, "m")):
        raise ValueError("timestamps must be strictly increasing")
    if np.any(diffs != diffs[0]):
        raise ValueError("timestamps must be uniformly spaced")


@dataclass(frozen=True, eq=False)
class WeatherSeries:
    """Outdoor temperature (degC) and irradiance (W/m2) on a uniform grid."""

    timestamps: np.ndarray
    outdoor_temp: np.ndarray
    irradiance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype="datetime64[m]"))
        object.__setattr__(self, "outdoor_temp", np.asarray(self.outdoor_temp, dtype=float))
        object.__setattr__(self, "irradiance", np.asarray(self.irradiance, dtype=float))
        _check_series_lengths(self, ("timestamps", "outdoor_temp", "irradiance"))
        _check_uniform(self.timestamps)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def timestep(self) -> float:
        """Grid spacing in minutes."""
        if len(self) < 2:
            raise ValueError("need at least two samples to infer a timestep")
        return float((self.timestamps[1] - self.timestamps[0]) / np.timedelta64(1, "m"))

    def slice(self, start: int, stop: int) -> "WeatherSeries":
        return WeatherSeries(
            self.timestamps[start:stop], self.outdoor_temp[start:stop], self.irradiance[start:stop]
        )


@dataclass(frozen=True, eq=False)
class Trace:
    """One simulation or logging run.

    ``state[t]``, ``indoor_temp[t]`` and the availability times describe the
    building at the start of step ``t``; ``power_fraction[t]`` and
    ``request[t]`` are applied during step ``t``.
    """

    timestamps: np.ndarray
    outdoor_temp: np.ndarray
    irradiance: np.ndarray
    indoor_temp: np.ndarray
    state: np.ndarray
    power_fraction: np.ndarray
    baseline_fraction: np.ndarray
    request: np.ndarray
    delta_under: np.ndarray
    delta_over: np.ndarray

    _SERIES = (
        "outdoor_temp",
        "irradiance",
        "indoor_temp",
        "state",
        "power_fraction",
        "baseline_fraction",
        "request",
        "delta_under",
        "delta_over",
    )

    def __post_init__(self):
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype="datetime64[m]"))
        for name in self._SERIES:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        _check_series_lengths(self, ("timestamps",) + self._SERIES)
        _check_uniform(self.timestamps)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def weather(self) -> WeatherSeries:
        return WeatherSeries(self.timestamps, self.outdoor_temp, self.irradiance)

    def slice(self, start: int, stop: int) -> "Trace":
        return Trace(
            self.timestamps[start:stop],
            *(getattr(self, name)[start:stop] for name in self._SERIES),
        )


@dataclass(frozen=True)
class RequestSegment:
    start: int
    duration: int
    value: float

    @property
    def stop(self) -> int:
        return self.start + self.duration


@dataclass(frozen=True)
class RequestSchedule:
    """Disjoint constant-value request segments, in steps."""

    segments: tuple[RequestSegment, ...] = ()
    horizon: int | None = None

    def __post_init__(self):
        segs = tuple(
            s if isinstance(s, RequestSegment) else RequestSegment(int(s[0]), int(s[1]), float(s[2]))
            for s in self.segments
        )
        segs = tuple(sorted(segs, key=lambda s: s.start))
        object.__setattr__(self, "segments", segs)
        prev_stop = 0
        for seg in segs:
            if seg.start < 0 or seg.duration <= 0:
                raise ValueError(f"invalid segment {seg}")
            if seg.start < prev_stop:
                raise ValueError(f"segment {seg} overlaps its predecessor")
            if not math.isfinite(seg.value):
                raise ValueError(f"non-finite request value in {seg}")
            prev_stop = seg.stop
        if self.horizon is not None and prev_stop > self.horizon:
            raise ValueError(f"schedule ends at step {prev_stop}, beyond horizon {self.horizon}")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def end(self) -> int:
        return self.segments[-1].stop if self.segments else 0

    def to_array(self, n_steps: int) -> np.ndarray:
        if self.end > n_steps:
            raise ValueError(f"schedule ends at step {self.end}, beyond horizon {n_steps}")
        out = np.zeros(n_steps)
        for seg in self.segments:
            out[seg.start : seg.stop] = seg.value
        return out


@dataclass(frozen=True)
class ScheduleParams:
    """Random training-request protocol; durations in hours."""

    request_hours: tuple[float, float] = (1.0, 4.0)
    free_hours: tuple[float, float] = (4.0, 15.0)
    magnitude: tuple[float, float] = (0.1, 0.5)
    signs: str = "alternate"  # "alternate" | "random"


# -- state reporting -------------------------------------------------------


def state_times(T, T_out, config: SimConfig):
    """Availability times at minimum and maximum heat-pump power.

    Args:
        T: Indoor temperature (degC), scalar or array.
        T_out: Outdoor temperature (degC), broadcastable with ``T``.
        config: Plant parameters; R, C, P_max and the comfort band are used.

    Returns:
        ``(delta_under, delta_over)`` in hours.

    Raises:
        ValueError: if the losses are not positive or exceed ``P_max``
            (outside the heating regime).
    """
    T = np.asarray(T, dtype=float)
    p_loss = (T - np.asarray(T_out, dtype=float)) / config.thermal_resistance
    headroom = config.hp_max_thermal_power - p_loss
    if np.any(p_loss <= 0):
        raise ValueError("non-positive heat loss: data outside the heating season")
    if np.any(headroom <= 0):
        raise ValueError("heat loss exceeds heat-pump capacity")
    c = config.thermal_capacitance
    under = c * (T - config.temp_min) / p_loss
    over = c * (config.temp_max - T) / headroom
    if under.ndim == 0:
        return float(under), float(over)
    return under, over


def state_from_times(delta_under, delta_over):
    """Normalized state ``delta_under / (delta_under + delta_over)``."""
    under = np.asarray(delta_under, dtype=float)
    over = np.asarray(delta_over, dtype=float)
    if np.any(under < 0) or np.any(over < 0):
        raise ValueError("availability times must be non-negative")
    total = under + over
    if np.any(total <= 0):
        raise ValueError("degenerate measurement: both availability times are zero")
    s = under / total
    return float(s) if s.ndim == 0 else s


def _reported_state(T, T_out, config: SimConfig):
    under, over = state_times(T, T_out, config)
    # Process noise can carry T marginally past a bound; the reported times saturate at zero.
    under, over = max(under, 0.0), max(over, 0.0)
    return under, over, state_from_times(under, over)


# -- weather and schedules -------------------------------------------------


def generate_weather(
    seed: int,
    days: int,
    timestep: float = 5.0,
    start: str = "2021-01-01T00:00",
    mean_temp: float = 1.0,
    daily_amplitude: float = 4.0,
    drift_std: float = 0.6,
    drift_timescale_hours: float = 48.0,
    peak_irradiance: float = 350.0,
    max_temp: float = 14.0,
) -> WeatherSeries:
    """Synthetic winter weather.

    Temperature is a diurnal sinusoid (peak mid-afternoon) on top of a slow
    mean-reverting random walk, clipped at ``max_temp`` so heating is always
    needed. Irradiance is a clipped daytime sinusoid scaled by a random daily
    cloud factor.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    steps_per_day = int(round(24 * 60 / timestep))
    n = days * steps_per_day
    rng = np.random.default_rng(seed)
    dt_h = timestep / 60.0
    hours = np.arange(n) * dt_h
    hour_of_day = hours % 24.0

    # Ornstein-Uhlenbeck drift with stationary std drift_std * 3.
    theta = dt_h / drift_timescale_hours
    sigma = drift_std * 3.0 * math.sqrt(2.0 * theta)
    shocks = rng.normal(0.0, sigma, size=n)
    drift = np.empty(n)
    x = rng.normal(0.0, drift_std * 3.0)
    for t in range(n):
        drift[t] = x
        x += -theta * x + shocks[t]
    diurnal = daily_amplitude * np.cos(2.0 * np.pi * (hour_of_day - 15.0) / 24.0)
    outdoor = np.minimum(mean_temp + diurnal + drift, max_temp)

    clouds = rng.uniform(0.3, 1.0, size=days)
    daylight = np.clip(np.sin(np.pi * (hour_of_day - 8.0) / 8.5), 0.0, None)
    daylight[(hour_of_day < 8.0) | (hour_of_day > 16.5)] = 0.0
    irradiance = peak_irradiance * daylight * np.repeat(clouds, steps_per_day)

    t0 = np.datetime64(start, "m")
    timestamps = t0 + (np.arange(n) * timestep).astype("timedelta64[m]")
    return WeatherSeries(timestamps, outdoor, irradiance)


def generate_training_schedule(
    seed: int,
    horizon: int,
    params: ScheduleParams = ScheduleParams(),
    timestep: float = 5.0,
    offset: int = 0,
) -> RequestSchedule:
    """Alternating request-free and constant-request periods.

    Each cycle starts with a request-free period. Segments that would run past
    ``horizon`` are dropped. ``offset`` shifts every segment, for schedules
    that start partway into a simulation.
    """
    rng = np.random.default_rng(seed)
    per_hour = 60.0 / timestep
    req_lo, req_hi = (int(round(h * per_hour)) for h in params.request_hours)
    free_lo, free_hi = (int(round(h * per_hour)) for h in params.free_hours)
    if params.signs not in ("alternate", "random"):
        raise ValueError(f"unknown sign mode {params.signs!r}")
    segments = []
    t = 0
    sign = 1.0
    while True:
        t += int(rng.integers(free_lo, free_hi + 1))
        duration = int(rng.integers(req_lo, req_hi + 1))
        magnitude = float(rng.uniform(*params.magnitude))
        if params.signs == "random":
            sign = 1.0 if rng.random() < 0.5 else -1.0
        if t + duration > horizon:
            break
        segments.append(RequestSegment(offset + t, duration, sign * magnitude))
        t += duration
        if params.signs == "alternate":
            sign = -sign
    return RequestSchedule(tuple(segments), horizon=offset + horizon if horizon > 0 else None)


# -- plant and controller --------------------------------------------------


class _Plant:
    def __init__(self, config: SimConfig):
        self.config = config
        self.gain = config.dt_hours / config.thermal_capacitance
        self.solar_factor = config.solar_aperture / 1000.0

    def free_heat(self, T, t_out, irradiance):
        """Heat flow in kW excluding the heat pump."""
        return (t_out - T) / self.config.thermal_resistance + self.solar_factor * irradiance

    def next_temp(self, T, u, t_out, irradiance):
        return T + self.gain * (self.free_heat(T, t_out, irradiance) + self.config.hp_max_thermal_power * u)

    def bound_holding(self, T, u, t_out, irradiance):
        """``u``, replaced by the comfort-bound-holding input if ``u`` would leave the band."""
        cfg = self.config
        T_next = self.next_temp(T, u, t_out, irradiance)
        if cfg.temp_min <= T_next <= cfg.temp_max:
            return u
        target = cfg.temp_max if T_next > cfg.temp_max else cfg.temp_min
        held = ((target - T) / self.gain - self.free_heat(T, t_out, irradiance)) / cfg.hp_max_thermal_power
        return min(max(held, 0.0), 1.0)


def _closed_loop(config: SimConfig, weather: WeatherSeries, requests, baseline_u, noise, initial_temp):
    plant = _Plant(config)
    n = len(weather)
    t_out = weather.outdoor_temp
    irr = weather.irradiance
    dt = config.dt_hours

    T = config.setpoint if initial_temp is None else float(initial_temp)
    # Start the integrator at the input that balances the initial losses.
    integral = -plant.free_heat(config.setpoint, t_out[0], irr[0]) / config.hp_max_thermal_power
    integral = min(max(integral, 0.0), 1.0)

    temps = np.empty(n)
    under = np.empty(n)
    over = np.empty(n)
    states = np.empty(n)
    applied = np.empty(n)
    for t in range(n):
        temps[t] = T
        under[t], over[t], states[t] = _reported_state(T, t_out[t], config)
        r = requests[t]
        if r != 0.0:
            # Integrator frozen while a request is being followed.
            u = min(max(baseline_u[t] + r, 0.0), 1.0)
        else:
            err = config.setpoint - T
            raw = config.pi_gain_p * err + integral
            u = min(max(raw, 0.0), 1.0)
            if (0.0 < raw < 1.0) or (raw >= 1.0 and err < 0) or (raw <= 0.0 and err > 0):
                integral += config.pi_gain_i * err * dt
        u = plant.bound_holding(T, u, t_out[t], irr[t])
        applied[t] = u
        T = plant.next_temp(T, u, t_out[t], irr[t]) + noise[t]
    return temps, under, over, states, applied


def simulate(
    config: SimConfig,
    weather: WeatherSeries,
    schedule: RequestSchedule = RequestSchedule(),
    seed: int = 0,
    initial_temp: float | None = None,
) -> Trace:
    """Run the PI-controlled building over ``weather`` while serving ``schedule``.

    The baseline input is taken from a request-free twin run on the same
    weather and noise realization.
    """
    n = len(weather)
    if schedule.end > n:
        raise ValueError(f"weather covers {n} steps but schedule runs to step {schedule.end}")
    if not (np.all(np.isfinite(weather.outdoor_temp)) and np.all(np.isfinite(weather.irradiance))):
        raise ValueError("weather contains non-finite values")
    if config.noise_std > 0:
        noise = np.random.default_rng(seed).normal(0.0, config.noise_std, size=n)
    else:
        noise = np.zeros(n)
    requests = schedule.to_array(n)

    zeros = np.zeros(n)
    base = _closed_loop(config, weather, zeros, zeros, noise, initial_temp)
    if np.any(requests != 0):
        temps, under, over, states, applied = _closed_loop(
            config, weather, requests, base[4], noise, initial_temp
        )
    else:
        temps, under, over, states, applied = base
    return Trace(
        timestamps=weather.timestamps,
        outdoor_temp=weather.outdoor_temp,
        irradiance=weather.irradiance,
        indoor_temp=temps,
        state=states,
        power_fraction=applied,
        baseline_fraction=base[4].copy(),
        request=requests,
        delta_under=under,
        delta_over=over,
    )


def simulate_open_loop(config: SimConfig, weather: WeatherSeries, inputs, initial_temp: float) -> np.ndarray:
    """Indoor temperatures under a fixed input sequence, no controller.

    Returns ``len(inputs) + 1`` temperatures starting with ``initial_temp``.
    """
    plant = _Plant(config)
    inputs = np.asarray(inputs, dtype=float)
    if len(inputs) > len(weather):
        raise ValueError("input sequence longer than weather")
    temps = np.empty(len(inputs) + 1)
    temps[0] = T = float(initial_temp)
    for t, u in enumerate(inputs):
        T = plant.next_temp(T, u, weather.outdoor_temp[t], weather.irradiance[t])
        temps[t + 1] = T
    return temps


# -- ground truth ------------------------------------------------------------


def true_envelope(
    config: SimConfig,
    baseline_trace: Trace,
    power_grid: Sequence[float],
    time_grid: Iterable[int],
    cap_steps: int = 288,
    tolerance: float = TRUTH_TOLERANCE,
) -> FlexibilityEnvelope:
    """Sustainable durations measured on the plant itself.

    For each start step ``t_j`` the plant is restarted from the baseline
    temperature and driven open loop with ``clip(u_baseline + p, 0, 1)``. The
    duration is the number of steps before the indoor temperature first leaves
    ``[temp_min - tolerance, temp_max + tolerance]``, capped at ``cap_steps``.
    """
    power = np.asarray(power_grid, dtype=float)
    times = np.asarray(list(time_grid), dtype=int)
    n = len(baseline_trace)
    if len(times) and (times.min() < 0 or times.max() + cap_steps > n):
        raise ValueError(f"time grid needs steps up to {times.max() + cap_steps}, trace has {n}")
    plant = _Plant(config)
    lo = config.temp_min - tolerance
    hi = config.temp_max + tolerance
    t_out = baseline_trace.outdoor_temp
    irr = baseline_trace.irradiance
    base_u = baseline_trace.power_fraction

    durations = np.zeros((len(power), len(times)), dtype=int)
    for j, t0 in enumerate(times):
        T = np.full(len(power), baseline_trace.indoor_temp[t0])
        alive = np.ones(len(power), dtype=bool)
        count = np.zeros(len(power), dtype=int)
        for step in range(cap_steps):
            t = t0 + step
            u = np.clip(base_u[t] + power, 0.0, 1.0)
            T = plant.next_temp(T, u, t_out[t], irr[t])
            alive &= (T >= lo) & (T <= hi)
            count += alive
            if not alive.any():
                break
        count[power == 0.0] = cap_steps
        durations[:, j] = count
    return FlexibilityEnvelope(power, times, durations, alpha=None, cap_steps=cap_steps)
