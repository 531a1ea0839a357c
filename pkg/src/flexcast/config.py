"""Pipeline configuration, read from and written to TOML."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from flexcast.risk import UncertaintyLevel
from flexcast.sim import ScheduleParams, SimConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WeatherConfig:
    start: str = "2021-01-01T00:00"
    mean_temp: float = 1.0
    daily_amplitude: float = 4.0
    drift_std: float = 0.6
    drift_timescale_hours: float = 48.0
    peak_irradiance: float = 350.0
    max_temp: float = 14.0


@dataclass(frozen=True)
class TrainingConfig:
    weeks_nominal: int = 3
    weeks_requests: int = 3
    request_hours: tuple[float, float] = (1.0, 4.0)
    free_hours: tuple[float, float] = (4.0, 15.0)
    magnitude: tuple[float, float] = (0.1, 0.5)
    signs: str = "alternate"

    def __post_init__(self):
        if self.weeks_nominal < 1 or self.weeks_requests < 1:
            raise ValueError("training periods must be at least one week")
        if self.signs not in ("alternate", "random"):
            raise ValueError(f"signs must be 'alternate' or 'random', got {self.signs!r}")

    def schedule_params(self) -> ScheduleParams:
        return ScheduleParams(self.request_hours, self.free_hours, self.magnitude, self.signs)


@dataclass(frozen=True)
class NominalConfig:
    n_lags: int = 12
    lengthscale_factors: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    ridges: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)
    max_points: int = 2000

    def __post_init__(self):
        if self.n_lags < 1 or self.max_points < 2:
            raise ValueError("n_lags must be >= 1 and max_points >= 2")
        if not self.lengthscale_factors or not self.ridges:
            raise ValueError("hyperparameter grids must be non-empty")


@dataclass(frozen=True)
class IdentificationConfig:
    delta: float = 0.05
    b_f_mode: str = "mean"
    cap_percentile: float = 99.0

    def __post_init__(self):
        if self.b_f_mode not in ("mean", "max"):
            raise ValueError(f"b_f_mode must be 'mean' or 'max', got {self.b_f_mode!r}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")


@dataclass(frozen=True)
class EnvelopeConfig:
    power_levels: int = 21
    power_min: float = -1.0
    power_max: float = 1.0
    starts_per_day: int = 24
    cap_steps: int = 288
    # "~x" picks the valid level nearest to x, so the default works for any N.
    alphas: tuple[str, ...] = ("1/N", "~0.5", "1.0")
    strict: bool = False
    snap_alpha: bool = False
    # Days index the test weather; day 21 is 22 January with the default start.
    day: int = 25
    eval_start_day: int = 21
    eval_days: int = 10

    def __post_init__(self):
        if self.power_levels < 2 or self.power_min >= self.power_max:
            raise ValueError("need at least two power levels on a non-empty range")
        if self.cap_steps < 1 or self.starts_per_day < 1:
            raise ValueError("cap_steps and starts_per_day must be positive")
        if not self.alphas:
            raise ValueError("alphas must be non-empty")
        if self.eval_days < 1:
            raise ValueError("eval_days must be >= 1")

    def power_grid(self) -> np.ndarray:
        # Rounded so that a symmetric grid contains exactly 0.
        return np.round(np.linspace(self.power_min, self.power_max, self.power_levels), 10)

    def time_grid(self, days, steps_per_day: int) -> np.ndarray:
        stride = steps_per_day // self.starts_per_day
        return np.concatenate([d * steps_per_day + np.arange(0, steps_per_day, stride) for d in days])


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    artifact: str = "data/model.json"
    output_dir: str = "out"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    weather: WeatherConfig = field(default_factory=WeatherConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    nominal: NominalConfig = field(default_factory=NominalConfig)
    identification: IdentificationConfig = field(default_factory=IdentificationConfig)
    envelope: EnvelopeConfig = field(default_factory=EnvelopeConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    SECTIONS = ("sim", "weather", "training", "nominal", "identification", "envelope", "paths")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def data_dir(self) -> Path:
        return self.resolve(self.paths.data_dir)

    @property
    def artifact_path(self) -> Path:
        return self.resolve(self.paths.artifact)

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.paths.output_dir)

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        for name in self.SECTIONS:
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(getattr(self, name)).items()}
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | str = ".") -> "PipelineConfig":
        unknown = set(data) - {"seed", *cls.SECTIONS}
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
        sections = {}
        for f in dataclasses.fields(cls):
            if f.name in cls.SECTIONS:
                sections[f.name] = _build_section(f.name, f.default_factory, data.get(f.name, {}))
        return cls(seed=seed, base_dir=Path(base_dir), **sections)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data, base_dir=path.parent)


def _coerce(section: str, key: str, default, value):
    where = f"[{section}] {key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        if len(default) == 2 and all(isinstance(x, float) for x in default) and len(value) != 2:
            raise ConfigError(f"{where}: expected a [low, high] pair")
        item_default = default[0] if default else ""
        return tuple(_coerce(section, key, item_default, v) for v in value)
    return value


def _build_section(name: str, factory, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    default = factory()
    known = {f.name for f in dataclasses.fields(default)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"[{name}] unknown key(s): {', '.join(sorted(unknown))}")
    kwargs = {k: _coerce(name, k, getattr(default, k), v) for k, v in values.items()}
    try:
        return dataclasses.replace(default, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def stream_seed(seed: int, name: str) -> int:
    """Independent integer seed for a named pipeline stage."""
    ss = np.random.SeedSequence([seed, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


_J_OF_N = re.compile(r"^\s*(\d+|N)\s*/\s*N\s*$")


def parse_alpha(spec: str, n_total: int, snap: bool = False) -> UncertaintyLevel:
    """Risk level from ``"j/N"`` (e.g. ``"1/N"``), a fraction ``"1/2"`` or a decimal ``"0.5"``.

    Values that are not multiples of ``1/N`` raise unless ``snap`` is set or
    the string starts with ``~`` (``"~0.5"``); then the nearest valid level is used.
    """
    spec = spec.strip()
    if spec.startswith("~"):
        spec, snap = spec[1:], True
    m = _J_OF_N.match(spec)
    if m:
        j = n_total if m.group(1) == "N" else int(m.group(1))
        if not 1 <= j <= n_total:
            raise ConfigError(f"alpha {spec!r}: j must lie in 1..{n_total}")
        return UncertaintyLevel(j, n_total)
    try:
        alpha = float(Fraction(spec.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse alpha {spec!r}") from exc
    if snap:
        return UncertaintyLevel.nearest(alpha, n_total)
    try:
        return UncertaintyLevel.from_alpha(alpha, n_total)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def alpha_label(level: UncertaintyLevel) -> str:
    return f"j{level.j}of{level.n_total}"
