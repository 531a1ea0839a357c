"""CSV and JSON persistence for traces, weather, envelopes and model artifacts."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from flexcast.battery import SampleSpaces
from flexcast.envelope import FlexibilityEnvelope
from flexcast.nominal import NominalModel
from flexcast.sim import TRACE_COLUMNS, WEATHER_COLUMNS, Trace, WeatherSeries

ARTIFACT_FORMAT = "flexcast-model/1"


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return repr(float(x))


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _read_csv(path, expected_header) -> list[list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != tuple(expected_header):
            raise ValueError(f"{path}: expected header {','.join(expected_header)}, got {header}")
        return [row for row in reader if row]


def trace_to_csv(trace: Trace) -> str:
    cols = [
        trace.outdoor_temp,
        trace.irradiance,
        trace.indoor_temp,
        trace.state,
        trace.power_fraction,
        trace.baseline_fraction,
        trace.request,
        trace.delta_under,
        trace.delta_over,
    ]
    rows = ([str(ts)] + [_fmt(c[i]) for c in cols] for i, ts in enumerate(trace.timestamps))
    return rows_to_csv(TRACE_COLUMNS, rows)


def save_trace(trace: Trace, path) -> None:
    write_atomic(path, trace_to_csv(trace))


def load_trace(path) -> Trace:
    rows = _read_csv(path, TRACE_COLUMNS)
    data = np.array([[float(v) for v in row[1:]] for row in rows]).reshape(-1, len(TRACE_COLUMNS) - 1)
    timestamps = np.array([row[0] for row in rows], dtype="datetime64[m]")
    return Trace(timestamps, *data.T)


def save_weather(weather: WeatherSeries, path) -> None:
    rows = (
        [str(ts), _fmt(weather.outdoor_temp[i]), _fmt(weather.irradiance[i])]
        for i, ts in enumerate(weather.timestamps)
    )
    write_atomic(path, rows_to_csv(WEATHER_COLUMNS, rows))


def load_weather(path) -> WeatherSeries:
    rows = _read_csv(path, WEATHER_COLUMNS)
    timestamps = np.array([row[0] for row in rows], dtype="datetime64[m]")
    values = np.array([[float(row[1]), float(row[2])] for row in rows]).reshape(-1, 2)
    return WeatherSeries(timestamps, values[:, 0], values[:, 1])


def envelope_to_csv(env: FlexibilityEnvelope, timestamps=None) -> str:
    """Rows are power levels, columns start steps (or their timestamps)."""
    labels = [str(t) for t in (env.time_grid if timestamps is None else np.asarray(timestamps)[env.time_grid])]
    rows = ([_fmt(p)] + [str(int(d)) for d in env.durations[i]] for i, p in enumerate(env.power_grid))
    return rows_to_csv(["power"] + labels, rows)


def save_envelope(env: FlexibilityEnvelope, path) -> None:
    write_atomic(path, envelope_to_csv(env))


def load_envelope(path, cap_steps: int = 288, alpha: float | None = None) -> FlexibilityEnvelope:
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows or rows[0][0] != "power":
        raise ValueError(f"{path}: not an envelope CSV")
    times = [int(t) for t in rows[0][1:]]
    power = [float(r[0]) for r in rows[1:]]
    durations = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=int).reshape(len(power), len(times))
    return FlexibilityEnvelope(power, times, durations, alpha=alpha, cap_steps=cap_steps)


@dataclass(frozen=True, eq=False)
class ModelArtifact:
    """Everything needed to predict envelopes: nominal model, sample spaces and b_f."""

    nominal: NominalModel
    spaces: SampleSpaces
    b_f: float
    nominal_holdout_rmse: float | None = None
    worst_case: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": ARTIFACT_FORMAT,
            "nominal": self.nominal.to_dict(),
            "spaces": self.spaces.to_dict(),
            "b_f": self.b_f,
            "nominal_holdout_rmse": self.nominal_holdout_rmse,
            "worst_case": self.worst_case,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArtifact":
        if d.get("format") != ARTIFACT_FORMAT:
            raise ValueError(f"unsupported artifact format {d.get('format')!r}")
        return cls(
            nominal=NominalModel.from_dict(d["nominal"]),
            spaces=SampleSpaces.from_dict(d["spaces"]),
            b_f=float(d["b_f"]),
            nominal_holdout_rmse=d.get("nominal_holdout_rmse"),
            worst_case=d.get("worst_case", {}),
            provenance=d.get("provenance", {}),
        )

    def save(self, path) -> None:
        write_atomic(path, json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "ModelArtifact":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
