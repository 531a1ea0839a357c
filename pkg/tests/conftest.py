import numpy as np
import pytest

from flexcast import sim
from flexcast.config import PipelineConfig


def constant_weather(n, t_out=0.0, irradiance=0.0, start="2021-01-01T00:00", timestep=5):
    ts = np.datetime64(start, "m") + (np.arange(n) * timestep).astype("timedelta64[m]")
    return sim.WeatherSeries(ts, np.full(n, float(t_out)), np.full(n, float(irradiance)))


@pytest.fixture(scope="session")
def winter_weather():
    return sim.generate_weather(seed=3, days=4)


@pytest.fixture(scope="session")
def baseline_trace(winter_weather):
    return sim.simulate(sim.SimConfig(), winter_weather)


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """Default pipeline run once per session; returns (config, evaluation rows)."""
    from flexcast import cli

    root = tmp_path_factory.mktemp("pipeline")
    cfg = PipelineConfig(base_dir=root)
    rows = cli.run_all(cfg)
    return cfg, rows


def battery_generated_trace(params, seed=0, n_requests=24, magnitude=(0.05, 0.1)):
    """Noise-free states produced by the battery model itself.

    Returns ``(trace, f)`` where ``trace`` has ``state`` and ``request``
    columns and ``f`` is the nominal state it was generated from.
    """
    from types import SimpleNamespace

    from flexcast import battery

    rng = np.random.default_rng(seed)
    requests = []
    sign = 1.0
    for _ in range(n_requests):
        requests += [0.0] * int(rng.integers(30, 60))
        requests += [sign * rng.uniform(*magnitude)] * int(rng.integers(4, 9))
        sign = -sign
    requests += [0.0] * 40
    requests = np.array(requests)
    n = len(requests) + 1
    t = np.arange(n)
    f = 0.5 + 0.1 * np.sin(2 * np.pi * t / 288.0) + 0.03 * np.sin(2 * np.pi * t / 61.0 + rng.uniform(0, 6))
    states = battery.iterate(f[0], requests, f, params)
    trace = SimpleNamespace(state=states, request=np.append(requests, 0.0))
    return trace, f
