from types import SimpleNamespace

import numpy as np
import pytest

from flexcast import battery, sim
from flexcast.battery import BatteryParams, IdentificationError, RecoveryEpisode, RejectedSample, RequestEpisode

from conftest import battery_generated_trace


def _random_case(rng):
    k = int(rng.integers(0, 201))
    r = rng.uniform(-1, 1, k)
    r[rng.random(k) < 0.4] = 0.0
    f = np.cumsum(rng.normal(0, 0.02, k + 1)) + 0.5
    params = BatteryParams(rng.uniform(0.01, 0.3), rng.uniform(0.01, 0.3), rng.uniform(0, 1))
    return float(rng.uniform(0, 1)), r, f, params


def test_params_validation():
    with pytest.raises(ValueError):
        BatteryParams(-0.1, 0.1, 0.5)
    with pytest.raises(ValueError):
        BatteryParams(0.1, 0.1, 1.5)


def test_step_examples():
    p = BatteryParams(0.1, 0.1, 0.5)
    assert battery.step(0.5, 0.0, 0.5, 0.5, BatteryParams(0.1, 0.1, 0.8)) == 0.5
    assert battery.step(0.5, 1.0, 0.5, 0.5, p) == pytest.approx(0.6, abs=1e-15)
    s1 = battery.step(0.9, 0.0, 0.5, 0.5, p)
    assert s1 == pytest.approx(0.7, abs=1e-15)
    assert battery.step(s1, 0.0, 0.5, 0.5, p) == pytest.approx(0.6, abs=1e-15)


def test_negative_request_lowers_state():
    assert battery.step(0.5, -1.0, 0.5, 0.5, BatteryParams(0.1, 0.2, 0.0)) == pytest.approx(0.3)


def test_propagate_examples():
    p = BatteryParams(0.1, 0.1, 0.3)
    assert battery.propagate(0.37, [], [0.2], p) == 0.37
    f = np.array([0.4, 0.45, 0.5, 0.43, 0.41])
    assert battery.propagate(0.4, np.zeros(4), f, p) == pytest.approx(0.41, abs=1e-15)
    assert battery.propagate(0.5, [1, 1, 1], [0.5] * 4, BatteryParams(0.1, 0.1, 0.0)) == pytest.approx(0.8, abs=1e-15)


def test_propagate_length_mismatch():
    with pytest.raises(ValueError):
        battery.propagate(0.5, [1, 0], [0.5, 0.5], BatteryParams(0.1, 0.1, 0.1))


def test_closed_form_matches_stepping():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        s0, r, f, params = _random_case(rng)
        worst = max(worst, abs(battery.propagate(s0, r, f, params) - battery.iterate(s0, r, f, params)[-1]))
    assert worst <= 1e-9


def test_decomposition_identity():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        s0, r, f, params = _random_case(rng)
        dec = battery.decompose(s0, r, f, params.b_f)
        rebuilt = dec.offset + dec.coeffs[0] * params.a_plus + dec.coeffs[1] * params.a_minus
        assert abs(rebuilt - battery.propagate(s0, r, f, params)) <= 1e-12


def test_decomposition_examples():
    f = [0.5, 0.52, 0.55, 0.5]
    dec = battery.decompose(0.6, [0.0, 0.0, 0.0], f, 0.4)
    assert tuple(dec.coeffs) == (0.0, 0.0)
    assert dec.offset == pytest.approx(battery.propagate(0.6, [0, 0, 0], f, BatteryParams(0.1, 0.1, 0.4)), abs=1e-15)
    dec = battery.decompose(0.5, [1.0], [0.5, 0.5], 0.0)
    assert tuple(dec.coeffs) == (1.0, 0.0)


def test_zero_counts():
    rng = np.random.default_rng(2)
    for _ in range(200):
        r = rng.choice([0.0, 0.3, -0.2], size=int(rng.integers(0, 30)))
        q = battery.zero_counts(r)
        assert [int(x) for x in q] == [int(np.sum(r[l:] == 0)) for l in range(len(r) + 1)]


def test_monotone_in_positive_requests():
    rng = np.random.default_rng(3)
    p = BatteryParams(0.1, 0.2, 0.0)
    r = rng.uniform(0, 1, 20)
    f = np.full(21, 0.5)
    base = battery.propagate(0.3, r, f, p)
    for i in range(20):
        bumped = r.copy()
        bumped[i] += 0.1
        assert battery.propagate(0.3, bumped, f, p) >= base


# -- samples -------------------------------------------------------------------


def _request_episode(states, nominal, requests, l=None):
    k = len(requests)
    return RequestEpisode(0, np.asarray(states, float), np.asarray(requests, float), np.asarray(nominal, float), l or k + 1)


def test_sample_a_example():
    ep = _request_episode([0.5, 0.6, 0.7, 0.8], [0.5, 0.5, 0.5, 0.5], [1.0, 1.0, 1.0])
    assert battery.sample_a(ep) == pytest.approx(0.1, abs=1e-15)


def test_sample_a_flat_rejected():
    ep = _request_episode([0.5, 0.5, 0.5], [0.5, 0.5, 0.5], [0.4, 0.4])
    with pytest.raises(RejectedSample):
        battery.sample_a(ep)


def test_sample_a_uses_last_unsaturated_state():
    # Saturated at index 3; states[2] is the last valid one.
    ep = _request_episode([0.8, 0.9, 0.95, 0.99, 0.99], [0.5] * 5, [0.5] * 4, l=3)
    assert battery.sample_a(ep) == pytest.approx(0.15 / 1.0)


def test_sample_a_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(50):
        params = BatteryParams(rng.uniform(0.05, 0.15), rng.uniform(0.05, 0.15), 0.3)
        sign = rng.choice([-1.0, 1.0])
        r = sign * rng.uniform(0.05, 0.2, int(rng.integers(2, 10)))
        f = 0.5 + rng.normal(0, 0.01, len(r) + 1)
        s = battery.iterate(0.5, r, f, params)
        a = battery.sample_a(_request_episode(s, f, r))
        assert abs(a - (params.a_plus if sign > 0 else params.a_minus)) <= 1e-9


def _recovery(states, nominal, l):
    return RecoveryEpisode(0, np.asarray(states, float), np.asarray(nominal, float), l)


def test_sample_b_f_closed_form():
    ep = _recovery([0.9, 0.7, 0.6, 0.55], [0.5] * 4, 3)
    assert battery.sample_b_f(ep) == pytest.approx(0.5, abs=1e-12)


def test_sample_b_f_full_recovery():
    ep = _recovery([0.9, 0.6, 0.5], [0.5, 0.5, 0.5], 3)
    assert battery.sample_b_f(ep) == 1.0


def test_sample_b_f_rejects_small_deviation():
    with pytest.raises(RejectedSample):
        battery.sample_b_f(_recovery([0.52, 0.51, 0.5], [0.5] * 3, 3), delta=0.05)


@pytest.mark.parametrize("end", [0.35, 0.2, 0.45])
def test_sample_b_f_overshoot_against_grid(end):
    # Deviation changes sign: no exact geometric fit, golden-section path.
    ep = _recovery([0.9, 0.6, 0.5, end], [0.5] * 4, 4)
    b = battery.sample_b_f(ep)
    grid = np.linspace(0, 1, 10001)
    best = min(battery.b_f_residual(g, ep) for g in grid)
    assert battery.b_f_residual(b, ep) <= best + 1e-12
    assert battery.b_f_residual(b, ep) <= battery.b_f_residual(0.0, ep)
    assert battery.b_f_residual(b, ep) <= battery.b_f_residual(1.0, ep)


# -- episodes and identification ---------------------------------------------


def _trace(states, requests):
    return SimpleNamespace(state=np.asarray(states, float), request=np.asarray(requests, float))


def test_extract_one_request_one_recovery():
    n = 12 + 24 + 72
    requests = np.zeros(n)
    requests[12:36] = 0.3
    states = np.full(n, 0.5)
    states[13:37] = np.linspace(0.51, 0.8, 24)
    states[37:] = 0.5 + 0.3 * 0.9 ** np.arange(1, n - 36)
    req, rec = battery.extract_episodes(_trace(states, requests), np.full(n, 0.5))
    assert len(req) == 1 and len(rec) == 1
    assert req[0].start == 12 and len(req[0].requests) == 24
    assert req[0].saturation_index == 25
    assert rec[0].start == 36


def test_extract_all_zero():
    req, rec = battery.extract_episodes(_trace(np.full(50, 0.5), np.zeros(50)), np.full(50, 0.5))
    assert req == [] and rec == []


def test_extract_saturated_request(winter_weather):
    sched = sim.RequestSchedule((sim.RequestSegment(100, 300, 1.0),))
    trace = sim.simulate(sim.SimConfig(), winter_weather, sched)
    base = sim.simulate(sim.SimConfig(), winter_weather)
    req, _ = battery.extract_episodes(trace, base.state)
    assert len(req) == 1
    assert req[0].saturation_index < len(req[0].requests) + 1


def test_identify_recovers_battery_parameters():
    params = BatteryParams(0.1, 0.07, 0.2)
    trace, f = battery_generated_trace(params)
    spaces, b_f = battery.identify([trace], f, delta=0.002)
    assert spaces.n_plus >= 10 and spaces.n_minus >= 10
    np.testing.assert_allclose(spaces.p_plus, 0.1, rtol=1e-9)
    np.testing.assert_allclose(spaces.p_minus, 0.07, rtol=1e-9)
    assert b_f == pytest.approx(0.2, rel=1e-6)


def test_identify_deterministic_on_duplicates():
    trace, f = battery_generated_trace(BatteryParams(0.12, 0.08, 0.3), seed=1)
    a = battery.identify([trace], f, delta=0.002)
    b = battery.identify([trace], f, delta=0.002)
    assert a[0] == b[0] and a[1] == b[1]


def test_identify_fails_without_both_signs():
    n = 200
    requests = np.zeros(n)
    requests[50:60] = 0.2
    states = np.full(n, 0.5)
    states[51:61] = 0.5 + 0.02 * np.arange(1, 11)
    with pytest.raises(IdentificationError):
        battery.identify([_trace(states, requests)], np.full(n, 0.5))


def test_sample_spaces_sorted_and_pairs():
    spaces = battery.SampleSpaces([0.3, 0.1, 0.2], [0.4, 0.1], [0.5])
    np.testing.assert_array_equal(spaces.p_plus, [0.1, 0.2, 0.3])
    assert spaces.n_total == 6
    pairs = spaces.pairs()
    assert pairs.shape == (6, 2)
    assert sorted(pairs[:, 0].tolist()) == [0.1, 0.1, 0.2, 0.2, 0.3, 0.3]
    assert battery.SampleSpaces.from_dict(spaces.to_dict()) == spaces
