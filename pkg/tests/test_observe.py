import numpy as np
import pytest

from rdasim.attack import AttackParams
from rdasim.engine import ScenarioConfig, run_scenario
from rdasim.network import build_network
from rdasim.observe import (IncompatibleRateError, extract_traces,
                            traces_from_frame, traces_to_frame)

NET = build_network(2000, 1)


@pytest.fixture(scope="module")
def store():
    return run_scenario(ScenarioConfig(
        network=NET, duration=200.0, warmup=40.0, inflow=600, seed=11,
        acc_fraction=0.5, compromise_fraction=0.5,
        attack=AttackParams(a_attack=-0.5, t_attack=5.0,
                            mean_interarrival=30.0)))


def test_full_benign_fraction_covers_every_vehicle(store):
    traces = extract_traces(store, benign_fraction=1.0, rate=1.0, seed=0)
    assert len(traces) == store.n_vehicles


def test_zero_benign_fraction_keeps_only_compromised(store):
    traces = extract_traces(store, benign_fraction=0.0, rate=1.0, seed=0)
    assert len(traces) == len(store.compromised_ids())
    assert all(tr.truth_label == "compromised" for tr in traces)


def test_benign_sampling_is_binomial(store):
    n_benign = store.n_vehicles - len(store.compromised_ids())
    frac = 0.3
    counts = []
    for seed in range(300):
        traces = extract_traces(store, benign_fraction=frac, rate=1.0,
                                seed=seed)
        counts.append(sum(tr.truth_label == "benign" for tr in traces))
    mean = np.mean(counts)
    # binomial 99% interval for the mean of 300 draws
    sigma = np.sqrt(n_benign * frac * (1 - frac) / 300)
    assert abs(mean - n_benign * frac) < 3 * sigma + 0.5


def test_decimated_speeds_match_store_exactly(store):
    traces = extract_traces(store, benign_fraction=1.0, rate=2.0, seed=0)
    tr = traces[0]
    sl = store.vehicle_slice(tr.vehicle_id)
    t_store = store.t[sl]
    for ti, vi in zip(tr.times, tr.speeds):
        j = np.searchsorted(t_store, ti)
        assert t_store[j] == ti
        assert store.speed[sl][j] == vi
    # uniform sample interval
    assert np.allclose(np.diff(tr.times), 0.5)


def test_incompatible_rate_rejected(store):
    with pytest.raises(IncompatibleRateError):
        extract_traces(store, benign_fraction=1.0, rate=3.0, seed=0)


def test_extraction_deterministic(store):
    a = extract_traces(store, benign_fraction=0.4, rate=1.0, seed=9)
    b = extract_traces(store, benign_fraction=0.4, rate=1.0, seed=9)
    assert [tr.vehicle_id for tr in a] == [tr.vehicle_id for tr in b]


def test_noise_floor_at_zero_speed(store):
    traces = extract_traces(store, benign_fraction=1.0, rate=1.0, seed=0,
                            noise_std=2.0)
    for tr in traces:
        assert np.all(tr.speeds >= 0.0)


def test_trace_frame_round_trip(store):
    traces = extract_traces(store, benign_fraction=1.0, rate=1.0, seed=0)
    df = traces_to_frame(traces)
    assert set(df.columns) == {"vehicle_id", "truth_label", "t", "speed_mps"}
    back = traces_from_frame(df)
    assert len(back) == len(traces)
    orig = {tr.vehicle_id: tr for tr in traces}
    for tr in back:
        np.testing.assert_allclose(tr.speeds, orig[tr.vehicle_id].speeds)
        assert tr.truth_label == orig[tr.vehicle_id].truth_label
