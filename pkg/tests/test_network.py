import numpy as np
import pytest

from rdasim.network import (GeometryError, Leader, RampSpec, WorldView,
                            build_network, leader_of, UnknownVehicleError)


def test_paper_scale_geometry_is_valid():
    net = build_network(3000, 4, onramp=RampSpec(800, 250),
                        offramp=RampSpec(2200, 250))
    assert net.mainline_length == 3000
    assert net.lane_count == 4
    assert net.onramp_lane == 4
    assert net.offramp_lane == 5
    assert net.lane_start(net.onramp_lane) == pytest.approx(550)
    assert net.lane_end(net.offramp_lane) == pytest.approx(2450)


def test_minimal_single_lane_network():
    net = build_network(1000, 1)
    assert net.lane_codes() == [0]
    assert net.zone_of(0) == "mainline"


def test_merge_after_diverge_rejected():
    with pytest.raises(GeometryError, match="merge_position"):
        build_network(3000, 4, onramp=RampSpec(2500, 200),
                      offramp=RampSpec(500, 200))


@pytest.mark.parametrize("kwargs,match", [
    (dict(mainline_length=-5, lane_count=2), "mainline_length"),
    (dict(mainline_length=1000, lane_count=0), "lane_count"),
    (dict(mainline_length=1000, lane_count=2,
          onramp=RampSpec(300, -1)), "length"),
    (dict(mainline_length=1000, lane_count=2,
          offramp=RampSpec(1500, 100)), "position"),
])
def test_invalid_geometry_names_the_invariant(kwargs, match):
    with pytest.raises(GeometryError, match=match):
        build_network(**kwargs)


def test_build_network_is_pure():
    a = build_network(1000, 2, onramp=RampSpec(300, 150))
    b = build_network(1000, 2, onramp=RampSpec(300, 150))
    assert a == b


def _world(lanes, positions, speeds):
    n = len(positions)
    return WorldView(ids=np.arange(n), lanes=np.asarray(lanes),
                     positions=np.asarray(positions, float),
                     speeds=np.asarray(speeds, float))


def test_leader_gap_subtracts_vehicle_length():
    w = _world([0, 0], [100.0, 130.0], [20.0, 22.0])
    lead = leader_of(w, 0)
    assert lead == Leader(vehicle_id=1, gap=pytest.approx(25.0), speed=22.0)


def test_leader_absent_on_empty_lane_ahead():
    w = _world([0, 1], [100.0, 130.0], [20.0, 22.0])
    assert leader_of(w, 0) is None


def test_nearest_of_two_candidates_chosen():
    # oracle: exhaustive scan over every vehicle in the lane
    w = _world([0, 0, 0], [100.0, 160.0, 130.0], [20.0, 25.0, 22.0])
    candidates = [(p, i) for i, (l, p) in enumerate(zip(w.lanes, w.positions))
                  if l == 0 and p > 100.0]
    expected_pos, expected_id = min(candidates)
    lead = leader_of(w, 0)
    assert lead.vehicle_id == expected_id
    assert lead.gap == pytest.approx(expected_pos - 100.0 - 5.0)


def test_leader_beyond_sensing_range_absent():
    w = _world([0, 0], [100.0, 400.0], [20.0, 22.0])
    assert leader_of(w, 0) is None


def test_leader_antisymmetric():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = 8
        w = _world(rng.integers(0, 2, n),
                   rng.uniform(0, 300, n), rng.uniform(0, 30, n))
        for i in range(n):
            lead = leader_of(w, i)
            if lead is None:
                continue
            assert lead.gap >= -5.0  # bumper gap can be small, never reversed
            back = leader_of(w, lead.vehicle_id)
            assert back is None or back.vehicle_id != i


def test_unknown_vehicle_raises():
    w = _world([0], [10.0], [5.0])
    with pytest.raises(UnknownVehicleError):
        leader_of(w, 99)
