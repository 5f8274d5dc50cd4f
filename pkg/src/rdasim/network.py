"""Freeway geometry and neighbor/leader queries.

The network is a straight mainline with an optional single-lane on-ramp
merging into the rightmost lane and an optional single-lane off-ramp
diverging from it. All positions are tracked in absolute mainline
coordinates; ramp lanes occupy their own lane codes so ordinary
same-lane leader logic applies everywhere.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

VEHICLE_LENGTH = 5.0     # m, uniform passenger-car default
SENSING_RANGE = 120.0    # m, beyond this a vehicle is in free-road mode

ZONE_MAINLINE = "mainline"
ZONE_ONRAMP = "onramp"
ZONE_OFFRAMP = "offramp"


class GeometryError(ValueError):
    """Raised when a network configuration violates a geometric invariant."""


@dataclass(frozen=True)
class RampSpec:
    """Single-lane ramp attached to the rightmost mainline lane."""
    position: float      # merge point (on-ramp) or diverge point (off-ramp), m
    length: float        # ramp length, m


@dataclass(frozen=True)
class NetworkSpec:
    """Validated freeway geometry.

    Lane codes: 0..lane_count-1 are mainline lanes (0 = rightmost),
    lane_count is the on-ramp lane, lane_count+1 the off-ramp lane.
    """
    mainline_length: float
    lane_count: int
    speed_limit: float
    onramp: Optional[RampSpec] = None
    offramp: Optional[RampSpec] = None

    @property
    def onramp_lane(self) -> int:
        return self.lane_count

    @property
    def offramp_lane(self) -> int:
        return self.lane_count + 1

    def lane_codes(self) -> list[int]:
        codes = list(range(self.lane_count))
        if self.onramp is not None:
            codes.append(self.onramp_lane)
        if self.offramp is not None:
            codes.append(self.offramp_lane)
        return codes

    def lane_start(self, lane: int) -> float:
        if lane < self.lane_count:
            return 0.0
        if lane == self.onramp_lane and self.onramp is not None:
            return self.onramp.position - self.onramp.length
        if lane == self.offramp_lane and self.offramp is not None:
            return self.offramp.position
        raise GeometryError(f"lane {lane} does not exist")

    def lane_end(self, lane: int) -> float:
        if lane < self.lane_count:
            return self.mainline_length
        if lane == self.onramp_lane and self.onramp is not None:
            return self.onramp.position
        if lane == self.offramp_lane and self.offramp is not None:
            return self.offramp.position + self.offramp.length
        raise GeometryError(f"lane {lane} does not exist")

    def zone_of(self, lane: int) -> str:
        if lane < self.lane_count:
            return ZONE_MAINLINE
        if lane == self.onramp_lane:
            return ZONE_ONRAMP
        return ZONE_OFFRAMP

    def zone_offset(self, lane: int, position: float) -> float:
        """Offset from the zone start for a given absolute position."""
        return position - self.lane_start(lane)

    def zone_lane_index(self, lane: int) -> int:
        """Lane index within the zone (ramps are single-lane, index 0)."""
        return lane if lane < self.lane_count else 0


@dataclass(frozen=True)
class LanePosition:
    """Position expressed relative to a zone start."""
    zone: str
    lane_index: int
    offset: float


def build_network(mainline_length: float,
                  lane_count: int,
                  speed_limit: float = 30.0,
                  onramp: Optional[RampSpec] = None,
                  offramp: Optional[RampSpec] = None) -> NetworkSpec:
    """Validate a geometry description and return the network spec.

    Raises GeometryError naming the violated invariant. Pure: identical
    inputs yield identical specs.
    """
    if mainline_length <= 0:
        raise GeometryError(f"mainline_length must be > 0, got {mainline_length}")
    if lane_count < 1:
        raise GeometryError(f"lane_count must be >= 1, got {lane_count}")
    if speed_limit <= 0:
        raise GeometryError(f"speed_limit must be > 0, got {speed_limit}")
    for name, ramp in (("onramp", onramp), ("offramp", offramp)):
        if ramp is None:
            continue
        if ramp.length <= 0:
            raise GeometryError(f"{name} length must be > 0, got {ramp.length}")
        if not 0 < ramp.position < mainline_length:
            raise GeometryError(
                f"{name} position {ramp.position} outside (0, {mainline_length})")
    if onramp is not None and onramp.position - onramp.length < 0:
        raise GeometryError("onramp extends upstream of the network entry")
    if offramp is not None and onramp is not None:
        if not onramp.position < offramp.position:
            raise GeometryError(
                f"merge_position {onramp.position} must precede "
                f"diverge_position {offramp.position}")
    return NetworkSpec(mainline_length=float(mainline_length),
                       lane_count=int(lane_count),
                       speed_limit=float(speed_limit),
                       onramp=onramp, offramp=offramp)


class UnknownVehicleError(KeyError):
    """Raised when a queried vehicle id is not present in the world."""


@dataclass(frozen=True)
class Leader:
    vehicle_id: int
    gap: float          # bumper-to-bumper, m
    speed: float        # m/s


class WorldView:
    """Immutable per-step snapshot answering neighbor queries.

    Holds parallel arrays of the live vehicles; safe for concurrent
    readers once constructed.
    """

    def __init__(self, ids: np.ndarray, lanes: np.ndarray,
                 positions: np.ndarray, speeds: np.ndarray,
                 vehicle_length: float = VEHICLE_LENGTH,
                 sensing_range: float = SENSING_RANGE):
        self.ids = ids
        self.lanes = lanes
        self.positions = positions
        self.speeds = speeds
        self.vehicle_length = vehicle_length
        self.sensing_range = sensing_range
        self._index = {int(v): i for i, v in enumerate(ids)}

    def index_of(self, vehicle_id: int) -> int:
        try:
            return self._index[int(vehicle_id)]
        except KeyError:
            raise UnknownVehicleError(f"vehicle {vehicle_id} not in world")


def leader_of(world: WorldView, vehicle_id: int,
              lane: Optional[int] = None) -> Optional[Leader]:
    """Nearest downstream vehicle in the queried lane.

    Returns the bumper-to-bumper gap (accounting for vehicle length) and
    the leader's speed, or None when no vehicle lies within sensing
    range ahead. `lane` defaults to the ego vehicle's own lane.
    """
    i = world.index_of(vehicle_id)
    if lane is None:
        lane = int(world.lanes[i])
    pos = world.positions[i]
    in_lane = world.lanes == lane
    ahead = in_lane & (world.positions > pos) & (world.ids != world.ids[i])
    if not np.any(ahead):
        return None
    cand = np.where(ahead)[0]
    j = cand[np.argmin(world.positions[cand])]
    gap = float(world.positions[j] - pos - world.vehicle_length)
    if gap > world.sensing_range:
        return None
    return Leader(vehicle_id=int(world.ids[j]), gap=gap,
                  speed=float(world.speeds[j]))
