"""Discrete-time freeway simulation engine.

Advances the world in fixed steps: inflow generation, lane changes,
car-following acceleration with the attack overlay, explicit-Euler
speed integration with a ballistic position update, route transfers,
a collision guard, outflow, and trajectory recording. A single run is
fully deterministic given its config and seed; all randomness flows
from named child streams of one master seed.
"""

import bisect
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from . import models
from .attack import AttackParams, schedule
from .models import (AccParams, IdmParams, LaneChangeContext,
                     LaneChangeParams, acc_accel, acc_free_accel, idm_accel,
                     idm_equilibrium_speed, idm_free_accel,
                     lane_change_decision)
from .network import (SENSING_RANGE, VEHICLE_LENGTH, NetworkSpec, WorldView,
                      ZONE_MAINLINE)

KIND_HUMAN, KIND_ACC, KIND_COMPROMISED = 0, 1, 2
KIND_NAMES = {KIND_HUMAN: "human", KIND_ACC: "acc",
              KIND_COMPROMISED: "compromised_acc"}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}

ROUTE_MAINLINE, ROUTE_EXIT = 0, 1

# named child streams of the master seed
_STREAM_ARRIVALS, _STREAM_ATTRS, _STREAM_ATTACK = 1, 2, 3

CSV_COLUMNS = ["vehicle_id", "kind", "t", "zone", "lane", "offset_m",
               "speed_mps", "accel_mps2", "attack_active"]


class ConfigError(ValueError):
    """Raised for an invalid scenario configuration."""


class GridlockError(RuntimeError):
    """Watchdog abort: sustained near-zero network speed."""


class MissingScoresError(ValueError):
    """Anomaly-score export requested without per-vehicle scores."""


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=key))


@dataclass(frozen=True)
class EngineParams:
    """Integrator and behavioral constants not tied to one driver model."""
    a_max: float = 2.6            # m/s^2, acceleration clamp
    a_emergency: float = 6.0      # m/s^2, deceleration clamp
    gap_min: float = 0.5          # m, gap restored by the collision guard
    vehicle_length: float = VEHICLE_LENGTH
    sensing_range: float = SENSING_RANGE
    lc_interval: float = 1.0      # s between lane-change evaluations
    entry_clearance: float = 7.0  # m of free space required to spawn
    entry_headway: float = 1.5    # s, used for the safe entry speed
    offramp_approach: float = 500.0  # m before the diverge to force right
    ramp_inflow_scale: float = 0.5   # on-ramp demand as fraction of lane inflow
    watchdog_speed: float = 0.1   # m/s mean-speed floor
    watchdog_duration: float = 300.0  # s below the floor before aborting


@dataclass
class ScenarioConfig:
    network: NetworkSpec
    duration: float
    warmup: float
    inflow: float                  # veh/hr per lane
    dt: float = 0.1
    acc_fraction: float = 0.2
    compromise_fraction: float = 0.0   # fraction of ACCs
    offramp_fraction: float = 0.1
    idm: IdmParams = field(default_factory=IdmParams)
    acc: AccParams = field(default_factory=AccParams)
    lane_change: LaneChangeParams = field(default_factory=LaneChangeParams)
    attack: AttackParams = field(default_factory=AttackParams)
    engine: EngineParams = field(default_factory=EngineParams)
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be > 0")
        if not 0 <= self.warmup < self.duration:
            raise ConfigError("need 0 <= warmup < duration")
        if self.inflow < 0:
            raise ConfigError("inflow must be >= 0")
        for name in ("acc_fraction", "compromise_fraction", "offramp_fraction"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")


class TrajectoryStore:
    """Time-indexed record of every vehicle, ground truth for all metrics.

    Samples are stored sorted by (vehicle_id, t) in parallel arrays;
    `vehicle_slice` gives one vehicle's contiguous range.
    """

    def __init__(self, network: NetworkSpec, dt: float, warmup: float,
                 duration: float,
                 veh: np.ndarray, t: np.ndarray, lane: np.ndarray,
                 pos: np.ndarray, speed: np.ndarray, accel: np.ndarray,
                 attack: np.ndarray,
                 vehicle_ids: np.ndarray, kinds: np.ndarray,
                 routes: np.ndarray, spawn_times: np.ndarray,
                 exit_times: np.ndarray, diagnostics: Optional[dict] = None):
        self.network = network
        self.dt = dt
        self.warmup = warmup
        self.duration = duration
        self.veh = veh
        self.t = t
        self.lane = lane
        self.pos = pos
        self.speed = speed
        self.accel = accel
        self.attack = attack
        self.vehicle_ids = vehicle_ids
        self.kinds = kinds
        self.routes = routes
        self.spawn_times = spawn_times
        self.exit_times = exit_times
        self.diagnostics = diagnostics or {}
        self._starts = np.searchsorted(self.veh, self.vehicle_ids, side="left")
        self._stops = np.searchsorted(self.veh, self.vehicle_ids, side="right")

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicle_ids)

    @property
    def n_samples(self) -> int:
        return len(self.t)

    def vehicle_slice(self, vehicle_id: int) -> slice:
        i = np.searchsorted(self.vehicle_ids, vehicle_id)
        if i >= len(self.vehicle_ids) or self.vehicle_ids[i] != vehicle_id:
            raise KeyError(f"vehicle {vehicle_id} not in store")
        return slice(int(self._starts[i]), int(self._stops[i]))

    def kind_of(self, vehicle_id: int) -> str:
        i = np.searchsorted(self.vehicle_ids, vehicle_id)
        return KIND_NAMES[int(self.kinds[i])]

    def compromised_ids(self) -> np.ndarray:
        return self.vehicle_ids[self.kinds == KIND_COMPROMISED]

    def to_frame(self) -> pd.DataFrame:
        code_list = self.network.lane_codes()
        zone_map = {c: self.network.zone_of(c) for c in code_list}
        idx_map = {c: self.network.zone_lane_index(c) for c in code_list}
        start_map = {c: self.network.lane_start(c) for c in code_list}
        lane_arr = self.lane.astype(int)
        zone_col = np.array([zone_map[c] for c in lane_arr]) \
            if len(lane_arr) else np.empty(0, dtype=object)
        lane_col = np.array([idx_map[c] for c in lane_arr], dtype=int)
        offset_col = self.pos - (np.array([start_map[c] for c in lane_arr])
                                 if len(lane_arr) else 0.0)
        kind_idx = np.searchsorted(self.vehicle_ids, self.veh)
        kind_col = np.array([KIND_NAMES[k] for k in self.kinds])[kind_idx] \
            if len(self.veh) else np.empty(0, dtype=object)
        return pd.DataFrame({
            "vehicle_id": self.veh,
            "kind": kind_col,
            "t": self.t,
            "zone": zone_col,
            "lane": lane_col,
            "offset_m": offset_col,
            "speed_mps": self.speed,
            "accel_mps2": self.accel,
            "attack_active": self.attack.astype(int),
        })

    def to_csv(self, path) -> None:
        """Write the store; columns and formatting are fixed so reruns
        with the same seed produce byte-identical files."""
        df = self.to_frame()
        for col, fmt in (("t", "%.3f"), ("offset_m", "%.4f"),
                         ("speed_mps", "%.6f"), ("accel_mps2", "%.6f")):
            df[col] = [fmt % v for v in df[col]]
        df.to_csv(path, index=False, lineterminator="\n")


def store_from_csv(path, network: NetworkSpec, dt: float, warmup: float,
                   duration: float) -> TrajectoryStore:
    """Rebuild a TrajectoryStore from its CSV serialization."""
    df = pd.read_csv(path)
    lane_code = np.where(df["zone"] == ZONE_MAINLINE, df["lane"],
                         np.where(df["zone"] == "onramp",
                                  network.onramp_lane, network.offramp_lane))
    starts = np.array([network.lane_start(int(c)) for c in lane_code])
    veh = df["vehicle_id"].to_numpy()
    order = np.lexsort((df["t"].to_numpy(), veh))
    veh = veh[order]
    vehicle_ids, first = np.unique(veh, return_index=True)
    kinds = np.array([KIND_CODES[k] for k in
                      df["kind"].to_numpy()[order][first]], dtype=np.int8)
    t = df["t"].to_numpy()[order]
    spawn = t[first]
    stops = np.searchsorted(veh, vehicle_ids, side="right")
    exit_t = np.where(t[stops - 1] + 1.5 * dt < duration,
                      t[stops - 1] + dt, np.nan)
    return TrajectoryStore(
        network=network, dt=dt, warmup=warmup, duration=duration,
        veh=veh, t=t, lane=np.asarray(lane_code)[order].astype(np.int8),
        pos=(df["offset_m"].to_numpy() + starts)[order],
        speed=df["speed_mps"].to_numpy()[order],
        accel=df["accel_mps2"].to_numpy()[order],
        attack=df["attack_active"].to_numpy().astype(bool)[order],
        vehicle_ids=vehicle_ids, kinds=kinds,
        routes=np.zeros(len(vehicle_ids), dtype=np.int8),
        spawn_times=spawn, exit_times=exit_t)


@dataclass
class _Arrival:
    time: float
    lane: int
    kind: int
    route: int
    vid: int


class Simulation:
    """Mutable world state plus the per-step update."""

    def __init__(self, config: ScenarioConfig):
        self.cfg = config
        self.net = config.network
        self.ep = config.engine
        self.t = 0.0
        self.step_index = 0
        self._lc_every = max(1, int(round(self.ep.lc_interval / config.dt)))

        # vehicle columns
        self.ids = np.empty(0, dtype=np.int64)
        self.kind = np.empty(0, dtype=np.int8)
        self.route = np.empty(0, dtype=np.int8)
        self.lane = np.empty(0, dtype=np.int8)
        self.pos = np.empty(0)
        self.speed = np.empty(0)
        self.accel = np.empty(0)
        self.last_lc = np.empty(0)
        self.attack_on = np.empty(0, dtype=bool)
        self.attack_windows: dict[int, np.ndarray] = {}
        self.attack_ptr: dict[int, int] = {}

        self._arrivals = self._generate_arrivals()
        self._next_arrival = 0
        self._pending: list[_Arrival] = []

        # per-vehicle metadata accumulated over the run
        self.meta_kind: dict[int, int] = {}
        self.meta_route: dict[int, int] = {}
        self.meta_spawn: dict[int, float] = {}
        self.meta_exit: dict[int, float] = {}

        self._rec: list[tuple] = []
        self._low_speed_time = 0.0
        self.guard_events = 0
        self.missed_exits = 0

    # ------------------------------------------------------------------
    # inflow
    def _entry_lanes(self) -> list[tuple[int, float]]:
        lanes = [(l, 1.0) for l in range(self.net.lane_count)]
        if self.net.onramp is not None:
            lanes.append((self.net.onramp_lane, self.ep.ramp_inflow_scale))
        return lanes

    def _generate_arrivals(self) -> list[_Arrival]:
        cfg = self.cfg
        events = []
        for lane, scale in self._entry_lanes():
            rate = cfg.inflow * scale / 3600.0
            if rate <= 0:
                continue
            rng = _rng(cfg.seed, _STREAM_ARRIVALS, lane)
            t = 0.0
            while True:
                t += rng.exponential(1.0 / rate)
                if t >= cfg.duration:
                    break
                events.append((t, lane))
        events.sort()
        attrs = _rng(cfg.seed, _STREAM_ATTRS)
        arrivals = []
        for vid, (t, lane) in enumerate(events):
            u_kind, u_comp, u_route = attrs.random(3)
            kind = KIND_ACC if u_kind < cfg.acc_fraction else KIND_HUMAN
            if kind == KIND_ACC and u_comp < cfg.compromise_fraction:
                kind = KIND_COMPROMISED
            route = ROUTE_EXIT if (u_route < cfg.offramp_fraction
                                   and self.net.offramp is not None
                                   ) else ROUTE_MAINLINE
            arrivals.append(_Arrival(time=t, lane=lane, kind=kind,
                                     route=route, vid=vid))
        return arrivals

    def _try_spawn(self, arr: _Arrival, vid: int) -> bool:
        cfg, ep = self.cfg, self.ep
        p0 = self.net.lane_start(arr.lane)
        in_lane = self.lane == arr.lane
        speed_cap = min(self.net.speed_limit, cfg.acc.v_set) \
            if arr.kind != KIND_HUMAN else self.net.speed_limit
        if np.any(in_lane):
            lane_pos = self.pos[in_lane]
            j = np.argmin(lane_pos)
            gap = lane_pos[j] - p0 - ep.vehicle_length
            if gap < ep.entry_clearance:
                return False
            v_lead = self.speed[in_lane][j]
            if gap <= ep.sensing_range:
                safe = max(0.0, v_lead + (gap - cfg.idm.s0) / ep.entry_headway)
                v_entry = min(speed_cap, safe)
            else:
                v_entry = speed_cap
        else:
            v_entry = speed_cap

        self.ids = np.append(self.ids, vid)
        self.kind = np.append(self.kind, arr.kind)
        self.route = np.append(self.route, arr.route)
        self.lane = np.append(self.lane, arr.lane)
        self.pos = np.append(self.pos, p0)
        self.speed = np.append(self.speed, v_entry)
        self.accel = np.append(self.accel, 0.0)
        self.last_lc = np.append(self.last_lc, self.t)
        self.attack_on = np.append(self.attack_on, False)
        self.meta_kind[vid] = arr.kind
        self.meta_route[vid] = arr.route
        self.meta_spawn[vid] = self.t
        if arr.kind == KIND_COMPROMISED:
            first_allowed = max(self.cfg.warmup, self.t)
            if first_allowed < cfg.duration:
                starts = schedule(
                    np.random.SeedSequence(entropy=cfg.seed,
                                           spawn_key=(_STREAM_ATTACK, vid)),
                    cfg.attack, cfg.duration, first_allowed)
            else:
                starts = np.empty(0)
            self.attack_windows[vid] = np.column_stack(
                [starts, starts + cfg.attack.t_attack]) \
                if len(starts) else np.empty((0, 2))
            self.attack_ptr[vid] = 0
        return True

    def _spawn_step(self):
        while (self._next_arrival < len(self._arrivals)
               and self._arrivals[self._next_arrival].time <= self.t):
            self._pending.append(self._arrivals[self._next_arrival])
            self._next_arrival += 1
        if not self._pending:
            return
        # spawn in arrival order; blocked arrivals wait for space
        still_blocked = []
        for arr in self._pending:
            if not self._try_spawn(arr, arr.vid):
                still_blocked.append(arr)
        self._pending = still_blocked

    # ------------------------------------------------------------------
    # attack phase
    def _attack_step(self):
        comp = np.where(self.kind == KIND_COMPROMISED)[0]
        for i in comp:
            vid = int(self.ids[i])
            windows = self.attack_windows[vid]
            ptr = self.attack_ptr[vid]
            while ptr < len(windows) and self.t >= windows[ptr, 1]:
                ptr += 1
            self.attack_ptr[vid] = ptr
            self.attack_on[i] = (ptr < len(windows)
                                 and windows[ptr, 0] <= self.t < windows[ptr, 1])

    # ------------------------------------------------------------------
    # car following
    def _cfm_accels(self) -> np.ndarray:
        cfg, ep = self.cfg, self.ep
        n = len(self.ids)
        if n == 0:
            return np.empty(0)
        order = np.lexsort((self.pos, self.lane))
        gap = np.full(n, np.inf)
        lead_speed = np.zeros(n)
        lanes_sorted = self.lane[order]
        pos_sorted = self.pos[order]
        same_lane = np.empty(n, dtype=bool)
        same_lane[:-1] = lanes_sorted[1:] == lanes_sorted[:-1]
        same_lane[-1] = False
        idx = order[:-1][same_lane[:-1]]
        nxt = order[1:][same_lane[:-1]]
        gap[idx] = self.pos[nxt] - self.pos[idx] - ep.vehicle_length
        lead_speed[idx] = self.speed[nxt]

        # on-ramp front vehicles brake for the merge-point wall
        if self.net.onramp is not None:
            on = self.lane == self.net.onramp_lane
            wall_gap = self.net.onramp.position - self.pos
            use_wall = on & (wall_gap < gap)
            gap = np.where(use_wall, wall_gap, gap)
            lead_speed = np.where(use_wall, 0.0, lead_speed)

        has_leader = gap <= ep.sensing_range
        gap_safe = np.maximum(gap, 0.01)
        v = self.speed
        a = np.empty(n)

        human = self.kind == KIND_HUMAN
        if np.any(human):
            dv = v - lead_speed
            a_follow = idm_accel(cfg.idm, gap_safe, np.maximum(v, 0.0), dv)
            a_free = idm_free_accel(cfg.idm, v)
            a[human] = np.where(has_leader[human], a_follow[human],
                                a_free[human])
        auto = ~human
        if np.any(auto):
            dv_acc = lead_speed - v
            a_follow = acc_accel(cfg.acc, gap_safe, v, dv_acc)
            a_free = acc_free_accel(cfg.acc, v)
            base = np.where(has_leader, a_follow, a_free)
            active = self.attack_on & (self.kind == KIND_COMPROMISED)
            overlay = np.where(v <= 0.0, 0.0,
                               np.minimum(cfg.attack.a_attack, base))
            a[auto] = np.where(active[auto], overlay[auto], base[auto])
            # set-speed cap: commanded speed never exceeds v_set after the step
            cap = (cfg.acc.v_set - v) / cfg.dt
            a[auto] = np.minimum(a[auto], cap[auto])
        return np.clip(a, -ep.a_emergency, ep.a_max)

    # ------------------------------------------------------------------
    # lane changes
    def _accel_of(self, i: int, gap: float, lead_v: Optional[float]) -> float:
        cfg = self.cfg
        v = self.speed[i]
        if self.kind[i] == KIND_HUMAN:
            if lead_v is None:
                return float(idm_free_accel(cfg.idm, v))
            return float(idm_accel(cfg.idm, max(gap, 0.01), max(v, 0.0),
                                   v - lead_v))
        if lead_v is None:
            return float(acc_free_accel(cfg.acc, v))
        return float(acc_accel(cfg.acc, max(gap, 0.01), v, lead_v - v))

    def _neighbors(self, lists: dict, lane: int, pos: float):
        """(leader, follower) as (gap, speed, index) triples or None."""
        entry = lists.get(lane)
        if entry is None:
            return None, None
        positions, rows = entry
        j = bisect.bisect_right(positions, pos)
        leader = follower = None
        if j < len(positions):
            k = rows[j]
            leader = (self.pos[k] - pos - self.ep.vehicle_length,
                      self.speed[k], k)
        if j > 0:
            k = rows[j - 1]
            follower = (pos - self.pos[k] - self.ep.vehicle_length,
                        self.speed[k], k)
        return leader, follower

    def _adjacent_lanes(self, lane: int) -> tuple[Optional[int], Optional[int]]:
        """(left, right) lane codes for discretionary changes."""
        if lane >= self.net.lane_count:
            return None, None          # ramp lanes: mandatory moves only
        left = lane + 1 if lane + 1 < self.net.lane_count else None
        right = lane - 1 if lane >= 1 else None
        return left, right

    def _lc_step(self):
        cfg, ep = self.cfg, self.ep
        n = len(self.ids)
        if n < 2:
            return
        order = np.lexsort((self.pos, self.lane))
        lists: dict[int, tuple[list, list]] = {}
        for k in order:
            lane = int(self.lane[k])
            if lane not in lists:
                lists[lane] = ([], [])
            lists[lane][0].append(float(self.pos[k]))
            lists[lane][1].append(int(k))

        eligible = np.where(self.t - self.last_lc >= cfg.lane_change.cooldown)[0]
        diverge = self.net.offramp.position if self.net.offramp else None

        for i in sorted(eligible, key=lambda k: int(self.ids[k])):
            lane = int(self.lane[i])
            pos = float(self.pos[i])
            mandatory = None
            if self.net.onramp is not None and lane == self.net.onramp_lane:
                mandatory = models.LEFT
                target_left, target_right = 0, None
            else:
                if lane >= self.net.lane_count:
                    continue            # off-ramp: no changes
                target_left, target_right = self._adjacent_lanes(lane)
                if (diverge is not None and self.route[i] == ROUTE_EXIT
                        and 0 < lane
                        and pos < diverge
                        and diverge - pos <= ep.offramp_approach):
                    mandatory = models.RIGHT
                    if target_right is None:
                        continue
            if mandatory is None and target_left is None and target_right is None:
                continue

            own_lead, _ = self._neighbors(lists, lane, pos)
            # ignore self in own-lane leader query
            if own_lead is not None and own_lead[2] == i:
                own_lead = None
            accel_here = self._accel_of(
                i, own_lead[0], own_lead[1]) if own_lead is not None and \
                own_lead[0] <= ep.sensing_range else self._accel_of(i, 0, None)

            def side_eval(target):
                if target is None:
                    return None, None, None
                lead, fol = self._neighbors(lists, target, pos)
                if (lead is not None and lead[0] <= 0) or \
                        (fol is not None and fol[0] <= 0):
                    return None, None, None
                a_new = self._accel_of(i, lead[0], lead[1]) \
                    if lead is not None and lead[0] <= ep.sensing_range \
                    else self._accel_of(i, 0, None)
                fol_after = fol_before = None
                if fol is not None:
                    k = fol[2]
                    fol_after = self._accel_of(k, fol[0], self.speed[i])
                    if lead is not None:
                        g0 = lead[0] + fol[0] + ep.vehicle_length
                        fol_before = self._accel_of(k, g0, lead[1])
                    else:
                        fol_before = self._accel_of(k, 0, None)
                return a_new, fol_after, fol_before

            a_l, fol_l_after, fol_l_before = side_eval(target_left)
            a_r, fol_r_after, fol_r_before = side_eval(target_right)
            ctx = LaneChangeContext(
                accel_here=accel_here,
                accel_left=a_l, follower_left_after=fol_l_after,
                follower_left_before=fol_l_before,
                accel_right=a_r, follower_right_after=fol_r_after,
                follower_right_before=fol_r_before,
                mandatory=mandatory)
            decision = lane_change_decision(ctx, cfg.lane_change)
            if decision == models.KEEP:
                continue
            target = target_left if decision == models.LEFT else target_right
            # commit: move between the per-lane lists so later deciders
            # see the updated occupancy
            src = lists[int(self.lane[i])]
            j = bisect.bisect_left(src[0], pos)
            while src[1][j] != i:
                j += 1
            src[0].pop(j)
            src[1].pop(j)
            if target not in lists:
                lists[target] = ([], [])
            dst = lists[target]
            j = bisect.bisect_right(dst[0], pos)
            # refuse the commit if the gap closed since the snapshot
            ok = True
            if j < len(dst[0]) and dst[0][j] - pos <= ep.vehicle_length:
                ok = False
            if j > 0 and pos - dst[0][j - 1] <= ep.vehicle_length:
                ok = False
            if not ok:
                j_back = bisect.bisect_right(src[0], pos)
                src[0].insert(j_back, pos)
                src[1].insert(j_back, int(i))
                continue
            dst[0].insert(j, pos)
            dst[1].insert(j, int(i))
            self.lane[i] = target
            self.last_lc[i] = self.t

    # ------------------------------------------------------------------
    def _integrate(self, a: np.ndarray):
        cfg, ep = self.cfg, self.ep
        dt = cfg.dt
        v = self.speed
        v_new = v + a * dt
        stopping = v_new < 0.0
        v_new = np.maximum(v_new, 0.0)
        dx = v * dt + 0.5 * a * dt * dt
        with np.errstate(divide="ignore", invalid="ignore"):
            dx_stop = np.where(a < 0, -v * v / (2.0 * a), 0.0)
        dx = np.where(stopping, dx_stop, dx)
        dx = np.maximum(dx, 0.0)
        old_pos = self.pos.copy()
        pos_new = self.pos + dx

        # route transfers at the diverge point
        if self.net.offramp is not None:
            d = self.net.offramp.position
            crossing = (old_pos <= d) & (pos_new > d)
            take_exit = crossing & (self.route == ROUTE_EXIT) & (self.lane == 0)
            self.lane[take_exit] = self.net.offramp_lane
            missed = crossing & (self.route == ROUTE_EXIT) & (self.lane > 0) \
                & (self.lane < self.net.lane_count)
            self.missed_exits += int(np.count_nonzero(missed))
            self.route[missed] = ROUTE_MAINLINE

        # on-ramp vehicles cannot overshoot the merge point
        if self.net.onramp is not None:
            on = self.lane == self.net.onramp_lane
            wall = self.net.onramp.position
            overshoot = on & (pos_new > wall)
            pos_new = np.where(overshoot, wall, pos_new)
            v_new = np.where(overshoot, 0.0, v_new)

        # collision guard, per lane front-to-back in pre-step order
        order = np.lexsort((old_pos, self.lane))
        lanes_sorted = self.lane[order]
        c = ep.vehicle_length + ep.gap_min
        pn = pos_new[order]
        boundaries = np.flatnonzero(np.diff(lanes_sorted)) + 1
        segments = np.split(np.arange(len(order)), boundaries)
        for seg in segments:
            if len(seg) < 2:
                continue
            # A_i = min(P_i, A_{i+1} - c) solved by a reverse running
            # minimum on the shifted coordinates D_i = P_i - i*c
            shift = np.arange(len(seg)) * c
            allowed = np.minimum.accumulate((pn[seg] - shift)[::-1])[::-1] \
                + shift
            viol = allowed < pn[seg] - 1e-12
            if np.any(viol):
                self.guard_events += int(np.count_nonzero(viol))
                rows = order[seg]
                pos_new[rows] = allowed
                v_adj = np.maximum(0.0, (allowed - old_pos[rows]) / dt)
                v_new[rows] = np.where(viol, np.minimum(v_new[rows], v_adj),
                                       v_new[rows])

        self.pos = pos_new
        self.speed = v_new
        self.accel = a

    def _remove_exited(self):
        n = len(self.ids)
        if n == 0:
            return
        gone = np.zeros(n, dtype=bool)
        gone |= (self.lane < self.net.lane_count) \
            & (self.pos > self.net.mainline_length)
        if self.net.offramp is not None:
            gone |= (self.lane == self.net.offramp_lane) \
                & (self.pos > self.net.lane_end(self.net.offramp_lane))
        if not np.any(gone):
            return
        t_exit = self.t + self.cfg.dt
        for vid in self.ids[gone]:
            self.meta_exit[int(vid)] = t_exit
            self.attack_windows.pop(int(vid), None)
            self.attack_ptr.pop(int(vid), None)
        keep = ~gone
        self.ids = self.ids[keep]
        self.kind = self.kind[keep]
        self.route = self.route[keep]
        self.lane = self.lane[keep]
        self.pos = self.pos[keep]
        self.speed = self.speed[keep]
        self.accel = self.accel[keep]
        self.last_lc = self.last_lc[keep]
        self.attack_on = self.attack_on[keep]

    def _record(self, a: np.ndarray):
        if len(self.ids) == 0:
            return
        self._rec.append((self.ids.copy(), np.full(len(self.ids), self.t),
                          self.lane.copy(), self.pos.copy(),
                          self.speed.copy(), a.copy(),
                          self.attack_on.copy()))

    def step(self):
        """Advance the world by one dt."""
        self._spawn_step()
        self._attack_step()
        if self.step_index % self._lc_every == 0:
            self._lc_step()
        a = self._cfm_accels()
        self._record(a)
        self._integrate(a)
        self._remove_exited()
        if len(self.ids) > 0 and float(np.mean(self.speed)) < self.ep.watchdog_speed:
            self._low_speed_time += self.cfg.dt
            if self._low_speed_time > self.ep.watchdog_duration:
                raise GridlockError(
                    f"mean network speed below {self.ep.watchdog_speed} m/s "
                    f"for more than {self.ep.watchdog_duration} s at t={self.t:.1f}")
        else:
            self._low_speed_time = 0.0
        self.step_index += 1
        self.t = self.step_index * self.cfg.dt

    def world_view(self) -> WorldView:
        return WorldView(self.ids.copy(), self.lane.copy(), self.pos.copy(),
                         self.speed.copy(),
                         vehicle_length=self.ep.vehicle_length,
                         sensing_range=self.ep.sensing_range)

    def finish(self) -> TrajectoryStore:
        if self._rec:
            veh = np.concatenate([r[0] for r in self._rec])
            t = np.concatenate([r[1] for r in self._rec])
            lane = np.concatenate([r[2] for r in self._rec])
            pos = np.concatenate([r[3] for r in self._rec])
            speed = np.concatenate([r[4] for r in self._rec])
            accel = np.concatenate([r[5] for r in self._rec])
            atk = np.concatenate([r[6] for r in self._rec])
        else:
            veh = np.empty(0, dtype=np.int64)
            t = pos = speed = accel = np.empty(0)
            lane = np.empty(0, dtype=np.int8)
            atk = np.empty(0, dtype=bool)
        order = np.lexsort((t, veh))
        ids = np.array(sorted(self.meta_spawn), dtype=np.int64)
        exit_times = np.array([self.meta_exit.get(int(v), np.nan) for v in ids])
        return TrajectoryStore(
            network=self.net, dt=self.cfg.dt, warmup=self.cfg.warmup,
            duration=self.cfg.duration,
            veh=veh[order], t=t[order], lane=lane[order], pos=pos[order],
            speed=speed[order], accel=accel[order], attack=atk[order],
            vehicle_ids=ids,
            kinds=np.array([self.meta_kind[int(v)] for v in ids],
                           dtype=np.int8),
            routes=np.array([self.meta_route[int(v)] for v in ids],
                            dtype=np.int8),
            spawn_times=np.array([self.meta_spawn[int(v)] for v in ids]),
            exit_times=exit_times,
            diagnostics={"collision_guard_events": self.guard_events,
                         "missed_exits": self.missed_exits,
                         "blocked_arrivals": len(self._pending)})


def run_scenario(config: ScenarioConfig) -> TrajectoryStore:
    """Seeded end-to-end run; identical config and seed give an
    identical store."""
    sim = Simulation(config)
    n_steps = int(round(config.duration / config.dt))
    for _ in range(n_steps):
        sim.step()
    return sim.finish()


# ----------------------------------------------------------------------
# single-lane ring harness used for wave phenomenology tests
@dataclass
class RingResult:
    times: np.ndarray       # (n_samples,)
    positions: np.ndarray   # (n_samples, n_vehicles), wrapped to the ring
    speeds: np.ndarray      # (n_samples, n_vehicles)
    ring_length: float
    v_eq: float
    perturb_index: int


def run_ring(idm: IdmParams, n_vehicles: int, spacing: float,
             duration: float, dt: float = 0.1,
             perturb_time: float = 30.0, perturb_decel: float = 1.0,
             perturb_duration: float = 10.0,
             perturb_index: Optional[int] = None,
             vehicle_length: float = VEHICLE_LENGTH,
             a_max: float = 2.6, a_emergency: float = 6.0) -> RingResult:
    """Closed single-lane ring of identical IDM vehicles.

    Vehicles start at their equilibrium speed for the given spacing; one
    scripted vehicle brakes at perturb_decel for perturb_duration
    seconds, then resumes normal car following. Deterministic; no noise.
    """
    ring = n_vehicles * spacing
    gap_eq = spacing - vehicle_length
    v_eq = idm_equilibrium_speed(idm, gap_eq)
    if perturb_index is None:
        perturb_index = (3 * n_vehicles) // 4
    pos = np.arange(n_vehicles) * spacing
    v = np.full(n_vehicles, v_eq)
    n_steps = int(round(duration / dt))
    times = np.arange(n_steps + 1) * dt
    positions = np.empty((n_steps + 1, n_vehicles))
    speeds = np.empty((n_steps + 1, n_vehicles))
    positions[0] = pos
    speeds[0] = v
    for k in range(n_steps):
        t = k * dt
        gap = (np.roll(pos, -1) - pos) % ring - vehicle_length
        dv = v - np.roll(v, -1)
        a = idm_accel(idm, np.maximum(gap, 0.01), np.maximum(v, 0.0), dv)
        if perturb_time <= t < perturb_time + perturb_duration:
            a[perturb_index] = min(a[perturb_index], -perturb_decel)
        a = np.clip(a, -a_emergency, a_max)
        v_new = np.maximum(v + a * dt, 0.0)
        stopping = v + a * dt < 0.0
        dx = v * dt + 0.5 * a * dt * dt
        with np.errstate(divide="ignore", invalid="ignore"):
            dx_stop = np.where(a < 0, -v * v / (2.0 * a), 0.0)
        dx = np.maximum(np.where(stopping, dx_stop, dx), 0.0)
        pos = (pos + dx) % ring
        v = v_new
        positions[k + 1] = pos
        speeds[k + 1] = v
    return RingResult(times=times, positions=positions, speeds=speeds,
                      ring_length=ring, v_eq=v_eq,
                      perturb_index=perturb_index)


# ----------------------------------------------------------------------
def export_spacetime(store: TrajectoryStore, channel: str = "speed",
                     scores: Optional[dict] = None) -> pd.DataFrame:
    """Tabular space-time dataset for scatter plotting.

    channel "speed" uses recorded speeds; "anomaly_score" requires
    `scores`, a mapping vehicle_id -> (times, values) that is held
    piecewise-constant between samples. Vehicles missing from `scores`
    are omitted from the anomaly export.
    """
    if channel not in ("speed", "anomaly_score"):
        raise ValueError(f"unknown channel {channel!r}")
    if channel == "speed":
        value = store.speed
        mask = np.ones(len(store.t), dtype=bool)
    else:
        if scores is None:
            raise MissingScoresError(
                "anomaly_score channel requires per-vehicle scores")
        value = np.empty(len(store.t))
        mask = np.zeros(len(store.t), dtype=bool)
        for vid in store.vehicle_ids:
            if int(vid) not in scores:
                continue
            sl = store.vehicle_slice(int(vid))
            s_t, s_v = scores[int(vid)]
            idx = np.clip(np.searchsorted(s_t, store.t[sl], side="right") - 1,
                          0, len(s_v) - 1)
            value[sl] = np.asarray(s_v)[idx]
            mask[sl] = True
    return pd.DataFrame({
        "vehicle_id": store.veh[mask],
        "t": store.t[mask],
        "position_m": store.pos[mask],
        "lane": store.lane[mask].astype(int),
        "value": value[mask],
    })
