"""Car-following models and lane-change logic.

Humans follow the Intelligent Driver Model (Treiber, Hennecke and
Helbing, Phys. Rev. E 62, 2000). Adaptive cruise control is the linear
gap-and-speed-difference feedback law ubiquitous in the ACC calibration
literature. Lane changing uses a MOBIL-style incentive plus safety
criterion with a mandatory override for routed exits and ramp merges.

Sign conventions (they differ between the two model families and are
easy to get wrong):
  - idm_accel takes dv = v_ego - v_leader (positive while closing);
  - acc_accel takes dv = v_leader - v_ego (negative while closing).
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IdmParams:
    """IDM parameters; defaults are the canonical published values."""
    a: float = 1.3        # max acceleration, m/s^2
    b: float = 2.0        # comfortable deceleration, m/s^2
    delta: float = 4.0    # free-flow exponent
    v0: float = 30.0      # desired speed, m/s
    s0: float = 2.0       # jam spacing, m
    T: float = 1.5        # time headway, s

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0 or self.v0 <= 0 or self.s0 <= 0:
            raise ValueError("IDM a, b, v0, s0 must be positive")
        if self.T < 0 or self.delta <= 0:
            raise ValueError("IDM requires T >= 0 and delta > 0")


@dataclass(frozen=True)
class AccParams:
    """Linear ACC gains; defaults sit inside the locally stable region."""
    k1: float = 0.1       # gap-error gain, 1/s^2
    k2: float = 0.5       # speed-difference gain, 1/s
    th: float = 1.5       # desired time gap, s
    v_set: float = 30.0   # set speed, m/s
    free_gain: float = 0.4  # free-road speed-tracking gain, 1/s

    def __post_init__(self):
        if min(self.k1, self.k2, self.th, self.v_set, self.free_gain) <= 0:
            raise ValueError("ACC parameters must all be positive")


@dataclass(frozen=True)
class LaneChangeParams:
    politeness: float = 0.3
    incentive_threshold: float = 0.2   # m/s^2
    safe_decel: float = 3.0            # max braking imposed on new follower, m/s^2
    cooldown: float = 5.0              # s between changes by one vehicle

    def __post_init__(self):
        if self.politeness < 0 or self.cooldown < 0:
            raise ValueError("politeness and cooldown must be >= 0")
        if self.incentive_threshold <= 0 or self.safe_decel <= 0:
            raise ValueError("incentive_threshold and safe_decel must be > 0")


def desired_gap(p: IdmParams, v, dv):
    """IDM desired gap s*(v, dv) = s0 + v*T + max(0, v*dv) / (2*sqrt(a*b))."""
    return p.s0 + v * p.T + np.maximum(0.0, v * dv) / (2.0 * np.sqrt(p.a * p.b))


def idm_accel(p: IdmParams, s, v, dv):
    """IDM acceleration. dv = v_ego - v_leader.

    Accepts scalars or aligned numpy arrays. Raises on nonpositive gaps;
    the caller is expected to clamp or flag a collision first.
    """
    if np.any(np.asarray(s) <= 0):
        raise ValueError("idm_accel requires gap s > 0")
    return p.a * (1.0 - (v / p.v0) ** p.delta - (desired_gap(p, v, dv) / s) ** 2)


def idm_free_accel(p: IdmParams, v):
    """IDM with no leader in sensing range (gap term dropped)."""
    return p.a * (1.0 - (v / p.v0) ** p.delta)


def idm_equilibrium_gap(p: IdmParams, v_eq: float) -> float:
    """Gap at which idm_accel(s, v_eq, 0) = 0, for v_eq in (0, v0)."""
    if not 0 < v_eq < p.v0:
        raise ValueError("equilibrium speed must lie in (0, v0)")
    return desired_gap(p, v_eq, 0.0) / np.sqrt(1.0 - (v_eq / p.v0) ** p.delta)


def idm_equilibrium_speed(p: IdmParams, gap: float,
                          tol: float = 1e-12) -> float:
    """Speed at which a given gap is the IDM equilibrium (bisection)."""
    lo, hi = 0.0, p.v0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= 0 or idm_equilibrium_gap(p, mid) < gap:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def acc_accel(p: AccParams, s, v, dv):
    """Linear ACC acceleration k1*(s - th*v) + k2*dv. dv = v_leader - v_ego.

    The set-speed cap is applied by the integrator (commanded speed never
    exceeds v_set after integration), not inside this law.
    """
    return p.k1 * (s - p.th * v) + p.k2 * dv


def acc_free_accel(p: AccParams, v):
    """Speed tracking toward the set speed when no leader is sensed."""
    return p.free_gain * (p.v_set - v)


KEEP, LEFT, RIGHT = "keep", "left", "right"


@dataclass(frozen=True)
class LaneChangeContext:
    """Quantities a lane-change decision needs, measured on one snapshot.

    Accelerations are hypothetical CFM evaluations: `accel_here` if the
    vehicle stays put, `accel_left`/`accel_right` if it moved over now,
    and the prospective new follower's acceleration before/after. A side
    set to None means no adjacent lane exists there. `mandatory` forces
    a direction for routing (off-ramp approach, on-ramp merge).
    """
    accel_here: float
    accel_left: float | None = None
    follower_left_after: float | None = None
    follower_left_before: float | None = None
    accel_right: float | None = None
    follower_right_after: float | None = None
    follower_right_before: float | None = None
    mandatory: str | None = None   # LEFT / RIGHT / None


def _side_ok(accel_new, follower_after, safe_decel):
    if accel_new is None:
        return False
    if accel_new < -safe_decel:
        return False
    if follower_after is not None and follower_after < -safe_decel:
        return False
    return True


def _incentive(ctx: LaneChangeContext, accel_new, fol_after, fol_before,
               p: LaneChangeParams) -> float:
    gain = accel_new - ctx.accel_here
    if fol_after is not None and fol_before is not None:
        gain += p.politeness * (fol_after - fol_before)
    return gain


def lane_change_decision(ctx: LaneChangeContext,
                         p: LaneChangeParams) -> str:
    """MOBIL-style decision with mandatory-route override.

    Change when incentive (own gain plus politeness-weighted follower
    change) exceeds the threshold and the new follower is not forced to
    brake harder than safe_decel. Mandatory directions skip the
    incentive but never the safety check. Ties break toward keep, then
    right.
    """
    if ctx.mandatory == LEFT:
        return LEFT if _side_ok(ctx.accel_left, ctx.follower_left_after,
                                p.safe_decel) else KEEP
    if ctx.mandatory == RIGHT:
        return RIGHT if _side_ok(ctx.accel_right, ctx.follower_right_after,
                                 p.safe_decel) else KEEP

    left_ok = _side_ok(ctx.accel_left, ctx.follower_left_after, p.safe_decel)
    right_ok = _side_ok(ctx.accel_right, ctx.follower_right_after, p.safe_decel)
    left_gain = (_incentive(ctx, ctx.accel_left, ctx.follower_left_after,
                            ctx.follower_left_before, p)
                 if left_ok else -np.inf)
    right_gain = (_incentive(ctx, ctx.accel_right, ctx.follower_right_after,
                             ctx.follower_right_before, p)
                  if right_ok else -np.inf)

    best = max(left_gain, right_gain)
    if best <= p.incentive_threshold:
        return KEEP
    return RIGHT if right_gain >= left_gain else LEFT
