"""Compromised-ACC controller and the random deceleration attack scheduler.

A compromised vehicle drives exactly like a benign ACC while dormant.
When an attack activates it decelerates at min(a_attack, f_acc) until
the attack window ends or the vehicle stops; a stopped vehicle holds
still rather than reversing. Activation times follow an exponential
inter-arrival process per vehicle, seeded independently, with the next
dormant interval sampled from the end of the previous attack so windows
never overlap. No attack may begin before the warmup ends.
"""

from dataclasses import dataclass

import numpy as np

from .models import AccParams, acc_accel, acc_free_accel

ATTACK_PRESETS = {
    "weak": (5.0, -0.25),
    "medium": (7.5, -0.5),
    "strong": (10.0, -1.0),
}


@dataclass(frozen=True)
class AttackParams:
    a_attack: float = -1.0          # m/s^2, <= 0
    t_attack: float = 10.0          # s, duration of one attack
    mean_interarrival: float = 60.0  # s, expected dormant time between attacks

    def __post_init__(self):
        if self.a_attack > 0:
            raise ValueError("a_attack must be <= 0")
        if self.t_attack < 0:
            raise ValueError("t_attack must be >= 0")
        if self.mean_interarrival <= 0:
            raise ValueError("mean_interarrival must be > 0")

    @classmethod
    def preset(cls, name: str, mean_interarrival: float = 60.0) -> "AttackParams":
        t, a = ATTACK_PRESETS[name]
        return cls(a_attack=a, t_attack=t, mean_interarrival=mean_interarrival)


@dataclass
class AttackState:
    """Phase of one compromised vehicle's attack process."""
    active: bool = False
    time_remaining: float = 0.0
    next_activation: float = np.inf


def compromised_accel(acc: AccParams, atk: AttackParams, active: bool,
                      s, v, dv, has_leader: bool = True):
    """Acceleration of a compromised ACC.

    Dormant: exactly the benign ACC output (free-road law when no leader
    is sensed). Active with v > 0: min(a_attack, f_acc), so the attack
    never overrides a harder braking command from the underlying
    controller. Active with v = 0: hold still.
    """
    base = acc_accel(acc, s, v, dv) if has_leader else acc_free_accel(acc, v)
    if not active:
        return base
    if np.ndim(v) == 0:
        return 0.0 if v <= 0.0 else min(atk.a_attack, base)
    return np.where(v <= 0.0, 0.0, np.minimum(atk.a_attack, base))


def schedule(seed, atk: AttackParams, sim_horizon: float,
             warmup: float) -> np.ndarray:
    """Activation times for one vehicle over (warmup, sim_horizon].

    Exponential inter-arrivals with mean `mean_interarrival`; the first
    gap is measured from the warmup end, subsequent gaps from the end of
    the previous attack. Deterministic given the seed. An infinite mean
    or zero-duration attack yields an empty schedule.
    """
    if sim_horizon <= warmup:
        raise ValueError("sim_horizon must exceed warmup")
    if atk.t_attack == 0.0 or not np.isfinite(atk.mean_interarrival):
        return np.empty(0)
    rng = np.random.default_rng(seed)
    times = []
    t = warmup
    while True:
        t += rng.exponential(atk.mean_interarrival)
        if t >= sim_horizon:
            break
        times.append(t)
        t += atk.t_attack
    return np.asarray(times)
