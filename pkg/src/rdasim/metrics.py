"""Traffic impact metrics, attack cost, and classification rates.

Commuter metrics are per-vehicle statistics averaged over vehicles, so
a long-dwelling queued vehicle counts once, like a commuter would
experience it. Only the attack portion of a run (inside the metrics
window) is ever measured.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import TrajectoryStore

MIN_PRESENCE = 30.0   # s a vehicle must spend in the window to count


class EmptyWindowError(ValueError):
    """No vehicle qualifies inside the metrics window."""


@dataclass
class ImpactReport:
    mean_speed: float          # m/s
    speed_std: float           # m/s, mean of per-vehicle stds
    throughput: float          # veh/hr
    window: tuple[float, float]
    vehicle_count: int
    aac: Optional[float] = None   # USD/(km*hr), set against a baseline

    def to_dict(self) -> dict:
        return {"mean_speed_mps": self.mean_speed,
                "speed_std_mps": self.speed_std,
                "throughput_veh_hr": self.throughput,
                "window_s": list(self.window),
                "vehicle_count": self.vehicle_count,
                "aac_usd_per_km_hr": self.aac}


def impact_metrics(store: TrajectoryStore,
                   window: Optional[tuple[float, float]] = None,
                   min_presence: float = MIN_PRESENCE) -> ImpactReport:
    """Mean commuter speed, commuter speed variability, and throughput.

    mean_speed averages each qualifying vehicle's time-mean speed;
    speed_std averages each vehicle's own speed standard deviation.
    Vehicles present less than `min_presence` seconds in the window are
    excluded. Throughput counts network exits during the window.
    """
    if window is None:
        window = (store.warmup, store.duration)
    t0, t1 = window
    if not (store.warmup <= t0 < t1 <= store.duration + store.dt):
        raise ValueError(f"window {window} outside [{store.warmup}, "
                         f"{store.duration}]")
    need = int(np.ceil(min_presence / store.dt))
    means, stds = [], []
    for vid in store.vehicle_ids:
        sl = store.vehicle_slice(int(vid))
        t = store.t[sl]
        k = (t >= t0) & (t < t1)
        if int(k.sum()) < need:
            continue
        v = store.speed[sl][k]
        means.append(float(v.mean()))
        stds.append(float(v.std()))
    if not means:
        raise EmptyWindowError(
            f"no vehicle present >= {min_presence}s in window {window}")
    exits = store.exit_times
    n_exit = int(np.count_nonzero(np.isfinite(exits)
                                  & (exits >= t0) & (exits < t1)))
    return ImpactReport(mean_speed=float(np.mean(means)),
                        speed_std=float(np.mean(stds)),
                        throughput=n_exit / (t1 - t0) * 3600.0,
                        window=(t0, t1), vehicle_count=len(means))


MPS_TO_KMH = 3.6


def aac(v_base: float, v_att: float, throughput_att: float,
        vot: float = 14.0, speeds_in_mps: bool = True) -> float:
    """Average attack cost in USD/(km*hr).

    Commute time per km rises from 1/v_base to 1/v_att; the increase is
    priced at the value of time and multiplied by the attacked
    throughput. The 1/v form already normalizes per km. Floored at 0: a
    speed improvement is no cost, not a credit.
    """
    if v_base <= 0 or v_att <= 0:
        raise ValueError("speeds must be positive")
    if speeds_in_mps:
        v_base, v_att = v_base * MPS_TO_KMH, v_att * MPS_TO_KMH
    return max(0.0, 1.0 / v_att - 1.0 / v_base) * vot * throughput_att


@dataclass
class ClassificationReport:
    tpr: Optional[float]
    fpr: Optional[float]
    fnr: Optional[float]
    tnr: Optional[float]
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict:
        return {"TPR": self.tpr, "FPR": self.fpr, "FNR": self.fnr,
                "TNR": self.tnr, "counts": {"tp": self.tp, "fp": self.fp,
                                            "fn": self.fn, "tn": self.tn}}


def classification_rates(truth, predicted,
                         positive="malicious") -> ClassificationReport:
    """Standard per-class confusion-matrix rates.

    Rates for an empty truth class are reported as None. TPR + FNR = 1
    and FPR + TNR = 1 hold exactly whenever the class is nonempty.
    """
    truth = np.asarray(truth)
    predicted = np.asarray(predicted)
    if truth.shape != predicted.shape:
        raise ValueError("truth and predicted labels differ in length")
    pos_t = truth == positive
    pos_p = predicted == positive
    tp = int(np.count_nonzero(pos_t & pos_p))
    fn = int(np.count_nonzero(pos_t & ~pos_p))
    fp = int(np.count_nonzero(~pos_t & pos_p))
    tn = int(np.count_nonzero(~pos_t & ~pos_p))
    n_pos, n_neg = tp + fn, fp + tn
    return ClassificationReport(
        tpr=tp / n_pos if n_pos else None,
        fnr=fn / n_pos if n_pos else None,
        fpr=fp / n_neg if n_neg else None,
        tnr=tn / n_neg if n_neg else None,
        tp=tp, fp=fp, fn=fn, tn=tn)
