"""Defender's view of the traffic: GPS-style speed traces.

Every compromised vehicle reports a trace; benign vehicles report with
a sampled probability. Traces are decimated from the trajectory store
at a uniform rate and carry a ground-truth label used only for
evaluation -- no detector input ever reads it.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from .engine import KIND_COMPROMISED, TrajectoryStore

LABEL_BENIGN = "benign"
LABEL_COMPROMISED = "compromised"

_STREAM_OBSERVE = 7


class IncompatibleRateError(ValueError):
    """GPS rate does not evenly divide the simulation step rate."""


@dataclass
class GpsTrace:
    vehicle_id: int
    times: np.ndarray
    speeds: np.ndarray
    positions: Optional[np.ndarray]   # plotting only, never a detector input
    truth_label: str


def extract_traces(store: TrajectoryStore, benign_fraction: float = 0.3,
                   rate: float = 1.0, seed: int = 0,
                   noise_std: float = 0.0,
                   include_positions: bool = True) -> list[GpsTrace]:
    """Decimate the store into per-vehicle speed traces.

    `rate` (Hz) must divide 1/dt evenly; samples fall on the global
    time grid so traces are aligned across vehicles. With noise_std = 0
    the decimated speeds equal the stored speeds exactly.
    """
    if not 0 <= benign_fraction <= 1:
        raise ValueError("benign_fraction must lie in [0, 1]")
    step = 1.0 / (rate * store.dt)
    if abs(step - round(step)) > 1e-9:
        raise IncompatibleRateError(
            f"rate {rate} Hz does not divide the {1.0 / store.dt:.1f} Hz "
            "simulation grid")
    step = int(round(step))
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_OBSERVE,)))

    traces = []
    for vid in store.vehicle_ids:
        vid = int(vid)
        compromised = store.kinds[
            np.searchsorted(store.vehicle_ids, vid)] == KIND_COMPROMISED
        u = rng.random()     # one draw per vehicle keeps selection seeded
        if not compromised and u >= benign_fraction:
            continue
        sl = store.vehicle_slice(vid)
        t = store.t[sl]
        idx = np.arange(0, sl.stop - sl.start, step)
        speeds = store.speed[sl][idx].astype(float)
        if noise_std > 0:
            speeds = np.maximum(0.0, speeds + rng.normal(0, noise_std,
                                                         len(speeds)))
        traces.append(GpsTrace(
            vehicle_id=vid,
            times=t[idx],
            speeds=speeds,
            positions=store.pos[sl][idx] if include_positions else None,
            truth_label=LABEL_COMPROMISED if compromised else LABEL_BENIGN))
    return traces


def traces_to_frame(traces: list[GpsTrace]) -> pd.DataFrame:
    rows = {"vehicle_id": [], "truth_label": [], "t": [], "speed_mps": []}
    for tr in traces:
        rows["vehicle_id"].extend([tr.vehicle_id] * len(tr.times))
        rows["truth_label"].extend([tr.truth_label] * len(tr.times))
        rows["t"].extend(tr.times)
        rows["speed_mps"].extend(tr.speeds)
    return pd.DataFrame(rows)


def traces_from_frame(df: pd.DataFrame) -> list[GpsTrace]:
    traces = []
    for vid, grp in df.groupby("vehicle_id", sort=True):
        grp = grp.sort_values("t")
        traces.append(GpsTrace(vehicle_id=int(vid),
                               times=grp["t"].to_numpy(),
                               speeds=grp["speed_mps"].to_numpy(),
                               positions=None,
                               truth_label=str(grp["truth_label"].iloc[0])))
    return traces
