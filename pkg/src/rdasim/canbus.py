"""Synthetic CAN bus logs, injection attacks, and two timing-based
intrusion detectors.

The data-overwrite injection replaces only the payload bytes of the ACC
command messages inside the attack window; message IDs, timestamps,
counts and ordering are untouched, which is exactly why ID-adjacency
and frequency detectors cannot see it. An ID-flood injection is kept as
a positive control showing the detectors do fire on timing changes.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

LABEL_BENIGN = "benign"
LABEL_OVERWRITE = "injected-overwrite"
LABEL_FLOOD = "injected-flood"

ACCEL_SCALE = 0.001   # m/s^2 per count of the signed 16-bit command field


class WindowOutOfRangeError(ValueError):
    """Injection window lies outside the log's time span."""


class InsufficientTrainingError(ValueError):
    """Training log too short for the frequency detector."""


@dataclass
class CanLog:
    """Column-oriented message log: nondecreasing timestamps, integer
    IDs, fixed 8-byte payloads, per-message ground-truth labels."""
    timestamps: np.ndarray          # float s
    ids: np.ndarray                 # int
    payloads: np.ndarray            # (n, 8) uint8
    labels: np.ndarray              # object/str

    def __len__(self) -> int:
        return len(self.timestamps)

    def slice(self, mask: np.ndarray) -> "CanLog":
        return CanLog(self.timestamps[mask], self.ids[mask],
                      self.payloads[mask], self.labels[mask])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "timestamp_s": self.timestamps,
            "msg_id_hex": [f"{i:03x}" for i in self.ids],
            "payload_hex": [bytes(p).hex() for p in self.payloads],
            "truth_label": self.labels,
        })

    def to_csv(self, path) -> None:
        df = self.to_frame()
        df["timestamp_s"] = [f"{t:.6f}" for t in df["timestamp_s"]]
        df.to_csv(path, index=False, lineterminator="\n")


def log_from_csv(path) -> CanLog:
    df = pd.read_csv(path, dtype={"msg_id_hex": str, "payload_hex": str})
    payloads = np.array([list(bytes.fromhex(p)) for p in df["payload_hex"]],
                        dtype=np.uint8)
    return CanLog(timestamps=df["timestamp_s"].to_numpy(float),
                  ids=np.array([int(i, 16) for i in df["msg_id_hex"]]),
                  payloads=payloads,
                  labels=df["truth_label"].to_numpy(object))


def encode_accel(value: float) -> np.ndarray:
    """Commanded acceleration as a signed 16-bit fixed-point field in
    bytes 0-1 of an 8-byte payload."""
    counts = int(np.clip(round(value / ACCEL_SCALE), -32768, 32767))
    out = np.zeros(8, dtype=np.uint8)
    out[0] = (counts >> 8) & 0xFF
    out[1] = counts & 0xFF
    return out


def decode_accel(payload: np.ndarray) -> float:
    counts = (int(payload[0]) << 8) | int(payload[1])
    if counts >= 32768:
        counts -= 65536
    return counts * ACCEL_SCALE


@dataclass
class BusSpec:
    """Per-ID nominal periods with jitter and slowly varying payloads.

    The ACC command ID is deliberately slow relative to the rest of the
    bus, so consecutive ACC messages never appear back to back in benign
    traffic; a saturation flood of that ID is then visible to an
    adjacency detector while a data overwrite is not.
    """
    periods: dict = field(default_factory=lambda: {
        0x025: 0.02, 0x0B4: 0.02, 0x1D2: 0.05, 0x1D3: 0.05,
        0x224: 0.10, 0x2E4: 0.10, 0x343: 0.10, 0x3B7: 0.50,
    })
    jitter: float = 0.1             # fraction of the period
    acc_command_id: int = 0x343

    def __post_init__(self):
        if any(p <= 0 for p in self.periods.values()):
            raise ValueError("periods must be > 0")
        if not 0 <= self.jitter < 0.5:
            raise ValueError("jitter must lie in [0, 0.5)")
        if self.acc_command_id not in self.periods:
            raise ValueError("acc_command_id must have a period")


def generate_log(spec: BusSpec, duration: float, seed: int = 0) -> CanLog:
    """Benign log: each ID emits at its jittered period; messages merged
    in timestamp order. Deterministic given the seed."""
    if duration <= 0:
        raise ValueError("duration must be > 0")
    all_t, all_id, all_payload = [], [], []
    for msg_id in sorted(spec.periods):
        period = spec.periods[msg_id]
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(msg_id,)))
        n_max = int(duration / period * (1.0 + spec.jitter)) + 2
        gaps = period * (1.0 + spec.jitter * rng.uniform(-1, 1, n_max))
        t = np.concatenate([[0.0], np.cumsum(gaps)])   # first frame at t=0
        t = t[t < duration]
        all_t.append(t)
        all_id.append(np.full(len(t), msg_id))
        # slowly varying signal: smoothed random walk in the data bytes
        walk = np.cumsum(rng.integers(-2, 3, len(t)))
        payload = np.zeros((len(t), 8), dtype=np.uint8)
        if msg_id == spec.acc_command_id:
            for k, w in enumerate(walk):
                payload[k] = encode_accel(0.001 * w)
        else:
            payload[:, 0] = (walk >> 8) & 0xFF
            payload[:, 1] = walk & 0xFF
            payload[:, 2] = np.arange(len(t)) & 0xFF
        all_payload.append(payload)
    t = np.concatenate(all_t) if all_t else np.empty(0)
    ids = np.concatenate(all_id) if all_id else np.empty(0, dtype=int)
    payloads = (np.concatenate(all_payload)
                if all_payload else np.empty((0, 8), dtype=np.uint8))
    order = np.lexsort((ids, t))
    return CanLog(timestamps=t[order], ids=ids[order].astype(int),
                  payloads=payloads[order],
                  labels=np.full(len(t), LABEL_BENIGN, dtype=object))


def _check_window(log: CanLog, window: tuple[float, float]):
    t0, t1 = window
    if len(log) == 0:
        raise WindowOutOfRangeError("log is empty")
    if t0 > t1 or t0 < log.timestamps[0] - 1e-9 \
            or t1 > log.timestamps[-1] + 1e-9:
        raise WindowOutOfRangeError(
            f"window {window} outside log span "
            f"[{log.timestamps[0]:.3f}, {log.timestamps[-1]:.3f}]")


def inject_overwrite(log: CanLog, window: tuple[float, float],
                     decel_value: float, acc_command_id: int) -> CanLog:
    """Replace the command field of ACC messages inside the window.

    Timestamps, IDs, ordering and message count are bitwise identical
    before and after; only payload bytes change.
    """
    _check_window(log, window)
    t0, t1 = window
    hit = (log.ids == acc_command_id) & (log.timestamps >= t0) \
        & (log.timestamps <= t1)
    payloads = log.payloads.copy()
    labels = log.labels.copy()
    if np.any(hit):
        payloads[hit] = encode_accel(decel_value)
        labels[hit] = LABEL_OVERWRITE
    return CanLog(log.timestamps.copy(), log.ids.copy(), payloads, labels)


def inject_flood(log: CanLog, window: tuple[float, float],
                 extra_rate: float, acc_command_id: int,
                 decel_value: float = -1.5) -> CanLog:
    """Insert additional ACC command messages at extra_rate inside the
    window (positive control for the detectors)."""
    if extra_rate <= 0:
        raise ValueError("extra_rate must be > 0")
    _check_window(log, window)
    t0, t1 = window
    n = int(round((t1 - t0) * extra_rate))
    t_new = t0 + np.arange(n) / extra_rate
    ids_new = np.full(n, acc_command_id)
    payload = encode_accel(decel_value)
    payloads_new = np.tile(payload, (n, 1))
    labels_new = np.full(n, LABEL_FLOOD, dtype=object)
    t = np.concatenate([log.timestamps, t_new])
    ids = np.concatenate([log.ids, ids_new])
    payloads = np.concatenate([log.payloads, payloads_new])
    labels = np.concatenate([log.labels, labels_new])
    order = np.argsort(t, kind="stable")
    return CanLog(t[order], ids[order].astype(int), payloads[order],
                  labels[order])


# ----------------------------------------------------------------------
@dataclass
class TransitionModel:
    """Set of ID adjacencies observed in benign training data."""
    pairs: set
    last_train_id: int


def train_transition(log: CanLog) -> TransitionModel:
    if len(log) == 0:
        raise ValueError("training log is empty")
    ids = log.ids
    pairs = set(zip(ids[:-1].tolist(), ids[1:].tolist()))
    return TransitionModel(pairs=pairs, last_train_id=int(ids[-1]))


def score_transition(model: TransitionModel, log: CanLog) -> np.ndarray:
    """Flag message i when the (id_{i-1}, id_i) adjacency was never seen
    in training; the first message pairs with the last training ID."""
    n = len(log)
    flags = np.zeros(n, dtype=bool)
    prev = model.last_train_id
    pairs = model.pairs
    ids = log.ids
    for i in range(n):
        cur = int(ids[i])
        if (prev, cur) not in pairs:
            flags[i] = True
        prev = cur
    return flags


@dataclass
class FrequencyModel:
    """Per-ID windowed message-count statistics from benign data."""
    window: float
    means: dict
    stds: dict
    k: float


def _window_counts(log: CanLog, window: float, t0: float, n_windows: int):
    """(n_windows, n_ids) count matrix over consecutive windows."""
    uniq = np.unique(log.ids)
    idx = {int(u): j for j, u in enumerate(uniq)}
    counts = np.zeros((n_windows, len(uniq)), dtype=int)
    w = np.floor((log.timestamps - t0) / window).astype(int)
    ok = (w >= 0) & (w < n_windows)
    for wi, mid in zip(w[ok], log.ids[ok]):
        counts[wi, idx[int(mid)]] += 1
    return uniq, counts


def train_frequency(log: CanLog, window: float = 1.0,
                    k: float = 4.0) -> FrequencyModel:
    if len(log) == 0:
        raise ValueError("training log is empty")
    span = log.timestamps[-1] - log.timestamps[0]
    n_windows = int(span / window)
    if n_windows < 10:
        raise InsufficientTrainingError(
            f"training log spans {n_windows} windows, need >= 10")
    uniq, counts = _window_counts(log, window, float(log.timestamps[0]),
                                  n_windows)
    means = {int(u): float(counts[:, j].mean()) for j, u in enumerate(uniq)}
    stds = {int(u): float(counts[:, j].std()) for j, u in enumerate(uniq)}
    return FrequencyModel(window=window, means=means, stds=stds, k=k)


def score_frequency(model: FrequencyModel, log: CanLog) -> np.ndarray:
    """Flag every message of a (window, ID) cell whose count deviates
    from the training mean by more than k standard deviations (std
    floored at one count). IDs never seen in training always flag."""
    n = len(log)
    flags = np.zeros(n, dtype=bool)
    if n == 0:
        return flags
    t0 = float(log.timestamps[0])
    n_windows = max(1, int(np.ceil((log.timestamps[-1] - t0)
                                   / model.window)))
    uniq, counts = _window_counts(log, model.window, t0, n_windows)
    w = np.clip(np.floor((log.timestamps - t0) / model.window).astype(int),
                0, n_windows - 1)
    for j, u in enumerate(uniq):
        u = int(u)
        mean = model.means.get(u)
        if mean is None:
            bad_windows = np.ones(n_windows, dtype=bool)
        else:
            std = max(model.stds.get(u, 0.0), 1.0)
            bad_windows = np.abs(counts[:, j] - mean) > model.k * std
        sel = log.ids == u
        flags[sel] = bad_windows[w[sel]]
    return flags


# ----------------------------------------------------------------------
def evaluate(predictions: np.ndarray, truth_malicious: np.ndarray,
             scores: Optional[np.ndarray] = None) -> dict:
    """Detector metrics in the reporting style common for CAN IDS work:
    hit rate within attacks (TPR), but miss/false-alarm/true-negative
    fractions of the whole message stream (FNR, FPR, TNR). AUC is the
    rank statistic with tie correction, or the single-operating-point
    trapezoid when only binary predictions exist.
    """
    predictions = np.asarray(predictions, dtype=bool)
    truth = np.asarray(truth_malicious, dtype=bool)
    if predictions.shape != truth.shape:
        raise ValueError("predictions and truth differ in length")
    n = len(truth)
    tp = int(np.count_nonzero(predictions & truth))
    fp = int(np.count_nonzero(predictions & ~truth))
    fn = int(np.count_nonzero(~predictions & truth))
    tn = int(np.count_nonzero(~predictions & ~truth))
    n_pos, n_neg = tp + fn, fp + tn
    out = {
        "accuracy": (tp + tn) / n if n else None,
        "tpr": tp / n_pos if n_pos else None,
        "fnr": fn / n if n else None,
        "fpr": fp / n if n else None,
        "tnr": tn / n if n else None,
        "counts": {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
    }
    if n_pos == 0 or n_neg == 0:
        out["auc"] = None
        return out
    if scores is None:
        scores = predictions.astype(float)
    from scipy.stats import rankdata
    ranks = rankdata(np.asarray(scores, dtype=float))
    out["auc"] = float((ranks[truth].sum() - n_pos * (n_pos + 1) / 2)
                       / (n_pos * n_neg))
    return out
