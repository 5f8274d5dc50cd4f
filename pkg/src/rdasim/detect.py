"""Single-class anomaly detection on GPS speed traces.

A dense autoencoder (100 -> 32 -> 8 -> 32 -> 100, tanh hidden layers,
linear output) is trained by mini-batch gradient descent to minimize
the mean squared reconstruction error over windows of 100 consecutive
normalized speeds taken from benign traffic. The classification
threshold is the highest loss observed on known-benign data; a vehicle
is scored by sweeping the autoencoder along its speed series at stride
1 and taking the maximum window loss, and is labeled malicious when
that score reaches the threshold.

Anything exposing `reconstruct(X)`, `mean`, `std` and `threshold` can
stand in for the dense model; scoring and thresholding never look
inside the architecture.
"""

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .models import AccParams
from .observe import GpsTrace

WINDOW = 100

LABEL_BENIGN = "benign"
LABEL_MALICIOUS = "malicious"

MODEL_FORMAT = "speed-autoencoder-v1"


class InsufficientVehiclesError(ValueError):
    """Fewer usable benign traces than requested for training."""


class TraceTooShortError(ValueError):
    """Trace shorter than one window."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size >= 1 and learning_rate > 0")


@dataclass
class TrainingSet:
    """Normalized training windows plus the statistics used to build them."""
    windows: np.ndarray          # (n, WINDOW), already normalized
    mean: float
    std: float
    vehicle_ids: np.ndarray
    skipped_short: int = 0


def make_training_set(traces: Sequence[GpsTrace], n_vehicles: int,
                      samples_per_vehicle: int, seed: int = 0) -> TrainingSet:
    """Sample windows from benign traces.

    Selects `n_vehicles` traces uniformly without replacement among those
    long enough to hold a window (shorter ones are skipped and counted),
    then draws `samples_per_vehicle` start offsets uniformly per trace.
    Windows are z-scored by the global mean and std of the sampled raw
    speeds. Deterministic given the seed.
    """
    eligible = [tr for tr in traces if len(tr.speeds) >= WINDOW]
    skipped = len(traces) - len(eligible)
    if len(eligible) < n_vehicles:
        raise InsufficientVehiclesError(
            f"need {n_vehicles} traces of length >= {WINDOW}, "
            f"have {len(eligible)} ({skipped} too short)")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(eligible), size=n_vehicles, replace=False)
    raw = np.empty((n_vehicles * samples_per_vehicle, WINDOW))
    vids = np.empty(n_vehicles * samples_per_vehicle, dtype=np.int64)
    row = 0
    for ci in chosen:
        tr = eligible[int(ci)]
        starts = rng.integers(0, len(tr.speeds) - WINDOW + 1,
                              size=samples_per_vehicle)
        for s in starts:
            raw[row] = tr.speeds[s:s + WINDOW]
            vids[row] = tr.vehicle_id
            row += 1
    mean = float(raw.mean())
    std = float(raw.std())
    if std <= 0:
        std = 1e-8
    return TrainingSet(windows=(raw - mean) / std, mean=mean, std=std,
                       vehicle_ids=vids, skipped_short=skipped)


@dataclass
class Autoencoder:
    """Dense autoencoder with z-score input normalization and the
    benign-loss threshold learned in training."""
    weights: list = field(default_factory=list)   # W1..W4
    biases: list = field(default_factory=list)    # b1..b4
    mean: float = 0.0
    std: float = 1.0
    threshold: float = 0.0
    dims: tuple = (WINDOW, 32, 8, 32, WINDOW)

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        """Forward pass; x is (n, WINDOW) normalized."""
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
        return h

    def normalize(self, speeds: np.ndarray) -> np.ndarray:
        return (speeds - self.mean) / self.std

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def to_json(self) -> str:
        doc = {"format": MODEL_FORMAT,
               "dims": list(self.dims),
               "activation": "tanh",
               "mean": self.mean,
               "std": self.std,
               "threshold": self.threshold,
               "weights": [w.tolist() for w in self.weights],
               "biases": [b.tolist() for b in self.biases]}
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Autoencoder":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {doc.get('format')!r}")
        return cls(weights=[np.asarray(w) for w in doc["weights"]],
                   biases=[np.asarray(b) for b in doc["biases"]],
                   mean=doc["mean"], std=doc["std"],
                   threshold=doc["threshold"], dims=tuple(doc["dims"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Autoencoder":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


def _init_model(dims: tuple, mean: float, std: float,
                seed: int) -> Autoencoder:
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Autoencoder(weights=weights, biases=biases, mean=mean, std=std)


def _forward_cached(model: Autoencoder, x: np.ndarray):
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def _backward(model: Autoencoder, acts: list):
    """Gradients of the batch MSRE with respect to every parameter."""
    x, y = acts[0], acts[-1]
    n, d = x.shape
    delta = 2.0 * (y - x) / (n * d)
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (1.0 - acts[i] ** 2)
    return grads_w, grads_b


def batch_loss(model: Autoencoder, x: np.ndarray) -> float:
    y = model.reconstruct(x)
    return float(np.mean((y - x) ** 2))


def reconstruction_loss(model: Autoencoder, window: np.ndarray) -> float:
    """Anomaly score of one normalized window: the mean of elementwise
    squared reconstruction errors over its 100 entries."""
    window = np.asarray(window, dtype=float)
    if window.shape != (WINDOW,):
        raise ValueError(f"window must have length {WINDOW}, "
                         f"got shape {window.shape}")
    y = model.reconstruct(window[None, :])[0]
    return float(np.mean((y - window) ** 2))


def window_losses(model: Autoencoder, windows: np.ndarray) -> np.ndarray:
    y = model.reconstruct(windows)
    return np.mean((y - windows) ** 2, axis=1)


def train(data: TrainingSet, cfg: TrainConfig,
          dims: tuple = (WINDOW, 32, 8, 32, WINDOW)) -> Autoencoder:
    """Mini-batch gradient descent on the MSRE.

    Weights start from a seeded uniform draw scaled by layer fan-in;
    the batch order is a fresh seeded shuffle each epoch, so training is
    bitwise reproducible for a given (data, seed). After the final epoch
    the threshold is set just above the largest training-window loss,
    which makes every known-benign training sample classify benign
    under the strict rule.
    """
    x = data.windows
    if len(x) == 0:
        raise ValueError("training set is empty")
    model = _init_model(dims, data.mean, data.std, cfg.seed)
    shuffle = np.random.default_rng(cfg.seed + 1)
    n = len(x)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.epochs):
            order = shuffle.permutation(n)
            for lo in range(0, n, cfg.batch_size):
                batch = x[order[lo:lo + cfg.batch_size]]
                acts = _forward_cached(model, batch)
                gw, gb = _backward(model, acts)
                for i in range(len(model.weights)):
                    model.weights[i] -= cfg.learning_rate * gw[i]
                    model.biases[i] -= cfg.learning_rate * gb[i]
            if not np.isfinite(model.weights[0]).all():
                raise DivergenceError("training diverged: non-finite weights")
    losses = window_losses(model, x)
    if not np.isfinite(losses).all():
        raise DivergenceError("training diverged: non-finite loss")
    model.threshold = float(np.nextafter(losses.max(), np.inf))
    return model


def gradient_check(model: Autoencoder, window: np.ndarray,
                   epsilon: float = 1e-5) -> float:
    """Max relative discrepancy between analytic gradients and central
    finite differences, over every parameter."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    x = np.asarray(window, dtype=float)[None, :]
    acts = _forward_cached(model, x)
    gw, gb = _backward(model, acts)
    worst = 0.0
    for params, grads in ((model.weights, gw), (model.biases, gb)):
        for p, g in zip(params, grads):
            flat_p = p.ravel()
            flat_g = g.ravel()
            for j in range(flat_p.size):
                orig = flat_p[j]
                flat_p[j] = orig + epsilon
                up = batch_loss(model, x)
                flat_p[j] = orig - epsilon
                down = batch_loss(model, x)
                flat_p[j] = orig
                numeric = (up - down) / (2.0 * epsilon)
                # floor the denominator at the scale where central
                # differences are still meaningful; below it the
                # comparison is absolute, not relative
                denom = max(abs(numeric) + abs(flat_g[j]), 1e-5)
                worst = max(worst, abs(numeric - flat_g[j]) / denom)
    return worst


def score_vehicle(model: Autoencoder, trace: GpsTrace) -> float:
    """Maximum reconstruction loss over all stride-1 windows of the
    normalized speed series."""
    return float(np.max(score_series(model, trace.speeds)))


def score_series(model: Autoencoder, speeds: np.ndarray) -> np.ndarray:
    speeds = np.asarray(speeds, dtype=float)
    if len(speeds) < WINDOW:
        raise TraceTooShortError(
            f"trace length {len(speeds)} shorter than window {WINDOW}")
    x = np.lib.stride_tricks.sliding_window_view(
        model.normalize(speeds), WINDOW)
    return window_losses(model, x)


def classify(score: float, threshold: float) -> str:
    """Benign iff score < threshold (strict: a score equal to the
    threshold is malicious)."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    return LABEL_BENIGN if score < threshold else LABEL_MALICIOUS


def calibrate_threshold(model: Autoencoder,
                        traces: Sequence[GpsTrace]) -> float:
    """Raise the threshold to cover full sweeps of known-benign traces.

    The training windows are a sample of each trace; the sliding-window
    score of the whole trace can exceed the largest sampled-window loss.
    Sweeping the traces that are known benign and lifting the threshold
    just above their scores keeps the training-traffic false-positive
    count at exactly zero. Returns the new threshold.
    """
    best = model.threshold
    for tr in traces:
        if len(tr.speeds) < WINDOW:
            continue
        s = score_vehicle(model, tr)
        if s >= best:
            best = float(np.nextafter(s, np.inf))
    model.threshold = best
    return best


def synth_rda_profile(start_speed: float, a_attack: float, t_attack: float,
                      acc: AccParams, rate: float = 1.0, dt: float = 0.1,
                      lead_in: float = 30.0, recovery: float = 90.0,
                      tail_windows: float = 1.0) -> np.ndarray:
    """Speed profile of an isolated compromised vehicle doing one attack.

    Cruise at start_speed, decelerate at a_attack for t_attack seconds
    (floored at 0 speed), then recover toward start_speed under the
    free-road speed-tracking law. Sampled at `rate` Hz.
    """
    if start_speed <= 0:
        raise ValueError("start_speed must be > 0")
    acc_track = AccParams(k1=acc.k1, k2=acc.k2, th=acc.th,
                          v_set=start_speed, free_gain=acc.free_gain)
    total = lead_in + t_attack + recovery + tail_windows * WINDOW / rate
    n = int(round(total / dt))
    v = start_speed
    speeds = np.empty(n)
    for k in range(n):
        t = k * dt
        if lead_in <= t < lead_in + t_attack:
            a = min(a_attack, 0.0)
        else:
            a = acc_track.free_gain * (acc_track.v_set - v)
        v = max(0.0, v + a * dt)
        speeds[k] = v
    step = int(round(1.0 / (rate * dt)))
    return speeds[::step]


def sweep_rda_losses(model: Autoencoder, start_speed: float,
                     a_grid: Sequence[float], t_grid: Sequence[float],
                     acc: Optional[AccParams] = None,
                     rate: float = 1.0) -> np.ndarray:
    """Max window loss for each (a_attack, t_attack) pair.

    Rows follow a_grid, columns t_grid. a = 0 or t = 0 cells carry the
    constant-speed baseline loss.
    """
    if len(a_grid) == 0 or len(t_grid) == 0:
        raise ValueError("sweep grids must be nonempty")
    acc = acc or AccParams()
    out = np.empty((len(a_grid), len(t_grid)))
    for i, a in enumerate(a_grid):
        for j, t in enumerate(t_grid):
            prof = synth_rda_profile(start_speed, a, t, acc, rate=rate)
            out[i, j] = float(np.max(score_series(model, prof)))
    return out
