"""Fully connected ReLU network for per-cycle battery degradation.

The network maps standardized (temp, c_rate, soc, dod, soh) to the
standardized relative capacity loss of one cycle. Training is plain
mini-batch gradient descent on the MSE loss with hand-written
backpropagation; :func:`gradient_check` validates it against central
finite differences.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataprep import Dataset, NormStats
from .errors import DomainError, ParameterError, StateError, TrainingError

ACC_EPS_ABS = 1e-7


@dataclass(frozen=True)
class NetworkSpec:
    widths: tuple[int, ...] = (5, 20, 10, 1)
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        if len(self.widths) < 2 or self.widths[0] != 5 or self.widths[-1] != 1:
            raise ParameterError(f"network must map 5 inputs to 1 output, got {self.widths}")
        if any(w < 1 for w in self.widths):
            raise ParameterError("layer widths must be positive")

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))


@dataclass
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 65
    learning_rate: float = 1e-2
    decay_factor: float = 0.5
    decay_every: int = 20
    seed: int = 0
    shuffle: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ParameterError("max_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if self.decay_every < 1:
            raise ParameterError("decay_every must be >= 1")

    def rate_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        return self.learning_rate * self.decay_factor ** ((epoch - 1) // self.decay_every)


@dataclass
class DegradationModel:
    weights: list[np.ndarray]          # layer k: (fan_in, fan_out)
    biases: list[np.ndarray]
    spec: NetworkSpec = field(default_factory=NetworkSpec)
    stats: NormStats | None = None
    fingerprint: dict = field(default_factory=dict)
    trained: bool = False

    def __post_init__(self):
        for k, (a, b) in enumerate(zip(self.spec.widths[:-1], self.spec.widths[1:])):
            if self.weights[k].shape != (a, b) or self.biases[k].shape != (b,):
                raise ParameterError(f"layer {k} shapes do not match {self.spec.widths}")

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "DegradationModel":
        return DegradationModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                                self.spec, self.stats, dict(self.fingerprint), self.trained)

    def predict_std(self, Z: np.ndarray) -> np.ndarray:
        return _forward(self.weights, self.biases, np.atleast_2d(Z))[-1][:, 0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Relative degradation for raw feature rows, clamped at zero."""
        if self.stats is None:
            raise StateError("model has no normalization statistics")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != 5:
            raise ParameterError(f"expected 5 features per row, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            bad = np.flatnonzero(~np.all(np.isfinite(X), axis=0))[0]
            raise DomainError(("temp", "c_rate", "soc", "dod", "soh")[bad], "non-finite",
                              "features must be finite")
        y = self.stats.inverse_target(self.predict_std(self.stats.transform(X)))
        return np.maximum(y, 0.0)

    def to_dict(self) -> dict:
        return {
            "widths": list(self.spec.widths),
            "hidden_activation": self.spec.hidden_activation,
            "output_activation": self.spec.output_activation,
            "layers": [{"shape": list(w.shape), "weights": w.ravel().tolist(), "bias": b.tolist()}
                       for w, b in zip(self.weights, self.biases)],
            "norm_stats": None if self.stats is None else self.stats.to_dict(),
            "fingerprint": self.fingerprint,
            "trained": self.trained,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationModel":
        spec = NetworkSpec(tuple(d["widths"]), d.get("hidden_activation", "relu"),
                           d.get("output_activation", "linear"))
        weights = [np.array(layer["weights"], dtype=float).reshape(layer["shape"]) for layer in d["layers"]]
        biases = [np.array(layer["bias"], dtype=float) for layer in d["layers"]]
        stats = None if d.get("norm_stats") is None else NormStats.from_dict(d["norm_stats"])
        return cls(weights, biases, spec, stats, d.get("fingerprint", {}), bool(d.get("trained", True)))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".partial")
        tmp.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "DegradationModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_network(spec: NetworkSpec = NetworkSpec(), seed: int = 0) -> DegradationModel:
    """Untrained network: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for a, b in zip(spec.widths[:-1], spec.widths[1:]):
        bound = 1.0 / math.sqrt(a)
        weights.append(rng.uniform(-bound, bound, size=(a, b)))
        biases.append(np.zeros(b))
    return DegradationModel(weights, biases, spec, fingerprint={"init_seed": seed})


def _forward(weights, biases, Z):
    acts = [Z]
    last = len(weights) - 1
    for k, (W, b) in enumerate(zip(weights, biases)):
        z = acts[-1] @ W + b
        acts.append(z if k == last else np.maximum(z, 0.0))
    return acts


def _backward(weights, acts, grad_out):
    """Parameter gradients given d(loss)/d(output) of shape (n,)."""
    delta = grad_out[:, None]
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ weights[k].T) * (acts[k] > 0)
    return gw, gb


def forward(model: DegradationModel, features: Sequence[float]) -> float:
    """Predicted relative degradation for one raw feature vector."""
    x = np.asarray(features, dtype=float)
    if x.shape != (5,):
        raise ParameterError(f"expected 5 features, got shape {x.shape}")
    return float(model.predict(x[None, :])[0])


def mse(predictions: Sequence[float], targets: Sequence[float]) -> float:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape or p.size == 0:
        raise ParameterError(f"length mismatch or empty input: {p.shape} vs {t.shape}")
    return float(np.mean((t - p) ** 2))


def evaluate_mse(model: DegradationModel, dataset: Dataset, jobs: int = 1, chunk: int = 8192) -> float:
    """MSE in standardized units; ``jobs > 1`` evaluates chunks on threads."""
    if not dataset.standardized:
        raise ParameterError("dataset must be standardized")
    bounds = [(i, min(i + chunk, len(dataset))) for i in range(0, len(dataset), chunk)]

    def sse(b):
        r = model.predict_std(dataset.X[b[0]:b[1]]) - dataset.y[b[0]:b[1]]
        return float(r @ r)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(sse, bounds))
    else:
        parts = [sse(b) for b in bounds]
    return math.fsum(parts) / len(dataset)


def accuracy(model: DegradationModel, dataset: Dataset, tol: float = 0.15,
             eps_abs: float = ACC_EPS_ABS) -> float:
    """Fraction of rows whose relative prediction error is within ``tol``."""
    if not tol > 0:
        raise ParameterError("tol must be positive")
    if len(dataset) == 0:
        raise ParameterError("dataset is empty")
    X, y = dataset.raw_arrays()
    err = np.abs(model.predict(X) - y) / np.maximum(y, eps_abs)
    return float(np.mean(err <= tol * (1 + 1e-12)))


@dataclass
class EpochRecord:
    epoch: int
    learning_rate: float
    train_mse: float
    val_mse: float
    val_acc_15: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord]
    best_epoch: int
    config: TrainConfig

    @property
    def best(self) -> EpochRecord:
        return self.epochs[self.best_epoch - 1]

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        lines = ["epoch,train_mse,val_mse,val_acc_15"]
        lines += [f"{e.epoch},{e.train_mse:.17g},{e.val_mse:.17g},{e.val_acc_15:.17g}" for e in self.epochs]
        tmp = path.with_name(path.name + ".partial")
        tmp.write_text("\n".join(lines) + "\n")
        tmp.replace(path)


def train(train_ds: Dataset, val_ds: Dataset, config: TrainConfig = TrainConfig(),
          spec: NetworkSpec = NetworkSpec()) -> tuple[DegradationModel, TrainReport]:
    """Mini-batch gradient descent on MSE, keeping the best-validation epoch."""
    if not (train_ds.standardized and val_ds.standardized):
        raise ParameterError("train and validation datasets must be standardized")
    if train_ds.stats is not val_ds.stats:
        raise ParameterError("train and validation datasets must share NormStats")
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ParameterError("train and validation datasets must be non-empty")

    model = init_network(spec, config.seed)
    model.stats = train_ds.stats
    W, B = model.weights, model.biases
    X, y = train_ds.X, train_ds.y
    n = len(train_ds)
    rng = np.random.default_rng(config.seed)

    best_val = math.inf
    best_params = None
    best_epoch = 1
    records: list[EpochRecord] = []
    # a diverging run overflows quietly and is reported as a TrainingError
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.max_epochs + 1):
            lr = config.rate_at(epoch)
            order = rng.permutation(n) if config.shuffle else None
            for start in range(0, n, config.batch_size):
                if order is None:
                    xb, yb = X[start:start + config.batch_size], y[start:start + config.batch_size]
                else:
                    sel = order[start:start + config.batch_size]
                    xb, yb = X[sel], y[sel]
                acts = _forward(W, B, xb)
                gw, gb = _backward(W, acts, 2.0 * (acts[-1][:, 0] - yb) / yb.size)
                for k in range(len(W)):
                    W[k] -= lr * gw[k]
                    B[k] -= lr * gb[k]

            train_mse = evaluate_mse(model, train_ds)
            val_mse = evaluate_mse(model, val_ds)
            if not (math.isfinite(train_mse) and math.isfinite(val_mse)):
                raise TrainingError(epoch, f"non-finite loss (train={train_mse}, val={val_mse})")
            model.trained = True
            records.append(EpochRecord(epoch, lr, train_mse, val_mse, accuracy(model, val_ds, 0.15)))
            if val_mse < best_val:
                best_val = val_mse
                best_epoch = epoch
                best_params = ([w.copy() for w in W], [b.copy() for b in B])

    model.weights, model.biases = best_params
    model.trained = True
    model.fingerprint = {
        "seed": config.seed,
        "epochs": config.max_epochs,
        "best_epoch": best_epoch,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "final_train_mse": records[-1].train_mse,
        "final_val_mse": records[-1].val_mse,
        "best_val_mse": best_val,
        "mode": train_ds.mode,
    }
    return model, TrainReport(records, best_epoch, config)


def near_kink(model: DegradationModel, z: np.ndarray, margin: float = 1e-3) -> bool:
    """True if any hidden pre-activation lies within ``margin`` of zero."""
    a = np.atleast_2d(z)
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        pre = a @ W + b
        if np.any(np.abs(pre) < margin):
            return True
        a = np.maximum(pre, 0.0)
    return False


def gradient_check(model: DegradationModel, z: np.ndarray, target: float, h: float = 1e-5) -> float:
    """Max relative gap between backprop and central-difference gradients.

    ``z`` is one standardized feature vector and the loss is the squared
    error (output - target)**2.
    """
    if not h > 0:
        raise ParameterError("h must be positive")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    W = [w.copy() for w in model.weights]
    B = [b.copy() for b in model.biases]
    acts = _forward(W, B, z)
    gw, gb = _backward(W, acts, 2.0 * (acts[-1][:, 0] - target))

    def loss():
        return float((_forward(W, B, z)[-1][0, 0] - target) ** 2)

    worst = 0.0
    for params, grads in ((W, gw), (B, gb)):
        for P, G in zip(params, grads):
            flat, gflat = P.reshape(-1), G.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss()
                flat[i] = orig - h
                down = loss()
                flat[i] = orig
                g_num = (up - down) / (2 * h)
                g_an = float(gflat[i])
                denom = max(abs(g_an), abs(g_num), 1e-8)
                worst = max(worst, abs(g_an - g_num) / denom)
    return worst
