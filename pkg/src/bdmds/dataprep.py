"""Pre-processing of aging data into NN-ready datasets.

Three target modes are supported: ``raw`` (measured per-cycle loss),
``smoothed`` (Hampel outlier filter followed by a moving average) and
``regressed`` (least-squares line through the smoothed series, per test).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError

FEATURES = ("temp", "c_rate", "soc", "dod", "soh")
MODES = ("raw", "smoothed", "regressed")
VAR_FLOOR = 1e-12
MAD_SCALE = 1.4826


@dataclass
class NormStats:
    feature_means: np.ndarray
    feature_vars: np.ndarray
    target_mean: float
    target_var: float

    def __post_init__(self):
        self.feature_means = np.asarray(self.feature_means, dtype=float)
        self.feature_vars = np.asarray(self.feature_vars, dtype=float)
        for name, var in zip(FEATURES, self.feature_vars):
            if not var > VAR_FLOOR:
                raise ParameterError(f"degenerate feature {name!r}: variance {var:g} <= {VAR_FLOOR:g}")
        # zero marks a constant target, which is centered but not rescaled
        if not (self.target_var == 0.0 or self.target_var > VAR_FLOOR):
            raise ParameterError(f"degenerate target: variance {self.target_var:g}")

    @property
    def target_scale(self) -> float:
        return math.sqrt(self.target_var) if self.target_var > 0 else 1.0

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.feature_means) / np.sqrt(self.feature_vars)

    def transform_target(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.target_mean) / self.target_scale

    def inverse_target(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=float) * math.sqrt(self.target_var) + self.target_mean

    def to_dict(self) -> dict:
        return {
            "feature_means": [float(v) for v in self.feature_means],
            "feature_vars": [float(v) for v in self.feature_vars],
            "target_mean": float(self.target_mean),
            "target_var": float(self.target_var),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["feature_means"]), np.array(d["feature_vars"]),
                   float(d["target_mean"]), float(d["target_var"]))


@dataclass
class Dataset:
    """Feature rows (temp, c_rate, soc, dod, soh) and relative-loss targets.

    Rows of one aging test are contiguous and in cycle order. ``stats`` is
    set once the arrays have been standardized with it.
    """

    X: np.ndarray
    y: np.ndarray
    test_ids: np.ndarray
    mode: str = "raw"
    stats: NormStats | None = None
    cycle_index: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return int(self.y.size)

    @property
    def standardized(self) -> bool:
        return self.stats is not None

    def groups(self) -> list[tuple[str, slice]]:
        """(test_id, row slice) for every test, in row order."""
        ids = self.test_ids
        if ids.size == 0:
            return []
        cuts = np.flatnonzero(ids[1:] != ids[:-1]) + 1
        starts = np.concatenate([[0], cuts])
        stops = np.concatenate([cuts, [ids.size]])
        return [(str(ids[a]), slice(int(a), int(b))) for a, b in zip(starts, stops)]

    def raw_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Features and targets in physical units."""
        if self.stats is None:
            return self.X, self.y
        s = self.stats
        return self.X * np.sqrt(s.feature_vars) + s.feature_means, s.inverse_target(self.y)

    def subset(self, test_ids: Sequence[str]) -> "Dataset":
        """Rows of the given tests, with the groups in the order given."""
        spans = dict(self.groups())
        missing = [t for t in test_ids if t not in spans]
        if missing:
            raise ParameterError(f"unknown test ids {missing[:3]}")
        idx = np.concatenate([np.arange(spans[t].start, spans[t].stop) for t in test_ids]) \
            if len(test_ids) else np.zeros(0, dtype=int)
        ci = None if self.cycle_index is None else self.cycle_index[idx]
        return replace(self, X=self.X[idx], y=self.y[idx], test_ids=self.test_ids[idx],
                       cycle_index=ci)


def _centered_half_widths(n: int, window: int) -> np.ndarray:
    # symmetric truncation keeps affine series fixed at the edges
    i = np.arange(n)
    return np.minimum(window // 2, np.minimum(i, n - 1 - i))


def _centered_apply(x: np.ndarray, window: int, func) -> np.ndarray:
    """Apply ``func`` (reducing over axis=-1) on centered windows, shrinking at edges."""
    n = x.size
    h = window // 2
    out = np.empty(n)
    if n >= window:
        out[h:n - h] = func(sliding_window_view(x, window), axis=-1)
        edge = list(range(min(h, n))) + list(range(max(n - h, h), n))
    else:
        edge = range(n)
    widths = _centered_half_widths(n, window)
    for i in edge:
        w = widths[i]
        out[i] = func(x[i - w:i + w + 1][None, :], axis=-1)[0]
    return out


def smooth_series(series: Sequence[float], window: int = 21, mad_k: float = 3.0) -> np.ndarray:
    """Hampel outlier replacement followed by a centered moving average.

    Points farther than ``mad_k * 1.4826 * MAD`` from their window median are
    replaced by that median; both passes use the same odd ``window`` and
    shrink it symmetrically near the ends of the series.
    """
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"window must be a positive odd integer, got {window}")
    x = np.asarray(series, dtype=float)
    if x.size < 1:
        raise ParameterError("series must be non-empty")
    if window == 1:
        return x.copy()

    med = _centered_apply(x, window, np.median)
    n = x.size
    h = window // 2
    mad = np.empty(n)
    if n >= window:
        windows = sliding_window_view(x, window)
        mad[h:n - h] = np.median(np.abs(windows - med[h:n - h, None]), axis=-1)
        edge = list(range(min(h, n))) + list(range(max(n - h, h), n))
    else:
        edge = range(n)
    widths = _centered_half_widths(n, window)
    for i in edge:
        w = widths[i]
        mad[i] = np.median(np.abs(x[i - w:i + w + 1] - med[i]))
    cleaned = np.where(np.abs(x - med) > mad_k * MAD_SCALE * mad, med, x)
    return _centered_apply(cleaned, window, np.mean)


def regress_series(series: Sequence[float], x: Sequence[float] | None = None) -> np.ndarray:
    """Ordinary least-squares line over cycle index; negative fits clamp to 0."""
    y = np.asarray(series, dtype=float)
    if y.size < 2:
        raise ParameterError("regression needs at least 2 points")
    t = np.arange(y.size, dtype=float) if x is None else np.asarray(x, dtype=float)
    tm = t.mean()
    ym = y.mean()
    dt = t - tm
    sxx = float(dt @ dt)
    slope = float(dt @ (y - ym)) / sxx if sxx > 0 else 0.0
    fitted = ym + slope * dt
    return np.maximum(fitted, 0.0)


def process_delta(raw: np.ndarray, mode: str, cycle_index: np.ndarray | None = None,
                  window: int = 21, mad_k: float = 3.0) -> np.ndarray:
    if mode == "raw":
        return np.asarray(raw, dtype=float).copy()
    smoothed = smooth_series(raw, window, mad_k)
    if mode == "smoothed":
        return smoothed
    if mode == "regressed":
        if smoothed.size < 2:
            return smoothed
        return regress_series(smoothed, cycle_index)
    raise ParameterError(f"unknown mode {mode!r}; expected one of {MODES}")


def build_dataset(frame: pd.DataFrame, mode: str = "regressed", window: int = 21,
                  mad_k: float = 3.0) -> Dataset:
    """Turn an aging CSV frame into a Dataset, processing each test separately."""
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}; expected one of {MODES}")
    frame = frame.sort_values(["test_id", "cycle_index"], kind="stable")
    Xs, ys, ids, cis = [], [], [], []
    for test_id, g in frame.groupby("test_id", sort=True):
        ci = g["cycle_index"].to_numpy()
        delta = process_delta(g["delta_soh_raw"].to_numpy(dtype=float), mode, ci, window, mad_k)
        soh = g["soh"].to_numpy(dtype=float)
        Xs.append(np.column_stack([g["temp_c"], g["c_rate"], g["soc"], g["dod"], soh]).astype(float))
        ys.append(delta / soh)
        ids.append(np.full(len(g), str(test_id), dtype=object))
        cis.append(ci)
    return Dataset(X=np.vstack(Xs), y=np.concatenate(ys), test_ids=np.concatenate(ids),
                   mode=mode, cycle_index=np.concatenate(cis))


def compute_stats(train: Dataset) -> NormStats:
    if len(train) == 0:
        raise ParameterError("training dataset is empty")
    X, y = train.raw_arrays()
    target_var = float(y.var())
    if target_var <= VAR_FLOOR:
        target_var = 0.0
    return NormStats(X.mean(axis=0), X.var(axis=0), float(y.mean()), target_var)


def standardize(train: Dataset, *others: Dataset) -> tuple[list[Dataset], NormStats]:
    """Standardize with statistics of ``train`` only (population variance).

    Returns ``([train, *others], stats)`` with every dataset rescaled.
    """
    stats = compute_stats(train)
    out = []
    for ds in (train, *others):
        X, y = ds.raw_arrays()
        out.append(replace(ds, X=stats.transform(X), y=stats.transform_target(y), stats=stats))
    return out, stats


def split_by_test(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Hold out whole aging tests; train gets round(ratio * n_tests) of them.

    Training tests come back in a seeded random group order (cycle order is
    kept inside each test), so consecutive mini-batches span varied stress
    conditions. Validation tests keep their sorted order.
    """
    if not 0 < ratio < 1:
        raise ParameterError(f"ratio must lie in (0, 1), got {ratio}")
    ids = [g for g, _ in dataset.groups()]
    if len(set(ids)) != len(ids):
        raise ParameterError("test groups are not contiguous")
    if len(ids) < 2:
        raise ParameterError("need at least 2 test groups to split")
    n_train = min(max(int(math.floor(len(ids) * ratio + 0.5)), 1), len(ids) - 1)
    order = np.random.default_rng(seed).permutation(len(ids))
    train = [ids[i] for i in order[:n_train]]
    train_ids = set(train)
    val = [i for i in ids if i not in train_ids]
    return dataset.subset(train), dataset.subset(val)


@dataclass(frozen=True)
class PreservationRow:
    checkpoint: int
    raw_sum: float
    processed_sum: float
    rel_diff: float


def cumulative_preservation_report(raw: Sequence[float], processed: Sequence[float],
                                   checkpoints: Sequence[int] = (500, 1000, 1500, 2000, 2500)
                                   ) -> list[PreservationRow]:
    raw = np.asarray(raw, dtype=float)
    processed = np.asarray(processed, dtype=float)
    if raw.shape != processed.shape:
        raise ParameterError("raw and processed series must have equal length")
    cr = np.cumsum(raw)
    cp = np.cumsum(processed)
    rows = []
    for n in checkpoints:
        if not 1 <= n <= raw.size:
            raise ParameterError(f"checkpoint {n} outside series of length {raw.size}")
        rs, ps = float(cr[n - 1]), float(cp[n - 1])
        rows.append(PreservationRow(int(n), rs, ps, abs(ps - rs) / rs))
    return rows


def write_processed(ds: Dataset, stats: NormStats, csv_path: str | Path, stats_path: str | Path) -> None:
    X, y = ds.raw_arrays()
    frame = pd.DataFrame(X, columns=list(FEATURES))
    frame.insert(0, "test_id", ds.test_ids)
    if ds.cycle_index is not None:
        frame.insert(1, "cycle_index", ds.cycle_index)
    frame["target_rel"] = y
    csv_path, stats_path = Path(csv_path), Path(stats_path)
    tmp = csv_path.with_name(csv_path.name + ".partial")
    frame.to_csv(tmp, index=False, float_format="%.17g", lineterminator="\n")
    tmp.replace(csv_path)
    tmp = stats_path.with_name(stats_path.name + ".partial")
    tmp.write_text(json.dumps(stats.to_dict(), indent=2) + "\n")
    tmp.replace(stats_path)
