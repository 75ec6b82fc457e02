"""End-to-end helpers shared by the command line and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import pandas as pd

from .aging import (DEFAULT_C_RATES, DEFAULT_TEMPS, OracleParams, generate_test_matrix,
                    run_matrix)
from .dataprep import Dataset, NormStats, build_dataset, split_by_test, standardize
from .nnbd import DegradationModel, TrainConfig, TrainReport, accuracy, train

DEFAULT_ROWS_PER_TEST = 1000


def simulate_frame(seed: int = 0, temps=DEFAULT_TEMPS, c_rates=DEFAULT_C_RATES,
                   full: bool = False, params: OracleParams = OracleParams(),
                   max_rows_per_test: int | None = DEFAULT_ROWS_PER_TEST, jobs: int = 1) -> pd.DataFrame:
    """Run the aging campaign and return the thinned per-cycle table."""
    results = run_matrix(generate_test_matrix(temps, c_rates, seed=seed, full=full), params, jobs=jobs)
    return pd.concat([r.to_frame(max_rows_per_test) for r in results], ignore_index=True)


@dataclass
class TrainedSurrogate:
    model: DegradationModel
    report: TrainReport
    train: Dataset
    val: Dataset
    stats: NormStats

    @property
    def val_accuracy(self) -> float:
        return accuracy(self.model, self.val)


def fit_surrogate(frame: pd.DataFrame, mode: str = "regressed", seed: int = 0,
                  config: TrainConfig | None = None, ratio: float = 0.8) -> TrainedSurrogate:
    """Pre-process, split by test, standardize on the training part and train."""
    config = TrainConfig(seed=seed) if config is None else config
    ds = build_dataset(frame, mode)
    tr, va = split_by_test(ds, ratio, seed)
    (tr_s, va_s), stats = standardize(tr, va)
    model, report = train(tr_s, va_s, config)
    return TrainedSurrogate(model, report, tr_s, va_s, stats)
