"""Cycle-based battery usage processing and degradation costing.

A day-ahead battery schedule is cut into runs of same-direction power;
each run becomes one cycle whose features feed the degradation network.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .aging import OracleParams, oracle_loss_array
from .errors import ParameterError, StateError
from .mds import ScheduleSolution
from .nnbd import DegradationModel

POWER_FLOOR = 1e-6


@dataclass(frozen=True)
class AggregatedCycle:
    start_t: int          # first interval of the run (0-based)
    end_t: int            # one past the last interval
    direction: str        # "charge" | "discharge"
    avg_power: float      # kW
    c_rate: float         # 1/h
    soc_start: float
    dod: float
    temp: float           # mean ambient temperature over the run

    @property
    def duration(self) -> int:
        return self.end_t - self.start_t


@dataclass(frozen=True)
class DegradationCostParams:
    capital: float = 400.0 * 300.0
    salvage: float = 0.0
    soh_eol: float = 0.7

    def __post_init__(self):
        if not 0 < self.soh_eol < 1:
            raise ParameterError(f"soh_eol must lie in (0, 1), got {self.soh_eol}")
        if not self.capital >= self.salvage >= 0:
            raise ParameterError("need capital >= salvage >= 0")

    @classmethod
    def from_unit_price(cls, unit_price: float, e_max: float, salvage: float = 0.0,
                        soh_eol: float = 0.7) -> "DegradationCostParams":
        return cls(unit_price * e_max, salvage, soh_eol)

    @property
    def cost_per_bd(self) -> float:
        return (self.capital - self.salvage) / (1.0 - self.soh_eol)


def aggregate_cycles(solution: ScheduleSolution, power_floor: float = POWER_FLOOR) -> list[AggregatedCycle]:
    """Merge consecutive same-direction intervals into cycles; idle intervals split runs."""
    cfg = solution.config
    e_max = cfg.bess.e_max
    soc = solution.soc
    temp = cfg.profiles.temp
    direction = np.where(solution.charge > power_floor, 1,
                         np.where(solution.discharge > power_floor, -1, 0))
    cycles = []
    t = 0
    T = direction.size
    while t < T:
        d = direction[t]
        if d == 0:
            t += 1
            continue
        start = t
        while t < T and direction[t] == d:
            t += 1
        power = solution.charge[start:t] if d == 1 else solution.discharge[start:t]
        avg = float(power.mean())
        cycles.append(AggregatedCycle(
            start_t=start, end_t=t, direction="charge" if d == 1 else "discharge",
            avg_power=avg, c_rate=avg / e_max, soc_start=float(soc[start]),
            dod=float(abs(soc[t] - soc[start])), temp=float(temp[start:t].mean())))
    return cycles


def cycle_features(cycles: Sequence[AggregatedCycle], soh: float) -> np.ndarray:
    """Rows of (temp, c_rate, soc, dod, soh) in the network's feature order."""
    if not cycles:
        return np.zeros((0, 5))
    return np.array([[c.temp, c.c_rate, c.soc_start, c.dod, soh] for c in cycles], dtype=float)


def per_interval_features(solution: ScheduleSolution, power_floor: float = POWER_FLOOR) -> np.ndarray:
    """One feature row per non-idle interval, DOD and C-rate taken from that interval alone."""
    cfg = solution.config
    soc = solution.soc
    active = (solution.charge > power_floor) | (solution.discharge > power_floor)
    idx = np.flatnonzero(active)
    dod = np.abs(soc[idx + 1] - soc[idx])
    return np.column_stack([cfg.profiles.temp[idx], dod / cfg.dt, soc[idx], dod,
                            np.full(idx.size, cfg.bess.soh)]) if idx.size else np.zeros((0, 5))


def _check_model(model) -> None:
    if isinstance(model, DegradationModel) and not model.trained:
        raise StateError("degradation model has not been trained")


def estimate_degradation(model, features: np.ndarray | Sequence[AggregatedCycle], soh: float) -> float:
    """Sum of network-predicted relative losses, scaled by the current SOH.

    ``model`` is anything with ``predict(features) -> array``; ``features``
    is an (n, 5) array or a list of cycles.
    """
    _check_model(model)
    if not isinstance(features, np.ndarray):
        features = cycle_features(list(features), soh)
    if len(features) == 0:
        return 0.0
    return float(np.sum(model.predict(features)) * soh)


def predict_cycles(model, cycles: Sequence[AggregatedCycle], soh: float) -> np.ndarray:
    _check_model(model)
    if not cycles:
        return np.zeros(0)
    return np.asarray(model.predict(cycle_features(cycles, soh)), dtype=float) * soh


def oracle_degradation(features: np.ndarray | Sequence[AggregatedCycle], soh: float,
                       params: OracleParams = OracleParams()) -> float:
    """Ground-truth loss of the same cycles under the synthetic aging law."""
    if not isinstance(features, np.ndarray):
        features = cycle_features(list(features), soh)
    if len(features) == 0:
        return 0.0
    f = features.copy()
    f[:, 3] = np.clip(f[:, 3], 0.0, 1.0)
    return float(np.sum(oracle_loss_array(f, params)))


def degradation_cost(params: DegradationCostParams, bd: float) -> float:
    if bd < 0:
        raise ParameterError(f"battery degradation must be non-negative, got {bd}")
    return params.cost_per_bd * bd


def expected_lifetime(daily_bd: float, soh_now: float = 1.0, soh_eol: float = 0.7) -> float:
    """Years until ``soh_eol`` at a constant daily degradation."""
    if not daily_bd > 0:
        raise ParameterError(f"daily degradation must be positive, got {daily_bd}")
    return (soh_now - soh_eol) / daily_bd / 365.0


def cycles_frame(cycles: Sequence[AggregatedCycle], predicted: Sequence[float] | None = None) -> pd.DataFrame:
    cols = ["start_t", "end_t", "direction", "avg_power_kw", "c_rate", "soc_start", "dod", "predicted_bd"]
    rows = []
    for i, c in enumerate(cycles):
        rows.append([c.start_t, c.end_t, c.direction, c.avg_power, c.c_rate, c.soc_start, c.dod,
                     float("nan") if predicted is None else float(predicted[i])])
    return pd.DataFrame(rows, columns=cols)


def write_cycles(cycles: Sequence[AggregatedCycle], path: str | Path,
                 predicted: Sequence[float] | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    cycles_frame(cycles, predicted).to_csv(tmp, index=False, float_format="%.12g", lineterminator="\n")
    tmp.replace(path)
