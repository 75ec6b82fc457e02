"""Iterative schedule/evaluate/tighten heuristic around a degradation surrogate.

Iteration 1 solves the traditional schedule. Each later iteration rates
the previous schedule with the network, then re-solves with battery usage
restricted a fraction ``alpha`` further. The trace of total costs
(operation + degradation) is expected to fall and then rise; the lowest
point is reported.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .cbup import (DegradationCostParams, aggregate_cycles, degradation_cost, estimate_degradation,
                   expected_lifetime, oracle_degradation)
from .errors import InfeasibleError, ParameterError, SolverTimeout
from .mds import ExtraConstraints, MicrogridConfig, ScheduleSolution, Top3Limit, solve_mds

STRATEGIES = ("BCL", "PBCL", "BRL", "ALL")
ZERO_THROUGHPUT = 1e-6


@dataclass(frozen=True)
class NnodhConfig:
    strategy: str = "BCL"
    alpha: float = 0.03
    max_iterations: int = 200
    stop_window: int = 11

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0 < self.alpha < 1:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.stop_window < 3 or self.stop_window % 2 == 0:
            raise ParameterError("stop_window must be an odd number >= 3")
        if self.max_iterations < self.stop_window:
            raise ParameterError("max_iterations must be at least stop_window")


@dataclass
class IterationRecord:
    index: int                    # 1-based
    solution: ScheduleSolution
    throughput: float
    bd: float
    op_cost: float
    deg_cost: float
    extra: ExtraConstraints
    solve_seconds: float = 0.0

    @property
    def total_cost(self) -> float:
        return self.op_cost + self.deg_cost

    def row(self) -> dict:
        row = {"iteration": self.index, "op_cost": self.op_cost, "bd": self.bd,
               "deg_cost": self.deg_cost, "total_cost": self.total_cost,
               "throughput_kwh": self.throughput}
        row.update(self.extra.bounds_summary())
        if row["top3_intervals"] is not None:
            row["top3_intervals"] = " ".join(str(t + 1) for t in row["top3_intervals"])
        return row


@dataclass
class Metrics:
    dcr: float | None       # percent; None when iteration 1 has no degradation cost
    tcr: float | None
    oci: float | None

    def to_dict(self) -> dict:
        return {"dcr": self.dcr, "tcr": self.tcr, "oci": self.oci}


@dataclass
class NnodhResult:
    trace: list[IterationRecord]
    best_index: int
    metrics: Metrics
    stop_reason: str
    config: NnodhConfig = field(default_factory=NnodhConfig)
    label: str | None = None      # set for single-solve pipelines

    @property
    def best(self) -> IterationRecord:
        return self.trace[self.best_index - 1]

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def trace_frame(self, timing: bool = False) -> pd.DataFrame:
        frame = pd.DataFrame([r.row() for r in self.trace])
        if timing:
            frame["solve_seconds"] = [r.solve_seconds for r in self.trace]
        return frame

    def summary(self) -> dict:
        b = self.best
        if self.label is None:
            head = {"pipeline": f"nnodh-{self.config.strategy.lower()}", "alpha": self.config.alpha}
        else:
            head = {"pipeline": self.label, "alpha": None}
        return {
            **head,
            "best_index": self.best_index, "iterations": self.iterations,
            "stop_reason": self.stop_reason, "metrics": self.metrics.to_dict(),
            "best": {"op_cost": b.op_cost, "deg_cost": b.deg_cost, "total_cost": b.total_cost,
                     "bd": b.bd, "throughput_kwh": b.throughput},
        }

    def write(self, trace_path: str | Path, summary_path: str | Path, timing: bool = False) -> None:
        trace_path, summary_path = Path(trace_path), Path(summary_path)
        tmp = trace_path.with_name(trace_path.name + ".partial")
        self.trace_frame(timing).to_csv(tmp, index=False, float_format="%.12g", lineterminator="\n")
        tmp.replace(trace_path)
        tmp = summary_path.with_name(summary_path.name + ".partial")
        tmp.write_text(json.dumps(self.summary(), indent=2) + "\n")
        tmp.replace(summary_path)


def _interval_use(sol: ScheduleSolution) -> np.ndarray:
    return sol.config.dt * (sol.charge + sol.discharge)


def next_constraints(strategy: str, alpha: float, prev: ScheduleSolution, iteration: int) -> ExtraConstraints:
    """Restrictions for ``iteration`` (>= 2) built from the previous schedule."""
    if iteration < 2:
        raise ParameterError("restrictions start at iteration 2")
    if strategy not in STRATEGIES:
        raise ParameterError(f"strategy must be one of {STRATEGIES}")
    use = _interval_use(prev)
    kw: dict = {}
    if strategy in ("BCL", "ALL"):
        kw["throughput_cap"] = (1.0 - alpha) * float(use.sum())
    if strategy in ("PBCL", "ALL"):
        power = prev.charge + prev.discharge
        top = np.argsort(-power, kind="stable")[:3]
        kw["top3"] = Top3Limit(tuple(int(t) for t in top), (1.0 - alpha) * float(use[top].sum()))
    if strategy in ("BRL", "ALL"):
        kw["power_cap"] = prev.config.bess.p_max * (1.0 - alpha) ** (iteration - 1)
    return ExtraConstraints(**kw)


def check_stop(totals: Sequence[float], window: int = 11) -> bool:
    """True when the last ``window`` totals fall for half the steps and then rise.

    Differences within 1e-9 relative of zero count as neither.
    """
    if len(totals) < window:
        return False
    w = np.asarray(totals[-window:], dtype=float)
    d = np.diff(w)
    tol = 1e-9 * (1.0 + np.abs(w[:-1]))
    half = (window - 1) // 2
    return bool(np.all(d[:half] < -tol[:half]) and np.all(d[half:] > tol[half:]))


def best_index(totals: Sequence[float]) -> int:
    """1-based position of the lowest total; earliest on ties."""
    return int(np.argmin(np.asarray(totals, dtype=float))) + 1


def _pct(num: float, den: float) -> float | None:
    return None if den == 0 else 100.0 * num / abs(den)


def compute_metrics(trace: Sequence[IterationRecord], best: int | None = None) -> Metrics:
    """Reductions and increment at the best iteration relative to iteration 1."""
    if not trace:
        raise ParameterError("trace is empty")
    best = best_index([r.total_cost for r in trace]) if best is None else best
    first, b = trace[0], trace[best - 1]
    return Metrics(dcr=_pct(first.deg_cost - b.deg_cost, first.deg_cost),
                   tcr=_pct(first.total_cost - b.total_cost, first.total_cost),
                   oci=_pct(b.op_cost - first.op_cost, first.op_cost))


def back_derive_reference(total: float, deg: float, tcr: float, dcr: float, oci: float) -> dict:
    """Invert the three metric formulas for the iteration-1 references (percent inputs)."""
    bdc_max = deg / (1.0 - dcr / 100.0)
    tc_max = total / (1.0 - tcr / 100.0)
    oc_min = (total - deg) / (1.0 + oci / 100.0)
    return {"bdc_max": bdc_max, "tc_max": tc_max, "oc_min": oc_min,
            "identity_gap": abs(tc_max - (oc_min + bdc_max)) / tc_max}


def evaluate(solution: ScheduleSolution, model, cost_params: DegradationCostParams) -> tuple[float, float]:
    """(battery degradation, degradation cost) of one schedule."""
    soh = solution.config.bess.soh
    bd = estimate_degradation(model, aggregate_cycles(solution), soh)
    return bd, degradation_cost(cost_params, bd)


def run(config: MicrogridConfig, model, nnodh: NnodhConfig = NnodhConfig(),
        cost_params: DegradationCostParams | None = None, **solver_kw) -> NnodhResult:
    if cost_params is None:
        cost_params = DegradationCostParams.from_unit_price(400.0, config.bess.e_max)
    trace: list[IterationRecord] = []
    extra = ExtraConstraints()
    reason = "max_iterations"
    for k in range(1, nnodh.max_iterations + 1):
        if k > 1:
            extra = next_constraints(nnodh.strategy, nnodh.alpha, trace[-1].solution, k)
        t0 = time.perf_counter()
        try:
            sol = solve_mds(config, extra, **solver_kw)
        except InfeasibleError:
            if k == 1:
                raise
            reason = "restriction infeasible"
            break
        except SolverTimeout as exc:
            raise SolverTimeout(f"iteration {k}: {exc}", exc.incumbent) from exc
        elapsed = time.perf_counter() - t0
        bd, cost = evaluate(sol, model, cost_params)
        trace.append(IterationRecord(k, sol, sol.throughput, bd, sol.cost, cost, extra, elapsed))
        if sol.throughput <= ZERO_THROUGHPUT:
            reason = "zero throughput"
            break
        if check_stop([r.total_cost for r in trace], nnodh.stop_window):
            reason = "valley detected"
            break
    best = best_index([r.total_cost for r in trace])
    return NnodhResult(trace, best, compute_metrics(trace, best), reason, nnodh)


# ---------------------------------------------------------------------------
# benchmark comparison
# ---------------------------------------------------------------------------

def reference_linear_rate(cost_params: DegradationCostParams, k_ref: float = 2e-5) -> float:
    """Degradation price per kWh moved for a full reference cycle (charge plus discharge).

    A unit-depth cycle at reference stress loses ``k_ref`` of capacity and
    moves twice the rated energy, i.e. ``2 * capital / unit_price`` kWh.
    """
    return cost_params.cost_per_bd * k_ref


@dataclass
class BenchmarkRow:
    model: str
    throughput_kwh: float
    op_cost: float
    daily_bd: float
    daily_bd_oracle: float
    daily_deg_cost: float
    annual_deg_cost: float
    annual_saving: float
    expected_lifetime: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compare_benchmarks(config: MicrogridConfig, model, cost_params: DegradationCostParams | None = None,
                       nnodh: NnodhConfig = NnodhConfig(), linear_rate: float | None = None,
                       cycle_limit: int = 2) -> pd.DataFrame:
    """Rate the traditional, cycle-limited, linear-cost and heuristic schedules on equal terms."""
    if cost_params is None:
        cost_params = DegradationCostParams.from_unit_price(400.0, config.bess.e_max)
    if linear_rate is None:
        linear_rate = default_linear_rate(config, cost_params)
    schedules = {
        "MDS": solve_mds(config),
        "cycle-limit": solve_mds(config, ExtraConstraints(cycle_transition_limit=cycle_limit)),
        "linear-BDC": solve_mds(config, ExtraConstraints(linear_bdc_rate=linear_rate)),
        "NNODH": run(config, model, nnodh, cost_params).best.solution,
    }
    soh = config.bess.soh
    rows = []
    base_annual = None
    for name, sol in schedules.items():
        cycles = aggregate_cycles(sol)
        bd = estimate_degradation(model, cycles, soh)
        daily_cost = degradation_cost(cost_params, bd)
        annual = 365.0 * daily_cost
        if base_annual is None:
            base_annual = annual
        life = expected_lifetime(bd, soh, cost_params.soh_eol) if bd > 0 else math.inf
        rows.append(BenchmarkRow(name, sol.throughput, sol.cost, bd, oracle_degradation(cycles, soh),
                                 daily_cost, annual, base_annual - annual, life))
    return pd.DataFrame([r.to_dict() for r in rows])


def default_linear_rate(config: MicrogridConfig, cost_params: DegradationCostParams) -> float:
    return reference_linear_rate(cost_params) / (2.0 * config.bess.e_max)
