"""Synthetic battery aging laboratory.

A semi-empirical stress-factor model plays the role of the ground-truth
cell: every cycle of an aging test loses a capacity fraction given by
:func:`oracle_cycle_loss`, and a seeded measurement-noise layer produces
the "raw" series that the pre-processing stage has to clean up.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from .errors import DivergenceError, DomainError, ParameterError

# initial SOC -> (DOD -> number of tests in the full 945-test campaign).
CAMPAIGN_COUNTS: dict[float, dict[float, int]] = {
    1.0: {0.2: 4, 0.3: 20, 0.4: 36, 0.5: 38, 0.6: 37, 0.7: 41, 0.8: 39, 0.9: 35, 1.0: 36},
    0.8: {0.2: 5, 0.3: 34, 0.4: 41, 0.5: 41, 0.6: 37, 0.7: 36, 0.8: 35},
    0.6: {0.2: 17, 0.3: 36, 0.4: 41, 0.5: 36, 0.6: 37},
    0.5: {0.2: 23, 0.3: 32, 0.4: 40, 0.5: 42},
    0.4: {0.2: 22, 0.3: 37, 0.4: 44},
    0.2: {0.2: 23},
}
CAMPAIGN_SOCS = (1.0, 0.8, 0.6, 0.5, 0.4, 0.2)
CAMPAIGN_DODS = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

DEFAULT_TEMPS = (15.0, 25.0, 35.0)
DEFAULT_C_RATES = (0.25, 0.5, 1.0)

NOISE_SIGMA = 0.1
OUTLIER_PROB = 0.01
OUTLIER_GAIN = 5.0
DEFAULT_MAX_CYCLES = 10**6

CSV_COLUMNS = [
    "test_id", "cycle_index", "temp_c", "c_rate", "soc", "dod", "soh",
    "delta_soh_raw", "delta_soh_true",
]


@dataclass(frozen=True)
class OracleParams:
    k_ref: float = 2.0e-5
    dod_exp: float = 1.6
    c_coeff: float = 0.3
    t_coeff: float = 0.035
    t_ref: float = 25.0
    soc_coeff: float = 0.5
    soh_coeff: float = 1.2
    eol_soh: float = 0.8

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise DomainError(name, value, "must be finite")
        if self.k_ref <= 0:
            raise DomainError("k_ref", self.k_ref, "must be positive")
        if self.dod_exp < 1:
            raise DomainError("dod_exp", self.dod_exp, "must be >= 1")
        if not 0 < self.eol_soh < 1:
            raise DomainError("eol_soh", self.eol_soh, "must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AgingTestSpec:
    test_id: str
    initial_soc: float
    dod: float
    c_rate: float
    ambient_temp: float
    noise_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.initial_soc <= 1:
            raise DomainError("initial_soc", self.initial_soc, "must lie in [0, 1]")
        if not 0 < self.dod <= 1:
            raise DomainError("dod", self.dod, "must lie in (0, 1]")
        if self.initial_soc - self.dod < -1e-12:
            raise DomainError("dod", self.dod, f"exceeds initial_soc={self.initial_soc}")
        if not self.c_rate > 0:
            raise DomainError("c_rate", self.c_rate, "must be positive")
        if not math.isfinite(self.ambient_temp):
            raise DomainError("ambient_temp", self.ambient_temp, "must be finite")


@dataclass(frozen=True)
class CycleRecord:
    test_id: str
    cycle_index: int
    temp: float
    c_rate: float
    soc: float
    dod: float
    soh: float
    delta_soh: float
    target_rel: float


@dataclass
class AgingTestResult:
    """Columnar record of one aging test.

    Cycles are stored as arrays (a low-stress test runs for ~10^5 cycles);
    :meth:`cycles` yields them as :class:`CycleRecord` objects.
    """

    spec: AgingTestSpec
    soh: np.ndarray          # start-of-cycle SOH, length n
    delta_soh: np.ndarray    # true loss per cycle
    raw_delta: np.ndarray    # noisy measured loss per cycle
    params: OracleParams = field(default_factory=OracleParams)

    @property
    def n_cycles(self) -> int:
        return int(self.soh.size)

    @property
    def cycle_index(self) -> np.ndarray:
        return np.arange(1, self.n_cycles + 1)

    @property
    def target_rel(self) -> np.ndarray:
        return self.delta_soh / self.soh

    def cycles(self) -> Iterator[CycleRecord]:
        s = self.spec
        for i in range(self.n_cycles):
            soh = float(self.soh[i])
            d = float(self.delta_soh[i])
            yield CycleRecord(s.test_id, i + 1, s.ambient_temp, s.c_rate, s.initial_soc,
                              s.dod, soh, d, d / soh)

    def to_frame(self, max_rows: int | None = None) -> pd.DataFrame:
        idx = thin_indices(self.n_cycles, max_rows)
        s = self.spec
        n = idx.size
        return pd.DataFrame({
            "test_id": [s.test_id] * n,
            "cycle_index": idx + 1,
            "temp_c": np.full(n, s.ambient_temp),
            "c_rate": np.full(n, s.c_rate),
            "soc": np.full(n, s.initial_soc),
            "dod": np.full(n, s.dod),
            "soh": self.soh[idx],
            "delta_soh_raw": self.raw_delta[idx],
            "delta_soh_true": self.delta_soh[idx],
        })


def _stress(dod, c_rate, temp, soc, params: OracleParams):
    return (params.k_ref * np.power(dod, params.dod_exp)
            * np.exp(params.c_coeff * (np.asarray(c_rate) - 0.5))
            * np.exp(params.t_coeff * (np.asarray(temp) - params.t_ref))
            * (1.0 + params.soc_coeff * (np.asarray(soc) - 0.5)))


def oracle_cycle_loss(dod: float, c_rate: float, temp: float, soc: float, soh: float,
                      params: OracleParams = OracleParams()) -> float:
    """Capacity-loss fraction of one cycle under the reference stress model.

    loss = k_ref * dod**dod_exp * exp(c_coeff*(c_rate-0.5))
           * exp(t_coeff*(temp-t_ref)) * (1 + soc_coeff*(soc-0.5))
           * (1 + soh_coeff*(1-soh))
    """
    checks = {"dod": dod, "c_rate": c_rate, "temp": temp, "soc": soc, "soh": soh}
    for name, value in checks.items():
        if not math.isfinite(value):
            raise DomainError(name, value, "must be finite")
    if not 0 <= dod <= 1:
        raise DomainError("dod", dod, "must lie in [0, 1]")
    if not c_rate > 0:
        raise DomainError("c_rate", c_rate, "must be positive")
    if not 0 <= soc <= 1:
        raise DomainError("soc", soc, "must lie in [0, 1]")
    if not params.eol_soh - 0.05 < soh <= 1:
        raise DomainError("soh", soh, f"must lie in ({params.eol_soh - 0.05:g}, 1]")
    loss = float(_stress(dod, c_rate, temp, soc, params)) * (1.0 + params.soh_coeff * (1.0 - soh))
    return max(loss, 0.0)


def oracle_loss_array(features: np.ndarray, params: OracleParams = OracleParams()) -> np.ndarray:
    """Vectorized loss for rows ordered (temp, c_rate, soc, dod, soh); no range checks."""
    f = np.atleast_2d(np.asarray(features, dtype=float))
    temp, c, soc, dod, soh = f.T
    return _stress(dod, c, temp, soc, params) * (1.0 + params.soh_coeff * (1.0 - soh))


def run_aging_test(spec: AgingTestSpec, params: OracleParams = OracleParams(),
                   max_cycles: int = DEFAULT_MAX_CYCLES, soh0: float = 1.0) -> AgingTestResult:
    """Cycle a cell at fixed stress until SOH crosses ``params.eol_soh``.

    The recurrence soh[n+1] = soh[n] - loss(soh[n]) is affine in soh because
    the SOH stress factor is linear, so it is evaluated in closed form
    rather than with a Python loop over up to 10^6 cycles.
    """
    a = float(_stress(spec.dod, spec.c_rate, spec.ambient_temp, spec.initial_soc, params))
    h = params.soh_coeff
    first_loss = a * (1.0 + h * (1.0 - soh0))
    last_loss = a * (1.0 + h * (1.0 - params.eol_soh))
    min_loss = min(first_loss, last_loss)
    if not (min_loss > 0 and math.isfinite(min_loss)):
        raise DivergenceError(f"{spec.test_id}: per-cycle loss {min_loss!r} cannot reach "
                              f"eol_soh={params.eol_soh}")
    bound = math.ceil((soh0 - params.eol_soh) / min_loss) + 2
    if bound > max_cycles + 1:
        raise DivergenceError(f"{spec.test_id}: needs up to {bound} cycles, cap is {max_cycles}")

    n = np.arange(bound + 1, dtype=float)
    if a * h != 0.0:
        # fixed point of soh -> soh*(1 + a*h) - a*(1 + h)
        fixed = (1.0 + h) / h
        soh = fixed + (soh0 - fixed) * np.exp(n * math.log1p(a * h))
    else:
        soh = soh0 - n * a
    loss = a * (1.0 + h * (1.0 - soh))
    after = soh - loss
    crossed = np.flatnonzero(after <= params.eol_soh)
    if crossed.size == 0:
        raise DivergenceError(f"{spec.test_id}: did not reach eol_soh within {bound} cycles")
    stop = int(crossed[0]) + 1
    if stop > max_cycles:
        raise DivergenceError(f"{spec.test_id}: exceeded cycle cap {max_cycles}")
    soh = soh[:stop]
    loss = loss[:stop]

    rng = np.random.default_rng(spec.noise_seed)
    z = rng.standard_normal(stop)
    outlier = rng.random(stop) < OUTLIER_PROB
    # outliers amplify the noise deviation, keeping the series unbiased
    factor = 1.0 + NOISE_SIGMA * np.where(outlier, OUTLIER_GAIN * z, z)
    raw = loss * np.maximum(factor, 0.0)
    return AgingTestResult(spec=spec, soh=soh, delta_soh=loss, raw_delta=raw, params=params)


def derive_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1, np.uint64)[0])


def _is_feasible(soc: float, dod: float) -> bool:
    return soc - dod >= -1e-12


def feasible_cells() -> list[tuple[float, float]]:
    """(initial_soc, dod) cells of the campaign grid that are not marked "/"."""
    return [(soc, dod) for soc in CAMPAIGN_SOCS for dod in CAMPAIGN_DODS
            if _is_feasible(soc, dod)]


def generate_test_matrix(temps: Sequence[float] = DEFAULT_TEMPS,
                         c_rates: Sequence[float] = DEFAULT_C_RATES,
                         seed: int = 0, full: bool = False) -> list[AgingTestSpec]:
    """Aging-test specs for every feasible campaign cell.

    The desk-scale matrix crosses each cell with every (temp, c_rate) pair.
    ``full=True`` instead emits the full per-cell test counts (945 in
    total), drawing temperature and C-rate uniformly from the ranges spanned
    by ``temps`` and ``c_rates``.
    """
    temps = [float(t) for t in temps]
    c_rates = [float(c) for c in c_rates]
    if not temps or not c_rates:
        raise ParameterError("temps and c_rates must be non-empty")
    if any(c <= 0 for c in c_rates):
        raise ParameterError("c_rates must be positive")

    specs: list[AgingTestSpec] = []
    if not full:
        for soc, dod in feasible_cells():
            for temp in temps:
                for c in c_rates:
                    k = len(specs)
                    specs.append(AgingTestSpec(
                        test_id=f"S{round(soc * 100):03d}_D{round(dod * 100):03d}_T{temp:g}_C{c:g}",
                        initial_soc=soc, dod=dod, c_rate=c, ambient_temp=temp,
                        noise_seed=derive_seed(seed, k)))
        return specs

    rng = np.random.default_rng(seed)
    for soc, dod in feasible_cells():
        for rep in range(CAMPAIGN_COUNTS[soc][dod]):
            temp = float(rng.uniform(min(temps), max(temps))) if len(temps) > 1 else temps[0]
            c = float(rng.uniform(min(c_rates), max(c_rates))) if len(c_rates) > 1 else c_rates[0]
            k = len(specs)
            specs.append(AgingTestSpec(
                test_id=f"S{round(soc * 100):03d}_D{round(dod * 100):03d}_R{rep:02d}",
                initial_soc=soc, dod=dod, c_rate=round(c, 4), ambient_temp=round(temp, 2),
                noise_seed=derive_seed(seed, k)))
    return specs


def _run_one(args):
    spec, params, max_cycles = args
    return run_aging_test(spec, params, max_cycles)


def run_matrix(specs: Sequence[AgingTestSpec], params: OracleParams = OracleParams(),
               jobs: int = 1, max_cycles: int = DEFAULT_MAX_CYCLES) -> list[AgingTestResult]:
    """Run every spec; ``jobs > 1`` fans out to processes with identical results."""
    work = [(s, params, max_cycles) for s in specs]
    if jobs <= 1:
        return [_run_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, work, chunksize=4))


def thin_indices(n: int, max_rows: int | None) -> np.ndarray:
    """Evenly spaced row indices, always keeping the first and last cycle."""
    if max_rows is None or n <= max_rows:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_rows).round().astype(np.int64))


def write_dataset(results: Sequence[AgingTestResult], path: str | Path, *,
                  params: OracleParams, seed: int, max_rows_per_test: int | None = 1000,
                  extra_meta: dict | None = None) -> tuple[Path, Path]:
    """Write the aging CSV plus its sidecar JSON (oracle params and seeds)."""
    path = Path(path)
    frame = pd.concat([r.to_frame(max_rows_per_test) for r in results], ignore_index=True)
    tmp = path.with_name(path.name + ".partial")
    frame.to_csv(tmp, index=False, float_format="%.17g", lineterminator="\n")
    tmp.replace(path)
    meta = {
        "oracle_params": params.to_dict(),
        "master_seed": seed,
        "max_rows_per_test": max_rows_per_test,
        "tests": [{"test_id": r.spec.test_id, "initial_soc": r.spec.initial_soc,
                   "dod": r.spec.dod, "c_rate": r.spec.c_rate,
                   "ambient_temp": r.spec.ambient_temp, "noise_seed": r.spec.noise_seed,
                   "n_cycles": r.n_cycles} for r in results],
    }
    if extra_meta:
        meta.update(extra_meta)
    side = path.with_suffix(".json")
    tmp = side.with_name(side.name + ".partial")
    tmp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    tmp.replace(side)
    return path, side


def read_dataset(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"test_id": str})
    missing = set(CSV_COLUMNS) - set(frame.columns)
    if missing:
        raise ParameterError(f"{path}: missing columns {sorted(missing)}")
    return frame
