"""Microgrid day-ahead scheduling as a mixed-integer linear program.

:func:`solve_mds` builds the traditional model (generators with
commitment, grid exchange, one battery, spinning reserve) and optionally
adds the battery-usage restrictions used by the iterative heuristic and
the benchmark models. The MILP is solved exactly with HiGHS through
``scipy.optimize.milp``; :func:`brute_force_schedule` is an independent
enumeration oracle for small instances.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

from .errors import InfeasibleError, ParameterError, SolverTimeout

TOL = 1e-6
MAX_INTERVALS = 96
PROFILE_COLUMNS = ["hour", "load_kw", "wind_kw", "pv_kw", "buy_price", "temp_c"]


@dataclass(frozen=True)
class GeneratorSpec:
    p_max: float = 180.0
    p_min: float = 30.0
    ramp: float = 90.0
    cost_linear: float = 0.30
    cost_noload: float = 3.0
    cost_startup: float = 15.0
    initial_on: bool = False

    def __post_init__(self):
        if not 0 <= self.p_min <= self.p_max:
            raise ParameterError(f"generator needs 0 <= p_min <= p_max, got {self.p_min}, {self.p_max}")
        if not self.ramp > 0:
            raise ParameterError("generator ramp must be positive")
        if min(self.cost_linear, self.cost_noload, self.cost_startup) < 0:
            raise ParameterError("generator costs must be non-negative")


@dataclass(frozen=True)
class BessSpec:
    e_max: float = 300.0
    e_min: float = 30.0
    p_max: float = 150.0
    p_min: float = 0.0
    eff_char: float = 0.9
    eff_disc: float = 0.9
    e_initial: float = 150.0
    soh: float = 1.0

    def __post_init__(self):
        if not 0 <= self.e_min < self.e_max:
            raise ParameterError(f"BESS needs 0 <= e_min < e_max, got {self.e_min}, {self.e_max}")
        if not 0 <= self.p_min <= self.p_max:
            raise ParameterError("BESS needs 0 <= p_min <= p_max")
        if not (0 < self.eff_char <= 1 and 0 < self.eff_disc <= 1):
            raise ParameterError("BESS efficiencies must lie in (0, 1]")
        if not self.e_min <= self.e_initial <= self.e_max:
            raise ParameterError("BESS e_initial must lie in [e_min, e_max]")
        if not 0 < self.soh <= 1:
            raise ParameterError("BESS soh must lie in (0, 1]")


@dataclass(frozen=True)
class Profiles:
    load: np.ndarray
    wind: np.ndarray
    pv: np.ndarray
    buy_price: np.ndarray
    temp: np.ndarray
    sell_factor: float = 0.8

    def __post_init__(self):
        arrays = {}
        for name in ("load", "wind", "pv", "buy_price", "temp"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            arrays[name] = a
            object.__setattr__(self, name, a)
        lengths = {a.size for a in arrays.values()}
        if len(lengths) != 1:
            raise ParameterError(f"profiles must have equal lengths, got {sorted(lengths)}")
        if np.any(arrays["buy_price"] < 0):
            raise ParameterError("prices must be non-negative")
        if self.sell_factor < 0:
            raise ParameterError("sell_factor must be non-negative")

    def __len__(self) -> int:
        return int(self.load.size)

    @property
    def sell_price(self) -> np.ndarray:
        return self.sell_factor * self.buy_price

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"hour": np.arange(1, len(self) + 1), "load_kw": self.load,
                             "wind_kw": self.wind, "pv_kw": self.pv,
                             "buy_price": self.buy_price, "temp_c": self.temp})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, sell_factor: float = 0.8) -> "Profiles":
        missing = set(PROFILE_COLUMNS) - set(frame.columns)
        if missing:
            raise ParameterError(f"profile CSV missing columns {sorted(missing)}")
        frame = frame.sort_values("hour")
        return cls(frame["load_kw"].to_numpy(float), frame["wind_kw"].to_numpy(float),
                   frame["pv_kw"].to_numpy(float), frame["buy_price"].to_numpy(float),
                   frame["temp_c"].to_numpy(float), sell_factor)


@dataclass(frozen=True)
class MicrogridConfig:
    generators: tuple[GeneratorSpec, ...]
    bess: BessSpec
    profiles: Profiles
    tie_max: float = 500.0
    reserve_frac: float = 0.10
    dt: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.tie_max < 0:
            raise ParameterError("tie_max must be non-negative")
        if not 0 <= self.reserve_frac < 1:
            raise ParameterError("reserve_frac must lie in [0, 1)")

    @property
    def horizon(self) -> int:
        return len(self.profiles)

    def to_dict(self) -> dict:
        return {
            "generators": [asdict(g) for g in self.generators],
            "bess": asdict(self.bess),
            "tie_max": self.tie_max,
            "reserve_frac": self.reserve_frac,
            "dt": self.dt,
            "sell_factor": self.profiles.sell_factor,
        }

    def save(self, json_path: str | Path, profiles_path: str | Path) -> None:
        json_path, profiles_path = Path(json_path), Path(profiles_path)
        d = self.to_dict()
        d["profiles_csv"] = profiles_path.name
        _atomic_text(json_path, json.dumps(d, indent=2) + "\n")
        _atomic_text(profiles_path, self.profiles.to_frame().to_csv(index=False, float_format="%.10g",
                                                                    lineterminator="\n"))

    @classmethod
    def load(cls, json_path: str | Path, profiles_path: str | Path | None = None) -> "MicrogridConfig":
        json_path = Path(json_path)
        d = json.loads(json_path.read_text())
        if profiles_path is None:
            profiles_path = json_path.parent / d["profiles_csv"]
        profiles = Profiles.from_frame(pd.read_csv(profiles_path), d.get("sell_factor", 0.8))
        return cls(tuple(GeneratorSpec(**g) for g in d["generators"]), BessSpec(**d["bess"]),
                   profiles, d.get("tie_max", 500.0), d.get("reserve_frac", 0.1), d.get("dt", 1.0))


@dataclass(frozen=True)
class Top3Limit:
    intervals: tuple[int, int, int]
    cap: float


@dataclass(frozen=True)
class ExtraConstraints:
    """Battery-usage restrictions added on top of the traditional model.

    Interval indices are 0-based.
    """

    throughput_cap: float | None = None
    top3: Top3Limit | None = None
    power_cap: float | None = None
    cycle_transition_limit: int | None = None
    linear_bdc_rate: float | None = None

    def __post_init__(self):
        for name in ("throughput_cap", "power_cap", "linear_bdc_rate"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ParameterError(f"{name} must be non-negative")
        if self.cycle_transition_limit is not None and self.cycle_transition_limit < 0:
            raise ParameterError("cycle_transition_limit must be non-negative")
        if self.top3 is not None:
            if len(set(self.top3.intervals)) != 3:
                raise ParameterError("top3 intervals must be 3 distinct indices")
            if self.top3.cap < 0:
                raise ParameterError("top3 cap must be non-negative")

    @property
    def empty(self) -> bool:
        return all(getattr(self, f) is None for f in
                   ("throughput_cap", "top3", "power_cap", "cycle_transition_limit", "linear_bdc_rate"))

    def bounds_summary(self) -> dict:
        return {
            "throughput_cap": self.throughput_cap,
            "top3_intervals": None if self.top3 is None else list(self.top3.intervals),
            "top3_cap": None if self.top3 is None else self.top3.cap,
            "power_cap": self.power_cap,
            "cycle_transition_limit": self.cycle_transition_limit,
            "linear_bdc_rate": self.linear_bdc_rate,
        }


@dataclass
class ScheduleSolution:
    config: MicrogridConfig
    extra: ExtraConstraints
    gen_power: np.ndarray      # (G, T)
    gen_on: np.ndarray
    gen_startup: np.ndarray
    buy: np.ndarray
    sell: np.ndarray
    buy_on: np.ndarray
    sell_on: np.ndarray
    charge: np.ndarray
    discharge: np.ndarray
    charge_on: np.ndarray
    discharge_on: np.ndarray
    energy: np.ndarray         # (T+1,): energy[t] is stored energy at the start of interval t
    cost: float                # operation cost, objective of the traditional model
    objective: float           # solver objective (adds the linear degradation term, if any)
    status: str = "optimal"
    gap: float = 0.0

    @property
    def soc(self) -> np.ndarray:
        return self.energy / self.config.bess.e_max

    @property
    def battery_power(self) -> np.ndarray:
        """Net battery output: positive when discharging."""
        return self.discharge - self.charge

    @property
    def throughput(self) -> float:
        return float(self.config.dt * np.sum(self.charge + self.discharge))

    def to_frame(self) -> pd.DataFrame:
        T = self.config.horizon
        data = {"hour": np.arange(1, T + 1)}
        for i in range(self.gen_power.shape[0]):
            data[f"gen{i}_kw"] = self.gen_power[i]
            data[f"gen{i}_on"] = self.gen_on[i].astype(int)
            data[f"gen{i}_startup"] = self.gen_startup[i].astype(int)
        data.update({
            "buy_kw": self.buy, "sell_kw": self.sell,
            "buy_on": self.buy_on.astype(int), "sell_on": self.sell_on.astype(int),
            "charge_kw": self.charge, "discharge_kw": self.discharge,
            "charge_on": self.charge_on.astype(int), "discharge_on": self.discharge_on.astype(int),
            "energy_start_kwh": self.energy[:-1], "energy_end_kwh": self.energy[1:],
            "soc_start": self.soc[:-1], "soc_end": self.soc[1:],
        })
        return pd.DataFrame(data)

    def summary(self) -> dict:
        return {"operation_cost": self.cost, "objective": self.objective, "status": self.status,
                "gap": self.gap, "throughput_kwh": self.throughput}


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(text)
    tmp.replace(path)


# ---------------------------------------------------------------------------
# model assembly
# ---------------------------------------------------------------------------

class _Builder:
    def __init__(self):
        self.n = 0
        self.lb: list[np.ndarray] = []
        self.ub: list[np.ndarray] = []
        self.integ: list[np.ndarray] = []
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.rlo: list[float] = []
        self.rhi: list[float] = []

    def var(self, shape, lb, ub, integer=False) -> np.ndarray:
        size = int(np.prod(shape))
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        self.lb.append(np.broadcast_to(np.asarray(lb, float), shape).ravel())
        self.ub.append(np.broadcast_to(np.asarray(ub, float), shape).ravel())
        self.integ.append(np.full(size, 1 if integer else 0))
        return idx

    def row(self, terms, lo=-np.inf, hi=np.inf) -> None:
        r = len(self.rlo)
        for col, coef in terms:
            if coef != 0:
                self.rows.append(r)
                self.cols.append(int(col))
                self.vals.append(float(coef))
        self.rlo.append(lo)
        self.rhi.append(hi)

    def matrices(self):
        A = sparse.csr_array((self.vals, (self.rows, self.cols)), shape=(len(self.rlo), self.n))
        return (A, np.array(self.rlo), np.array(self.rhi), np.concatenate(self.lb),
                np.concatenate(self.ub), np.concatenate(self.integ))


@dataclass
class MilpProblem:
    """Standard-form MILP handed to a backend: min c.x s.t. lo <= A x <= hi, bounds, integrality."""

    c: np.ndarray
    A: sparse.csr_array
    lo: np.ndarray
    hi: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray
    index: dict = field(default_factory=dict)


@dataclass
class MilpResult:
    x: np.ndarray | None
    objective: float
    status: str           # "optimal" | "infeasible" | "timeout" | "error"
    gap: float = 0.0
    message: str = ""


def _build(config: MicrogridConfig, extra: ExtraConstraints) -> MilpProblem:
    T = config.horizon
    G = len(config.generators)
    dt = config.dt
    p = config.profiles
    b = config.bess
    gens = config.generators
    m = _Builder()

    pmax_g = np.array([g.p_max for g in gens]).reshape(G, 1) * np.ones((G, T)) if G else np.zeros((0, T))
    pg = m.var((G, T), 0.0, pmax_g)
    ug = m.var((G, T), 0.0, 1.0, integer=True)
    vg = m.var((G, T), 0.0, 1.0)
    pb = m.var((T,), 0.0, config.tie_max)
    ps = m.var((T,), 0.0, config.tie_max)
    ub_ = m.var((T,), 0.0, 1.0, integer=True)
    us = m.var((T,), 0.0, 1.0, integer=True)
    pcap = b.p_max if extra.power_cap is None else min(b.p_max, extra.power_cap)
    pc = m.var((T,), 0.0, pcap)
    pd_ = m.var((T,), 0.0, pcap)
    uc = m.var((T,), 0.0, 1.0, integer=True)
    ud = m.var((T,), 0.0, 1.0, integer=True)
    e = m.var((T,), b.e_min, b.e_max)

    net = p.load - p.wind - p.pv
    for t in range(T):
        # power balance
        m.row([(pb[t], 1), (ps[t], -1), (pd_[t], 1), (pc[t], -1)] + [(pg[i, t], 1) for i in range(G)],
              net[t], net[t])
        # grid exchange
        m.row([(ub_[t], 1), (us[t], 1)], hi=1)
        m.row([(pb[t], 1), (ub_[t], -config.tie_max)], hi=0)
        m.row([(ps[t], 1), (us[t], -config.tie_max)], hi=0)
        # battery mode and power
        m.row([(uc[t], 1), (ud[t], 1)], hi=1)
        m.row([(pc[t], 1), (uc[t], -b.p_max)], hi=0)
        m.row([(pd_[t], 1), (ud[t], -b.p_max)], hi=0)
        if b.p_min > 0:
            m.row([(pc[t], -1), (uc[t], b.p_min)], hi=0)
            m.row([(pd_[t], -1), (ud[t], b.p_min)], hi=0)
        # energy recursion; e[t] is the energy after interval t
        terms = [(e[t], 1), (pc[t], -dt * b.eff_char), (pd_[t], dt / b.eff_disc)]
        rhs = 0.0
        if t == 0:
            rhs = b.e_initial
        else:
            terms.append((e[t - 1], -1))
        m.row(terms, rhs, rhs)
        # reserve
        headroom = config.tie_max + sum(g.p_max for g in gens) - config.reserve_frac * p.load[t]
        m.row([(pb[t], 1), (ps[t], -1)] + [(pg[i, t], 1) for i in range(G)], hi=headroom)
        for i, g in enumerate(gens):
            # output limits under commitment
            m.row([(pg[i, t], 1), (ug[i, t], -g.p_max)], hi=0)
            m.row([(pg[i, t], -1), (ug[i, t], g.p_min)], hi=0)
            # start-up indicator
            if t == 0:
                m.row([(ug[i, t], 1), (vg[i, t], -1)], hi=float(g.initial_on))
            else:
                m.row([(ug[i, t], 1), (ug[i, t - 1], -1), (vg[i, t], -1)], hi=0)
                # ramping
                m.row([(pg[i, t], 1), (pg[i, t - 1], -1)], hi=dt * g.ramp)
                m.row([(pg[i, t - 1], 1), (pg[i, t], -1)], hi=dt * g.ramp)
    # closing energy
    m.row([(e[T - 1], 1)], b.e_initial, b.e_initial)

    if extra.throughput_cap is not None:
        m.row([(pc[t], dt) for t in range(T)] + [(pd_[t], dt) for t in range(T)], hi=extra.throughput_cap)
    if extra.top3 is not None:
        idx = extra.top3.intervals
        if any(not 0 <= t < T for t in idx):
            raise ParameterError(f"top3 intervals {idx} outside horizon {T}")
        m.row([(pc[t], dt) for t in idx] + [(pd_[t], dt) for t in idx], hi=extra.top3.cap)
    index = dict(pg=pg, ug=ug, vg=vg, pb=pb, ps=ps, ub=ub_, us=us, pc=pc, pd=pd_, uc=uc, ud=ud, e=e)
    if extra.cycle_transition_limit is not None:
        for name, u in (("vc", uc), ("vd", ud)):
            v = m.var((T,), 0.0, 1.0, integer=True)
            index[name] = v
            m.row([(v[0], 1)], 0, 0)  # no transition before the first interval
            # v[t] = u[t] xor u[t-1]
            for t in range(1, T):
                m.row([(v[t], 1), (u[t], -1), (u[t - 1], -1)], hi=0)
                m.row([(v[t], 1), (u[t], -1), (u[t - 1], 1)], lo=0)
                m.row([(v[t], 1), (u[t - 1], -1), (u[t], 1)], lo=0)
                m.row([(v[t], 1), (u[t], 1), (u[t - 1], 1)], hi=2)
            m.row([(v[t], 1) for t in range(T)], hi=extra.cycle_transition_limit)

    A, lo, hi, lb, ubd, integ = m.matrices()
    c = np.zeros(m.n)
    for i, g in enumerate(gens):
        c[pg[i]] = dt * g.cost_linear
        c[ug[i]] = dt * g.cost_noload
        c[vg[i]] = g.cost_startup
    c[pb] = dt * p.buy_price
    c[ps] = -dt * p.sell_price
    if extra.linear_bdc_rate:
        c[pc] += dt * extra.linear_bdc_rate
        c[pd_] += dt * extra.linear_bdc_rate
    return MilpProblem(c, A, lo, hi, lb, ubd, integ, index)


def highs_backend(problem: MilpProblem, time_limit: float, rel_gap: float) -> MilpResult:
    """Default backend: HiGHS branch-and-cut through scipy."""
    res = milp(problem.c, integrality=problem.integrality, bounds=Bounds(problem.lb, problem.ub),
               constraints=LinearConstraint(problem.A, problem.lo, problem.hi),
               options={"time_limit": time_limit, "mip_rel_gap": rel_gap, "disp": False})
    gap = float(getattr(res, "mip_gap", 0.0) or 0.0)
    if res.status == 0:
        return MilpResult(res.x, float(res.fun), "optimal", gap, res.message)
    if res.status == 2:
        return MilpResult(None, math.nan, "infeasible", message=res.message)
    if res.status == 1:
        return MilpResult(res.x, float(res.fun) if res.x is not None else math.nan, "timeout", gap, res.message)
    return MilpResult(None, math.nan, "error", message=res.message)


Backend = Callable[[MilpProblem, float, float], MilpResult]


def _polish(problem: MilpProblem, x: np.ndarray) -> np.ndarray:
    """Fix binaries at their rounded values and re-solve the LP for a clean vertex."""
    integ = problem.integrality.astype(bool)
    lb = problem.lb.copy()
    ub = problem.ub.copy()
    lb[integ] = ub[integ] = np.round(x[integ])
    res = milp(problem.c, bounds=Bounds(lb, ub),
               constraints=LinearConstraint(problem.A, problem.lo, problem.hi),
               options={"disp": False})
    if res.status != 0:
        return x
    out = res.x.copy()
    out[integ] = np.round(out[integ])
    out[~integ & (np.abs(out) < 1e-9)] = 0.0
    return out


def operation_cost(config: MicrogridConfig, gen_power, gen_on, gen_startup, buy, sell) -> float:
    """Grid energy cost minus export revenue plus generator running and startup costs."""
    dt = config.dt
    p = config.profiles
    total = dt * float(np.sum(buy * p.buy_price) - np.sum(sell * p.sell_price))
    for i, g in enumerate(config.generators):
        total += dt * g.cost_linear * float(np.sum(gen_power[i]))
        total += dt * g.cost_noload * float(np.sum(gen_on[i]))
        total += g.cost_startup * float(np.sum(gen_startup[i]))
    return total


def infeasibility_report(config: MicrogridConfig) -> dict:
    """Aggregate necessary conditions; names the first violated one per interval."""
    p = config.profiles
    b = config.bess
    gmax = sum(g.p_max for g in config.generators)
    net = p.load - p.wind - p.pv
    out = {}
    for t in range(config.horizon):
        supply = config.tie_max + gmax + b.p_max
        if net[t] > supply + TOL:
            out[f"interval {t + 1}"] = (f"peak net load {net[t]:.1f} kW exceeds tie + generation + "
                                        f"storage {supply:.1f} kW")
        elif -net[t] > config.tie_max + b.p_max + TOL:
            out[f"interval {t + 1}"] = (f"renewable surplus {-net[t]:.1f} kW exceeds export + charging "
                                        f"{config.tie_max + b.p_max:.1f} kW")
        elif net[t] - b.p_max > config.tie_max + gmax - config.reserve_frac * p.load[t] + TOL:
            out[f"interval {t + 1}"] = "reserve requirement cannot be met"
    if config.generators:
        g = config.generators
        if any(gg.p_min > 0 for gg in g):
            out.setdefault("note", "generator minimum output or ramping may also bind")
    return out


def solve_mds(config: MicrogridConfig, extra: ExtraConstraints = ExtraConstraints(), *,
              backend: Backend = highs_backend, time_limit: float = 60.0,
              rel_gap: float = 1e-7, max_intervals: int = MAX_INTERVALS) -> ScheduleSolution:
    """Solve the traditional (empty ``extra``) or conserved scheduling model to optimality."""
    T = config.horizon
    if T < 1:
        raise ParameterError("horizon must contain at least one interval")
    if T > max_intervals:
        raise ParameterError(f"horizon {T} exceeds size guard {max_intervals}")
    problem = _build(config, extra)
    res = backend(problem, time_limit, rel_gap)
    if res.status == "infeasible":
        report = infeasibility_report(config)
        if extra.empty:
            msg = "scheduling problem is infeasible"
        else:
            msg = "scheduling problem is infeasible under the extra battery restrictions"
        if report:
            msg += ": " + "; ".join(f"{k}: {v}" for k, v in report.items())
        raise InfeasibleError(msg, report)
    if res.status == "error":
        raise SolverTimeout(f"solver failed: {res.message}")
    if res.status == "timeout":
        incumbent = None if res.x is None else _unpack(config, extra, problem, res.x, "timeout", res.gap)
        raise SolverTimeout(f"no proven optimum within {time_limit} s (gap {res.gap:.3g})", incumbent)
    x = _polish(problem, res.x)
    return _unpack(config, extra, problem, x, "optimal", res.gap)


def _unpack(config, extra, problem, x, status, gap) -> ScheduleSolution:
    ix = problem.index
    b = config.bess
    dt = config.dt
    charge = x[ix["pc"]]
    discharge = x[ix["pd"]]
    energy = np.empty(config.horizon + 1)
    energy[0] = b.e_initial
    # trajectory reported from the recursion itself
    for t in range(config.horizon):
        energy[t + 1] = energy[t] + dt * (b.eff_char * charge[t] - discharge[t] / b.eff_disc)
    gen_power = x[ix["pg"]]
    gen_on = x[ix["ug"]] > 0.5
    startup = np.zeros_like(gen_on)
    for i, g in enumerate(config.generators):
        prev = np.concatenate([[g.initial_on], gen_on[i, :-1]])
        startup[i] = gen_on[i] & ~prev
    buy, sell = x[ix["pb"]], x[ix["ps"]]
    cost = operation_cost(config, gen_power, gen_on, startup, buy, sell)
    objective = cost
    if extra.linear_bdc_rate:
        objective += extra.linear_bdc_rate * dt * float(np.sum(charge + discharge))
    return ScheduleSolution(
        config=config, extra=extra, gen_power=gen_power, gen_on=gen_on, gen_startup=startup,
        buy=buy, sell=sell, buy_on=x[ix["ub"]] > 0.5, sell_on=x[ix["us"]] > 0.5,
        charge=charge, discharge=discharge, charge_on=x[ix["uc"]] > 0.5,
        discharge_on=x[ix["ud"]] > 0.5, energy=energy, cost=cost, objective=objective,
        status=status, gap=gap)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class ResidualReport:
    residuals: dict[str, float]
    flags: list[str]
    objective_recomputed: float
    objective_reported: float

    @property
    def ok(self) -> bool:
        return not self.flags

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0


def _pos(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.max(np.maximum(a, 0.0))) if a.size else 0.0


def min_transitions(charge: np.ndarray, discharge: np.ndarray, floor: float = 1e-9) -> tuple[int, int]:
    """Smallest (charge, discharge) status-change counts consistent with the powers.

    Idle intervals may keep either status, as allowed when the minimum
    battery power is zero. Minimizes the larger of the two counts.
    """
    T = charge.size
    choices = []
    for t in range(T):
        if charge[t] > floor:
            choices.append([(1, 0)])
        elif discharge[t] > floor:
            choices.append([(0, 1)])
        else:
            choices.append([(0, 0), (1, 0), (0, 1)])
    frontier = {s: {(0, 0)} for s in choices[0]}
    for t in range(1, T):
        nxt: dict = {}
        for s in choices[t]:
            pts = set()
            for prev, counts in frontier.items():
                dc = abs(s[0] - prev[0])
                dd = abs(s[1] - prev[1])
                pts |= {(c + dc, d + dd) for c, d in counts}
            # keep the Pareto front only
            nxt[s] = {q for q in pts if not any(r != q and r[0] <= q[0] and r[1] <= q[1] for r in pts)}
        frontier = nxt
    allpts = set().union(*frontier.values())
    return min(allpts, key=lambda q: (max(q), q))


def validate_solution(config: MicrogridConfig, solution: ScheduleSolution,
                      extra: ExtraConstraints | None = None, tol: float = TOL) -> ResidualReport:
    """Recompute every constraint residual and the objective from scratch."""
    extra = solution.extra if extra is None else extra
    T = config.horizon
    if solution.charge.size != T or solution.energy.size != T + 1:
        raise ParameterError("solution dimensions do not match the configuration")
    p = config.profiles
    b = config.bess
    dt = config.dt
    s = solution
    r: dict[str, float] = {}
    gsum = s.gen_power.sum(axis=0) if s.gen_power.size else np.zeros(T)

    r["power_balance"] = float(np.max(np.abs(s.buy + gsum + p.wind + p.pv + s.discharge
                                           - s.sell - p.load - s.charge)))
    lim = up = down = su = 0.0
    for i, g in enumerate(config.generators):
        on = s.gen_on[i].astype(float)
        pg = s.gen_power[i]
        lim = max(lim, _pos(pg - g.p_max * on), _pos(g.p_min * on - pg), _pos(-pg))
        if T > 1:
            up = max(up, _pos(pg[1:] - pg[:-1] - dt * g.ramp))
            down = max(down, _pos(pg[:-1] - pg[1:] - dt * g.ramp))
        prev = np.concatenate([[float(g.initial_on)], on[:-1]])
        su = max(su, _pos(on - prev - s.gen_startup[i].astype(float)))
    r["gen_limits"], r["ramp_up"], r["ramp_down"], r["startup_link"] = lim, up, down, su

    ub_, us = s.buy_on.astype(float), s.sell_on.astype(float)
    r["grid_exclusive"] = max(_pos(ub_ + us - 1), float(np.max(np.minimum(s.buy, s.sell))))
    r["buy_limit"] = max(_pos(s.buy - ub_ * config.tie_max), _pos(-s.buy))
    r["sell_limit"] = max(_pos(s.sell - us * config.tie_max), _pos(-s.sell))
    uc, ud = s.charge_on.astype(float), s.discharge_on.astype(float)
    r["bess_exclusive"] = max(_pos(uc + ud - 1), float(np.max(np.minimum(s.charge, s.discharge))))
    r["charge_limit"] = max(_pos(s.charge - uc * b.p_max), _pos(uc * b.p_min - s.charge), _pos(-s.charge))
    r["discharge_limit"] = max(_pos(s.discharge - ud * b.p_max), _pos(ud * b.p_min - s.discharge),
                                    _pos(-s.discharge))
    r["soc_definition"] = float(np.max(np.abs(s.soc - s.energy / b.e_max)))
    expected = s.energy[:-1] + dt * (b.eff_char * s.charge - s.discharge / b.eff_disc)
    r["energy_balance"] = float(max(abs(s.energy[0] - b.e_initial), np.max(np.abs(s.energy[1:] - expected))))
    r["final_energy"] = abs(float(s.energy[-1]) - b.e_initial)
    r["energy_bounds"] = max(_pos(b.e_min - s.energy), _pos(s.energy - b.e_max))
    headroom = config.tie_max - s.buy + s.sell + sum(g.p_max for g in config.generators) - gsum
    r["reserve"] = _pos(config.reserve_frac * p.load - headroom)

    if extra.throughput_cap is not None:
        r["throughput_cap"] = max(0.0, s.throughput - extra.throughput_cap)
    if extra.top3 is not None:
        idx = list(extra.top3.intervals)
        r["top3_cap"] = max(0.0, dt * float(np.sum(s.charge[idx] + s.discharge[idx])) - extra.top3.cap)
    if extra.power_cap is not None:
        r["power_cap"] = max(_pos(s.charge - extra.power_cap), _pos(s.discharge - extra.power_cap))
    if extra.cycle_transition_limit is not None:
        nc, nd = min_transitions(s.charge, s.discharge)
        r["cycle_limit"] = float(max(0, max(nc, nd) - extra.cycle_transition_limit))

    recomputed = operation_cost(config, s.gen_power, s.gen_on, s.gen_startup, s.buy, s.sell)
    r["objective"] = abs(recomputed - s.cost) / max(1.0, abs(recomputed))
    flags = [name for name, v in r.items() if not v <= tol]
    return ResidualReport(r, flags, recomputed, s.cost)


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

@dataclass
class BruteForceResult:
    feasible: bool
    cost: float
    objective: float
    battery_power: np.ndarray | None
    gen_power: np.ndarray | None
    n_evaluated: int


def brute_force_schedule(config: MicrogridConfig, battery_levels: Sequence[Sequence[float]],
                         generator_levels: Sequence[Sequence[Sequence[float]]] | None = None,
                         extra: ExtraConstraints = ExtraConstraints(),
                         max_enumeration: int = 10**7, tol: float = 1e-7) -> BruteForceResult:
    """Exhaustive search over discrete battery and generator output grids.

    ``battery_levels[t]`` lists candidate net battery outputs (kW, positive =
    discharge) for interval t; ``generator_levels[i][t]`` lists candidate
    outputs of generator i (0 means off). Grid exchange follows from the
    power balance. Returns the cheapest feasible combination.
    """
    T = config.horizon
    G = len(config.generators)
    if len(battery_levels) != T:
        raise ParameterError("battery_levels needs one list per interval")
    if generator_levels is None:
        generator_levels = [[[0.0]] * T for _ in range(G)]
    if len(generator_levels) != G or any(len(gl) != T for gl in generator_levels):
        raise ParameterError("generator_levels must be shaped [generator][interval]")
    size = math.prod(len(lv) for lv in battery_levels)
    gsize = math.prod(len(lv) for gl in generator_levels for lv in gl)
    if size * gsize > max_enumeration:
        raise ParameterError(f"enumeration size {size * gsize} exceeds {max_enumeration}")

    p = config.profiles
    b = config.bess
    dt = config.dt
    obj_rate = extra.linear_bdc_rate or 0.0

    # all battery combinations at once: (N, T)
    grids = np.meshgrid(*[np.asarray(lv, dtype=float) for lv in battery_levels], indexing="ij")
    bat = np.stack([g.ravel() for g in grids], axis=1)
    dis = np.maximum(bat, 0.0)
    chg = np.maximum(-bat, 0.0)
    cap = b.p_max if extra.power_cap is None else min(b.p_max, extra.power_cap)
    ok = np.all(chg <= cap + tol, axis=1) & np.all(dis <= cap + tol, axis=1)
    ok &= np.all((chg <= tol) | (chg >= b.p_min - tol), axis=1)
    ok &= np.all((dis <= tol) | (dis >= b.p_min - tol), axis=1)
    energy = b.e_initial + np.cumsum(dt * (b.eff_char * chg - dis / b.eff_disc), axis=1)
    ok &= np.all(energy >= b.e_min - tol, axis=1) & np.all(energy <= b.e_max + tol, axis=1)
    ok &= np.abs(energy[:, -1] - b.e_initial) <= 1e-6
    use = dt * (chg + dis)
    if extra.throughput_cap is not None:
        ok &= use.sum(axis=1) <= extra.throughput_cap + tol
    if extra.top3 is not None:
        ok &= use[:, list(extra.top3.intervals)].sum(axis=1) <= extra.top3.cap + tol
    if extra.cycle_transition_limit is not None:
        lim = extra.cycle_transition_limit
        for k in np.flatnonzero(ok):
            if max(min_transitions(chg[k], dis[k])) > lim:
                ok[k] = False

    best = BruteForceResult(False, math.inf, math.inf, None, None, 0)
    per_gen = [list(itertools.product(*gl)) for gl in generator_levels]
    for combo in itertools.product(*per_gen) if G else [()]:
        gp = np.array(combo, dtype=float).reshape(G, T) if G else np.zeros((0, T))
        on = gp > 0
        gen_ok = True
        gcost = 0.0
        for i, g in enumerate(config.generators):
            if np.any(on[i] & ((gp[i] < g.p_min - tol) | (gp[i] > g.p_max + tol))) or np.any(gp[i] < 0):
                gen_ok = False
                break
            if T > 1 and np.any(np.abs(np.diff(gp[i])) > dt * g.ramp + tol):
                gen_ok = False
                break
            prev = np.concatenate([[g.initial_on], on[i, :-1]])
            gcost += (dt * g.cost_linear * gp[i].sum() + dt * g.cost_noload * on[i].sum()
                      + g.cost_startup * np.sum(on[i] & ~prev))
        best.n_evaluated += size
        if not gen_ok:
            continue
        gsum = gp.sum(axis=0)
        need = p.load + chg - dis - gsum - p.wind - p.pv   # (N, T)
        buy = np.maximum(need, 0.0)
        sell = np.maximum(-need, 0.0)
        feas = ok & np.all(buy <= config.tie_max + tol, axis=1) & np.all(sell <= config.tie_max + tol, axis=1)
        headroom = config.tie_max - buy + sell + sum(g.p_max for g in config.generators) - gsum
        feas &= np.all(headroom >= config.reserve_frac * p.load - tol, axis=1)
        if not feas.any():
            continue
        cost = dt * (buy @ p.buy_price - sell @ p.sell_price) + gcost
        objective = cost + obj_rate * use.sum(axis=1)
        objective = np.where(feas, objective, np.inf)
        k = int(np.argmin(objective))
        if objective[k] < best.objective:
            best = BruteForceResult(True, float(cost[k]), float(objective[k]), bat[k].copy(), gp.copy(),
                                    best.n_evaluated)
    return best


def with_profiles(config: MicrogridConfig, **changes) -> MicrogridConfig:
    """Copy of ``config`` with some profile arrays replaced."""
    return replace(config, profiles=replace(config.profiles, **changes))
