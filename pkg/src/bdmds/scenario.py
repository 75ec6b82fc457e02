"""Synthetic day-ahead testbed and small enumeration instances.

The generated profiles stand in for measured residential load, market
prices and weather: seeded sinusoids with noise, 24 hourly points, with
wind and PV scaled so that mean renewable output is a set fraction of
mean load.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError
from .mds import BessSpec, ExtraConstraints, GeneratorSpec, MicrogridConfig, Profiles, Top3Limit

DEFAULT_PENETRATION = 0.8
BUNDLED_SEED = 7


def default_generator() -> GeneratorSpec:
    return GeneratorSpec(p_max=180.0, p_min=30.0, ramp=90.0, cost_linear=0.30,
                         cost_noload=3.0, cost_startup=15.0, initial_on=False)


def default_bess(e_max: float = 300.0, soh: float = 1.0) -> BessSpec:
    return BessSpec(e_max=e_max, e_min=0.1 * e_max, p_max=0.5 * e_max, p_min=0.0,
                    eff_char=0.9, eff_disc=0.9, e_initial=0.5 * e_max, soh=soh)


def make_profiles(seed: int = BUNDLED_SEED, penetration: float = DEFAULT_PENETRATION,
                  hours: int = 24, sell_factor: float = 0.8) -> Profiles:
    if not 0 <= penetration:
        raise ParameterError("penetration must be non-negative")
    if hours < 1:
        raise ParameterError("hours must be positive")
    rng = np.random.default_rng(seed)
    h = np.arange(hours) * 24.0 / hours
    phase = 2 * np.pi / 24.0

    load = 420.0 + 90.0 * np.sin(phase * (h - 10.0)) + rng.normal(0.0, 12.0, hours)
    load = np.maximum(load, 50.0)
    pv_shape = np.clip(np.sin(np.pi * (h - 6.0) / 12.0), 0.0, None)
    pv_shape *= 1.0 + rng.normal(0.0, 0.05, hours)
    wind_shape = np.clip(0.7 + 0.3 * np.cos(phase * h) + rng.normal(0.0, 0.08, hours), 0.0, None)
    # even energy split between the two sources before scaling
    pv_shape = np.maximum(pv_shape, 0.0) / max(pv_shape.mean(), 1e-12)
    wind_shape = wind_shape / max(wind_shape.mean(), 1e-12)
    target = penetration * load.mean()
    pv = 0.5 * target * pv_shape
    wind = 0.5 * target * wind_shape

    # smaller morning and larger evening peak give arbitrage margins of graded size
    price = (0.07 + 0.05 * np.exp(-((h - 8.0) / 1.8) ** 2) + 0.11 * np.exp(-((h - 18.5) / 2.2) ** 2)
             + 0.02 * np.sin(phase * (h - 6.0)) + rng.normal(0.0, 0.006, hours))
    price = np.round(np.maximum(price, 0.01), 4)
    temp = 24.0 + 7.0 * np.sin(phase * (h - 9.0)) + rng.normal(0.0, 0.5, hours)
    return Profiles(np.round(load, 3), np.round(wind, 3), np.round(pv, 3), price,
                    np.round(temp, 2), sell_factor)


def make_scenario(seed: int = BUNDLED_SEED, penetration: float = DEFAULT_PENETRATION,
                  e_max: float = 300.0, hours: int = 24) -> MicrogridConfig:
    """The default testbed: one diesel unit, one 300 kWh battery, a 500 kW tie-line."""
    return MicrogridConfig(generators=(default_generator(),), bess=default_bess(e_max),
                           profiles=make_profiles(seed, penetration, hours),
                           tie_max=500.0, reserve_frac=0.10, dt=24.0 / hours)


def bundled_scenario() -> MicrogridConfig:
    return make_scenario()


def renewable_penetration(profiles: Profiles) -> float:
    return float((profiles.wind + profiles.pv).mean() / profiles.load.mean())


def rescale_penetration(config: MicrogridConfig, penetration: float) -> MicrogridConfig:
    """Scale wind and PV together so mean renewable output hits ``penetration`` × mean load."""
    p = config.profiles
    current = renewable_penetration(p)
    if current <= 0:
        raise ParameterError("scenario has no renewable output to scale")
    k = penetration / current
    return replace(config, profiles=replace(p, wind=p.wind * k, pv=p.pv * k))


# ---------------------------------------------------------------------------
# small instances for the enumeration oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmallInstance:
    """A tiny scheduling problem plus the discrete grids that contain its optimum."""

    name: str
    config: MicrogridConfig
    battery_levels: tuple
    generator_levels: tuple
    extra: ExtraConstraints = ExtraConstraints()


def _profiles(load, price, wind=None, pv=None, temp=25.0, sell_factor=0.8) -> Profiles:
    load = np.asarray(load, dtype=float)
    zeros = np.zeros_like(load)
    return Profiles(load, zeros if wind is None else np.asarray(wind, float),
                    zeros if pv is None else np.asarray(pv, float), np.asarray(price, float),
                    np.full(load.size, temp), sell_factor)


def small_instances() -> list[SmallInstance]:
    """Hand-built instances of at most 4 intervals whose optima lie on the given grids.

    With 0.9 efficiencies a 100 kW charge pairs with an 81 kW discharge,
    so the arbitrage grid uses 1 kW steps; the other instances use unit
    efficiency and 50 kW steps. Generator grids hold off and a few outputs.
    """
    out = []
    idle = BessSpec(e_max=300, e_min=30, p_max=0.0, e_initial=150)
    arb = BessSpec(e_max=300, e_min=30, p_max=100.0, e_initial=150)
    unit_eff = BessSpec(e_max=200, e_min=20, p_max=100.0, eff_char=1.0, eff_disc=1.0, e_initial=100)
    lv2 = tuple(tuple(float(v) for v in np.arange(-100, 101, 1.0)) for _ in range(2))

    out.append(SmallInstance(
        "null", MicrogridConfig((), idle, _profiles([0.0, 0.0], [0.1, 0.2])),
        ((0.0,), (0.0,)), ()))
    cheap_grid = GeneratorSpec(p_max=180, p_min=0, ramp=200, cost_linear=0.25, cost_noload=0, cost_startup=0)
    out.append(SmallInstance(
        "buy_vs_generate", MicrogridConfig((cheap_grid,), idle, _profiles([100.0], [0.10])),
        ((0.0,),), (((0.0, 50.0, 100.0, 180.0),),)))
    out.append(SmallInstance(
        "arbitrage_2h", MicrogridConfig((), arb, _profiles([0.0, 0.0], [0.05, 0.50])), lv2, ()))

    dg = GeneratorSpec(p_max=180, p_min=30, ramp=90, cost_linear=0.12, cost_noload=3, cost_startup=15)
    out.append(SmallInstance(
        "diesel_peak_3h",
        MicrogridConfig((dg,), unit_eff, _profiles([300.0, 450.0, 350.0], [0.06, 0.30, 0.20]),
                        tie_max=400.0),
        ((-100.0, -50.0, 0.0, 50.0, 100.0),) * 3,
        (((0.0, 30.0, 90.0, 180.0),) * 3,),
    ))
    out.append(SmallInstance(
        "ramp_limited_4h",
        MicrogridConfig((dg,), idle, _profiles([200.0, 420.0, 420.0, 200.0], [0.05, 0.40, 0.40, 0.05]),
                        tie_max=300.0),
        ((0.0,),) * 4,
        (((0.0, 30.0, 90.0, 120.0), (0.0, 90.0, 120.0, 180.0), (0.0, 90.0, 120.0, 180.0),
          (0.0, 30.0, 90.0, 120.0)),),
    ))
    out.append(SmallInstance(
        "renewable_export_3h",
        MicrogridConfig((), unit_eff, _profiles([100.0, 100.0, 100.0], [0.05, 0.20, 0.30],
                                                 wind=[250.0, 50.0, 0.0], pv=[0.0, 100.0, 50.0])),
        ((-100.0, -50.0, 0.0, 50.0, 100.0),) * 3, ()))
    out.append(SmallInstance(
        "throughput_cap_4h",
        MicrogridConfig((), unit_eff, _profiles([50.0] * 4, [0.05, 0.30, 0.06, 0.35])),
        ((-100.0, -50.0, 0.0, 50.0, 100.0),) * 4, (),
        ExtraConstraints(throughput_cap=200.0)))
    out.append(SmallInstance(
        "cycle_limit_4h",
        MicrogridConfig((), unit_eff, _profiles([50.0] * 4, [0.05, 0.30, 0.06, 0.35])),
        ((-100.0, -50.0, 0.0, 50.0, 100.0),) * 4, (),
        ExtraConstraints(cycle_transition_limit=1)))
    out.append(SmallInstance(
        "linear_rate_4h",
        MicrogridConfig((), unit_eff, _profiles([50.0] * 4, [0.05, 0.30, 0.06, 0.35])),
        ((-100.0, -50.0, 0.0, 50.0, 100.0),) * 4, (),
        ExtraConstraints(linear_bdc_rate=0.1)))
    out.append(SmallInstance(
        "top3_power_cap_4h",
        MicrogridConfig((), unit_eff, _profiles([50.0] * 4, [0.05, 0.30, 0.06, 0.35])),
        ((-100.0, -50.0, 0.0, 50.0, 100.0),) * 4, (),
        ExtraConstraints(top3=Top3Limit((0, 1, 3), 200.0),
                         power_cap=100.0)))
    out.append(SmallInstance(
        "infeasible_peak",
        MicrogridConfig((), idle, _profiles([900.0], [0.1]), tie_max=500.0),
        ((0.0,),), ()))
    return out
