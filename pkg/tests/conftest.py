from dataclasses import replace

import numpy as np
import pytest

from bdmds.mds import (BessSpec, ExtraConstraints, GeneratorSpec, MicrogridConfig, Profiles,
                       ScheduleSolution, with_profiles)
from bdmds.pipeline import fit_surrogate, simulate_frame
from bdmds.scenario import bundled_scenario


@pytest.fixture(scope="session")
def aging_frame():
    """Default 261-test campaign, thinned to the default rows per test."""
    return simulate_frame(seed=0)


@pytest.fixture(scope="session")
def surrogate(aging_frame):
    """Network trained with every default on the regressed targets."""
    return fit_surrogate(aging_frame, "regressed", seed=0)


@pytest.fixture(scope="session")
def model(surrogate):
    return surrogate.model


@pytest.fixture(scope="session")
def scenario():
    return bundled_scenario()


def flat_profiles(T, load=0.0, price=0.1, temp=25.0, wind=0.0, pv=0.0):
    return Profiles(np.full(T, load, dtype=float), np.full(T, wind, dtype=float),
                    np.full(T, pv, dtype=float), np.full(T, price, dtype=float),
                    np.full(T, temp, dtype=float))


def battery_only(profiles, **bess_kw):
    kw = dict(e_max=300.0, e_min=30.0, p_max=150.0, e_initial=150.0)
    kw.update(bess_kw)
    return MicrogridConfig((), BessSpec(**kw), profiles)


def hand_schedule(charge, discharge, e_start=150.0, dt=1.0, temp=None, **bess_kw):
    """A schedule built from given powers, with the energy path propagated by hand."""
    charge = np.asarray(charge, float)
    discharge = np.asarray(discharge, float)
    T = charge.size
    profiles = flat_profiles(T)
    cfg = replace(battery_only(profiles, e_initial=e_start, **bess_kw), dt=dt)
    if temp is not None:
        cfg = with_profiles(cfg, temp=np.asarray(temp, float))
    b = cfg.bess
    energy = np.empty(T + 1)
    energy[0] = e_start
    for t in range(T):
        energy[t + 1] = energy[t] + dt * (b.eff_char * charge[t] - discharge[t] / b.eff_disc)
    z = np.zeros(T)
    return ScheduleSolution(cfg, ExtraConstraints(), np.zeros((0, T)), np.zeros((0, T), bool),
                            np.zeros((0, T), bool), z, z, z > 0, z > 0, charge, discharge,
                            charge > 0, discharge > 0, energy, 0.0, 0.0)


class ConstantModel:
    """Stands in for a trained network: the same prediction for every row."""

    trained = True

    def __init__(self, value):
        self.value = value

    def predict(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.value)


@pytest.fixture
def generator():
    return GeneratorSpec()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
