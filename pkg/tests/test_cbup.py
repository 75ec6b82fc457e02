import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdmds.aging import oracle_cycle_loss
from bdmds.cbup import (DegradationCostParams, aggregate_cycles, cycle_features, degradation_cost,
                        estimate_degradation, expected_lifetime, oracle_degradation,
                        per_interval_features, predict_cycles, write_cycles)
from bdmds.errors import ParameterError, StateError
from bdmds.mds import solve_mds
from bdmds.nnbd import init_network

from conftest import ConstantModel, hand_schedule


def two_hour_discharge():
    d = np.zeros(24)
    d[10:12] = 54.0
    return hand_schedule(np.zeros(24), d, e_start=270.0)


class TestAggregation:
    def test_idle_schedule(self):
        assert aggregate_cycles(hand_schedule(np.zeros(5), np.zeros(5))) == []

    def test_two_interval_discharge(self):
        (c,) = aggregate_cycles(two_hour_discharge())
        assert (c.start_t, c.end_t, c.direction) == (10, 12, "discharge")
        assert c.avg_power == pytest.approx(54.0)
        assert c.c_rate == pytest.approx(0.18)
        assert c.soc_start == pytest.approx(0.9)
        assert c.dod == pytest.approx(0.4)
        assert c.duration == 2

    def test_direction_change_splits(self):
        c = np.zeros(6)
        d = np.zeros(6)
        c[3], d[4] = 50.0, 50.0
        cycles = aggregate_cycles(hand_schedule(c, d))
        assert [x.direction for x in cycles] == ["charge", "discharge"]
        assert [(x.start_t, x.end_t) for x in cycles] == [(3, 4), (4, 5)]

    def test_idle_gap_splits(self):
        c = np.array([40.0, 0.0, 40.0])
        assert len(aggregate_cycles(hand_schedule(c, np.zeros(3)))) == 2

    def test_temperature_is_run_mean(self):
        d = np.array([0.0, 30.0, 30.0, 30.0])
        (c,) = aggregate_cycles(hand_schedule(np.zeros(4), d, temp=[10.0, 20.0, 23.0, 35.0]))
        assert c.temp == pytest.approx(26.0)

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.sampled_from([-1, 0, 1]), st.floats(1, 20)), min_size=1, max_size=24))
    def test_partition_and_consistency(self, steps):
        charge = np.array([p if s == 1 else 0.0 for s, p in steps])
        discharge = np.array([p if s == -1 else 0.0 for s, p in steps])
        sol = hand_schedule(charge, discharge)
        cycles = aggregate_cycles(sol)
        covered = np.zeros(charge.size, int)
        for c in cycles:
            covered[c.start_t:c.end_t] += 1
            power = (charge if c.direction == "charge" else discharge)[c.start_t:c.end_t]
            assert c.avg_power * c.duration == pytest.approx(power.sum())
            deltas = np.diff(sol.soc[c.start_t:c.end_t + 1])
            assert abs(c.dod - abs(deltas.sum())) <= 1e-9
            assert c.c_rate == pytest.approx(c.avg_power / 300.0)
        assert np.array_equal(covered, ((charge > 0) | (discharge > 0)).astype(int))


class TestPerInterval:
    def test_two_interval_discharge(self):
        X = per_interval_features(two_hour_discharge())
        assert X.shape == (2, 5)
        assert np.allclose(X[:, 3], 0.2) and np.allclose(X[:, 1], 0.2)

    def test_half_hour_step(self):
        # 0.5 h at 60 kW with unit efficiency moves 30 kWh, dod 0.1
        X = per_interval_features(hand_schedule([60.0], [0.0], dt=0.5, eff_char=1.0))
        assert X[0, 3] == pytest.approx(0.1) and X[0, 1] == pytest.approx(0.2)

    def test_idle_excluded(self):
        assert per_interval_features(hand_schedule(np.zeros(3), np.zeros(3))).shape == (0, 5)


class TestEstimate:
    def test_no_cycles(self):
        assert estimate_degradation(ConstantModel(2e-5), [], 1.0) == 0.0

    def test_constant_stub(self):
        cycles = aggregate_cycles(two_hour_discharge())
        assert estimate_degradation(ConstantModel(2e-5), cycles, 0.95) == pytest.approx(1.9e-5)

    def test_untrained_model(self):
        with pytest.raises(StateError):
            estimate_degradation(init_network(), aggregate_cycles(two_hour_discharge()), 1.0)

    def test_additive_over_cycles(self, model, scenario):
        cycles = aggregate_cycles(solve_mds(scenario))
        total = estimate_degradation(model, cycles, 1.0)
        assert total == pytest.approx(sum(estimate_degradation(model, [c], 1.0) for c in cycles), rel=1e-12)
        assert predict_cycles(model, cycles, 1.0).sum() == pytest.approx(total, rel=1e-12)

    def test_oracle_matches_scalar_law(self):
        (c,) = aggregate_cycles(two_hour_discharge())
        expected = oracle_cycle_loss(c.dod, c.c_rate, c.temp, c.soc_start, 1.0)
        assert oracle_degradation([c], 1.0) == pytest.approx(expected, rel=1e-12)

    def test_cbup_tracks_oracle_on_bundled_day(self, model, scenario):
        cycles = aggregate_cycles(solve_mds(scenario))
        truth = oracle_degradation(cycles, 1.0)
        assert abs(estimate_degradation(model, cycles, 1.0) - truth) / truth <= 0.15

    def test_features_order(self):
        (c,) = aggregate_cycles(two_hour_discharge())
        assert np.allclose(cycle_features([c], 0.9)[0], [c.temp, 0.18, 0.9, 0.4, 0.9])


class TestCost:
    def test_unit_price_example(self):
        params = DegradationCostParams.from_unit_price(400.0, 300.0)
        assert params.capital == 120_000.0
        assert degradation_cost(params, 4.5e-5) == pytest.approx(18.0)
        assert degradation_cost(params, 0.0) == 0.0

    def test_salvage_equal_capital(self):
        assert degradation_cost(DegradationCostParams(5000.0, 5000.0), 0.3) == 0.0

    def test_invalid(self):
        with pytest.raises(ParameterError):
            DegradationCostParams(soh_eol=1.0)
        with pytest.raises(ParameterError):
            DegradationCostParams(capital=10.0, salvage=20.0)
        with pytest.raises(ParameterError):
            degradation_cost(DegradationCostParams(), -1e-6)

    @given(bd=st.floats(0, 1e-2), a=st.floats(0, 100))
    def test_linear(self, bd, a):
        p = DegradationCostParams()
        assert degradation_cost(p, a * bd) == pytest.approx(a * degradation_cost(p, bd), rel=1e-12, abs=1e-300)


class TestLifetime:
    @pytest.mark.parametrize("bd,years", [(0.0002, 4.1), (0.000045, 18.3)])
    def test_reference_rows(self, bd, years):
        assert abs(expected_lifetime(bd, 1.0, 0.7) - years) <= 0.05

    def test_one_year(self):
        assert expected_lifetime(0.3 / 365, 1.0, 0.7) == pytest.approx(1.0, rel=1e-15)

    def test_rejects_zero(self):
        with pytest.raises(ParameterError):
            expected_lifetime(0.0)


def test_cycle_export(tmp_path):
    cycles = aggregate_cycles(two_hour_discharge())
    write_cycles(cycles, tmp_path / "cycles.csv", predicted=[1.5e-5])
    frame = pd.read_csv(tmp_path / "cycles.csv")
    assert list(frame.columns) == ["start_t", "end_t", "direction", "avg_power_kw", "c_rate",
                                   "soc_start", "dod", "predicted_bd"]
    assert frame.predicted_bd[0] == 1.5e-5 and not math.isnan(frame.dod[0])
