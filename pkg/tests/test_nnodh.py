import json
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bdmds import nnodh
from bdmds.cbup import DegradationCostParams
from bdmds.errors import InfeasibleError, ParameterError
from bdmds.mds import BessSpec, ExtraConstraints, with_profiles
from bdmds.nnodh import (IterationRecord, NnodhConfig, back_derive_reference, best_index, check_stop,
                         compare_benchmarks, compute_metrics, default_linear_rate, next_constraints,
                         reference_linear_rate, run)
from bdmds.scenario import make_scenario

from conftest import ConstantModel, hand_schedule


def record(k, op, deg):
    return IterationRecord(k, None, 0.0, 0.0, op, deg, ExtraConstraints())


@pytest.fixture(scope="module")
def short_day():
    """An eight-hour slice of the bundled scenario, cheap enough for many runs."""
    return make_scenario(hours=8)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(strategy="XYZ"), dict(alpha=0.0), dict(alpha=1.0),
                                    dict(stop_window=4), dict(max_iterations=5)])
    def test_rejected(self, kw):
        with pytest.raises(ParameterError):
            NnodhConfig(**kw)


class TestNextConstraints:
    def test_bcl(self):
        prev = hand_schedule([50.0, 0.0], [0.0, 50.0])
        assert next_constraints("BCL", 0.05, prev, 2).throughput_cap == pytest.approx(95.0)

    def test_brl(self):
        prev = hand_schedule([10.0], [0.0])
        assert next_constraints("BRL", 0.1, prev, 3).power_cap == pytest.approx(121.5)

    def test_pbcl_top_three(self):
        powers = np.array([0, 80, 0, 120, 50, 150, 0, 0], float)
        prev = hand_schedule(np.where(np.arange(8) % 2 == 0, powers, 0.0),
                             np.where(np.arange(8) % 2 == 1, powers, 0.0), e_start=250.0)
        top = next_constraints("PBCL", 0.03, prev, 2).top3
        assert top.intervals == (5, 3, 1)
        assert top.cap == pytest.approx(339.5)

    def test_pbcl_ties_prefer_lower_index(self):
        prev = hand_schedule([20.0, 20.0, 20.0, 20.0], [0.0] * 4, e_start=30.0)
        assert next_constraints("PBCL", 0.1, prev, 2).top3.intervals == (0, 1, 2)

    def test_all_sets_every_family(self):
        extra = next_constraints("ALL", 0.1, hand_schedule([30.0, 0, 0], [0, 20.0, 0]), 2)
        assert extra.throughput_cap is not None and extra.top3 is not None and extra.power_cap is not None

    def test_idle_previous_gives_zero_caps(self):
        extra = next_constraints("BCL", 0.1, hand_schedule(np.zeros(3), np.zeros(3)), 2)
        assert extra.throughput_cap == 0.0

    def test_first_iteration_rejected(self):
        with pytest.raises(ParameterError):
            next_constraints("BCL", 0.1, hand_schedule([1.0], [0.0]), 1)


class TestStopRule:
    def test_valley(self):
        totals = [100, 99, 98, 97, 96, 95, 96, 97, 98, 99, 100]
        assert check_stop(totals)
        assert best_index(totals) == 6

    def test_short_trace(self):
        assert not check_stop([5, 4, 3, 4, 5])

    def test_tie_counts_as_neither(self):
        assert not check_stop([100, 99, 98, 97, 96, 96, 97, 98, 99, 100, 101])

    def test_only_last_window_matters(self):
        totals = [7, 200, 100, 99, 98, 97, 96, 95, 96, 97, 98, 99, 100]
        assert check_stop(totals)

    @given(st.lists(st.floats(0, 1e4), min_size=1, max_size=50))
    def test_best_is_a_true_minimum(self, totals):
        b = best_index(totals)
        assert all(totals[b - 1] <= t for t in totals)
        assert totals.index(min(totals)) == b - 1

    @given(st.integers(11, 200))
    def test_monotone_never_stops(self, n):
        assert not check_stop(list(range(n, 0, -1)))


class TestMetrics:
    def test_best_first_is_zero(self):
        m = compute_metrics([record(1, 100.0, 20.0), record(2, 110.0, 15.0)])
        assert (m.dcr, m.tcr, m.oci) == (0.0, 0.0, 0.0)

    def test_reference_column(self):
        trace = [record(1, 525.0 - 50.12, 50.12), record(2, 494.36 - 10.74, 10.74)]
        m = compute_metrics(trace)
        assert m.dcr == pytest.approx(78.57, abs=0.1 * 78.57 / 100)
        assert abs(m.tcr - 5.83) <= 0.05

    def test_zero_degradation_is_undefined(self):
        m = compute_metrics([record(1, 10.0, 0.0)])
        assert m.dcr is None and m.tcr == 0.0

    def test_negative_operation_cost_reference(self):
        m = compute_metrics([record(1, -20.0, 5.0), record(2, -18.0, 1.0)])
        assert m.oci == pytest.approx(10.0)

    def test_empty(self):
        with pytest.raises(ParameterError):
            compute_metrics([])

    def test_back_derived_identity(self):
        ref = back_derive_reference(494.36, 10.74, 5.82, 78.57, 1.83)
        assert ref["identity_gap"] <= 0.002
        assert ref["bdc_max"] == pytest.approx(50.12, abs=0.01)


class TestRun:
    def test_empty_battery_stops_at_once(self, short_day):
        cfg = replace(short_day, bess=BessSpec(e_max=300, e_min=30, p_max=0.0, e_initial=150))
        res = run(cfg, ConstantModel(1e-5))
        assert res.iterations == 1 and res.best_index == 1
        assert res.stop_reason == "zero throughput"
        assert res.best.deg_cost == 0.0

    @pytest.mark.parametrize("strategy", ["BCL", "PBCL", "BRL", "ALL"])
    def test_trace_invariants(self, short_day, model, strategy):
        res = run(short_day, model, NnodhConfig(strategy, 0.1))
        totals = [r.total_cost for r in res.trace]
        assert [r.index for r in res.trace] == list(range(1, res.iterations + 1))
        assert all(abs(r.total_cost - r.op_cost - r.deg_cost) <= 1e-9 for r in res.trace)
        assert min(totals) == res.best.total_cost
        assert res.metrics.tcr >= 0
        assert res.stop_reason in ("valley detected", "zero throughput", "restriction infeasible",
                                   "max_iterations")

    @pytest.mark.parametrize("strategy", ["BCL", "BRL"])
    def test_nested_restrictions(self, short_day, model, strategy):
        res = run(short_day, model, NnodhConfig(strategy, 0.1))
        ops = [r.op_cost for r in res.trace]
        assert all(b >= a - 1e-6 * (1 + abs(a)) for a, b in zip(ops, ops[1:]))
        key = "throughput_cap" if strategy == "BCL" else "power_cap"
        caps = [getattr(r.extra, key) for r in res.trace[1:]]
        assert all(b < a for a, b in zip(caps, caps[1:]) if a > 0)

    def test_deterministic(self, short_day, model):
        a = run(short_day, model, NnodhConfig("BCL", 0.1))
        b = run(short_day, model, NnodhConfig("BCL", 0.1))
        assert a.trace_frame().equals(b.trace_frame())

    def test_restriction_infeasible_keeps_best(self, short_day, monkeypatch):
        real = nnodh.solve_mds

        def flaky(config, extra=ExtraConstraints(), **kw):
            # the third solve, i.e. iteration 3, fails
            if flaky.calls >= 2:
                raise InfeasibleError("forced", {})
            flaky.calls += 1
            return real(config, extra, **kw)
        flaky.calls = 0
        monkeypatch.setattr(nnodh, "solve_mds", flaky)
        res = run(short_day, ConstantModel(1e-5), NnodhConfig("BCL", 0.1))
        assert res.stop_reason == "restriction infeasible"
        assert res.iterations == 2

    def test_first_iteration_infeasible_propagates(self, short_day):
        cfg = with_profiles(replace(short_day, tie_max=0.0), load=short_day.profiles.load * 10)
        with pytest.raises(InfeasibleError):
            run(cfg, ConstantModel(1e-5))

    def test_outputs(self, short_day, model, tmp_path):
        res = run(short_day, model, NnodhConfig("BRL", 0.2))
        res.write(tmp_path / "trace.csv", tmp_path / "summary.json")
        trace = pd.read_csv(tmp_path / "trace.csv")
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert len(trace) == res.iterations and "solve_seconds" not in trace.columns
        assert summary["best_index"] == res.best_index and summary["pipeline"] == "nnodh-brl"
        assert "solve_seconds" in res.trace_frame(timing=True).columns


class TestBenchmarks:
    def test_linear_rate(self, scenario):
        params = DegradationCostParams.from_unit_price(400.0, 300.0)
        assert reference_linear_rate(params) == pytest.approx(8.0)
        assert default_linear_rate(scenario, params) == pytest.approx(8.0 / 600.0)

    def test_table(self, short_day, model):
        table = compare_benchmarks(short_day, model, nnodh=NnodhConfig("BCL", 0.1))
        assert list(table.model) == ["MDS", "cycle-limit", "linear-BDC", "NNODH"]
        assert np.allclose(table.annual_deg_cost, 365.0 * table.daily_deg_cost, rtol=0, atol=0)
        assert table.annual_saving.iloc[0] == 0.0
