import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdmds.errors import ParameterError
from bdmds.mds import solve_mds, validate_solution
from bdmds.scenario import (bundled_scenario, make_profiles, make_scenario, renewable_penetration,
                            rescale_penetration, small_instances)


class TestProfiles:
    def test_shape_and_defaults(self):
        cfg = bundled_scenario()
        assert cfg.horizon == 24
        assert cfg.generators[0].p_max == 180.0 and cfg.bess.e_max == 300.0 and cfg.bess.p_max == 150.0
        assert cfg.bess.e_min == 30.0 and cfg.bess.e_initial == 150.0
        assert cfg.tie_max == 500.0 and cfg.reserve_frac == 0.10

    def test_seeded(self):
        a, b, c = make_profiles(1), make_profiles(1), make_profiles(2)
        assert np.array_equal(a.load, b.load) and not np.array_equal(a.load, c.load)

    def test_non_negative(self):
        p = make_profiles(5)
        for arr in (p.load, p.wind, p.pv, p.buy_price):
            assert np.all(arr >= 0)

    @settings(max_examples=20)
    @given(pen=st.floats(0.05, 1.5))
    def test_rescaled_penetration(self, pen):
        cfg = rescale_penetration(bundled_scenario(), pen)
        assert renewable_penetration(cfg.profiles) == pytest.approx(pen, rel=1e-9)

    def test_generated_penetration(self):
        for pen in (0.2, 0.4, 0.6, 0.8):
            assert abs(renewable_penetration(make_profiles(penetration=pen)) - pen) <= 0.01

    def test_bad_inputs(self):
        with pytest.raises(ParameterError):
            make_profiles(penetration=-0.1)
        with pytest.raises(ParameterError):
            make_profiles(hours=0)

    def test_half_hour_grid(self):
        cfg = make_scenario(hours=48)
        assert cfg.dt == 0.5 and cfg.horizon == 48
        assert validate_solution(cfg, solve_mds(cfg)).ok


class TestSmallInstances:
    def test_sizes(self):
        for inst in small_instances():
            assert inst.config.horizon <= 4
            assert len(inst.battery_levels) == inst.config.horizon

    def test_names_unique(self):
        names = [inst.name for inst in small_instances()]
        assert len(names) == len(set(names))
