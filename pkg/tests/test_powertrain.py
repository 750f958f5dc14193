import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tractor_ems.cycles import (CycleSpec, DutyCycle, generate_duty_cycle, load_duty_cycle,
                                save_duty_cycle)
from tractor_ems.errors import (ConfigError, DomainError, FeasibilityError, InfeasibleStateError,
                                ParseError)
from tractor_ems.powertrain import (EngineMap, EnvState, PowertrainConfig, PowertrainEnv,
                                    action_bounds, action_grid, default_engine_map,
                                    engine_efficiency, fuel_rate, kg_to_gallons, load_engine_map,
                                    soc_corridor, step)


def scalar_interp(knots, x):
    # independent re-derivation: walk the segments by hand
    for (x0, y0), (x1, y1) in zip(knots, knots[1:]):
        if x0 <= x <= x1:
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    return knots[0][1] if x < knots[0][0] else knots[-1][1]


class TestEngineMap:
    def test_knot_value(self):
        assert engine_efficiency(default_engine_map(), 1.5e5) == 0.43

    def test_midpoint_between_knots(self):
        assert engine_efficiency(default_engine_map(), 1.05e5) == pytest.approx(0.41, abs=1e-15)

    def test_55kw_in_low_regime(self):
        eta = engine_efficiency(default_engine_map(), 5.5e4)
        assert 0.20 <= eta <= 0.25
        # hand interpolation between (50 kW, 0.225) and (60 kW, 0.25)
        assert eta == pytest.approx(0.2375, abs=1e-15)

    @pytest.mark.parametrize("p", [0.0, -1.0, 2.76e5])
    def test_domain(self, p):
        with pytest.raises(DomainError):
            engine_efficiency(default_engine_map(), p)

    def test_default_map_shape(self):
        m = default_engine_map()
        p = np.arange(1.0, 2.75e5 + 1, 250.0)
        eta = np.array([engine_efficiency(m, x) for x in p])
        assert eta[p <= 6.0e4].max() <= 0.25
        peak = eta.max()
        assert 0.42 <= peak <= 0.44
        assert np.all((p[eta >= 0.42] >= 1.1e5) & (p[eta >= 0.42] <= 1.9e5))

    @given(st.floats(min_value=1.0, max_value=2.75e5))
    def test_matches_scalar_interpolation(self, p):
        m = default_engine_map()
        assert engine_efficiency(m, p) == pytest.approx(scalar_interp(m.knots, p), abs=1e-12)

    def test_invalid_maps(self):
        with pytest.raises(DomainError):
            EngineMap(((0.0, 0.1), (1.0, 0.2)))
        with pytest.raises(DomainError):
            EngineMap(((2.0, 0.1), (1.0, 0.2)))
        with pytest.raises(DomainError):
            EngineMap(((1.0, 0.6), (2.0, 0.2)))

    def test_load_custom_map(self, tmp_path):
        f = tmp_path / "map.csv"
        f.write_text("p_eng_w,eta\n1000,0.2\n300000,0.4\n")
        m = load_engine_map(f)
        assert engine_efficiency(m, 150500.0) == pytest.approx(0.3)
        f.write_text("power,eta\n1,0.2\n")
        with pytest.raises(ParseError):
            load_engine_map(f)


class TestFuelRate:
    def test_engine_off(self, cfg):
        assert fuel_rate(cfg, 0.0) == 0.0

    def test_band_value(self, cfg):
        # quoted as 8.207e-3 (truncated); exact value 8.2079e-3
        assert fuel_rate(cfg, 1.5e5) == pytest.approx(8.207e-3, abs=1e-6)
        assert fuel_rate(cfg, 1.5e5) == 1.5e5 / (0.43 * 4.25e7)

    def test_rated_power(self, cfg):
        eta = engine_efficiency(cfg.engine_map, cfg.p_e_max)
        assert fuel_rate(cfg, 2.75e5) == 2.75e5 / (eta * cfg.lhv)

    def test_negative(self, cfg):
        with pytest.raises(DomainError):
            fuel_rate(cfg, -1.0)

    def test_monotone_where_eta_non_increasing(self, cfg):
        m = cfg.engine_map
        for (p0, e0), (p1, e1) in zip(m.knots, m.knots[1:]):
            if e1 <= e0:
                p = np.linspace(p0, p1, 50)
                r = [fuel_rate(cfg, x) for x in p]
                assert all(b >= a for a, b in zip(r, r[1:]))

    def test_gallons(self, cfg):
        assert kg_to_gallons(cfg, 0.832 * 3.78541) == pytest.approx(1.0, abs=1e-15)


class TestBounds:
    def test_hand_example(self, cfg):
        lb, ub = action_bounds(cfg, EnvState(0, 0.7, 2.16e5))
        assert lb == pytest.approx(-5.9e4, abs=1e-6)
        assert ub == pytest.approx(1.5e5, abs=1e-6)

    def test_soc_ceiling_forbids_charge(self, cfg):
        lb, _ = action_bounds(cfg, EnvState(0, cfg.soc_max, 1.0e5))
        assert lb == 0.0

    def test_soc_floor_forbids_discharge(self, cfg):
        _, ub = action_bounds(cfg, EnvState(0, cfg.soc_min, 1.0e5))
        assert ub == 0.0

    def test_empty_interval(self, cfg):
        # demand beyond engine rating with an empty battery
        with pytest.raises(InfeasibleStateError):
            action_bounds(cfg, EnvState(0, cfg.soc_min, 3.0e5))

    @settings(max_examples=300)
    @given(soc=st.floats(0.3, 0.9), p_dem=st.floats(0.0, 2.75e5), frac=st.floats(0.0, 1.0),
           q=st.floats(1e4, 1e6), p_b=st.floats(1e4, 3e5))
    def test_bound_safety(self, soc, p_dem, frac, q, p_b):
        cfg = PowertrainConfig(q_batt=q, p_b_max=p_b)
        cycle = DutyCycle(1.0, (p_dem, p_dem))
        state = EnvState(0, soc, p_dem)
        lb, ub = action_bounds(cfg, state)
        out = step(cfg, state, lb + frac * (ub - lb), cycle)
        assert cfg.soc_min - 1e-12 <= out.next_state.soc <= cfg.soc_max + 1e-12
        assert 0.0 <= out.p_eng <= cfg.p_e_max
        assert out.p_eng + out.p_batt == pytest.approx(p_dem, abs=1e-6)


class TestStep:
    def test_pure_battery(self, cfg, flat_cycle):
        s = EnvState(0, 0.7, 1.0e5)
        out = step(cfg, s, 1.0e5, flat_cycle)
        assert out.p_eng == 0.0 and out.fuel_mass == 0.0 and out.efficiency == 0.0
        assert out.next_state.soc == pytest.approx(0.7 - 1.0e5 / 1.08e8, abs=1e-15)

    def test_pure_engine(self, cfg, flat_cycle):
        out = step(cfg, EnvState(0, 0.7, 2.16e5), 0.0, flat_cycle)
        assert out.p_eng == 2.16e5 and out.next_state.soc == 0.7
        assert out.fuel_mass == fuel_rate(cfg, 2.16e5) * cfg.t_s

    def test_charging(self, cfg, flat_cycle):
        out = step(cfg, EnvState(0, 0.7, 2.16e5), -5.0e4, flat_cycle)
        assert out.next_state.soc == pytest.approx(0.70046, abs=1e-5)
        assert out.next_state.soc == 0.7 + 5.0e4 / 1.08e8

    def test_outside_bounds(self, cfg, flat_cycle):
        with pytest.raises(FeasibilityError):
            step(cfg, EnvState(0, 0.7, 2.16e5), 1.6e5, flat_cycle)

    def test_terminal(self, cfg):
        cycle = DutyCycle(1.0, (5e4, 6e4))
        out = step(cfg, EnvState(1, 0.7, 6e4), 0.0, cycle)
        assert out.done and out.next_state.p_dem == 0.0
        out = step(cfg, EnvState(0, 0.7, 5e4), 0.0, cycle)
        assert not out.done and out.next_state.p_dem == 6e4

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30), st.integers(0, 2**32 - 1))
    def test_soc_bookkeeping(self, fracs, seed):
        cfg = PowertrainConfig()
        cycle = generate_duty_cycle(CycleSpec(steps=len(fracs), segments=1), np.random.default_rng(seed))
        state = EnvState(0, 0.6, cycle.demand[0])
        soc0, total = state.soc, 0.0
        for f in fracs:
            lb, ub = action_bounds(cfg, state)
            out = step(cfg, state, lb + f * (ub - lb), cycle)
            total += out.p_batt
            state = out.next_state
        expected = soc0 - total * cfg.t_s / cfg.energy
        assert abs(state.soc - expected) <= 1e-9 * len(fracs)


class TestCorridorAndEnv:
    def test_free_terminal_is_plain_limits(self, cfg, desk_cycle):
        lo, hi = soc_corridor(cfg, desk_cycle)
        assert np.all(lo == cfg.soc_min) and np.all(hi == cfg.soc_max)

    def test_terminal_window(self, desk_cycle):
        cfg = PowertrainConfig(soc_terminal=0.8)
        env = PowertrainEnv(cfg, desk_cycle, 80)
        lo, hi = env.corridor
        assert lo[-1] == pytest.approx(0.799) and hi[-1] == pytest.approx(0.801)
        assert np.all(lo <= hi)
        with pytest.raises(InfeasibleStateError):
            env.reset(0.3)

    def test_grid_contains_zero(self):
        g = action_grid(1600, 1.5e5)
        assert len(g) == 1600 and 0.0 in g
        assert g.min() >= -1.5e5 and g.max() <= 1.5e5
        assert np.allclose(np.diff(g), 187.5)

    def test_masked_rollout_hits_terminal_window(self, desk_cycle):
        cfg = PowertrainConfig(soc_terminal=0.8)
        env = PowertrainEnv(cfg, desk_cycle, 80)
        rng = np.random.default_rng(3)
        state = env.reset()
        for _ in range(len(env)):
            idx = np.flatnonzero(env.mask(state))
            out = env.step(state, int(rng.choice(idx)))
            state = out.next_state
        assert abs(state.soc - 0.8) <= 1e-3 + 1e-9

    def test_dt_mismatch(self, cfg):
        with pytest.raises(ConfigError):
            PowertrainEnv(cfg, DutyCycle(2.0, (1e5,)), 80)

    def test_config_invariants(self):
        with pytest.raises(ConfigError):
            PowertrainConfig(soc_min=0.9, soc_max=0.3)
        with pytest.raises(ConfigError):
            PowertrainConfig(lhv=0.0)


class TestDutyCycle:
    def test_load(self, tmp_path):
        f = tmp_path / "c.csv"
        f.write_text("t_s,p_dem_w\n0,216000\n1,216000\n")
        c = load_duty_cycle(f)
        assert c == DutyCycle(dt=1.0, demand=(216000.0, 216000.0))

    @pytest.mark.parametrize("body,row", [
        ("0,1000\n1,1000\n3,1000\n", 4),
        ("0,1000\n1,-5\n", 3),
        ("0,1000\n1,abc\n", 3),
    ])
    def test_parse_errors_carry_row(self, tmp_path, body, row):
        f = tmp_path / "c.csv"
        f.write_text("t_s,p_dem_w\n" + body)
        with pytest.raises(ParseError) as exc:
            load_duty_cycle(f)
        assert exc.value.row == row

    def test_empty(self, tmp_path):
        f = tmp_path / "c.csv"
        f.write_text("t_s,p_dem_w\n")
        with pytest.raises(ParseError):
            load_duty_cycle(f)
        with pytest.raises(ParseError):
            DutyCycle(1.0, ())

    def test_generator_deterministic(self):
        a = generate_duty_cycle(CycleSpec(), np.random.default_rng(7))
        b = generate_duty_cycle(CycleSpec(), np.random.default_rng(7))
        assert a == b and len(a) == 120
        assert min(a.demand) >= 4e4 and max(a.demand) <= 2.4e5

    def test_round_trip(self, tmp_path, desk_cycle):
        save_duty_cycle(desk_cycle, tmp_path / "c.csv")
        assert load_duty_cycle(tmp_path / "c.csv") == desk_cycle
