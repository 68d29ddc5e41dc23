import math

import numpy as np
import pytest

from uhsbench.fluids import (
    FluidProps,
    RelPermModel,
    gas_density,
    gas_viscosity,
    rel_perms,
)
from uhsbench.geomodel import FieldParams, GridSpec, gen_gaussian_field
from uhsbench.schedule import Schedule, Stage
from uhsbench.utils import MONTH
from uhsbench.wells import WellSpec, well_index, well_source_terms

FLUIDS = FluidProps()
RELPERM = RelPermModel()


class TestGasDensity:
    def test_pure_h2_hand_value(self):
        # P*M/(R*T) = 1e7 * 2.016e-3 / (8.314462618 * 323.15) ~ 7.50 kg/m^3
        rho = gas_density(1.0e7, 1.0, FLUIDS)
        assert rho == pytest.approx(7.50, abs=0.01)

    def test_pure_methane_hand_value(self):
        rho = gas_density(1.0e7, 0.0, FLUIDS)
        assert rho == pytest.approx(59.7, abs=0.1)

    def test_vanishes_with_pressure(self):
        assert gas_density(1e-6, 0.5, FLUIDS) < 1e-9

    def test_strictly_increasing_in_pressure(self):
        p = np.linspace(1e5, 3e7, 50)
        rho = gas_density(p, 0.7, FLUIDS)
        assert np.all(np.diff(rho) > 0)

    def test_rejects_bad_fraction(self):
        with pytest.raises(ValueError):
            gas_density(1e7, 1.5, FLUIDS)
        with pytest.raises(ValueError):
            gas_density(1e7, -0.1, FLUIDS)

    def test_viscosity_blend(self):
        assert gas_viscosity(1.0, FLUIDS) == FLUIDS.mu_h2
        assert gas_viscosity(0.0, FLUIDS) == FLUIDS.mu_cushion
        mid = gas_viscosity(0.5, FLUIDS)
        assert mid == pytest.approx(0.5 * (FLUIDS.mu_h2 + FLUIDS.mu_cushion))


class TestRelPerms:
    def test_residual_endpoint(self):
        _, kr_g = rel_perms(RELPERM.s_gr, RELPERM)
        assert kr_g == 0.0

    def test_mobile_endpoint(self):
        _, kr_g = rel_perms(1.0 - RELPERM.s_wr, RELPERM)
        assert kr_g == pytest.approx(RELPERM.kr0_g, rel=1e-14)

    def test_corey_hand_value(self):
        model = RelPermModel(s_wr=0.2, s_gr=0.05, kr0_g=0.9, n_g=2.0)
        _, kr_g = rel_perms(0.425, model)
        assert kr_g == pytest.approx(0.9 * 0.5 ** 2, rel=1e-14)

    def test_clamped_bounds(self):
        s = np.linspace(0.0, 1.0, 101)
        kr_a, kr_g = rel_perms(s, RELPERM)
        assert np.all((kr_a >= 0) & (kr_a <= RELPERM.kr0_a))
        assert np.all((kr_g >= 0) & (kr_g <= RELPERM.kr0_g))

    def test_rejects_bad_model(self):
        with pytest.raises(ValueError):
            RelPermModel(s_wr=0.6, s_gr=0.5)
        with pytest.raises(ValueError):
            RelPermModel(n_g=0.5)
        with pytest.raises(ValueError):
            RelPermModel(kr0_g=1.5)


def uniform_geo(nx=15, ny=15, dx=30.0, k=100.0):
    grid = GridSpec(nx=nx, ny=ny, dx=dx, dy=dx, thickness=100.0)
    params = FieldParams(kind="gaussian", mean_log_k=math.log(k), std_log_k=0.0)
    return gen_gaussian_field(params, grid)


class TestWellIndex:
    def test_peaceman_hand_value(self):
        # dx=dy=30, k=100 mD, h=100, r_w=0.1: WI ~ 1.518e-11 m^3
        geo = uniform_geo(dx=30.0, k=100.0)
        wi = well_index(geo.grid, geo, WellSpec.centered(geo.grid, radius=0.1))
        assert wi == pytest.approx(1.518e-11, rel=1e-3)

    def test_linear_in_thickness(self):
        geo1 = uniform_geo()
        grid2 = GridSpec(nx=15, ny=15, dx=30.0, dy=30.0, thickness=200.0)
        geo2 = gen_gaussian_field(
            FieldParams(kind="gaussian", mean_log_k=math.log(100.0), std_log_k=0.0), grid2)
        w1 = well_index(geo1.grid, geo1, WellSpec.centered(geo1.grid))
        w2 = well_index(grid2, geo2, WellSpec.centered(grid2))
        assert w2 == pytest.approx(2 * w1, rel=1e-12)

    def test_vanishes_with_permeability(self):
        geo = uniform_geo(k=1e-9)
        wi = well_index(geo.grid, geo, WellSpec.centered(geo.grid))
        assert wi < 1e-20

    def test_rejects_fine_grid(self):
        geo = uniform_geo(dx=1.0)
        with pytest.raises(ValueError):
            well_index(geo.grid, geo, WellSpec.centered(geo.grid, radius=0.5))


class TestWellSources:
    def test_shut_in_zeros(self):
        stage = Stage("shut_in", duration=MONTH)
        q = well_source_terms(100.0, 0.3, 0.5, stage, 1.5e-11, FLUIDS, RELPERM)
        assert q == (0.0, 0.0, 0.0)

    def test_zero_drawdown(self):
        stage = Stage("withdraw", duration=MONTH, bhp=100.0)
        q = well_source_terms(100.0, 0.3, 0.5, stage, 1.5e-11, FLUIDS, RELPERM)
        assert q == (0.0, 0.0, 0.0)

    def test_withdrawal_product_oracle(self):
        # gas mass rate = WI * (lam_g*rho_g) * dP = 1.5e-11 * 5e4 * 1e6 = 0.75 kg/s
        stage = Stage("withdraw", duration=MONTH, bhp=90.0)
        y = 0.4
        # craft fluids/relperm so lam_g*rho_g = 5e4 at p_cell
        kr_a, kr_g = rel_perms(0.5, RELPERM)
        rho_g = gas_density(100.0e5, y, FLUIDS)
        mu_g = gas_viscosity(y, FLUIDS)
        expected_gas = 1.5e-11 * (kr_g / mu_g) * rho_g * 10.0e5
        q_h2, q_c, q_w = well_source_terms(100.0, 0.5, y, stage, 1.5e-11, FLUIDS, RELPERM)
        assert -(q_h2 + q_c) == pytest.approx(expected_gas, rel=1e-12)
        assert q_h2 == pytest.approx(-y * expected_gas, rel=1e-12)
        assert q_w < 0

    def test_withdrawal_magnitude_formula(self):
        # direct product check with round numbers
        wi, lam_rho, dp_pa = 1.5e-11, 5.0e4, 1.0e6
        assert wi * lam_rho * dp_pa == pytest.approx(0.75)

    def test_injection_rate_control(self):
        stage = Stage("inject_h2", duration=MONTH, mass_rate=2.0, bhp=300.0, y_inj=1.0)
        q_h2, q_c, q_w = well_source_terms(100.0, 0.3, 0.0, stage, 1.5e-11, FLUIDS, RELPERM)
        assert q_h2 == pytest.approx(2.0)
        assert q_c == 0.0 and q_w == 0.0

    def test_injection_bhp_capped(self):
        stage = Stage("inject_h2", duration=MONTH, mass_rate=1e9, bhp=101.0, y_inj=1.0)
        q_h2, _, _ = well_source_terms(100.0, 0.3, 0.0, stage, 1.5e-11, FLUIDS, RELPERM)
        kr_g = rel_perms(0.3, RELPERM)[1]
        cap = 1.5e-11 * (kr_g / FLUIDS.mu_h2) * gas_density(100.0e5, 1.0, FLUIDS) * 1.0e5
        assert q_h2 == pytest.approx(cap, rel=1e-12)

    def test_injection_cap_below_pressure_warns_zero(self):
        stage = Stage("inject_h2", duration=MONTH, mass_rate=2.0, bhp=50.0, y_inj=1.0)
        with pytest.warns(RuntimeWarning):
            q = well_source_terms(100.0, 0.3, 0.0, stage, 1.5e-11, FLUIDS, RELPERM)
        assert q == (0.0, 0.0, 0.0)

    def test_cushion_fill_composition(self):
        stage = Stage("cushion_fill", duration=MONTH, mass_rate=3.0, bhp=300.0, y_inj=0.0)
        q_h2, q_c, q_w = well_source_terms(100.0, 0.3, 0.0, stage, 1.5e-11, FLUIDS, RELPERM)
        assert q_h2 == 0.0
        assert q_c == pytest.approx(3.0)


class TestSchedule:
    def test_cyclic_structure(self):
        s = Schedule.cyclic(10, inject_rate=5.0, inject_bhp_cap=200.0, withdraw_bhp=90.0)
        assert len(s.stages) == 20
        assert s.total_duration == pytest.approx(120 * MONTH)
        assert [st.kind for st in s.stages[:2]] == ["inject_h2", "withdraw"]

    def test_stage_for_step_pattern(self):
        s = Schedule.cyclic(10, 5.0, 200.0, 90.0)
        out = 2 * MONTH
        kinds = [s.stage_for_step(k, out).kind for k in range(1, 61)]
        for k, kind in enumerate(kinds, start=1):
            expected = "inject_h2" if ((k - 1) % 6) < 3 else "withdraw"
            assert kind == expected, k

    def test_periodic_extension(self):
        s = Schedule.cyclic(1, 5.0, 200.0, 90.0)
        out = 2 * MONTH
        # steps 7.. wrap back onto the single cycle
        assert s.stage_for_step(7, out).kind == "inject_h2"
        assert s.stage_for_step(10, out).kind == "withdraw"
        assert s.stage_for_step(60, out).kind == "withdraw"

    def test_cushion_prefix_offsets_cycle(self):
        cushion = Stage("cushion_fill", duration=6 * MONTH, mass_rate=3.0, bhp=300.0, y_inj=0.0)
        s = Schedule.cyclic(2, 5.0, 200.0, 90.0, cushion=cushion)
        out = 2 * MONTH
        assert s.stage_for_step(1, out).kind == "cushion_fill"
        assert s.stage_for_step(4, out).kind == "inject_h2"
        # extension repeats the cyclic part only, not the cushion: the
        # 15-step horizon continues seamlessly with three more inject steps
        assert s.stage_for_step(16, out).kind == "inject_h2"
        assert s.stage_for_step(18, out).kind == "inject_h2"
        assert s.stage_for_step(19, out).kind == "withdraw"

    def test_digest_stable(self):
        a = Schedule.cyclic(3, 5.0, 200.0, 90.0)
        b = Schedule.cyclic(3, 5.0, 200.0, 90.0)
        c = Schedule.cyclic(3, 5.1, 200.0, 90.0)
        assert a.digest() == b.digest() != c.digest()

    def test_round_trip(self):
        a = Schedule.cyclic(2, 5.0, 200.0, 90.0)
        assert Schedule.from_dict(a.to_dict()) == a

    def test_rejects_bad_stage(self):
        with pytest.raises(ValueError):
            Stage("inject_h2", duration=-1.0, mass_rate=1.0, bhp=100.0)
        with pytest.raises(ValueError):
            Stage("withdraw", duration=MONTH, bhp=0.0)
        with pytest.raises(ValueError):
            Stage("flood", duration=MONTH)
