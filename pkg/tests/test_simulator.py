import math

import numpy as np
import pytest
from scipy.sparse import identity as sparse_identity

from uhsbench.fluids import FluidProps, RelPermModel, rel_perms
from uhsbench.geomodel import FieldParams, GridSpec, gen_gaussian_field
from uhsbench.linalg import SolverError, solve_pcg
from uhsbench.schedule import Schedule, Stage
from uhsbench.simulator import (
    CUSHION,
    H2,
    WATER,
    SimConfig,
    SimState,
    SnapshotSeries,
    advance_transport,
    assemble_pressure_system,
    run_simulation,
    solve_pressure,
    step,
)
from uhsbench.utils import BAR, MONTH
from uhsbench.wells import WellSpec

FLUIDS = FluidProps()
RELPERM = RelPermModel()


def uniform_geo(n=9, dx=120.0, k=100.0):
    grid = GridSpec(nx=n, ny=n, dx=dx, dy=dx, thickness=100.0)
    return gen_gaussian_field(
        FieldParams(kind="gaussian", mean_log_k=math.log(k), std_log_k=0.0), grid)


def initial_state(geo, config=None):
    return SimState.initial(geo, config or SimConfig(), FLUIDS)


SHUT = Stage("shut_in", duration=MONTH)


class TestAssembly:
    def test_uniform_entries_match_hand_matrix(self):
        # Hand assembly: off-diagonal = -T with T = k*A_face*lam_total/dx
        # (harmonic mean of equal permeabilities is the permeability itself).
        geo = uniform_geo(n=3)
        cfg = SimConfig(dt=86400.0)
        state = initial_state(geo, cfg)
        A, b = assemble_pressure_system(state, geo, FLUIDS, RELPERM,
                                        WellSpec.centered(geo.grid), SHUT,
                                        cfg.dt, cfg)
        grid = geo.grid
        k_m2 = 100.0 * 9.869233e-16
        kr_a, kr_g = rel_perms(cfg.s_g0, RELPERM)
        lam_t = kr_a / FLUIDS.mu_water + kr_g / FLUIDS.mu_h2 * 0  # y0=0: cushion gas
        lam_t = kr_a / FLUIDS.mu_water + kr_g / FLUIDS.mu_cushion
        T = k_m2 * (grid.dy * grid.thickness) / grid.dx * lam_t
        acc = (grid.cell_volume * geo.porosity[0, 0]
               * (cfg.s_g0 / (cfg.p0 * BAR) + cfg.rock_compressibility) / cfg.dt)
        dense = A.toarray()
        # neighbour couplings
        assert dense[0, 1] == pytest.approx(-T, rel=1e-13)
        assert dense[4, 3] == pytest.approx(-T, rel=1e-13)
        assert dense[0, 3] == pytest.approx(-T, rel=1e-13)
        assert dense[0, 4] == 0.0
        # diagonals: accumulation + sum of face transmissibilities
        assert dense[0, 0] == pytest.approx(acc + 2 * T, rel=1e-13)
        assert dense[1, 1] == pytest.approx(acc + 3 * T, rel=1e-13)
        assert dense[4, 4] == pytest.approx(acc + 4 * T, rel=1e-13)
        assert np.allclose(b, acc * cfg.p0 * BAR, rtol=1e-13)

    def test_symmetric_and_row_sums(self):
        geo = gen_gaussian_field(
            FieldParams(kind="gaussian", std_log_k=0.8, corr_x=300, corr_y=300, seed=3),
            GridSpec(nx=7, ny=7, dx=100.0, dy=100.0, thickness=50.0))
        cfg = SimConfig(dt=86400.0)
        state = initial_state(geo, cfg)
        stage = Stage("withdraw", duration=MONTH, bhp=90.0)
        A, _ = assemble_pressure_system(state, geo, FLUIDS, RELPERM,
                                        WellSpec.centered(geo.grid), stage,
                                        cfg.dt, cfg)
        dense = A.toarray()
        assert np.allclose(dense, dense.T, rtol=0, atol=0)
        acc = (geo.grid.cell_volume * geo.porosity
               * (state.s_g / (state.pressure * BAR) + cfg.rock_compressibility)
               / cfg.dt).ravel()
        sums = dense.sum(axis=1)
        ix, iy = geo.grid.well_cell
        widx = iy * geo.grid.nx + ix
        mask = np.arange(dense.shape[0]) != widx
        # no-flow boundaries: every non-well row sums to its accumulation term
        assert np.allclose(sums[mask], acc[mask], rtol=1e-12)
        # implicit withdrawal adds to the well diagonal only
        assert sums[widx] > acc[widx]

    def test_positive_definite(self):
        geo = uniform_geo(n=5)
        cfg = SimConfig(dt=86400.0)
        state = initial_state(geo, cfg)
        A, _ = assemble_pressure_system(state, geo, FLUIDS, RELPERM,
                                        WellSpec.centered(geo.grid), SHUT,
                                        cfg.dt, cfg)
        eig = np.linalg.eigvalsh(A.toarray())
        assert eig.min() > 0

    def test_immobile_limit_nearly_diagonal(self):
        # Joint residual saturations are excluded by the relperm invariants
        # (S_wr + S_gr < 1), so approach the immobile limit with gas at its
        # residual and an effectively infinite water viscosity.
        geo = uniform_geo(n=5)
        cfg = SimConfig(dt=86400.0, s_g0=RELPERM.s_gr)
        thick = FluidProps(mu_water=1e30)
        state = SimState.initial(geo, cfg, thick)
        A, _ = assemble_pressure_system(state, geo, thick, RELPERM,
                                        WellSpec.centered(geo.grid), SHUT,
                                        cfg.dt, cfg)
        dense = A.toarray()
        off = dense - np.diag(np.diag(dense))
        assert np.abs(off).max() < 1e-15 * np.diag(dense).min()

    def test_permuted_numbering_relocates_entries(self):
        geo = uniform_geo(n=5)
        cfg = SimConfig(dt=86400.0)
        state = initial_state(geo, cfg)
        A, _ = assemble_pressure_system(state, geo, FLUIDS, RELPERM,
                                        WellSpec.centered(geo.grid), SHUT,
                                        cfg.dt, cfg)
        dense = A.toarray()
        rng = np.random.default_rng(0)
        p = rng.permutation(dense.shape[0])
        permuted = dense[np.ix_(p, p)]
        assert np.allclose(permuted, permuted.T)
        assert sorted(np.diag(permuted)) == pytest.approx(sorted(np.diag(dense)))

    def test_nonfinite_rejected_with_cell_index(self):
        geo = uniform_geo(n=5)
        cfg = SimConfig(dt=86400.0)
        state = initial_state(geo, cfg)
        state.pressure[2, 3] = np.inf
        with pytest.raises(Exception, match="cell"):
            assemble_pressure_system(state, geo, FLUIDS, RELPERM,
                                     WellSpec.centered(geo.grid), SHUT,
                                     cfg.dt, cfg)


class TestPressureSolve:
    def test_identity_system(self):
        n = 40
        A = sparse_identity(n, format="csr")
        b = np.sin(np.arange(n, dtype=float))
        x, info = solve_pcg(A, b, tol=1e-12)
        assert np.allclose(x, b, atol=1e-12)

    def test_two_by_two_cramer(self):
        # hand-assembled 2-cell system: [[a+T, -T], [-T, a+T]]
        a, T = 3.0e-7, 1.2e-7
        A = np.array([[a + T, -T], [-T, a + T]])
        b = np.array([5.0, 2.0])
        det = (a + T) ** 2 - T ** 2
        expected = np.array([((a + T) * b[0] + T * b[1]) / det,
                             (T * b[0] + (a + T) * b[1]) / det])
        from scipy.sparse import csr_matrix
        x, _ = solve_pcg(csr_matrix(A), b, tol=1e-14)
        assert np.abs(x - expected).max() / np.abs(expected).max() <= 1e-12

    def test_residual_contract_checked_independently(self):
        geo = uniform_geo(n=9)
        cfg = SimConfig(dt=86400.0)
        state = initial_state(geo, cfg)
        stage = Stage("inject_h2", duration=MONTH, mass_rate=1.0, bhp=300.0)
        A, b = assemble_pressure_system(state, geo, FLUIDS, RELPERM,
                                        WellSpec.centered(geo.grid), stage,
                                        cfg.dt, cfg)
        x, info = solve_pressure(A, b, tol=1e-10)
        resid = np.linalg.norm(b - A @ x) / np.linalg.norm(b)
        assert resid <= 1e-10
        assert info.rel_residual <= 1e-10

    def test_nonconvergence_reports_counts(self):
        from scipy.sparse import diags
        n = 50
        A = diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)],
                  [-1, 0, 1]).tocsr()
        b = np.ones(n)
        with pytest.raises(SolverError) as err:
            solve_pcg(A, b, tol=1e-30, max_iter=3)
        assert err.value.iterations == 3
        assert err.value.rel_residual > 0


class TestTransport:
    def test_no_flow_equilibrium(self):
        geo = uniform_geo(n=5)
        cfg = SimConfig(dt=86400.0)
        state = initial_state(geo, cfg)
        new, n_sub = advance_transport(state, state.pressure.copy(), geo, FLUIDS,
                                       RELPERM, WellSpec.centered(geo.grid), SHUT,
                                       cfg.dt, cfg)
        assert new.time == state.time + cfg.dt
        assert np.array_equal(new.mass, state.mass)
        assert np.allclose(new.s_g, state.s_g, atol=1e-14)
        assert np.array_equal(new.y_h2, state.y_h2)

    def test_injection_cell_mass_increase_exact(self):
        # With initial y=0 everywhere, the first step's outgoing gas carries
        # no H2, so the well cell gains exactly q_h2 * dt.
        geo = uniform_geo(n=5)
        cfg = SimConfig(dt=3600.0, output_interval=3600.0)
        state = initial_state(geo, cfg)
        stage = Stage("inject_h2", duration=MONTH, mass_rate=0.5, bhp=400.0)
        well = WellSpec.centered(geo.grid)
        A, b = assemble_pressure_system(state, geo, FLUIDS, RELPERM, well, stage,
                                        cfg.dt, cfg)
        p_pa, _ = solve_pressure(A, b, x0=(state.pressure * BAR).ravel())
        p_new = (p_pa / BAR).reshape(geo.grid.shape)
        new, n_sub = advance_transport(state, p_new, geo, FLUIDS, RELPERM, well,
                                       stage, cfg.dt, cfg)
        assert n_sub == 1
        ix, iy = well.cell
        gained = new.mass[H2][iy, ix] - state.mass[H2][iy, ix]
        assert gained == pytest.approx(0.5 * cfg.dt, rel=1e-12)

    def test_step_conservation_oracle(self):
        # Oracle: independent summation over cells vs well-rate integration.
        geo = gen_gaussian_field(
            FieldParams(kind="gaussian", std_log_k=0.7, corr_x=300, corr_y=300, seed=5),
            GridSpec(nx=9, ny=9, dx=100.0, dy=100.0, thickness=100.0))
        cfg = SimConfig(dt=5 * 86400.0)
        state = initial_state(geo, cfg)
        well = WellSpec.centered(geo.grid)
        stage = Stage("inject_h2", duration=MONTH, mass_rate=1.0, bhp=400.0)
        for _ in range(6):
            state, _ = step(state, geo, FLUIDS, RELPERM, well, stage, cfg.dt, cfg)
        stage = Stage("withdraw", duration=MONTH, bhp=90.0)
        for _ in range(6):
            state, _ = step(state, geo, FLUIDS, RELPERM, well, stage, cfg.dt, cfg)
        initial = SimState.initial(geo, cfg, FLUIDS)
        scale = max(float(state.injected.sum()), 1.0)
        for comp in (H2, CUSHION, WATER):
            change = state.mass[comp].sum() - initial.mass[comp].sum()
            net = state.injected[comp] - state.produced[comp]
            assert abs(change - net) / scale <= 1e-12

    def test_cumulative_masses_monotone(self):
        geo = uniform_geo(n=5)
        cfg = SimConfig(dt=5 * 86400.0)
        state = initial_state(geo, cfg)
        well = WellSpec.centered(geo.grid)
        prev_inj, prev_prod = state.injected.copy(), state.produced.copy()
        for stage in (Stage("inject_h2", duration=MONTH, mass_rate=1.0, bhp=400.0),
                      Stage("withdraw", duration=MONTH, bhp=90.0)):
            for _ in range(4):
                state, _ = step(state, geo, FLUIDS, RELPERM, well, stage, cfg.dt, cfg)
                assert np.all(state.injected >= prev_inj)
                assert np.all(state.produced >= prev_prod)
                prev_inj, prev_prod = state.injected.copy(), state.produced.copy()

    def test_bounds_invariant(self):
        geo = uniform_geo(n=7)
        cfg = SimConfig(dt=5 * 86400.0)
        state = initial_state(geo, cfg)
        well = WellSpec.centered(geo.grid)
        stage = Stage("inject_h2", duration=MONTH, mass_rate=4.0, bhp=400.0)
        for _ in range(10):
            state, _ = step(state, geo, FLUIDS, RELPERM, well, stage, cfg.dt, cfg)
            assert np.all((state.s_g >= 0) & (state.s_g <= 1))
            assert np.all((state.y_h2 >= 0) & (state.y_h2 <= 1))


class TestStep:
    def test_uniform_shut_in_identity(self):
        geo = uniform_geo(n=5)
        cfg = SimConfig(dt=5 * 86400.0)
        state = initial_state(geo, cfg)
        new, info = step(state, geo, FLUIDS, RELPERM, WellSpec.centered(geo.grid),
                         SHUT, cfg.dt, cfg)
        assert info.iterations == 0
        assert np.array_equal(new.pressure, state.pressure)
        assert np.allclose(new.s_g, state.s_g, atol=1e-14)
        assert np.array_equal(new.y_h2, state.y_h2)

    def test_first_order_consistency(self):
        geo = uniform_geo(n=9)
        well = WellSpec.centered(geo.grid)
        stage = Stage("inject_h2", duration=MONTH, mass_rate=0.5, bhp=300.0)

        def run(dt, n):
            cfg = SimConfig(dt=dt, output_interval=dt)
            state = initial_state(geo, cfg)
            for _ in range(n):
                state, _ = step(state, geo, FLUIDS, RELPERM, well, stage, dt, cfg)
            return state.s_g

        dt0 = 4 * 86400.0
        d1 = np.abs(run(dt0, 4) - run(dt0 / 2, 8)).max()
        d2 = np.abs(run(dt0 / 2, 8) - run(dt0 / 4, 16)).max()
        assert d1 > 0 and d2 > 0
        assert d1 / d2 >= 1.7

    def test_rotational_symmetry(self):
        grid = GridSpec(nx=17, ny=17, dx=120.0, dy=120.0, thickness=100.0)
        geo = gen_gaussian_field(
            FieldParams(kind="gaussian", mean_log_k=math.log(100.0), std_log_k=0.0), grid)
        cfg = SimConfig(dt=5 * 86400.0)
        state = initial_state(geo, cfg)
        well = WellSpec.centered(grid)
        stage = Stage("inject_h2", duration=MONTH, mass_rate=1.0, bhp=300.0)
        for _ in range(6):
            state, _ = step(state, geo, FLUIDS, RELPERM, well, stage, cfg.dt, cfg)
        for f in (state.pressure, state.s_g):
            for r in (1, 2, 3):
                rel = np.abs(f - np.rot90(f, r)).max() / np.abs(f).max()
                assert rel <= 1e-6


class TestRunSimulation:
    def test_ten_year_snapshot_structure(self):
        geo = uniform_geo(n=9)
        sched = Schedule.cyclic(10, inject_rate=0.2, inject_bhp_cap=300.0,
                                withdraw_bhp=95.0)
        cfg = SimConfig(dt=MONTH, output_interval=2 * MONTH)
        series = run_simulation(geo, sched, cfg)
        assert series.n_steps == 60
        assert len(series.times) == 61
        assert series.times[0] == 0.0
        assert series.times[1] == pytest.approx(2 * MONTH)
        # snapshot s (1-based) is an injection output iff ((s-1) mod 6) < 3
        for s in range(1, 61):
            stage = sched.stage_for_step(s, cfg.output_interval)
            assert stage.is_injection == (((s - 1) % 6) < 3)

    def test_shut_in_schedule_static(self):
        geo = uniform_geo(n=5)
        sched = Schedule(stages=(Stage("shut_in", duration=6 * MONTH),))
        cfg = SimConfig(dt=MONTH, output_interval=2 * MONTH)
        series = run_simulation(geo, sched, cfg)
        assert series.n_steps == 3
        for k in range(1, 4):
            assert np.array_equal(series.pressure[k], series.pressure[0])
            assert np.allclose(series.saturation[k], series.saturation[0], atol=1e-14)

    def test_cumulative_injection_rate_times_duration(self):
        geo = uniform_geo(n=9)
        rate = 0.4
        sched = Schedule.cyclic(1, inject_rate=rate, inject_bhp_cap=400.0,
                                withdraw_bhp=95.0)
        cfg = SimConfig(dt=5 * 86400.0)
        series = run_simulation(geo, sched, cfg)
        # snapshot 3 closes the injection stage
        inj_h2 = series.well_records[3][0]
        assert inj_h2 == pytest.approx(rate * 6 * MONTH, rel=1e-12)

    def test_deterministic(self):
        geo = uniform_geo(n=7)
        sched = Schedule.cyclic(1, 0.5, 300.0, 95.0)
        cfg = SimConfig(dt=5 * 86400.0)
        a = run_simulation(geo, sched, cfg)
        b = run_simulation(geo, sched, cfg)
        assert np.array_equal(a.pressure, b.pressure)
        assert np.array_equal(a.saturation, b.saturation)
        assert np.array_equal(a.well_records, b.well_records)

    def test_injection_phase_gas_mass_nondecreasing(self):
        geo = uniform_geo(n=9)
        sched = Schedule.cyclic(1, 1.0, 300.0, 95.0)
        cfg = SimConfig(dt=5 * 86400.0)
        series = run_simulation(geo, sched, cfg)
        state = series.final_state
        assert state is not None
        # recompute gas mass per snapshot from the published views is not
        # exact; use the well records instead: during injection cumulative
        # injected H2 strictly grows and nothing is produced
        inj = series.well_records[:4, 0]
        assert np.all(np.diff(inj) > 0)
        assert np.all(series.well_records[:4, 3:6] == 0.0)

    def test_misaligned_stage_rejected(self):
        geo = uniform_geo(n=5)
        sched = Schedule(stages=(Stage("shut_in", duration=1.5 * MONTH),))
        cfg = SimConfig(dt=MONTH / 2, output_interval=MONTH)
        with pytest.raises(ValueError):
            run_simulation(geo, sched, cfg)

    def test_output_interval_must_tile_dt(self):
        with pytest.raises(ValueError):
            SimConfig(dt=7 * 86400.0, output_interval=2 * MONTH)


class TestSimFile:
    def test_round_trip(self, tmp_path):
        geo = uniform_geo(n=7)
        sched = Schedule.cyclic(1, 0.5, 300.0, 95.0)
        cfg = SimConfig(dt=5 * 86400.0)
        series = run_simulation(geo, sched, cfg)
        path = tmp_path / "run.sim"
        series.save(path)
        back = SnapshotSeries.load(path)
        assert back.grid == series.grid
        assert back.n_steps == series.n_steps
        assert np.array_equal(back.pressure,
                              np.asarray(series.pressure, dtype=np.float32))
        assert np.array_equal(back.well_records, series.well_records)
        assert back.schedule_digest == series.schedule_digest

    def test_identical_bytes(self, tmp_path):
        geo = uniform_geo(n=5)
        sched = Schedule.cyclic(1, 0.5, 300.0, 95.0)
        cfg = SimConfig(dt=5 * 86400.0)
        p1, p2 = tmp_path / "a.sim", tmp_path / "b.sim"
        run_simulation(geo, sched, cfg).save(p1)
        run_simulation(geo, sched, cfg).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_rejected(self, tmp_path):
        geo = uniform_geo(n=5)
        sched = Schedule(stages=(Stage("shut_in", duration=2 * MONTH),))
        series = run_simulation(geo, sched, SimConfig(dt=MONTH))
        path = tmp_path / "run.sim"
        series.save(path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(ValueError):
            SnapshotSeries.load(path)
