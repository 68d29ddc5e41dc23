import math

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from uhsbench.dataset import (
    FieldScaler,
    SampleSpec,
    SimulationRecord,
    SplitManifest,
    assemble_sample,
    build_split_manifest,
    cycle_indicator,
    distance_channel,
    downsample,
    fit_stats,
    make_record,
    time_channel,
)
from uhsbench.geomodel import FieldParams, GridSpec, gen_gaussian_field
from uhsbench.schedule import Schedule
from uhsbench.simulator import SimConfig, run_simulation
from uhsbench.uhsd import (
    DatasetChecksumError,
    DatasetTruncatedError,
    DatasetVersionError,
    build_dataset,
    read_dataset,
    read_header,
    write_dataset,
)
from uhsbench.utils import MONTH

SCHED = Schedule.cyclic(10, 5.0, 200.0, 90.0)
OUT = 2 * MONTH


class TestDownsample:
    def test_factor_one_identity(self):
        f = np.random.default_rng(0).random((8, 8))
        assert np.array_equal(downsample(f, 1, "mean"), f)

    def test_constant_preserved(self):
        f = np.full((16, 16), 3.25)
        for kind in ("mean", "log"):
            assert np.allclose(downsample(f, 4, kind), 3.25, rtol=1e-14)
        assert np.allclose(downsample(f, 4, "porevol", weights=np.full((16, 16), 0.2)),
                           3.25, rtol=1e-14)

    def test_checkerboard_halves(self):
        # Oracle: direct block averaging of a {0,1} checkerboard with
        # uniform porosity weights gives 0.5 in every coarse cell.
        n = 256
        iy, ix = np.mgrid[0:n, 0:n]
        f = ((ix + iy) % 2).astype(float)
        coarse = downsample(f, 4, "porevol", weights=np.full((n, n), 0.2))
        assert coarse.shape == (64, 64)
        assert np.allclose(coarse, 0.5, atol=1e-14)

    def test_log_kind_geometric_mean(self):
        f = np.array([[1.0, 100.0], [1.0, 100.0]])
        out = downsample(f, 2, "log")
        assert out[0, 0] == pytest.approx(10.0, rel=1e-12)

    def test_porevol_weighting(self):
        f = np.array([[1.0, 0.0], [0.0, 0.0]])
        w = np.array([[0.4, 0.1], [0.1, 0.1]])
        out = downsample(f, 2, "porevol", weights=w)
        assert out[0, 0] == pytest.approx(0.4 / 0.7, rel=1e-12)

    def test_rejects_indivisible(self):
        with pytest.raises(ValueError):
            downsample(np.zeros((10, 10)), 3)


class TestDistanceChannel:
    def test_well_cell_is_one(self):
        c = distance_channel(64, 64)
        assert c[32, 32] == 1.0

    def test_min_is_zero(self):
        c = distance_channel(64, 64)
        assert c.min() == 0.0
        assert c[0, 0] == 0.0  # farthest corner for an even grid

    def test_hand_value_65(self):
        # cell (row 32, col 0), well (32, 32): 1 - 32/sqrt(2*32^2)
        c = distance_channel(65, 65)
        expected = 1.0 - 32.0 / math.sqrt(2 * 32.0 ** 2)
        assert c[32, 0] == pytest.approx(expected, abs=1e-12)
        assert c[32, 0] == pytest.approx(0.2929, abs=1e-4)

    def test_depends_only_on_shape(self):
        assert np.array_equal(distance_channel(16, 16), distance_channel(16, 16))


class TestCycleAndTime:
    def test_first_step_injection(self):
        assert cycle_indicator(1, SCHED, OUT) == 1

    def test_step_four_withdrawal(self):
        assert cycle_indicator(4, SCHED, OUT) == -1

    def test_step_sixty(self):
        assert ((60 - 1) % 6) == 5  # stage arithmetic
        assert cycle_indicator(60, SCHED, OUT) == -1

    def test_pattern_three_on_three_off(self):
        pattern = [cycle_indicator(s, SCHED, OUT) for s in range(1, 13)]
        assert pattern == [1, 1, 1, -1, -1, -1, 1, 1, 1, -1, -1, -1]

    def test_extends_beyond_horizon(self):
        # schedule horizon is 60 steps; the cycle keeps repeating
        assert cycle_indicator(61, SCHED, OUT) == 1
        assert cycle_indicator(64, SCHED, OUT) == -1

    def test_time_channel_values(self):
        assert time_channel(60, 60) == 1.0
        assert time_channel(42, 60) == pytest.approx(0.7)
        with pytest.raises(ValueError):
            time_channel(0, 60)


class TestFieldScaler:
    def test_fixed_point(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(10000)
        x = (x - x.mean()) / x.std()
        out = FieldScaler().fit(x).transform(x)
        assert np.allclose(out, x, atol=1e-12)

    def test_inverse_pair(self):
        rng = np.random.default_rng(2)
        x = rng.random((6, 6)) * 40 + 100
        sc = FieldScaler().fit(x)
        assert np.allclose(sc.inverse_transform(sc.transform(x)), x, atol=1e-12)

    def test_rejects_zero_variance(self):
        with pytest.raises(ValueError):
            FieldScaler().fit(np.full(100, 5.0))

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            FieldScaler().transform(np.zeros(3))

    def test_sklearn_params_round_trip(self):
        sc = FieldScaler()
        assert sc.get_params() == {}
        assert type(sc)(**sc.get_params()) is not None


class TestSplitManifest:
    def test_paper_scale(self):
        m = build_split_manifest(1000, 60, seed=0)
        assert (len(m.train), len(m.val), len(m.test)) == (700, 150, 150)
        assert m.t_train == 42

    def test_desk_scale(self):
        m = build_split_manifest(20, 18, seed=0)
        assert (len(m.train), len(m.val), len(m.test)) == (14, 3, 3)
        assert m.t_train == 12

    def test_deterministic(self):
        assert build_split_manifest(50, 18, seed=7) == build_split_manifest(50, 18, seed=7)
        assert build_split_manifest(50, 18, seed=7) != build_split_manifest(50, 18, seed=8)

    def test_partition(self):
        m = build_split_manifest(33, 18, seed=3)
        ids = set(m.train) | set(m.val) | set(m.test)
        assert ids == set(range(33))
        assert len(m.train) + len(m.val) + len(m.test) == 33

    def test_views_partition_steps(self):
        m = build_split_manifest(20, 18, seed=0)
        seen = set()
        for name in ("train", "val1", "val2", "val3", "test"):
            sims, steps = m.view(name)
            for i in sims:
                for s in steps:
                    assert (i, s) not in seen
                    seen.add((i, s))
        assert len(seen) == 20 * 18

    def test_boundary_on_stage_multiple(self):
        for n_steps in (6, 12, 18, 60):
            m = build_split_manifest(20, n_steps, seed=0)
            assert m.t_train % 3 == 0

    def test_rejects_tiny(self):
        with pytest.raises(ValueError):
            build_split_manifest(3, 18, seed=0)
        with pytest.raises(ValueError):
            build_split_manifest(20, 18, ratios=(10, 5, 4), seed=0)


@pytest.fixture(scope="module")
def toy_data():
    """Three tiny simulations for dataset-level tests."""
    grid = GridSpec(nx=16, ny=16, dx=480.0, dy=480.0, thickness=100.0)
    sched = Schedule.cyclic(1, inject_rate=1.0, inject_bhp_cap=300.0, withdraw_bhp=90.0)
    cfg = SimConfig(dt=MONTH, output_interval=2 * MONTH)
    geos, series = {}, {}
    for i in range(7):
        geo = gen_gaussian_field(
            FieldParams(kind="gaussian", std_log_k=0.5, corr_x=1500, corr_y=1500,
                        seed=100 + i), grid)
        geos[i] = geo
        series[i] = run_simulation(geo, sched, cfg)
    return geos, series, sched, cfg


class TestRecordsAndSamples:
    def test_record_shapes(self, toy_data):
        geos, series, sched, cfg = toy_data
        rec = make_record(0, geos[0], series[0], factor=2)
        assert rec.resolution == (8, 8)
        assert rec.n_steps == 6
        assert rec.pressure.shape == (7, 8, 8)

    def test_stats_train_only(self, toy_data):
        geos, series, sched, cfg = toy_data
        records = {i: make_record(i, geos[i], series[i], 2) for i in geos}
        manifest = SplitManifest(train=(0, 1, 2, 3), val=(4, 5), test=(6,),
                                 t_train=3, n_steps=6)
        stats = fit_stats(records, manifest)
        # recompute the porosity stats directly over the training split
        stack = np.stack([records[i].porosity for i in manifest.train])
        assert stats.porosity[0] == pytest.approx(stack.mean())
        assert stats.porosity[1] == pytest.approx(stack.std())

    def test_train_stats_applied_to_val_keep_offset(self):
        # Oracle: direct statistics on a hand-built 3-simulation dataset.
        # Train-fitted statistics are reused, never re-fitted, on held-out
        # simulations, whose normalized mean is then non-zero in general.
        rng = np.random.default_rng(0)
        records = {
            i: SimulationRecord(
                sim_id=i,
                porosity=rng.random((4, 4)) * 0.1 + 0.1 + 0.05 * i,
                permeability=rng.random((4, 4)) * 50 + 50,
                pressure=rng.random((7, 4, 4)) * 20 + 100,
                saturation=rng.random((7, 4, 4)),
                y_h2=rng.random((7, 4, 4)),
            )
            for i in range(3)
        }
        manifest = SplitManifest(train=(0, 1), val=(2,), test=(), t_train=3, n_steps=6)
        stats = fit_stats(records, manifest)
        train_stack = np.stack([records[i].porosity for i in (0, 1)])
        assert stats.porosity == pytest.approx((train_stack.mean(), train_stack.std()))
        normalized = stats.normalize("porosity", records[2].porosity)
        assert abs(normalized.mean()) > 0.1
        # idempotent: re-fitting on the training split reproduces the stats
        assert fit_stats(records, manifest).to_dict() == stats.to_dict()

    def test_sample_channel_count_and_order(self, toy_data):
        geos, series, sched, cfg = toy_data
        rec = make_record(0, geos[0], series[0], 2)
        manifest = SplitManifest(train=(0, 1, 2, 3), val=(4, 5), test=(6,),
                                 t_train=3, n_steps=6)
        records = {i: make_record(i, geos[i], series[i], 2) for i in geos}
        stats = fit_stats(records, manifest)
        for mode, target in (("static", "saturation"), ("auto", "pressure")):
            spec = SampleSpec(mode=mode, target=target)
            x, y = assemble_sample(rec, 2, spec, stats, cycle=1, time_divisor=6)
            assert x.shape == (5, 8, 8)
            assert y.shape == (8, 8)
            assert len(spec.channels) == 5

    def test_auto_step1_previous_is_initial(self, toy_data):
        geos, series, sched, cfg = toy_data
        records = {i: make_record(i, geos[i], series[i], 2) for i in geos}
        manifest = SplitManifest(train=(0, 1, 2, 3), val=(4, 5), test=(6,),
                                 t_train=3, n_steps=6)
        stats = fit_stats(records, manifest)
        spec = SampleSpec(mode="auto", target="saturation")
        x, _ = assemble_sample(records[0], 1, spec, stats, cycle=1, time_divisor=6)
        assert np.array_equal(x[4], records[0].saturation[0])

    def test_static_samples_differ_only_in_time_and_cycle(self, toy_data):
        geos, series, sched, cfg = toy_data
        records = {i: make_record(i, geos[i], series[i], 2) for i in geos}
        manifest = SplitManifest(train=(0, 1, 2, 3), val=(4, 5), test=(6,),
                                 t_train=3, n_steps=6)
        stats = fit_stats(records, manifest)
        spec = SampleSpec(mode="static", target="saturation")
        x2, _ = assemble_sample(records[0], 2, spec, stats, cycle=1, time_divisor=6)
        x5, _ = assemble_sample(records[0], 5, spec, stats, cycle=-1, time_divisor=6)
        assert np.array_equal(x2[:3], x5[:3])
        assert not np.array_equal(x2[3], x5[3])
        assert not np.array_equal(x2[4], x5[4])

    def test_pressure_target_normalized(self, toy_data):
        geos, series, sched, cfg = toy_data
        records = {i: make_record(i, geos[i], series[i], 2) for i in geos}
        manifest = SplitManifest(train=(0, 1, 2, 3), val=(4, 5), test=(6,),
                                 t_train=3, n_steps=6)
        stats = fit_stats(records, manifest)
        spec = SampleSpec(mode="static", target="pressure")
        _, y = assemble_sample(records[0], 2, spec, stats, cycle=1, time_divisor=6)
        back = stats.denormalize("pressure", y)
        assert np.allclose(back, records[0].pressure[2], atol=1e-10)


class TestUhsdFile:
    @pytest.fixture()
    def bundle(self, toy_data):
        geos, series, sched, cfg = toy_data
        return build_dataset(geos, series, sched, cfg.output_interval, factor=2,
                             ratios=(4, 2, 1), seed=0)

    def test_round_trip_bit_exact(self, bundle, tmp_path):
        path = tmp_path / "toy.uhsd"
        write_dataset(bundle, path)
        back = read_dataset(path)
        assert back.manifest == bundle.manifest
        assert back.stats.to_dict() == bundle.stats.to_dict()
        assert back.cycle_indicators == bundle.cycle_indicators
        for i in bundle.records:
            a, b = bundle.records[i], back.records[i]
            assert np.array_equal(np.asarray(a.porosity, np.float32), b.porosity)
            assert np.array_equal(np.asarray(a.pressure, np.float32), b.pressure)
            assert np.array_equal(np.asarray(a.saturation, np.float32), b.saturation)

    def test_write_deterministic(self, bundle, tmp_path):
        p1, p2 = tmp_path / "a.uhsd", tmp_path / "b.uhsd"
        write_dataset(bundle, p1)
        write_dataset(bundle, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_byte_detected(self, bundle, tmp_path):
        path = tmp_path / "toy.uhsd"
        write_dataset(bundle, path)
        data = bytearray(path.read_bytes())
        data[-5] ^= 0xFF  # inside the last chunk, before its CRC
        path.write_bytes(bytes(data))
        with pytest.raises(DatasetChecksumError):
            read_dataset(path)

    def test_truncated_detected(self, bundle, tmp_path):
        path = tmp_path / "toy.uhsd"
        write_dataset(bundle, path)
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(DatasetTruncatedError):
            read_dataset(path)

    def test_version_mismatch(self, bundle, tmp_path):
        path = tmp_path / "toy.uhsd"
        write_dataset(bundle, path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(DatasetVersionError):
            read_dataset(path)

    def test_header_only_read(self, bundle, tmp_path):
        path = tmp_path / "toy.uhsd"
        write_dataset(bundle, path)
        header, offset = read_header(path)
        assert header["manifest"]["t_train"] == bundle.manifest.t_train
        hdr_bundle = read_dataset(path, header_only=True)
        assert hdr_bundle.records is None
        assert hdr_bundle.manifest == bundle.manifest
        # offset arithmetic: header region ends where tensor data begins
        ny, nx = bundle.resolution
        chunk = 4 * (2 * ny * nx + 3 * (bundle.n_steps + 1) * ny * nx) + 4
        expected_size = offset + chunk * len(bundle.records)
        assert path.stat().st_size == expected_size

    def test_endianness_fixed(self, bundle, tmp_path):
        path = tmp_path / "toy.uhsd"
        write_dataset(bundle, path)
        _, offset = read_header(path)
        raw = path.read_bytes()
        first = np.frombuffer(raw[offset:offset + 4], "<f4")[0]
        sim0 = min(bundle.records)
        assert first == np.float32(bundle.records[sim0].porosity[0, 0])

    def test_design_matrices_views(self, bundle):
        spec = SampleSpec(mode="auto", target="saturation")
        X, Y, keys = bundle.design_matrices("train", spec)
        assert X.shape == (4 * 3, 5, 8, 8)
        assert Y.shape == (12, 8, 8)
        X1, _, keys1 = bundle.design_matrices("val1", spec)
        assert all(s > bundle.manifest.t_train for _, s in keys1)

    def test_cycle_extension(self, bundle):
        n = bundle.n_steps
        for k in range(1, 13):
            assert bundle.cycle_indicator(n + k) == bundle.cycle_block[(k - 1) % len(bundle.cycle_block)]
