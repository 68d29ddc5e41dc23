"""Command-line pipeline: gen -> simulate -> dataset -> train -> eval/metrics.

Every command validates the full configuration before touching the
filesystem and is deterministic from the master seed (per-simulation seeds
are derived as SHA-256(master, index)). Exit codes: 0 success, 1 config
error, 2 runtime failure, 3 partial batch failure.
"""
from __future__ import annotations

import argparse
import re
import sys
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .dataset import SampleSpec
from .evaluator import (
    RolloutReport,
    ModelCurves,
    compute_uhs_metrics,
    evaluate_models,
    mae_curve,
    render_panels,
    write_diff_csv,
    write_mae_csv,
    write_metrics_csv,
)
from .fluids import FluidProps, RelPermModel
from .geomodel import GEO_SUFFIX, FieldParams, GeoModel, generate_field
from .predictions import prediction_filename, read_prediction
from .schedule import Schedule
from .simulator import SIM_SUFFIX, SimConfig, SnapshotSeries, run_simulation
from .surrogate import UNetRegressor
from .uhsd import DatasetBundle, build_dataset, read_dataset, write_dataset
from .utils import derive_seed, rng_from_seed

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

MODEL_MATRIX = [("static", "saturation"), ("auto", "saturation"),
                ("static", "pressure"), ("auto", "pressure")]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _field_path(config: RunConfig, i: int) -> Path:
    return config.geo_dir / f"field_{i:04d}{GEO_SUFFIX}"


def _sim_path(config: RunConfig, i: int) -> Path:
    return config.sim_dir / f"sim_{i:04d}{SIM_SUFFIX}"


def _model_path(config: RunConfig, mode: str, target: str) -> Path:
    return config.models_dir / f"{target}_{mode}.net"


def cmd_gen(config: RunConfig, n: int | None) -> int:
    n = config.n_sims if n is None else n
    config.geo_dir.mkdir(parents=True, exist_ok=True)
    n_gauss = round(n * (1.0 - config.fluvial_fraction))
    for i in range(n):
        kind = "gaussian" if i < n_gauss else "fluvial"
        params = FieldParams.from_dict(
            {**config.field.to_dict(), "kind": kind,
             "seed": derive_seed(config.seed, i)})
        model = generate_field(params, config.grid)
        model.save(_field_path(config, i))
    print(f"gen: wrote {n} field(s) to {config.geo_dir}")
    return EXIT_OK


def _simulate_one(job) -> tuple[int, str | None]:
    """Worker: run one simulation; failures are reported, not raised."""
    i, geo_path, sim_path, sched, sim_cfg, fluids, relperm = job
    try:
        geo = GeoModel.load(geo_path)
        series = run_simulation(geo, Schedule.from_dict(sched),
                                SimConfig.from_dict(sim_cfg),
                                fluids=FluidProps.from_dict(fluids),
                                relperm=RelPermModel.from_dict(relperm))
        series.save(sim_path)
        return i, None
    except Exception as exc:  # isolate per-simulation failures
        return i, f"{type(exc).__name__}: {exc}"


def cmd_simulate(config: RunConfig) -> int:
    geo_paths = sorted(config.geo_dir.glob(f"*{GEO_SUFFIX}"))
    if not geo_paths:
        print(f"simulate: no {GEO_SUFFIX} inputs under {config.geo_dir}",
              file=sys.stderr)
        return EXIT_RUNTIME
    config.sim_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(i, str(p), str(config.sim_dir / (p.stem.replace("field", "sim")
                                              + SIM_SUFFIX)),
             config.schedule.to_dict(), config.sim.to_dict(),
             config.fluids.to_dict(), config.relperm.to_dict())
            for i, p in enumerate(geo_paths)]
    if config.workers > 1:
        with Pool(config.workers) as pool:
            results = pool.map(_simulate_one, jobs)
    else:
        results = [_simulate_one(j) for j in jobs]
    failures = [(i, msg) for i, msg in results if msg is not None]
    for i, msg in failures:
        print(f"simulate: simulation {i} failed: {msg}", file=sys.stderr)
    n_ok = len(results) - len(failures)
    print(f"simulate: {n_ok}/{len(results)} simulation(s) completed")
    if failures and n_ok:
        return EXIT_PARTIAL
    if failures:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_dataset(config: RunConfig) -> int:
    geo_paths = sorted(config.geo_dir.glob(f"*{GEO_SUFFIX}"))
    if not geo_paths:
        print(f"dataset: missing field inputs under {config.geo_dir}", file=sys.stderr)
        return EXIT_RUNTIME
    geos, series = {}, {}
    for i, gp in enumerate(geo_paths):
        sp = config.sim_dir / (gp.stem.replace("field", "sim") + SIM_SUFFIX)
        if not sp.exists():
            print(f"dataset: missing simulation {sp} for {gp}", file=sys.stderr)
            return EXIT_RUNTIME
        geos[i] = GeoModel.load(gp)
        series[i] = SnapshotSeries.load(sp)
    bundle = build_dataset(geos, series, config.schedule, config.sim.output_interval,
                           factor=config.downsample_factor, ratios=config.split_ratios,
                           seed=config.seed)
    config.dataset_path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(bundle, config.dataset_path)
    m = bundle.manifest
    print(f"dataset: {len(geos)} sims ({len(m.train)}/{len(m.val)}/{len(m.test)} "
          f"split, T_train={m.t_train}/{m.n_steps}) -> {config.dataset_path}")
    return EXIT_OK


def _load_bundle(config: RunConfig) -> DatasetBundle:
    if not config.dataset_path.exists():
        raise FileNotFoundError(
            f"dataset {config.dataset_path} not found; run `uhs dataset` first")
    return read_dataset(config.dataset_path)


def cmd_train(config: RunConfig, mode: str, target: str) -> int:
    bundle = _load_bundle(config)
    spec = SampleSpec(mode=mode, target=target)
    x, y, _ = bundle.design_matrices("train", spec)
    x_val, y_val, _ = bundle.design_matrices("val2", spec)
    tc = config.train_config(mode)
    model = UNetRegressor(
        levels=config.net_levels, base_width=config.net_width,
        head="sigmoid" if target == "saturation" else "tanhshrink",
        batch_size=tc.batch_size, lr=tc.lr, lr_halving_epochs=tc.lr_halving_epochs,
        max_epochs=tc.max_epochs, patience=tc.patience, val_cadence=tc.val_cadence,
        l2=tc.l2, optimizer=tc.optimizer, seed=tc.seed)
    model.fit(x, y, x_val, y_val)
    config.models_dir.mkdir(parents=True, exist_ok=True)
    out = _model_path(config, mode, target)
    model.save(out)
    model.history_.to_csv(out.with_suffix(".history.csv"))
    best = model.history_.best_val_mae
    print(f"train: {target} {mode}: {len(model.history_.rows)} epoch(s), "
          f"best val MAE {best if best is not None else 'n/a'} -> {out}")
    return EXIT_OK


def _eval_sims(config: RunConfig, bundle: DatasetBundle) -> list[int]:
    sims = list(bundle.manifest.val)
    subset = config.eval_raw.get("subset")
    if subset and subset < len(sims):
        rng = rng_from_seed(config.eval_raw.get("subset_seed", 0))
        sims = sorted(rng.choice(sims, size=subset, replace=False).tolist())
    return sims


def _predictions_report(pred_dir: Path, bundle: DatasetBundle, sims: list[int],
                        steps: list[int], t_train: int) -> RolloutReport:
    from .dataset import target_field

    report = RolloutReport(steps=list(steps), t_train=t_train)
    found: dict[tuple[str, str], dict[int, np.ndarray]] = {}
    for mode, target in MODEL_MATRIX:
        per: dict[int, np.ndarray] = {}
        for sim_id in sims:
            path = pred_dir / prediction_filename(target, mode, sim_id)
            if not path.exists():
                continue
            header, fields = read_prediction(path)
            if header["steps"] != list(steps):
                raise ValueError(f"{path}: steps {header['steps']} != {list(steps)}")
            if tuple(header["resolution"]) != bundle.resolution:
                raise ValueError(f"{path}: resolution mismatch")
            per[sim_id] = fields.astype(np.float64)
        if per:
            found[(mode, target)] = per
    if not found:
        raise FileNotFoundError(f"no prediction files under {pred_dir}")
    for (mode, target), per in found.items():
        per_norm, per_phys = {}, {}
        for sim_id, fields in per.items():
            record = bundle.record(sim_id)
            truth = np.stack([target_field(record, s, target, bundle.stats)
                              for s in steps])
            per_norm[sim_id] = mae_curve(fields, truth)
            std = bundle.stats.pressure[1] if target == "pressure" else 1.0
            per_phys[sim_id] = per_norm[sim_id] * std
        report.curves[(mode, target)] = ModelCurves(
            target=target, mode=mode, steps=list(steps),
            per_sim_norm=per_norm, per_sim_phys=per_phys)
    return report


def cmd_eval(config: RunConfig, steps_arg: str | None, predictions: str | None,
             plots: bool) -> int:
    bundle = _load_bundle(config)
    n_steps = bundle.n_steps
    if steps_arg:
        m = re.fullmatch(r"(\d+)\.\.(\d+)", steps_arg)
        if not m:
            raise ValueError(f"--steps expects A..B, got {steps_arg!r}")
        steps = list(range(int(m.group(1)), int(m.group(2)) + 1))
    else:
        steps = list(range(1, n_steps + 1))
    if steps and steps[-1] > n_steps:
        raise ValueError(f"steps extend past the dataset horizon {n_steps}")
    sims = _eval_sims(config, bundle)
    t_train = bundle.manifest.t_train
    if predictions is not None:
        report = _predictions_report(Path(predictions), bundle, sims, steps, t_train)
    else:
        models = {}
        for mode, target in MODEL_MATRIX:
            path = _model_path(config, mode, target)
            if path.exists():
                models[(mode, target)] = UNetRegressor.load(path)
        if not models:
            print(f"eval: no checkpoints under {config.models_dir}; "
                  "run `uhs train` first", file=sys.stderr)
            return EXIT_RUNTIME
        report = evaluate_models(models, bundle, sims, steps, t_train)
    config.reports_dir.mkdir(parents=True, exist_ok=True)
    write_mae_csv(report, config.reports_dir / "mae_curve.csv")
    write_diff_csv(report, config.reports_dir / "diff_curve.csv")
    if plots or config.eval_raw.get("plots"):
        render_panels(report, config.reports_dir / "curves.svg")
    pairs = ", ".join(f"{t} {m}" for (m, t) in sorted(report.curves))
    print(f"eval: scored [{pairs}] on sims {sims}, steps {steps[0]}..{steps[-1]} "
          f"(extrapolation beyond {t_train}) -> {config.reports_dir}")
    return EXIT_OK


def cmd_metrics(config: RunConfig) -> int:
    sim_paths = sorted(config.sim_dir.glob(f"*{SIM_SUFFIX}"))
    if not sim_paths:
        print(f"metrics: no {SIM_SUFFIX} files under {config.sim_dir}", file=sys.stderr)
        return EXIT_RUNTIME
    digest = config.schedule.digest()
    metrics = {}
    for i, p in enumerate(sim_paths):
        series = SnapshotSeries.load(p)
        if series.schedule_digest != digest:
            print(f"metrics: {p} was produced with a different schedule",
                  file=sys.stderr)
            return EXIT_RUNTIME
        metrics[i] = compute_uhs_metrics(series, config.schedule)
    config.reports_dir.mkdir(parents=True, exist_ok=True)
    out = config.reports_dir / "metrics.csv"
    write_metrics_csv(metrics, out)
    print(f"metrics: {len(metrics)} simulation(s) -> {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="uhs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="YAML config overriding the preset")
        p.add_argument("--scale", choices=("desk", "paper"), default=None,
                       help="preset scale (default: desk or the file's value)")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--workers", type=int, default=None, help="parallel workers")

    p = sub.add_parser("gen", help="generate heterogeneity fields")
    common(p)
    p.add_argument("--n", type=int, default=None, help="field count (default n_sims)")
    p = sub.add_parser("simulate", help="run the simulation batch")
    common(p)
    p = sub.add_parser("dataset", help="build the .uhsd dataset")
    common(p)
    p = sub.add_parser("train", help="train one surrogate")
    common(p)
    p.add_argument("--mode", choices=("static", "auto"), required=True)
    p.add_argument("--target", choices=("saturation", "pressure"), required=True)
    p = sub.add_parser("eval", help="rollout evaluation curves")
    common(p)
    p.add_argument("--steps", default=None, help="step range A..B (default full)")
    p.add_argument("--predictions", default=None,
                   help="score externally produced prediction files")
    p.add_argument("--plots", action="store_true", help="render SVG panels")
    p = sub.add_parser("metrics", help="storage-performance metrics from ground truth")
    common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, scale=args.scale, seed=args.seed,
                             workers=args.workers)
    except (ValueError, OSError, KeyError) as exc:
        print(f"uhs: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "gen":
            return cmd_gen(config, args.n)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "dataset":
            return cmd_dataset(config)
        if args.command == "train":
            return cmd_train(config, args.mode, args.target)
        if args.command == "eval":
            return cmd_eval(config, args.steps, args.predictions, args.plots)
        if args.command == "metrics":
            return cmd_metrics(config)
        raise ValueError(f"unknown command {args.command}")
    except Exception as exc:
        print(f"uhs {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
