"""Evaluation protocol: static per-step prediction, closed-loop
auto-regressive rollout, per-step MAE and auto-minus-static difference
curves (negative values mean the auto-regressive model wins), time
extrapolation past the training boundary, and scalar storage-performance
metrics from well records."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import SimulationRecord, distance_channel, time_channel
from .schedule import Schedule
from .simulator import SnapshotSeries
from .uhsd import DatasetBundle
from .utils import require


class RolloutDivergedError(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite prediction at rollout step {step}")


def _base_channels(record: SimulationRecord, bundle: DatasetBundle) -> np.ndarray:
    ny, nx = record.resolution
    base = np.empty((3, ny, nx))
    base[0] = bundle.stats.normalize("porosity", record.porosity)
    base[1] = bundle.stats.normalize("permeability", record.permeability)
    base[2] = distance_channel(ny, nx)
    return base


def static_series(model, record: SimulationRecord, bundle: DatasetBundle,
                  steps: list[int], target: str) -> np.ndarray:
    """Predict every requested step independently (no state feedback).

    Returns predictions in model space, shape (len(steps), R, R)."""
    require(all(s >= 1 for s in steps), "steps must be >= 1")
    base = _base_channels(record, bundle)
    ny, nx = record.resolution
    x = np.empty((len(steps), 5, ny, nx))
    for i, s in enumerate(steps):
        x[i, :3] = base
        x[i, 3] = float(bundle.cycle_indicator(s))
        x[i, 4] = time_channel(s, bundle.time_divisor)
    return model.predict(x)


def autoregressive_rollout(model, record: SimulationRecord, bundle: DatasetBundle,
                           steps: list[int], target: str) -> np.ndarray:
    """Closed-loop rollout from the true t=0 field.

    Step k's previous-target channel is the model's own step k-1 output
    (the initial condition seeds step 1); the cycle channel follows the
    target step, extending periodically beyond the schedule horizon. A
    non-finite prediction aborts with the failing step index."""
    require(list(steps) == list(range(1, len(steps) + 1)),
            "rollout steps must be contiguous from 1")
    base = _base_channels(record, bundle)
    ny, nx = record.resolution
    from .dataset import target_field

    prev = target_field(record, 0, target, bundle.stats)
    out = np.empty((len(steps), ny, nx))
    x = np.empty((1, 5, ny, nx))
    for i, s in enumerate(steps):
        x[0, :3] = base
        x[0, 3] = float(bundle.cycle_indicator(s))
        x[0, 4] = prev
        pred = model.predict(x)[0]
        if not np.all(np.isfinite(pred)):
            raise RolloutDivergedError(s)
        out[i] = pred
        prev = pred
    return out


def mae_curve(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-step mean absolute error over pixels; inputs (T, R, R)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    require(pred.shape == truth.shape, f"shape mismatch {pred.shape} vs {truth.shape}")
    return np.abs(pred - truth).mean(axis=(1, 2))


def diff_curve(auto_mae: np.ndarray, static_mae: np.ndarray) -> np.ndarray:
    """Element-wise auto MAE minus static MAE; negative means the
    auto-regressive model performed better."""
    auto_mae = np.asarray(auto_mae, dtype=np.float64)
    static_mae = np.asarray(static_mae, dtype=np.float64)
    require(auto_mae.shape == static_mae.shape, "curve length mismatch")
    return auto_mae - static_mae


@dataclass
class ModelCurves:
    """Per-simulation and mean MAE curves for one (model, target) pair, in
    normalized model space and physical units."""

    target: str
    mode: str
    steps: list[int]
    per_sim_norm: dict[int, np.ndarray]
    per_sim_phys: dict[int, np.ndarray]

    @property
    def mean_norm(self) -> np.ndarray:
        return np.mean(list(self.per_sim_norm.values()), axis=0)

    @property
    def mean_phys(self) -> np.ndarray:
        return np.mean(list(self.per_sim_phys.values()), axis=0)


@dataclass
class RolloutReport:
    """Evaluation curves for a set of simulations plus metadata.

    `curves` maps (mode, target) to ModelCurves; `t_train` marks where the
    extrapolation segment begins; `metrics` optionally carries per-cycle
    storage metrics keyed by sim id."""

    steps: list[int]
    t_train: int
    curves: dict[tuple[str, str], ModelCurves] = field(default_factory=dict)
    metrics: dict[int, "UhsMetrics"] = field(default_factory=dict)

    def difference(self, target: str) -> dict[int, np.ndarray]:
        auto = self.curves[("auto", target)]
        static = self.curves[("static", target)]
        require(set(auto.per_sim_norm) == set(static.per_sim_norm),
                "difference curves need matching simulation sets")
        return {i: diff_curve(auto.per_sim_norm[i], static.per_sim_norm[i])
                for i in auto.per_sim_norm}


def evaluate_models(models: dict[tuple[str, str], object], bundle: DatasetBundle,
                    sim_ids: list[int], steps: list[int], t_train: int
                    ) -> RolloutReport:
    """Score every (mode, target) model on the given simulations.

    Static models predict each step independently; auto-regressive models
    run a closed-loop rollout through the full horizon. Pressure curves are
    also de-normalized to bars (saturation is already physical)."""
    report = RolloutReport(steps=list(steps), t_train=t_train)
    for (mode, target), model in sorted(models.items()):
        per_norm: dict[int, np.ndarray] = {}
        per_phys: dict[int, np.ndarray] = {}
        for sim_id in sim_ids:
            record = bundle.record(sim_id)
            truth = np.stack([_truth(record, bundle, s, target) for s in steps])
            if mode == "static":
                pred = static_series(model, record, bundle, steps, target)
            else:
                pred = autoregressive_rollout(model, record, bundle, steps, target)
            per_norm[sim_id] = mae_curve(pred, truth)
            if target == "pressure":
                std = bundle.stats.pressure[1]
                per_phys[sim_id] = per_norm[sim_id] * std
            else:
                per_phys[sim_id] = per_norm[sim_id].copy()
        report.curves[(mode, target)] = ModelCurves(
            target=target, mode=mode, steps=list(steps),
            per_sim_norm=per_norm, per_sim_phys=per_phys)
    return report


def _truth(record: SimulationRecord, bundle: DatasetBundle, step: int,
           target: str) -> np.ndarray:
    from .dataset import target_field

    return target_field(record, step, target, bundle.stats)


@dataclass
class CycleMetrics:
    cycle: int                       # 1-based; 0 means cumulative
    recovery: float | None           # produced/injected H2 (None: no injection)
    purity: float | None             # H2 share of produced gas (None: no gas)
    gas_water_ratio: float           # inf when no water produced
    gwr_infinite: bool
    injectivity: float | None        # kg/s/bar (None: no injection stage)


@dataclass
class UhsMetrics:
    cycles: list[CycleMetrics]
    cumulative: CycleMetrics


def compute_uhs_metrics(series: SnapshotSeries, schedule: Schedule) -> UhsMetrics:
    """Scalar storage metrics from the series' cumulative well records.

    A cycle is one (injection stage, following withdrawal stage) pair.
    Recovery = H2 produced in the cycle / H2 injected in it; purity = H2
    share of the produced gas mass; gas-water ratio = produced gas mass /
    produced water mass (flagged infinite when no water is produced);
    injectivity = average injection mass rate / average (BHP - field mean
    pressure) over the cycle's injection stage."""
    times = np.asarray(series.times)
    bounds = schedule.boundaries()
    require(math.isclose(bounds[-1], float(times[-1]), rel_tol=1e-9),
            "series horizon does not match the schedule")
    # map stage boundaries to snapshot indices
    idx_of = {}
    for t in [0.0] + bounds:
        hits = np.nonzero(np.isclose(times, t, rtol=1e-9, atol=1e-6))[0]
        require(hits.size == 1, f"no snapshot at stage boundary t={t}")
        idx_of[t] = int(hits[0])
    rec = series.well_records
    press_mean = series.pressure.reshape(len(times), -1).mean(axis=1)

    cycles: list[CycleMetrics] = []
    t_start = 0.0
    stages = list(schedule.stages)
    i = 0
    cycle_no = 0
    while i < len(stages):
        stage = stages[i]
        t_end = t_start + stage.duration
        if stage.kind == "inject_h2":
            cycle_no += 1
            a, b = idx_of[t_start], idx_of[t_end]
            inj_h2 = rec[b, 0] - rec[a, 0]
            # injection-stage snapshots (excluding the stage start)
            snaps = range(a + 1, b + 1)
            drawdowns = [rec[k, 6] - press_mean[k] for k in snaps]
            mean_dd = float(np.mean(drawdowns)) if drawdowns else 0.0
            rate = inj_h2 / stage.duration
            injectivity = rate / mean_dd if mean_dd > 0 else None
            prod_h2 = prod_cu = prod_w = 0.0
            if i + 1 < len(stages) and stages[i + 1].kind == "withdraw":
                wd = stages[i + 1]
                c = idx_of[t_end + wd.duration]
                prod_h2 = rec[c, 3] - rec[b, 3]
                prod_cu = rec[c, 4] - rec[b, 4]
                prod_w = rec[c, 5] - rec[b, 5]
                i += 1
                t_end += wd.duration
            cycles.append(_cycle_metrics(cycle_no, inj_h2, prod_h2, prod_cu,
                                         prod_w, injectivity))
        t_start = t_end
        i += 1

    tot_inj_h2 = rec[-1, 0] - rec[0, 0]
    tot_prod = rec[-1, 3:6] - rec[0, 3:6]
    inj_list = [c.injectivity for c in cycles if c.injectivity is not None]
    cumulative = _cycle_metrics(0, tot_inj_h2, tot_prod[0], tot_prod[1], tot_prod[2],
                                float(np.mean(inj_list)) if inj_list else None)
    return UhsMetrics(cycles=cycles, cumulative=cumulative)


def _cycle_metrics(cycle: int, inj_h2: float, prod_h2: float, prod_cu: float,
                   prod_w: float, injectivity: float | None) -> CycleMetrics:
    prod_gas = prod_h2 + prod_cu
    return CycleMetrics(
        cycle=cycle,
        recovery=(prod_h2 / inj_h2) if inj_h2 > 0 else None,
        purity=(prod_h2 / prod_gas) if prod_gas > 0 else None,
        gas_water_ratio=(prod_gas / prod_w) if prod_w > 0 else math.inf,
        gwr_infinite=prod_w <= 0,
        injectivity=injectivity,
    )


def write_mae_csv(report: RolloutReport, path) -> None:
    """mae_curve.csv: sim_id, step, model, target, mae_norm, mae_physical, extrap."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sim_id", "step", "model", "target", "mae_norm",
                    "mae_physical", "extrap"])
        for (mode, target), curves in sorted(report.curves.items()):
            for sim_id in sorted(curves.per_sim_norm):
                cn = curves.per_sim_norm[sim_id]
                cp = curves.per_sim_phys[sim_id]
                for j, s in enumerate(report.steps):
                    w.writerow([sim_id, s, mode, target, f"{cn[j]:.10g}",
                                f"{cp[j]:.10g}", str(s > report.t_train).lower()])


def write_diff_csv(report: RolloutReport, path) -> None:
    """diff_curve.csv: auto-minus-static per simulation and the mean row set."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sim_id", "step", "target", "diff_norm", "extrap"])
        for target in sorted({t for (_, t) in report.curves}):
            if ("auto", target) not in report.curves or \
                    ("static", target) not in report.curves:
                continue
            diffs = report.difference(target)
            for sim_id in sorted(diffs):
                for j, s in enumerate(report.steps):
                    w.writerow([sim_id, s, target, f"{diffs[sim_id][j]:.10g}",
                                str(s > report.t_train).lower()])
            mean = np.mean(list(diffs.values()), axis=0)
            for j, s in enumerate(report.steps):
                w.writerow(["mean", s, target, f"{mean[j]:.10g}",
                            str(s > report.t_train).lower()])


def write_metrics_csv(metrics: dict[int, UhsMetrics], path) -> None:
    """metrics.csv: sim_id, cycle, recovery, purity, gwr, injectivity
    (cycle "cumulative" aggregates; infinite gas-water ratio spelled "inf")."""

    def fmt(v):
        if v is None:
            return ""
        if math.isinf(v):
            return "inf"
        return f"{v:.10g}"

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sim_id", "cycle", "recovery", "purity", "gwr", "injectivity"])
        for sim_id in sorted(metrics):
            m = metrics[sim_id]
            for c in m.cycles:
                w.writerow([sim_id, c.cycle, fmt(c.recovery), fmt(c.purity),
                            fmt(c.gas_water_ratio), fmt(c.injectivity)])
            cu = m.cumulative
            w.writerow([sim_id, "cumulative", fmt(cu.recovery), fmt(cu.purity),
                        fmt(cu.gas_water_ratio), fmt(cu.injectivity)])


def render_panels(report: RolloutReport, path) -> None:
    """Six-panel SVG: per-target auto MAE, static MAE and the difference."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    targets = sorted({t for (_, t) in report.curves})
    fig, axes = plt.subplots(3, max(len(targets), 1), figsize=(6 * len(targets), 12),
                             squeeze=False)
    steps = report.steps
    for col, target in enumerate(targets):
        for row, mode in enumerate(("auto", "static")):
            ax = axes[row][col]
            curves = report.curves.get((mode, target))
            if curves is None:
                continue
            for sim_id, c in sorted(curves.per_sim_norm.items()):
                ax.plot(steps, c, alpha=0.5, label=f"sim {sim_id}")
            ax.plot(steps, curves.mean_norm, "k-", lw=2, label="mean")
            ax.axvline(report.t_train + 0.5, color="gray", ls="--", lw=1)
            ax.set_title(f"{target} {mode} MAE")
            ax.set_xlabel("step (2 months each)")
            ax.set_ylabel("MAE")
        ax = axes[2][col]
        if ("auto", target) in report.curves and ("static", target) in report.curves:
            diffs = report.difference(target)
            for sim_id, c in sorted(diffs.items()):
                ax.plot(steps, c, alpha=0.5)
            ax.plot(steps, np.mean(list(diffs.values()), axis=0), "k-", lw=2)
            ax.axhline(0.0, color="gray", lw=1)
            ax.axvline(report.t_train + 0.5, color="gray", ls="--", lw=1)
            ax.set_title(f"{target}: auto minus static MAE")
            ax.set_xlabel("step (2 months each)")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
