"""Run configuration: one structured file pins every pipeline constant.

Two versioned presets reproduce the study setup at different scales:
"desk" (64x64 grid, 3 annual cycles, 20 simulations, width-16 net trained
at 32x32) and "paper" (256x256, 10 cycles, 1000 simulations, width-64 net
at 64x64). A YAML file selects a preset via `scale` and overrides any
subset of keys; every nested section is validated by its dataclass before
any command touches the filesystem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .fluids import FluidProps, RelPermModel
from .geomodel import FieldParams, GridSpec
from .schedule import Schedule
from .simulator import SimConfig
from .surrogate import TrainConfig
from .utils import MONTH, require

CONFIG_VERSION = 1
SCALES = ("desk", "paper")


def preset(scale: str) -> dict:
    require(scale in SCALES, f"scale must be one of {SCALES}")
    base = {
        "version": CONFIG_VERSION,
        "scale": scale,
        "seed": 0,
        "workers": 1,
        "workdir": f"runs/{scale}",
        # a 60/40 mix of Gaussian and channelized fields with strong contrast
        # keeps the plume shapes geology-dependent at desk scale
        "fluvial_fraction": 0.4,
        "field": {
            "kind": "gaussian",
            "mean_log_k": math.log(100.0),
            "std_log_k": 1.5,
            "poro_a": 0.10,
            "poro_b": 0.05,
            "channel_width": 700.0,
            "amplitude": 1200.0,
            "wavelength": 5200.0,
            "k_channel": 800.0,
            "k_background": 15.0,
        },
        "fluids": {},
        "relperm": {},
        "schedule": {
            "inject_rate": 30.0,       # kg/s
            "inject_bhp_cap": 300.0,   # bar
            "withdraw_bhp": 90.0,      # bar
        },
        "sim": {
            "dt": 5 * 86400.0,
            "output_interval": 2 * MONTH,
            "p0": 100.0,
            # modest native gas: injected hydrogen must displace water, so
            # the saturation field carries the heterogeneity signal
            "s_g0": 0.15,
            "y0": 0.0,
        },
        "dataset": {"ratios": None},
        "train": {
            "levels": 3,
            "batch_size": 64,
            "lr": 1e-4,
            "lr_halving_epochs": 25,
            "max_epochs": 200,
            "patience": 10,
            "val_cadence": 10,
            "l2_static": 1e-5,
            "optimizer": "adam",
        },
        "eval": {"subset": None, "subset_seed": 0, "plots": False},
    }
    if scale == "desk":
        base["n_sims"] = 20
        base["grid"] = {"nx": 64, "ny": 64, "dx": 120.0, "dy": 120.0,
                        "thickness": 100.0}
        base["field"].update({"corr_x": 720.0, "corr_y": 720.0})
        base["schedule"]["n_cycles"] = 3
        base["dataset"]["downsample_factor"] = 2
        base["train"]["base_width"] = 16
    else:
        base["n_sims"] = 1000
        base["grid"] = {"nx": 256, "ny": 256, "dx": 30.0, "dy": 30.0,
                        "thickness": 100.0}
        base["field"].update({"corr_x": 720.0, "corr_y": 720.0})
        base["schedule"]["n_cycles"] = 10
        base["dataset"]["downsample_factor"] = 4
        base["train"]["base_width"] = 64
    return base


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class RunConfig:
    scale: str
    seed: int
    workers: int
    workdir: Path
    n_sims: int
    fluvial_fraction: float
    grid: GridSpec
    field: FieldParams
    fluids: FluidProps
    relperm: RelPermModel
    schedule: Schedule
    sim: SimConfig
    downsample_factor: int
    split_ratios: tuple[int, int, int] | None
    train_raw: dict
    eval_raw: dict
    raw: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        require(self.n_sims >= 0, "n_sims must be non-negative")
        require(self.workers >= 1, "workers must be >= 1")
        require(0.0 <= self.fluvial_fraction <= 1.0, "fluvial fraction must lie in [0, 1]")
        require(self.downsample_factor >= 1, "downsample factor must be >= 1")
        res = self.grid.nx // self.downsample_factor
        levels = self.train_raw.get("levels", 3)
        require(res % (2 ** levels) == 0,
                f"training resolution {res} must be divisible by 2^{levels}")

    # derived paths
    @property
    def geo_dir(self) -> Path:
        return self.workdir / "fields"

    @property
    def sim_dir(self) -> Path:
        return self.workdir / "sims"

    @property
    def dataset_path(self) -> Path:
        return self.workdir / "dataset.uhsd"

    @property
    def models_dir(self) -> Path:
        return self.workdir / "models"

    @property
    def reports_dir(self) -> Path:
        return self.workdir / "reports"

    @property
    def n_steps(self) -> int:
        return round(self.schedule.total_duration / self.sim.output_interval)

    def train_config(self, mode: str) -> TrainConfig:
        t = self.train_raw
        l2 = t.get("l2_static", 0.0) if mode == "static" else 0.0
        return TrainConfig(
            batch_size=t.get("batch_size", 64), lr=t.get("lr", 1e-4),
            lr_halving_epochs=t.get("lr_halving_epochs", 25),
            max_epochs=t.get("max_epochs", 200), patience=t.get("patience", 10),
            val_cadence=t.get("val_cadence", 10), l2=l2,
            optimizer=t.get("optimizer", "adam"), seed=self.seed)

    @property
    def net_levels(self) -> int:
        return self.train_raw.get("levels", 3)

    @property
    def net_width(self) -> int:
        return self.train_raw.get("base_width", 16)


def build_config(scale: str = "desk", overrides: dict | None = None,
                 seed: int | None = None, workers: int | None = None) -> RunConfig:
    raw = preset(scale)
    if overrides:
        raw = _deep_merge(raw, overrides)
    require(raw.get("version") == CONFIG_VERSION,
            f"config version {raw.get('version')} unsupported")
    if seed is not None:
        raw["seed"] = int(seed)
    if workers is not None:
        raw["workers"] = int(workers)
    sched_raw = raw["schedule"]
    schedule = Schedule.cyclic(
        n_cycles=sched_raw["n_cycles"],
        inject_rate=sched_raw["inject_rate"],
        inject_bhp_cap=sched_raw["inject_bhp_cap"],
        withdraw_bhp=sched_raw["withdraw_bhp"],
        stage_duration=sched_raw.get("stage_duration", 6 * MONTH))
    ratios = raw["dataset"].get("ratios")
    return RunConfig(
        scale=raw["scale"],
        seed=int(raw["seed"]),
        workers=int(raw["workers"]),
        workdir=Path(raw["workdir"]),
        n_sims=int(raw["n_sims"]),
        fluvial_fraction=float(raw.get("fluvial_fraction", 0.0)),
        grid=GridSpec.from_dict(raw["grid"]),
        field=FieldParams.from_dict(raw["field"]),
        fluids=FluidProps.from_dict(raw.get("fluids", {})),
        relperm=RelPermModel.from_dict(raw.get("relperm", {})),
        schedule=schedule,
        sim=SimConfig.from_dict(raw["sim"]),
        downsample_factor=int(raw["dataset"]["downsample_factor"]),
        split_ratios=tuple(ratios) if ratios else None,
        train_raw=dict(raw["train"]),
        eval_raw=dict(raw.get("eval", {})),
        raw=raw,
    )


def load_config(path=None, scale: str | None = None, seed: int | None = None,
                workers: int | None = None) -> RunConfig:
    """Load a YAML config over a preset; flags override the file."""
    overrides: dict = {}
    if path is not None:
        with open(path) as f:
            overrides = yaml.safe_load(f) or {}
        require(isinstance(overrides, dict), f"{path}: config must be a mapping")
    chosen = scale or overrides.get("scale", "desk")
    overrides.pop("scale", None)
    return build_config(chosen, overrides, seed=seed, workers=workers)
