"""Learning-ready samples from simulation series.

Converts (GeoModel, SnapshotSeries) pairs into per-simulation records at
the training resolution, computes channel statistics on the training split
only, builds the four-way split views (train / time-extrapolation /
geology-extrapolation / both), and assembles model inputs with a fixed,
documented channel order:

    static          : porosity, permeability, distance, cycle, time
    auto-regressive : porosity, permeability, distance, cycle, previous target

Porosity, permeability (mD, no log transform) and pressure (bar) are
standardized to zero mean / unit variance with training-split statistics;
gas saturation passes through untouched. The distance channel peaks at 1.0
on the well cell and reaches 0.0 at the farthest corner; the cycle channel
broadcasts +1 for injection steps and -1 otherwise; the static time channel
is step divided by the protocol's total step count (60 at paper scale).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .geomodel import GeoModel
from .schedule import Schedule
from .simulator import SnapshotSeries
from .utils import require

STATIC_CHANNELS = ("porosity", "permeability", "distance", "cycle", "time")
AUTO_CHANNELS = ("porosity", "permeability", "distance", "cycle", "previous_target")
NORMALIZED_CHANNELS = ("porosity", "permeability", "pressure")
TARGETS = ("saturation", "pressure")
MODES = ("static", "auto")
VIEWS = ("train", "val1", "val2", "val3", "test")


class FieldScaler(BaseEstimator, TransformerMixin):
    """Standardize one field channel to zero mean, unit variance.

    Statistics are taken over every element of the fitted array (the
    training split); transform/inverse_transform are exact inverses.
    """

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        require(np.all(np.isfinite(X)), "channel contains non-finite values")
        self.mean_ = float(X.mean())
        self.std_ = float(X.std())
        if self.std_ == 0.0:
            raise ValueError("zero-variance channel cannot be standardized")
        return self

    def _check_fitted(self):
        if not hasattr(self, "mean_"):
            raise NotFittedError("FieldScaler is not fitted")

    def transform(self, X):
        self._check_fitted()
        return (np.asarray(X, dtype=np.float64) - self.mean_) / self.std_

    def inverse_transform(self, X):
        self._check_fitted()
        return np.asarray(X, dtype=np.float64) * self.std_ + self.mean_


@dataclass(frozen=True)
class ChannelStats:
    """Training-split means/stds for the standardized channels."""

    porosity: tuple[float, float]
    permeability: tuple[float, float]
    pressure: tuple[float, float]

    def normalize(self, name: str, arr):
        mean, std = getattr(self, name)
        return (np.asarray(arr, dtype=np.float64) - mean) / std

    def denormalize(self, name: str, arr):
        mean, std = getattr(self, name)
        return np.asarray(arr, dtype=np.float64) * std + mean

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("porosity", "permeability", "pressure")}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(porosity=tuple(d["porosity"]), permeability=tuple(d["permeability"]),
                   pressure=tuple(d["pressure"]))


def downsample(field_arr: np.ndarray, factor: int, kind: str = "mean",
               weights: np.ndarray | None = None) -> np.ndarray:
    """Coarsen a 2D field by block aggregation over factor x factor blocks.

    kind "mean": plain block mean (pressure, porosity); "log": geometric
    mean, for permeability; "porevol": weighted block mean with the given
    fine-scale weights (pore volume), for saturations and compositions.
    """
    arr = np.asarray(field_arr, dtype=np.float64)
    require(factor >= 1 and int(factor) == factor, "factor must be a positive integer")
    ny, nx = arr.shape
    require(ny % factor == 0 and nx % factor == 0,
            f"resolution {arr.shape} not divisible by factor {factor}")
    if factor == 1 and kind != "log":
        return arr.copy()
    blocks = arr.reshape(ny // factor, factor, nx // factor, factor)
    if kind == "mean":
        return blocks.mean(axis=(1, 3))
    if kind == "log":
        return np.exp(np.log(blocks).mean(axis=(1, 3)))
    if kind == "porevol":
        require(weights is not None, "porevol downsampling needs weights")
        w = np.asarray(weights, dtype=np.float64).reshape(
            ny // factor, factor, nx // factor, factor)
        return (blocks * w).sum(axis=(1, 3)) / w.sum(axis=(1, 3))
    raise ValueError(f"unknown downsampling kind {kind!r}")


def distance_channel(ny: int, nx: int) -> np.ndarray:
    """Normalized closeness to the central well: 1 at the well cell, 0 at
    the farthest grid point (Euclidean distance in cell units)."""
    wx, wy = nx // 2, ny // 2
    iy, ix = np.mgrid[0:ny, 0:nx]
    dist = np.hypot(ix - wx, iy - wy)
    return 1.0 - dist / dist.max()


def cycle_indicator(step: int, schedule: Schedule, output_interval: float) -> int:
    """+1 if output step `step` falls in an injection stage, else -1.

    Steps beyond the schedule horizon follow the periodic extension of the
    cyclic portion (supports time extrapolation)."""
    return 1 if schedule.stage_for_step(step, output_interval).is_injection else -1


def time_channel(step: int, total_steps: int = 60) -> float:
    """Static-model time input: step / total protocol steps (step >= 1)."""
    require(step >= 1, "time channel is defined for post-initial steps only")
    return step / total_steps


@dataclass(frozen=True)
class SplitManifest:
    """Simulation-id split plus the temporal training boundary.

    Views: train = (train sims, steps <= t_train); val1 = (train sims,
    steps > t_train); val2 = (held-out sims, steps <= t_train); val3 =
    (held-out sims, steps > t_train); test = (test sims, all steps).
    """

    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    t_train: int
    n_steps: int

    def __post_init__(self):
        ids = self.train + self.val + self.test
        require(len(set(ids)) == len(ids), "split lists must be disjoint")
        require(0 < self.t_train < self.n_steps,
                "temporal boundary must lie inside the step range")

    def view(self, name: str) -> tuple[tuple[int, ...], range]:
        early = range(1, self.t_train + 1)
        late = range(self.t_train + 1, self.n_steps + 1)
        table = {
            "train": (self.train, early),
            "val1": (self.train, late),
            "val2": (self.val, early),
            "val3": (self.val, late),
            "test": (self.test, range(1, self.n_steps + 1)),
        }
        require(name in table, f"unknown view {name!r}")
        return table[name]

    def to_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val),
                "test": list(self.test), "t_train": self.t_train,
                "n_steps": self.n_steps}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitManifest":
        return cls(train=tuple(d["train"]), val=tuple(d["val"]),
                   test=tuple(d["test"]), t_train=int(d["t_train"]),
                   n_steps=int(d["n_steps"]))


def build_split_manifest(n_sims: int, n_steps: int,
                         ratios: tuple[int, int, int] | None = None,
                         seed: int = 0, outputs_per_stage: int = 3) -> SplitManifest:
    """Deterministic split: shuffle simulation ids by seed, slice into
    train/val/test, and place the temporal boundary at floor(0.7*n_steps)
    rounded down to a stage boundary (multiple of outputs_per_stage)."""
    from .utils import rng_from_seed

    if ratios is None:
        n_train = int(math.floor(0.70 * n_sims))
        n_val = int(math.floor(0.15 * n_sims))
        ratios = (n_train, n_val, n_sims - n_train - n_val)
    require(sum(ratios) == n_sims, "split ratios must sum to the simulation count")
    require(min(ratios) >= 1, "every split needs at least one simulation")
    t_train = (int(math.floor(0.7 * n_steps)) // outputs_per_stage) * outputs_per_stage
    require(t_train >= 1, "too few steps for a temporal split")
    require(t_train < n_steps, "temporal boundary must leave extrapolation steps")
    perm = rng_from_seed(seed).permutation(n_sims)
    train = tuple(sorted(int(i) for i in perm[: ratios[0]]))
    val = tuple(sorted(int(i) for i in perm[ratios[0]: ratios[0] + ratios[1]]))
    test = tuple(sorted(int(i) for i in perm[ratios[0] + ratios[1]:]))
    return SplitManifest(train=train, val=val, test=test, t_train=t_train,
                         n_steps=n_steps)


@dataclass
class SimulationRecord:
    """One simulation at training resolution: static maps plus snapshot
    stacks (index 0 is the initial condition) in physical units."""

    sim_id: int
    porosity: np.ndarray      # (R, R)
    permeability: np.ndarray  # (R, R), mD
    pressure: np.ndarray      # (T+1, R, R), bar
    saturation: np.ndarray    # (T+1, R, R)
    y_h2: np.ndarray          # (T+1, R, R)

    @property
    def n_steps(self) -> int:
        return self.pressure.shape[0] - 1

    @property
    def resolution(self) -> tuple[int, int]:
        return self.porosity.shape


def make_record(sim_id: int, geo: GeoModel, series: SnapshotSeries,
                factor: int) -> SimulationRecord:
    """Downsample a simulation to the training resolution.

    Pressure and porosity use block means, permeability the log-space mean,
    saturation and composition pore-volume-weighted means (fine porosity as
    weights; uniform cell volumes)."""
    require(series.grid == geo.grid, "series and geo grids differ")
    phi = geo.porosity
    n_snap = len(series.times)
    poro = downsample(phi, factor, "mean")
    perm = downsample(geo.permeability, factor, "log")
    shape = (n_snap,) + poro.shape
    pressure = np.empty(shape)
    saturation = np.empty(shape)
    y_h2 = np.empty(shape)
    for k in range(n_snap):
        pressure[k] = downsample(series.pressure[k], factor, "mean")
        saturation[k] = downsample(series.saturation[k], factor, "porevol", weights=phi)
        y_h2[k] = downsample(series.y_h2[k], factor, "porevol", weights=phi)
    return SimulationRecord(sim_id=sim_id, porosity=poro, permeability=perm,
                            pressure=pressure, saturation=saturation, y_h2=y_h2)


def fit_stats(records: dict[int, SimulationRecord], manifest: SplitManifest) -> ChannelStats:
    """Channel statistics over the training split only: static maps over the
    training simulations; pressure over their target steps 1..t_train."""
    train = [records[i] for i in manifest.train]
    require(len(train) > 0, "no training simulations")
    poro = FieldScaler().fit(np.stack([r.porosity for r in train]))
    perm = FieldScaler().fit(np.stack([r.permeability for r in train]))
    pres = FieldScaler().fit(
        np.stack([r.pressure[1: manifest.t_train + 1] for r in train]))
    return ChannelStats(porosity=(poro.mean_, poro.std_),
                        permeability=(perm.mean_, perm.std_),
                        pressure=(pres.mean_, pres.std_))


@dataclass(frozen=True)
class SampleSpec:
    """What a sample looks like: prediction mode and target variable."""

    mode: str
    target: str

    def __post_init__(self):
        require(self.mode in MODES, f"mode must be one of {MODES}")
        require(self.target in TARGETS, f"target must be one of {TARGETS}")

    @property
    def channels(self) -> tuple[str, ...]:
        return STATIC_CHANNELS if self.mode == "static" else AUTO_CHANNELS


def target_field(record: SimulationRecord, step: int, target: str,
                 stats: ChannelStats) -> np.ndarray:
    """Target at `step` in model space: raw saturation or normalized pressure."""
    if target == "saturation":
        return record.saturation[step].copy()
    return stats.normalize("pressure", record.pressure[step])


def assemble_sample(record: SimulationRecord, step: int, spec: SampleSpec,
                    stats: ChannelStats, cycle: int, time_divisor: int,
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Build one (input, target) pair for the given output step (>= 1).

    The auto-regressive previous-target channel carries the true field at
    step-1 (teacher forcing); closed-loop feedback happens only at
    evaluation time."""
    require(1 <= step <= record.n_steps, f"step {step} outside record horizon")
    ny, nx = record.resolution
    x = np.empty((5, ny, nx))
    x[0] = stats.normalize("porosity", record.porosity)
    x[1] = stats.normalize("permeability", record.permeability)
    x[2] = distance_channel(ny, nx)
    x[3] = float(cycle)
    if spec.mode == "static":
        x[4] = time_channel(step, time_divisor)
    else:
        x[4] = target_field(record, step - 1, spec.target, stats)
    y = target_field(record, step, spec.target, stats)
    return x, y
