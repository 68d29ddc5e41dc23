"""Heterogeneous porosity/permeability fields on structured 2D grids.

Two generators are provided: stationary correlated Gaussian fields
(circulant-embedding FFT synthesis with exponential covariance) and
channelized fluvial fields (sinusoidal high-permeability bands over a low
background). Permeability statistics are specified in natural-log space of
millidarcy values; porosity is linked to permeability through a clamped
affine law in log10(k).

All generators are pure functions of (params, grid): the same seed yields a
bit-identical model. Randomness comes from the counter-based Philox 4x64
generator keyed with the seed (see utils.rng_from_seed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import next_fast_len

from .utils import MILLIDARCY_M2, as_field, json_line, read_json_line, require, rng_from_seed

POROSITY_MIN = 0.01
POROSITY_MAX = 0.40

GEO_SUFFIX = ".geo"


@dataclass(frozen=True)
class GridSpec:
    """Structured 2D areal grid. The well always sits at (nx//2, ny//2)."""

    nx: int
    ny: int
    dx: float
    dy: float
    thickness: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        require(self.nx >= 2 and self.ny >= 2, "nx and ny must be >= 2")
        require(
            self.dx > 0 and self.dy > 0 and self.thickness > 0,
            "dx, dy and thickness must be positive",
        )
        ix, iy = self.well_cell
        require(
            0 < ix < self.nx - 1 and 0 < iy < self.ny - 1,
            "well cell (nx//2, ny//2) must lie strictly inside the grid",
        )

    @property
    def well_cell(self) -> tuple[int, int]:
        """(ix, iy) of the central well cell."""
        return self.nx // 2, self.ny // 2

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape (ny, nx); fields are indexed [iy, ix]."""
        return self.ny, self.nx

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy * self.thickness

    def to_dict(self) -> dict:
        return {
            "nx": self.nx,
            "ny": self.ny,
            "dx": self.dx,
            "dy": self.dy,
            "thickness": self.thickness,
            "origin": list(self.origin),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            nx=int(d["nx"]),
            ny=int(d["ny"]),
            dx=float(d["dx"]),
            dy=float(d["dy"]),
            thickness=float(d["thickness"]),
            origin=tuple(d.get("origin", (0.0, 0.0))),
        )


@dataclass(frozen=True)
class GeoModel:
    """Grid geometry plus per-cell porosity and permeability (mD)."""

    grid: GridSpec
    porosity: np.ndarray
    permeability: np.ndarray

    def __post_init__(self):
        poro = as_field(self.porosity, self.grid.shape, "porosity")
        perm = as_field(self.permeability, self.grid.shape, "permeability")
        require(np.all((poro > 0) & (poro < 1)), "porosity must lie in (0, 1)")
        require(np.all(perm > 0), "permeability must be positive")
        poro.flags.writeable = False
        perm.flags.writeable = False
        object.__setattr__(self, "porosity", poro)
        object.__setattr__(self, "permeability", perm)

    def permeability_m2(self) -> np.ndarray:
        return self.permeability * MILLIDARCY_M2

    def save(self, path) -> None:
        """Write a `.geo` file: one JSON header line, then row-major
        little-endian binary64 porosity and permeability arrays."""
        header = self.grid.to_dict()
        header["units"] = {"dx": "m", "dy": "m", "thickness": "m",
                           "porosity": "1", "permeability": "mD"}
        with open(path, "wb") as f:
            f.write(json_line(header))
            f.write(np.ascontiguousarray(self.porosity, "<f8").tobytes())
            f.write(np.ascontiguousarray(self.permeability, "<f8").tobytes())

    @classmethod
    def load(cls, path) -> "GeoModel":
        with open(path, "rb") as f:
            header = read_json_line(f)
            grid = GridSpec.from_dict(header)
            n = grid.n_cells
            raw = f.read(2 * 8 * n)
            if len(raw) != 2 * 8 * n:
                raise ValueError(f"{path}: truncated field data")
            arr = np.frombuffer(raw, dtype="<f8")
        poro = arr[:n].reshape(grid.shape)
        perm = arr[n:].reshape(grid.shape)
        return cls(grid=grid, porosity=poro, permeability=perm)


@dataclass(frozen=True)
class FieldParams:
    """Parameters for heterogeneity generation.

    mean_log_k / std_log_k are the mean and standard deviation of ln(k[mD]).
    Correlation lengths are in metres. poro_a / poro_b are the porosity link
    coefficients (see porosity_link). Fluvial fields place n_channels
    sinusoidal bands (geometry in metres) of k_channel over k_background.
    """

    kind: str = "gaussian"
    mean_log_k: float = math.log(100.0)
    std_log_k: float = 0.5
    corr_x: float = 960.0
    corr_y: float = 960.0
    poro_a: float = 0.10
    poro_b: float = 0.05
    n_channels: int = 3
    channel_width: float = 600.0
    amplitude: float = 900.0
    wavelength: float = 5000.0
    k_channel: float = 500.0
    k_background: float = 20.0
    seed: int = 0

    def __post_init__(self):
        require(self.kind in ("gaussian", "fluvial"), f"unknown field kind {self.kind!r}")
        require(self.std_log_k >= 0, "std_log_k must be non-negative")
        require(self.channel_width > 0, "channel width must be positive")
        require(self.n_channels >= 0, "channel count must be non-negative")
        if self.kind == "fluvial":
            require(
                self.k_channel > self.k_background > 0,
                "in-channel permeability must exceed the (positive) background",
            )

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "FieldParams":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def porosity_link(log_k, a: float, b: float) -> np.ndarray:
    """Porosity from natural-log permeability: clamp(a + b*log10(k), 0.01, 0.4).

    Monotone non-decreasing in k for b >= 0. Accepts scalars or arrays.
    """
    log10_k = np.asarray(log_k, dtype=np.float64) / math.log(10.0)
    return np.clip(a + b * log10_k, POROSITY_MIN, POROSITY_MAX)


def _correlated_noise(grid: GridSpec, corr_x: float, corr_y: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Zero-mean correlated Gaussian noise via circulant embedding.

    Exponential covariance C(h) = exp(-|h|) in correlation-length units.
    The grid is extended by ~4 ranges per direction to suppress periodic
    wrap-around; small negative embedding eigenvalues are clipped.
    """
    pad_x = int(math.ceil(4.0 * corr_x / grid.dx))
    pad_y = int(math.ceil(4.0 * corr_y / grid.dy))
    mx = next_fast_len(grid.nx + pad_x)
    my = next_fast_len(grid.ny + pad_y)
    ix = np.arange(mx)
    iy = np.arange(my)
    lag_x = np.minimum(ix, mx - ix) * grid.dx / corr_x
    lag_y = np.minimum(iy, my - iy) * grid.dy / corr_y
    h = np.hypot(lag_y[:, None], lag_x[None, :])
    lam = np.fft.fft2(np.exp(-h)).real
    lam = np.maximum(lam, 0.0)
    w = rng.standard_normal((my, mx)) + 1j * rng.standard_normal((my, mx))
    z = np.fft.ifft2(np.sqrt(lam) * np.fft.fft2(w)).real
    return z[: grid.ny, : grid.nx]


def gen_gaussian_field(params: FieldParams, grid: GridSpec) -> GeoModel:
    """Stationary correlated Gaussian log-permeability field.

    The synthesized field is renormalized to the exact requested sample mean
    and standard deviation, so the field statistics match the targets by
    construction; the covariance shape comes from the spectral synthesis.
    """
    require(params.kind == "gaussian", "params.kind must be 'gaussian'")
    require(params.corr_x > 0 and params.corr_y > 0, "correlation lengths must be positive")
    require(
        params.corr_x >= 2 * grid.dx and params.corr_y >= 2 * grid.dy,
        "correlation length must span at least 2 cells",
    )
    if params.std_log_k == 0.0:
        log_k = np.full(grid.shape, params.mean_log_k)
    else:
        rng = rng_from_seed(params.seed)
        z = _correlated_noise(grid, params.corr_x, params.corr_y, rng)
        z = (z - z.mean()) / z.std()
        log_k = params.mean_log_k + params.std_log_k * z
    return GeoModel(
        grid=grid,
        porosity=porosity_link(log_k, params.poro_a, params.poro_b),
        permeability=np.exp(log_k),
    )


def gen_fluvial_field(params: FieldParams, grid: GridSpec) -> GeoModel:
    """Channelized field: sinusoidal bands of high permeability.

    Each channel runs along x with centerline y(x) = y0 + A*sin(2*pi*x/L + p);
    y0 and the phase p are drawn from the seeded generator. Where feasible,
    y0 is confined so the whole band stays inside the domain.
    """
    require(params.kind == "fluvial", "params.kind must be 'fluvial'")
    require(params.channel_width >= grid.dy, "channel width must cover at least one cell row")
    rng = rng_from_seed(params.seed)
    log_k = np.full(grid.shape, math.log(params.k_background))
    ly = grid.ny * grid.dy
    xc = (np.arange(grid.nx) + 0.5) * grid.dx
    yc = (np.arange(grid.ny) + 0.5) * grid.dy
    margin = params.channel_width / 2 + abs(params.amplitude)
    for _ in range(params.n_channels):
        if 2 * margin < ly:
            y0 = rng.uniform(margin, ly - margin)
        else:
            y0 = rng.uniform(0.0, ly)
        phase = rng.uniform(0.0, 2 * math.pi)
        center = y0 + params.amplitude * np.sin(2 * math.pi * xc / params.wavelength + phase)
        in_channel = np.abs(yc[:, None] - center[None, :]) <= params.channel_width / 2
        log_k[in_channel] = math.log(params.k_channel)
    return GeoModel(
        grid=grid,
        porosity=porosity_link(log_k, params.poro_a, params.poro_b),
        permeability=np.exp(log_k),
    )


def generate_field(params: FieldParams, grid: GridSpec) -> GeoModel:
    if params.kind == "gaussian":
        return gen_gaussian_field(params, grid)
    return gen_fluvial_field(params, grid)
