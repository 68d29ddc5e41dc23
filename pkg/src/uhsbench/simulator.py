"""IMPES reservoir simulator: implicit pressure, explicit upwind transport.

Two phases (aqueous, gas) and three components (H2, cushion gas, water) on
a 2D areal grid with no-flow boundaries and a single central well. Water
lives only in the aqueous phase; H2 and cushion gas only in the gas phase
(mass fraction y tracks H2 within the gas). Capillary pressure is neglected
(single pressure P) and gravity has no lateral component in plan view.

Per-cell component masses are the conserved ledger: transport moves the
same flux out of one cell and into its neighbour, so domain totals match
well totals to floating-point round-off. Saturation and composition are
views recovered from the ledger (S_G clamped to [0, 1] with the affected
mass tracked as a clamp residual).

Units: pressures cross public interfaces in bar and are converted to Pa
internally; masses in kg, rates in kg/s, times in seconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .fluids import FluidProps, RelPermModel, gas_density, gas_viscosity, rel_perms
from .geomodel import GeoModel, GridSpec
from .linalg import SolveInfo, SolverError, solve_pcg
from .schedule import Schedule, Stage
from .utils import BAR, MONTH, json_line, read_json_line, require
from .wells import WellSpec, well_index, well_source_terms

H2, CUSHION, WATER = 0, 1, 2
COMPONENTS = ("h2", "cushion", "water")

WELL_RECORD_FIELDS = (
    "inj_h2", "inj_cushion", "inj_water",
    "prod_h2", "prod_cushion", "prod_water",
    "bhp_bar",
)

SIM_SUFFIX = ".sim"


class SimulationError(RuntimeError):
    pass


class CflError(SimulationError):
    """Negative component mass beyond round-off: the sub-step CFL guard failed."""


@dataclass(frozen=True)
class SimConfig:
    """Time stepping, solver and initial-condition settings."""

    dt: float = 5.0 * 86400.0            # s
    output_interval: float = 2.0 * MONTH  # s
    pressure_tol: float = 1e-10
    max_cfl: float = 0.5
    gravity: tuple[float, float] = (0.0, 0.0)  # unused laterally in plan view
    p0: float = 100.0     # bar
    s_g0: float = 0.3
    y0: float = 0.0
    rock_compressibility: float = 1.0e-9  # 1/Pa

    def __post_init__(self):
        require(self.dt > 0, "dt must be positive")
        require(self.pressure_tol > 0, "pressure tolerance must be positive")
        require(0 < self.max_cfl <= 1.0, "max CFL must lie in (0, 1]")
        require(self.p0 > 0, "initial pressure must be positive")
        require(0.0 <= self.s_g0 <= 1.0 and 0.0 <= self.y0 <= 1.0,
                "initial saturation/composition must lie in [0, 1]")
        require(self.rock_compressibility >= 0, "rock compressibility must be >= 0")
        ratio = self.output_interval / self.dt
        require(abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1,
                "output interval must be a positive multiple of dt")

    @property
    def steps_per_output(self) -> int:
        return round(self.output_interval / self.dt)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["gravity"] = list(self.gravity)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        kw = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if "gravity" in kw:
            kw["gravity"] = tuple(kw["gravity"])
        return cls(**kw)


@dataclass
class SimState:
    """Reservoir state at one instant.

    `mass` is the conserved per-cell component ledger (kg), shape
    (3, ny, nx) ordered [H2, cushion, water]; `pressure` (bar), `s_g` and
    `y_h2` are the published views. `injected`/`produced` are cumulative
    well masses per component (kg, both non-negative and non-decreasing).
    """

    time: float
    pressure: np.ndarray
    s_g: np.ndarray
    y_h2: np.ndarray
    mass: np.ndarray
    injected: np.ndarray
    produced: np.ndarray
    clamp_residual: float = 0.0

    def __post_init__(self):
        require(bool(np.all(self.pressure > 0)), "pressure must be positive")
        require(bool(np.all((self.s_g >= 0) & (self.s_g <= 1))), "S_G must lie in [0, 1]")
        require(bool(np.all((self.y_h2 >= 0) & (self.y_h2 <= 1))), "y must lie in [0, 1]")
        require(bool(np.all(self.injected >= 0) and np.all(self.produced >= 0)),
                "cumulative masses must be non-negative")

    @classmethod
    def initial(cls, geo: GeoModel, config: SimConfig, fluids: FluidProps) -> "SimState":
        shape = geo.grid.shape
        p = np.full(shape, config.p0)
        s_g = np.full(shape, config.s_g0)
        y = np.full(shape, config.y0)
        pv = geo.grid.cell_volume * geo.porosity
        rho_g = gas_density(p * BAR, y, fluids)
        mass = np.empty((3,) + shape)
        gas_mass = pv * s_g * rho_g
        mass[H2] = y * gas_mass
        mass[CUSHION] = (1.0 - y) * gas_mass
        mass[WATER] = pv * (1.0 - s_g) * fluids.rho_water
        return cls(time=0.0, pressure=p, s_g=s_g, y_h2=y, mass=mass,
                   injected=np.zeros(3), produced=np.zeros(3))

    def domain_mass(self) -> np.ndarray:
        """Total component mass (kg): [H2, cushion, water]."""
        return self.mass.sum(axis=(1, 2))

    def copy(self) -> "SimState":
        return SimState(time=self.time, pressure=self.pressure.copy(),
                        s_g=self.s_g.copy(), y_h2=self.y_h2.copy(),
                        mass=self.mass.copy(), injected=self.injected.copy(),
                        produced=self.produced.copy(),
                        clamp_residual=self.clamp_residual)


def geometric_transmissibility(geo: GeoModel) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic-mean face transmissibilities (m^3): x-faces (ny, nx-1) and
    y-faces (ny-1, nx)."""
    grid = geo.grid
    k = geo.permeability_m2()
    kx = 2.0 * k[:, :-1] * k[:, 1:] / (k[:, :-1] + k[:, 1:])
    ky = 2.0 * k[:-1, :] * k[1:, :] / (k[:-1, :] + k[1:, :])
    gx = kx * (grid.dy * grid.thickness) / grid.dx
    gy = ky * (grid.dx * grid.thickness) / grid.dy
    return gx, gy


def _upwind_x(values: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Upstream cell value on x-faces w.r.t. the pressure drop; exact ties
    take the arithmetic mean (keeps symmetric problems symmetric)."""
    left, right = values[:, :-1], values[:, 1:]
    dp = p[:, :-1] - p[:, 1:]
    up = np.where(dp > 0, left, right)
    return np.where(dp == 0, 0.5 * (left + right), up)


def _upwind_y(values: np.ndarray, p: np.ndarray) -> np.ndarray:
    low, high = values[:-1, :], values[1:, :]
    dp = p[:-1, :] - p[1:, :]
    up = np.where(dp > 0, low, high)
    return np.where(dp == 0, 0.5 * (low + high), up)


def _mobilities(s_g, y, fluids: FluidProps, relperm: RelPermModel):
    kr_a, kr_g = rel_perms(s_g, relperm)
    return kr_a / fluids.mu_water, kr_g / gas_viscosity(y, fluids)


def assemble_pressure_system(state: SimState, geo: GeoModel, fluids: FluidProps,
                             relperm: RelPermModel, well: WellSpec, stage: Stage,
                             dt: float, config: SimConfig
                             ) -> tuple[csr_matrix, np.ndarray]:
    """Build the implicit pressure system A p = b (SI units, p in Pa).

    Two-point flux with harmonic-mean transmissibilities on the 5-point
    stencil; total mobility upwinded on the previous pressure field. The
    accumulation term uses total compressibility (ideal-gas S_G/P plus the
    constant rock compressibility). No-flow boundaries: rows without well
    terms sum to their accumulation coefficient. A rate-controlled
    injection enters b as a volumetric source; a BHP-controlled withdrawal
    is implicit (adds WI*lambda_t to the diagonal, WI*lambda_t*P_bhp to b),
    which keeps the matrix symmetric positive definite.
    """
    grid = geo.grid
    ny, nx = grid.shape
    p = state.pressure * BAR
    if not np.all(np.isfinite(p)):
        bad = np.argwhere(~np.isfinite(p))[0]
        raise SimulationError(f"non-finite pressure at cell {tuple(bad)}")
    lam_a, lam_g = _mobilities(state.s_g, state.y_h2, fluids, relperm)
    lam_t = lam_a + lam_g
    gx, gy = geometric_transmissibility(geo)
    tx = gx * _upwind_x(lam_t, p)
    ty = gy * _upwind_y(lam_t, p)
    acc = grid.cell_volume * geo.porosity * (state.s_g / p + config.rock_compressibility) / dt

    for name, arr in (("transmissibility-x", tx), ("transmissibility-y", ty),
                      ("accumulation", acc)):
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise SimulationError(f"non-finite {name} coefficient at cell {tuple(bad)}")

    diag = acc.copy()
    diag[:, :-1] += tx
    diag[:, 1:] += tx
    diag[:-1, :] += ty
    diag[1:, :] += ty
    b = acc * p

    ix, iy = well.cell
    wi = well_index(grid, geo, well)
    if stage.is_injection:
        q = well_source_terms(state.pressure[iy, ix], state.s_g[iy, ix],
                              state.y_h2[iy, ix], stage, wi, fluids, relperm)
        rho_inj = gas_density(p[iy, ix], stage.y_inj, fluids)
        if rho_inj > 0:
            b[iy, ix] += (q[H2] + q[CUSHION]) / rho_inj
    elif stage.kind == "withdraw":
        lam_wc = lam_t[iy, ix]
        diag[iy, ix] += wi * lam_wc
        b[iy, ix] += wi * lam_wc * stage.bhp * BAR

    idx = np.arange(nx * ny).reshape(ny, nx)
    left = idx[:, :-1].ravel()
    right = idx[:, 1:].ravel()
    lo = idx[:-1, :].ravel()
    hi = idx[1:, :].ravel()
    rows = np.concatenate([idx.ravel(), left, right, lo, hi])
    cols = np.concatenate([idx.ravel(), right, left, hi, lo])
    data = np.concatenate([diag.ravel(), -tx.ravel(), -tx.ravel(),
                           -ty.ravel(), -ty.ravel()])
    A = coo_matrix((data, (rows, cols)), shape=(nx * ny, nx * ny)).tocsr()
    return A, b.ravel()


def solve_pressure(A: csr_matrix, b: np.ndarray, x0: np.ndarray | None = None,
                   tol: float = 1e-10) -> tuple[np.ndarray, SolveInfo]:
    """Solve the assembled SPD system by Jacobi-preconditioned CG.

    Returns the pressure vector (Pa) and solver info; raises SolverError
    (reporting iteration count and residual) on non-convergence.
    """
    return solve_pcg(A, b, x0=x0, tol=tol)


def advance_transport(state: SimState, p_new: np.ndarray, geo: GeoModel,
                      fluids: FluidProps, relperm: RelPermModel, well: WellSpec,
                      stage: Stage, dt: float, config: SimConfig
                      ) -> tuple[SimState, int]:
    """Explicit conservative upwind transport over dt against the fixed
    pressure field p_new (bar).

    Per-face component mass fluxes upwind the whole coefficient
    rho_beta*X_beta*k_rbeta/mu_beta from the upstream cell; every flux is
    subtracted from its source cell and added to its destination, so domain
    totals track well totals exactly. The step is internally split so the
    per-cell, per-phase volumetric outflow never exceeds max_cfl of the
    phase volume; the injection rate is held at its start-of-step value
    while withdrawal rates follow the evolving mobilities. Returns the new
    state and the number of sub-steps taken.
    """
    grid = geo.grid
    ix, iy = well.cell
    p_pa = np.asarray(p_new, dtype=np.float64) * BAR
    gx, gy = geometric_transmissibility(geo)
    dpx = p_pa[:, :-1] - p_pa[:, 1:]
    dpy = p_pa[:-1, :] - p_pa[1:, :]
    pv = grid.cell_volume * geo.porosity
    wi = well_index(grid, geo, well)
    rho_w = fluids.rho_water

    # rate-controlled injection is fixed over the step (cap evaluated at the
    # start-of-step state, matching the assembled pressure system)
    q_inject = (0.0, 0.0, 0.0)
    if stage.is_injection:
        q_inject = well_source_terms(state.pressure[iy, ix], state.s_g[iy, ix],
                                     state.y_h2[iy, ix], stage, wi, fluids, relperm)

    mass = state.mass.copy()
    injected = state.injected.copy()
    produced = state.produced.copy()
    clamp = state.clamp_residual

    def recover(mass):
        """Views from the ledger: S_G as the water complement (clamped), y
        as the H2 share of the gas mass (0 where no gas)."""
        s_g_raw = 1.0 - mass[WATER] / (pv * rho_w)
        s_g = np.clip(s_g_raw, 0.0, 1.0)
        gas = mass[H2] + mass[CUSHION]
        with np.errstate(invalid="ignore", divide="ignore"):
            y = np.where(gas > 0, mass[H2] / np.maximum(gas, 1e-300), 0.0)
        return s_g, s_g_raw, np.clip(y, 0.0, 1.0)

    remaining = dt
    n_sub = 0
    while remaining > 0.0:
        n_sub += 1
        if n_sub > 100_000:
            raise SimulationError("transport sub-stepping did not terminate")
        _, _, y = recover(mass)
        rho_g = gas_density(p_pa, y, fluids)
        gas_mass = mass[H2] + mass[CUSHION]
        # each phase's mobility is evaluated at its own ledger-implied
        # volume fraction, so flow shuts off as the phase ledger empties
        s_g_flux = np.clip(gas_mass / (pv * rho_g), 0.0, 1.0)
        s_a_flux = np.clip(mass[WATER] / (pv * rho_w), 0.0, 1.0)
        lam_a = rel_perms(1.0 - s_a_flux, relperm)[0] / fluids.mu_water
        lam_g = rel_perms(s_g_flux, relperm)[1] / gas_viscosity(y, fluids)

        # per-cell upwinded mass-flux coefficients (multiplied by the
        # geometric transmissibility and dP they give kg/s)
        c_h2 = rho_g * y * lam_g
        c_cu = rho_g * (1.0 - y) * lam_g
        c_wa = rho_w * lam_a

        # volumetric phase fluxes for the CFL bound
        qx_g = gx * dpx * _upwind_x(lam_g, p_pa)
        qy_g = gy * dpy * _upwind_y(lam_g, p_pa)
        qx_a = gx * dpx * _upwind_x(lam_a, p_pa)
        qy_a = gy * dpy * _upwind_y(lam_a, p_pa)

        out_g = np.zeros(grid.shape)
        out_a = np.zeros(grid.shape)
        for q, out in ((qx_g, out_g), (qx_a, out_a)):
            out[:, :-1] += np.maximum(q, 0.0)
            out[:, 1:] += np.maximum(-q, 0.0)
        for q, out in ((qy_g, out_g), (qy_a, out_a)):
            out[:-1, :] += np.maximum(q, 0.0)
            out[1:, :] += np.maximum(-q, 0.0)

        q_well = list(q_inject)
        if stage.kind == "withdraw":
            q_well = list(well_source_terms(p_new[iy, ix], s_g_flux[iy, ix],
                                            y[iy, ix], stage, wi, fluids, relperm))
            rho_wc = rho_g[iy, ix]
            if rho_wc > 0:
                out_g[iy, ix] += -(q_well[H2] + q_well[CUSHION]) / rho_wc
            out_a[iy, ix] += -q_well[WATER] / rho_w

        # mass-based CFL: outgoing mass per phase may not exceed max_cfl of
        # the phase's ledger mass (the component split matches y exactly)
        with np.errstate(invalid="ignore", divide="ignore"):
            rate_g = np.where(out_g > 0,
                              out_g * rho_g / np.maximum(gas_mass, 1e-300), 0.0)
            rate_a = np.where(out_a > 0,
                              out_a * rho_w / np.maximum(mass[WATER], 1e-300), 0.0)
        rate = max(float(rate_g.max()), float(rate_a.max()))
        dt_sub = remaining if rate <= 0 else min(remaining, config.max_cfl / rate)

        for comp, coef_cell in ((H2, c_h2), (CUSHION, c_cu), (WATER, c_wa)):
            fx = gx * dpx * _upwind_x(coef_cell, p_pa) * dt_sub
            fy = gy * dpy * _upwind_y(coef_cell, p_pa) * dt_sub
            mass[comp][:, :-1] -= fx
            mass[comp][:, 1:] += fx
            mass[comp][:-1, :] -= fy
            mass[comp][1:, :] += fy

        for comp in (H2, CUSHION, WATER):
            q = q_well[comp]
            mass[comp][iy, ix] += q * dt_sub
            if q >= 0:
                injected[comp] += q * dt_sub
            else:
                produced[comp] += -q * dt_sub

        # negative masses beyond round-off signal a CFL violation
        for comp in (H2, CUSHION, WATER):
            m = mass[comp]
            scale = max(float(m.max()), 1.0)
            if float(m.min()) < -1e-9 * scale:
                bad = np.argwhere(m < -1e-9 * scale)[0]
                raise CflError(
                    f"negative {COMPONENTS[comp]} mass at cell {tuple(bad)} "
                    f"({m[tuple(bad)]:.3e} kg): CFL violation")
            neg = m < 0
            if neg.any():
                clamp += float(-m[neg].sum())
                m[neg] = 0.0

        remaining -= dt_sub

    s_g, s_g_raw, y = recover(mass)
    # water-mass equivalent of the saturation clamp, reported separately
    clamp += float(np.sum(np.abs(s_g - s_g_raw) * pv) * rho_w)

    new_state = SimState(time=state.time + dt, pressure=np.asarray(p_new, float).copy(),
                         s_g=s_g, y_h2=y, mass=mass, injected=injected,
                         produced=produced, clamp_residual=clamp)
    return new_state, n_sub


@dataclass
class StepInfo:
    iterations: int
    rel_residual: float
    substeps: int


def step(state: SimState, geo: GeoModel, fluids: FluidProps, relperm: RelPermModel,
         well: WellSpec, stage: Stage, dt: float, config: SimConfig
         ) -> tuple[SimState, StepInfo]:
    """One IMPES step: assemble -> solve -> explicit transport."""
    A, b = assemble_pressure_system(state, geo, fluids, relperm, well, stage, dt, config)
    x0 = (state.pressure * BAR).ravel()
    p_pa, info = solve_pressure(A, b, x0=x0, tol=config.pressure_tol)
    p_new = (p_pa / BAR).reshape(geo.grid.shape)
    new_state, n_sub = advance_transport(state, p_new, geo, fluids, relperm, well,
                                         stage, dt, config)
    return new_state, StepInfo(info.iterations, info.rel_residual, n_sub)


def _implied_bhp(state: SimState, stage: Stage | None, geo: GeoModel,
                 fluids: FluidProps, relperm: RelPermModel, well: WellSpec) -> float:
    """Bottom-hole pressure (bar) consistent with the active control."""
    ix, iy = well.cell
    p_wc = float(state.pressure[iy, ix])
    if stage is None or stage.kind == "shut_in":
        return p_wc
    if stage.kind == "withdraw":
        return stage.bhp
    wi = well_index(geo.grid, geo, well)
    q = well_source_terms(p_wc, state.s_g[iy, ix], state.y_h2[iy, ix], stage, wi,
                          fluids, relperm)
    q_tot = q[H2] + q[CUSHION]
    kr_g = rel_perms(float(state.s_g[iy, ix]), relperm)[1]
    lam_g = kr_g / gas_viscosity(stage.y_inj, fluids)
    rho = gas_density(p_wc * BAR, stage.y_inj, fluids)
    denom = wi * lam_g * rho
    if denom <= 0 or q_tot <= 0:
        return p_wc
    return p_wc + q_tot / denom / BAR


@dataclass
class SnapshotSeries:
    """Time series of (P, S_G, y) fields plus cumulative well records.

    The first snapshot is the t=0 initial condition. `well_records` has one
    row per snapshot with columns WELL_RECORD_FIELDS (cumulative kg per
    component per direction, then the implied bottom-hole pressure in bar).
    `final_state` gives tests access to the conserved mass ledger; it is
    not serialized.
    """

    grid: GridSpec
    times: np.ndarray
    pressure: np.ndarray
    saturation: np.ndarray
    y_h2: np.ndarray
    well_records: np.ndarray
    schedule_digest: str
    config: dict
    diagnostics: dict = field(default_factory=dict)
    final_state: SimState | None = None

    @property
    def n_steps(self) -> int:
        """Post-initial snapshot count."""
        return len(self.times) - 1

    def save(self, path) -> None:
        """Write a `.sim` file: one JSON header line, then per snapshot the
        row-major little-endian binary32 tensors (P_bar, S_G, y) followed by
        the binary64 well-record block."""
        header = {
            "format": "uhs-sim",
            "version": 1,
            "grid": self.grid.to_dict(),
            "schedule_digest": self.schedule_digest,
            "config": self.config,
            "n_snapshots": len(self.times),
            "channels": ["P_bar", "S_G", "y"],
            "well_record_fields": list(WELL_RECORD_FIELDS),
            "times": [float(t) for t in self.times],
            "diagnostics": self.diagnostics,
        }
        with open(path, "wb") as f:
            f.write(json_line(header))
            for k in range(len(self.times)):
                for arr in (self.pressure[k], self.saturation[k], self.y_h2[k]):
                    f.write(np.ascontiguousarray(arr, "<f4").tobytes())
                f.write(np.ascontiguousarray(self.well_records[k], "<f8").tobytes())

    @classmethod
    def load(cls, path) -> "SnapshotSeries":
        with open(path, "rb") as f:
            header = read_json_line(f)
            if header.get("format") != "uhs-sim" or header.get("version") != 1:
                raise ValueError(f"{path}: not a version-1 uhs-sim file")
            grid = GridSpec.from_dict(header["grid"])
            n = header["n_snapshots"]
            ny, nx = grid.shape
            shape = (n, ny, nx)
            pressure = np.empty(shape, dtype=np.float32)
            saturation = np.empty(shape, dtype=np.float32)
            y_h2 = np.empty(shape, dtype=np.float32)
            records = np.empty((n, len(WELL_RECORD_FIELDS)))
            field_bytes = 4 * ny * nx
            rec_bytes = 8 * len(WELL_RECORD_FIELDS)
            for k in range(n):
                raw = f.read(3 * field_bytes + rec_bytes)
                if len(raw) != 3 * field_bytes + rec_bytes:
                    raise ValueError(f"{path}: truncated snapshot {k}")
                pressure[k] = np.frombuffer(raw[:field_bytes], "<f4").reshape(ny, nx)
                saturation[k] = np.frombuffer(
                    raw[field_bytes:2 * field_bytes], "<f4").reshape(ny, nx)
                y_h2[k] = np.frombuffer(
                    raw[2 * field_bytes:3 * field_bytes], "<f4").reshape(ny, nx)
                records[k] = np.frombuffer(raw[3 * field_bytes:], "<f8")
        return cls(grid=grid, times=np.asarray(header["times"]), pressure=pressure,
                   saturation=saturation, y_h2=y_h2, well_records=records,
                   schedule_digest=header["schedule_digest"], config=header["config"],
                   diagnostics=header.get("diagnostics", {}))


def run_simulation(geo: GeoModel, schedule: Schedule, config: SimConfig,
                   fluids: FluidProps | None = None,
                   relperm: RelPermModel | None = None,
                   well: WellSpec | None = None) -> SnapshotSeries:
    """Run the full schedule, emitting snapshots at every output interval.

    Snapshots include the t=0 initial condition; stage durations must be
    multiples of the output interval so snapshots land on stage boundaries.
    Any step failure aborts with the failing time. Deterministic: identical
    inputs yield bit-identical series.
    """
    fluids = fluids or FluidProps()
    relperm = relperm or RelPermModel()
    well = well or WellSpec.centered(geo.grid)
    for s in schedule.stages:
        ratio = s.duration / config.output_interval
        require(abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1,
                f"stage duration {s.duration} must be a multiple of the output interval")

    state = SimState.initial(geo, config, fluids)
    times = [0.0]
    pressure = [state.pressure.copy()]
    saturation = [state.s_g.copy()]
    y_h2 = [state.y_h2.copy()]
    records = [_make_record(state, None, geo, fluids, relperm, well)]

    max_resid = 0.0
    max_iters = 0
    total_substeps = 0
    for stage in schedule.stages:
        n_out = round(stage.duration / config.output_interval)
        for _ in range(n_out):
            for _ in range(config.steps_per_output):
                try:
                    state, info = step(state, geo, fluids, relperm, well, stage,
                                       config.dt, config)
                except (SimulationError, SolverError) as exc:
                    raise SimulationError(
                        f"step failed at t={state.time + config.dt:.6g} s: {exc}"
                    ) from exc
                max_resid = max(max_resid, info.rel_residual)
                max_iters = max(max_iters, info.iterations)
                total_substeps += info.substeps
            times.append(state.time)
            pressure.append(state.pressure.copy())
            saturation.append(state.s_g.copy())
            y_h2.append(state.y_h2.copy())
            records.append(_make_record(state, stage, geo, fluids, relperm, well))

    diagnostics = {
        "max_rel_residual": max_resid,
        "max_solver_iterations": max_iters,
        "transport_substeps": total_substeps,
        "clamp_residual_kg": state.clamp_residual,
        "initial_mass_kg": [float(v) for v in
                            SimState.initial(geo, config, fluids).domain_mass()],
        "final_mass_kg": [float(v) for v in state.domain_mass()],
        "injected_kg": [float(v) for v in state.injected],
        "produced_kg": [float(v) for v in state.produced],
    }
    return SnapshotSeries(
        grid=geo.grid,
        times=np.asarray(times),
        pressure=np.asarray(pressure),
        saturation=np.asarray(saturation),
        y_h2=np.asarray(y_h2),
        well_records=np.asarray(records),
        schedule_digest=schedule.digest(),
        config=config.to_dict(),
        diagnostics=diagnostics,
        final_state=state,
    )


def _make_record(state: SimState, stage: Stage | None, geo: GeoModel,
                 fluids: FluidProps, relperm: RelPermModel, well: WellSpec
                 ) -> np.ndarray:
    bhp = _implied_bhp(state, stage, geo, fluids, relperm, well)
    return np.array([
        state.injected[H2], state.injected[CUSHION], state.injected[WATER],
        state.produced[H2], state.produced[CUSHION], state.produced[WATER],
        bhp,
    ])
