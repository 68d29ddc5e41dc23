"""Single vertical well: Peaceman index and source/sink rates."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .geomodel import GeoModel, GridSpec
from .fluids import FluidProps, RelPermModel, gas_density, gas_viscosity, rel_perms
from .schedule import Stage
from .utils import BAR, MILLIDARCY_M2, require


@dataclass(frozen=True)
class WellSpec:
    """Well at grid cell `cell` = (ix, iy) with wellbore radius in metres."""

    cell: tuple[int, int]
    radius: float = 0.1

    def __post_init__(self):
        require(self.radius > 0, "wellbore radius must be positive")

    @classmethod
    def centered(cls, grid: GridSpec, radius: float = 0.1) -> "WellSpec":
        return cls(cell=grid.well_cell, radius=radius)


def well_index(grid: GridSpec, geo: GeoModel, well: WellSpec) -> float:
    """Peaceman well index WI = 2*pi*k*h / ln(r_eq/r_w), r_eq = 0.14*sqrt(dx^2+dy^2).

    Uses the isotropic cell permeability (converted to m^2); result in m^3.
    Rejects grids so fine that r_eq <= r_w.
    """
    ix, iy = well.cell
    require(0 <= ix < grid.nx and 0 <= iy < grid.ny, "well cell outside grid")
    r_eq = 0.14 * math.hypot(grid.dx, grid.dy)
    if r_eq <= well.radius:
        raise ValueError(
            f"equivalent radius {r_eq:.3g} m <= wellbore radius {well.radius:.3g} m; "
            "grid too fine for the Peaceman model"
        )
    k = geo.permeability[iy, ix] * MILLIDARCY_M2
    return 2.0 * math.pi * k * grid.thickness / math.log(r_eq / well.radius)


def well_source_terms(p_cell_bar: float, s_g: float, y: float, stage: Stage,
                      wi: float, fluids: FluidProps, relperm: RelPermModel
                      ) -> tuple[float, float, float]:
    """Instantaneous component mass rates (q_h2, q_cushion, q_water) in kg/s.

    Sign convention: positive into the reservoir (injection), negative out
    (production). Injection delivers min(requested, BHP-cap implied) total
    gas at the stage composition; a cap below the cell pressure yields a
    zero-rate warning, not a failure. Withdrawal at fixed BHP produces each
    phase at WI*lambda*rho*(P_cell - P_bhp), clamped at >= 0, with the gas
    stream split by the cell H2 fraction (perfect mixing).
    """
    if stage.kind == "shut_in":
        return 0.0, 0.0, 0.0
    p_pa = p_cell_bar * BAR
    bhp_pa = stage.bhp * BAR
    kr_a, kr_g = rel_perms(s_g, relperm)
    if stage.is_injection:
        rho_inj = gas_density(p_pa, stage.y_inj, fluids)
        lam_g = kr_g / gas_viscosity(stage.y_inj, fluids)
        cap_rate = wi * lam_g * rho_inj * (bhp_pa - p_pa)
        if cap_rate <= 0.0:
            warnings.warn(
                f"injection BHP cap {stage.bhp} bar at/below cell pressure "
                f"{p_cell_bar:.2f} bar: zero-rate step", RuntimeWarning, stacklevel=2)
            total = 0.0
        else:
            total = min(stage.mass_rate, cap_rate)
        return stage.y_inj * total, (1.0 - stage.y_inj) * total, 0.0
    # withdrawal at fixed BHP
    drawdown = max(p_pa - bhp_pa, 0.0)
    lam_g = kr_g / gas_viscosity(y, fluids)
    lam_a = kr_a / fluids.mu_water
    q_gas = wi * lam_g * gas_density(p_pa, y, fluids) * drawdown
    q_water = wi * lam_a * fluids.rho_water * drawdown
    return -y * q_gas, -(1.0 - y) * q_gas, -q_water
