"""Fluid properties and constitutive laws.

Two phases: aqueous A (pure water, constant density) and gaseous G (a
binary mixture of hydrogen and a cushion gas, ideal-gas density). The gas
composition is tracked via y, the H2 mass fraction within the gas phase.
Relative permeabilities follow a clamped Corey model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .utils import require


@dataclass(frozen=True)
class FluidProps:
    """Phase properties at reference reservoir conditions (SI units)."""

    rho_water: float = 1000.0      # kg/m^3
    mu_water: float = 5.0e-4       # Pa.s
    mu_h2: float = 9.0e-6          # Pa.s
    mu_cushion: float = 1.2e-5     # Pa.s
    m_h2: float = 2.016e-3         # kg/mol
    m_cushion: float = 16.04e-3    # kg/mol (methane-like)
    temperature: float = 323.15    # K
    gas_constant: float = 8.314462618  # J/mol/K

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            require(getattr(self, name) > 0, f"{name} must be positive")
        require(self.m_h2 < self.m_cushion, "H2 must be lighter than the cushion gas")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "FluidProps":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def gas_molar_mass(y, fluids: FluidProps):
    """Mixture molar mass from the H2 mass fraction: 1/(y/M_H2 + (1-y)/M_C)."""
    y = np.asarray(y, dtype=np.float64)
    return 1.0 / (y / fluids.m_h2 + (1.0 - y) / fluids.m_cushion)


def gas_density(pressure_pa, y, fluids: FluidProps):
    """Ideal-gas mixture density rho = P*M_mix/(R*T); strictly increasing in P.

    pressure_pa and y may be scalars or arrays (broadcast together).
    Rejects compositions outside [0, 1].
    """
    p = np.asarray(pressure_pa, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    require(bool(np.all((y >= 0.0) & (y <= 1.0))), "H2 mass fraction must lie in [0, 1]")
    require(bool(np.all(p >= 0.0)), "pressure must be non-negative")
    rho = p * gas_molar_mass(y, fluids) / (fluids.gas_constant * fluids.temperature)
    return rho if rho.ndim else float(rho)


def gas_viscosity(y, fluids: FluidProps):
    """Gas viscosity blended linearly in the H2 mass fraction."""
    y = np.asarray(y, dtype=np.float64)
    mu = y * fluids.mu_h2 + (1.0 - y) * fluids.mu_cushion
    return mu if mu.ndim else float(mu)


@dataclass(frozen=True)
class RelPermModel:
    """Corey relative permeabilities with residual saturations."""

    s_wr: float = 0.20    # residual water saturation
    s_gr: float = 0.05    # residual gas saturation
    kr0_a: float = 0.70   # aqueous endpoint
    kr0_g: float = 0.90   # gas endpoint
    n_a: float = 2.0
    n_g: float = 2.0

    def __post_init__(self):
        require(self.s_wr >= 0 and self.s_gr >= 0, "residual saturations must be non-negative")
        require(self.s_wr + self.s_gr < 1, "residual saturations must sum below 1")
        require(0 < self.kr0_a <= 1 and 0 < self.kr0_g <= 1, "endpoints must lie in (0, 1]")
        require(self.n_a >= 1 and self.n_g >= 1, "Corey exponents must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "RelPermModel":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def rel_perms(s_g, model: RelPermModel):
    """Corey (k_rA, k_rG) at gas saturation s_g; effective saturations clamped.

    k_rG = kr0_g * ((s_g - s_gr)/(1 - s_wr - s_gr))^n_g and symmetrically for
    the aqueous phase. Outputs lie in [0, endpoint]. Accepts scalars/arrays.
    """
    s_g = np.asarray(s_g, dtype=np.float64)
    span = 1.0 - model.s_wr - model.s_gr
    se_g = np.clip((s_g - model.s_gr) / span, 0.0, 1.0)
    se_a = np.clip(((1.0 - s_g) - model.s_wr) / span, 0.0, 1.0)
    kr_g = model.kr0_g * se_g ** model.n_g
    kr_a = model.kr0_a * se_a ** model.n_a
    if s_g.ndim:
        return kr_a, kr_g
    return float(kr_a), float(kr_g)
