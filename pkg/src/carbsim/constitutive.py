"""Closed-form material laws for unsaturated moisture transport, CO2
diffusion-reaction and saturation-dependent corrosion current in concrete.

All functions are pure, work on floats or numpy arrays, and use strict SI
units internally (Pa, m, s, K, mol m^-3).  The single exception is the
corrosion current density, which is conventionally reported in uA cm^-2.

Functions with a ``d*`` prefix are the analytic derivatives consumed by the
implicit solver's Jacobian; they are verified against finite differences in
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

# Saturation is clamped away from the singular endpoints of the capillary
# law before entering any constitutive expression.
S_MIN = 1e-6

# pH of fully carbonated pore solution; floor for the logarithmic pH law.
PH_FLOOR = 8.3

# Concentration undershoot below this magnitude is roundoff, not a
# diagnostic event (invariant tolerance of the implicit solver).
NEG_CONC_TOL = 1e-12

CO2_DIFF_SCALE = 1.64e-6  # m^2 s^-1


class ConstitutiveDomainError(ValueError):
    """Input outside the admissible domain of a material law."""


@dataclass(frozen=True)
class MaterialParams:
    """Material constants for one isotherm branch (wetting or drying).

    Values mirror the calibrated parameter set used throughout the case
    studies; physical constants are bundled so every law closes over a
    single object.
    """

    alpha: float            # Pa, capillary-curve scale
    beta: float             # -, capillary-curve exponent (> 1)
    perm_const_C: float     # m^4 kg^-2, permeability fitting constant
    eta: float = 1e-3       # Pa s, dynamic viscosity of water
    rho_s: float = 2285.0   # kg m^-3, density of dried concrete
    rho_l: float = 1000.0   # kg m^-3, density of liquid water
    M_l: float = 0.018      # kg mol^-1, molar mass of water
    R_gas: float = 8.314    # J mol^-1 K^-1
    T: float = 293.15       # K
    theta_0: float = 0.12   # -, initial (uncarbonated) porosity
    theta_c: float = 0.11   # -, porosity of fully carbonated concrete
    henry_H: float = 3.375e-4   # mol Pa^-1 m^-3, Henry constant for CO2
    k_n: float = 8.3            # m^3 mol^-1 s^-1, neutralization rate constant
    c_OH_eq: float = 43.2       # mol m^-3, OH- equilibrium concentration
    c_CaOH2_0: float = 1.2e-4   # mol m^-3, initial Ca(OH)2 concentration
    i_max: float = 3.7          # uA cm^-2, maximum corrosion current density
    k_fit: float = 1e-3         # -, corrosion-current shape constant
    theta_crit: float = 0.185   # -, critical porosity
    phi_t: float = 0.5          # -, phase-field crack threshold

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.beta > 1:
            raise ValueError(f"beta must exceed 1, got {self.beta}")
        if not 0 < self.theta_c < self.theta_0 < 1:
            raise ValueError(
                f"porosities must satisfy 0 < theta_c < theta_0 < 1, "
                f"got theta_c={self.theta_c}, theta_0={self.theta_0}")
        for name in ("perm_const_C", "eta", "rho_s", "rho_l", "M_l", "R_gas",
                     "T", "henry_H", "k_n", "c_OH_eq", "i_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0 < self.phi_t < 1:
            raise ValueError(f"phi_t must lie in (0, 1), got {self.phi_t}")

    def with_porosity(self, theta_0: float) -> "MaterialParams":
        return replace(self, theta_0=theta_0)


def wetting_params(**overrides) -> MaterialParams:
    """Calibrated parameter branch for wetting conditions."""
    base = dict(alpha=0.9e6, beta=3.85, perm_const_C=1.29e2)
    base.update(overrides)
    return MaterialParams(**base)


def drying_params(**overrides) -> MaterialParams:
    """Calibrated parameter branch for drying conditions."""
    base = dict(alpha=18.62e6, beta=2.27, perm_const_C=7.4e6)
    base.update(overrides)
    return MaterialParams(**base)


def clamp_saturation(s):
    """Clamp saturation into [S_MIN, 1 - S_MIN] before any material law."""
    return np.clip(s, S_MIN, 1.0 - S_MIN)


# ---------------------------------------------------------------------------
# Capillary pressure / sorption isotherm
# ---------------------------------------------------------------------------

def capillary_pressure(s, p: MaterialParams):
    """Capillary pressure p_c(S) = alpha (S^-beta - 1)^(1 - 1/beta), in Pa.

    Strictly decreasing; 0 at full saturation, diverging as S -> 0.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ConstitutiveDomainError("saturation must be positive")
    s = clamp_saturation(s)
    u = s ** (-p.beta) - 1.0
    return p.alpha * u ** (1.0 - 1.0 / p.beta)


def dpc_ds(s, p: MaterialParams):
    """Analytic derivative dp_c/dS, strictly negative on (0, 1)."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0) or np.any(s >= 1):
        raise ConstitutiveDomainError("saturation must lie in (0, 1)")
    s = clamp_saturation(s)
    u = s ** (-p.beta) - 1.0
    return -p.alpha * (p.beta - 1.0) * s ** (-p.beta - 1.0) * u ** (-1.0 / p.beta)


def d2pc_ds2(s, p: MaterialParams):
    """Second derivative of the capillary curve (for Jacobian terms)."""
    s = np.asarray(s, dtype=float)
    s = clamp_saturation(s)
    b = p.beta
    u = s ** (-b) - 1.0
    return -p.alpha * (b - 1.0) * (
        -(b + 1.0) * s ** (-b - 2.0) * u ** (-1.0 / b)
        + s ** (-2.0 * b - 2.0) * u ** (-1.0 / b - 1.0))


def kelvin_pc(h_r, p: MaterialParams):
    """Capillary pressure from relative humidity via the Kelvin law, Pa."""
    h_r = np.asarray(h_r, dtype=float)
    if np.any(h_r <= 0) or np.any(h_r > 1):
        raise ConstitutiveDomainError("relative humidity must lie in (0, 1]")
    return -p.rho_l * p.R_gas * p.T / p.M_l * np.log(h_r)


def saturation_from_humidity(h_r, p: MaterialParams):
    """Sorption isotherm S(h_r), the inverse of the capillary curve composed
    with the Kelvin law.  Strictly increasing, S(1) = 1."""
    h_r = np.asarray(h_r, dtype=float)
    if np.any(h_r <= 0) or np.any(h_r > 1):
        raise ConstitutiveDomainError("relative humidity must lie in (0, 1]")
    x = -p.rho_l * p.R_gas * p.T * np.log(h_r) / (p.M_l * p.alpha)
    return (1.0 + x ** (p.beta / (p.beta - 1.0))) ** (-1.0 / p.beta)


# ---------------------------------------------------------------------------
# Permeability
# ---------------------------------------------------------------------------

def relative_permeability(s, p: MaterialParams):
    """Mualem relative permeability k_r(S) = sqrt(S) [1 - (1 - S^beta)^(1/beta)]^2.

    Well-defined on all of [0, 1]; the expm1/log1p form avoids cancellation
    for S near the dry end.
    """
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore"):
        g = -np.expm1(np.log1p(-(s ** p.beta)) / p.beta)
    return np.sqrt(s) * g * g


def drelative_permeability_ds(s, p: MaterialParams):
    # Jacobian use only; the slope diverges at both endpoints, so inputs are
    # clamped into the same box the solver keeps its states in.
    s = clamp_saturation(np.asarray(s, dtype=float))
    b = p.beta
    v = 1.0 - s ** b
    g = -np.expm1(np.log1p(-(s ** b)) / b)
    dg = s ** (b - 1.0) * v ** (1.0 / b - 1.0)
    return g * (0.5 * g / np.sqrt(s) + 2.0 * np.sqrt(s) * dg)


def bulk_permeability(theta, p: MaterialParams):
    """Isotropic matrix permeability theta^8 / (C rho_s^2), in m^2.

    The theta^8 power results from the theta^3 pore-volume scaling combined
    with a Bruggeman tortuosity estimate.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0) or np.any(theta >= 1):
        raise ConstitutiveDomainError("porosity must lie in (0, 1)")
    return theta ** 8 / (p.perm_const_C * p.rho_s ** 2)


def dbulk_permeability_dtheta(theta, p: MaterialParams):
    theta = np.asarray(theta, dtype=float)
    return 8.0 * theta ** 7 / (p.perm_const_C * p.rho_s ** 2)


def water_mobility(s, p: MaterialParams):
    """Scalar moisture mobility -k_r(S) p_c'(S) / eta, in s^-1.

    Multiplying by the intrinsic permeability tensor (m^2) yields the
    positive-definite effective diffusivity of the saturation equation.
    """
    return -relative_permeability(s, p) * dpc_ds(s, p) / p.eta


def dwater_mobility_ds(s, p: MaterialParams):
    return -(drelative_permeability_ds(s, p) * dpc_ds(s, p)
             + relative_permeability(s, p) * d2pc_ds2(s, p)) / p.eta


# ---------------------------------------------------------------------------
# Carbonation
# ---------------------------------------------------------------------------

def co2_diffusivity(theta, s, phi):
    """CO2 diffusivity D(theta, S, phi) in m^2 s^-1.

    Diffusion happens in the gas-filled pore fraction: it vanishes at full
    saturation and is strongly enhanced inside open cracks (phi -> 1).
    """
    theta = np.asarray(theta, dtype=float)
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    phi = np.asarray(phi, dtype=float)
    pore = theta + (1.0 - theta) * phi ** 10
    return CO2_DIFF_SCALE * pore ** 1.8 * (1.0 - s) ** 2.2


def dco2_diffusivity_ds(theta, s, phi):
    theta = np.asarray(theta, dtype=float)
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    phi = np.asarray(phi, dtype=float)
    pore = theta + (1.0 - theta) * phi ** 10
    return -2.2 * CO2_DIFF_SCALE * pore ** 1.8 * (1.0 - s) ** 1.2


def dco2_diffusivity_dtheta(theta, s, phi):
    theta = np.asarray(theta, dtype=float)
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    phi = np.asarray(phi, dtype=float)
    pore = theta + (1.0 - theta) * phi ** 10
    return 1.8 * CO2_DIFF_SCALE * pore ** 0.8 * (1.0 - phi ** 10) * (1.0 - s) ** 2.2


def reaction_rate_coeff(p: MaterialParams) -> float:
    """Bilinear neutralization-rate coefficient H R T k_n c_OH_eq, m^3 mol^-1 s^-1."""
    return p.henry_H * p.R_gas * p.T * p.k_n * p.c_OH_eq


def neutralization_rate(c_co2, c_ch, p: MaterialParams, diagnostics=None):
    """Neutralization rate R_n = (H R T k_n c_OH_eq) c_CO2 c_Ca(OH)2.

    Negative concentrations (transient implicit-step undershoot) are clamped
    to zero; if a ``diagnostics`` object with a ``negative_concentration``
    counter is supplied, each clamped entry increments it.
    """
    c_co2 = np.asarray(c_co2, dtype=float)
    c_ch = np.asarray(c_ch, dtype=float)
    n_neg = (int(np.count_nonzero(c_co2 < -NEG_CONC_TOL))
             + int(np.count_nonzero(c_ch < -NEG_CONC_TOL)))
    if n_neg and diagnostics is not None:
        diagnostics.negative_concentration += n_neg
    return reaction_rate_coeff(p) * np.maximum(c_co2, 0.0) * np.maximum(c_ch, 0.0)


def carbonation_front(c_ch, c_ch0):
    """Reaction progress varphi = 1 - c_Ca(OH)2 / c0, clipped to [0, 1]."""
    if np.any(np.asarray(c_ch0) <= 0):
        raise ConstitutiveDomainError("initial Ca(OH)2 concentration must be positive")
    return np.clip(1.0 - np.asarray(c_ch, dtype=float) / c_ch0, 0.0, 1.0)


def porosity_from_front(varphi, p: MaterialParams, theta_0=None):
    """Porosity interpolated between uncarbonated and carbonated values.

    ``theta_0`` may be a nodal field; it defaults to the scalar parameter.
    """
    theta_0 = p.theta_0 if theta_0 is None else np.asarray(theta_0, dtype=float)
    return theta_0 + np.asarray(varphi, dtype=float) * (p.theta_c - theta_0)


def ph_from_caoh2(c_ch):
    """Pore-solution pH = 14 + log10(2e3 c_Ca(OH)2), floored at PH_FLOOR."""
    c_ch = np.asarray(c_ch, dtype=float)
    arg = 2e3 * np.maximum(c_ch, 0.0)
    floor_arg = 10.0 ** (PH_FLOOR - 14.0)
    return 14.0 + np.log10(np.maximum(arg, floor_arg))


# ---------------------------------------------------------------------------
# Corrosion
# ---------------------------------------------------------------------------

def corrosion_current_density(theta, s, p: MaterialParams):
    """Corrosion current density i_c(theta, S) in uA cm^-2.

    Sigmoidal in porosity around theta_crit, linear in saturation, bounded
    by [0, i_max].
    """
    theta = np.asarray(theta, dtype=float)
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    d = theta - p.theta_crit
    return p.i_max * 0.5 * (1.0 + d / np.sqrt(p.k_fit + d * d)) * s
