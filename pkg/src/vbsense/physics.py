"""Sensor and bath parameters plus the closed-form physics of the V_B- / Gd3+ system.

Units: frequencies in Hz, gyromagnetic ratios in Hz/T, angular rates in s^-1
(rad/s), lengths in m, concentrations in mol/L.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants as _codata

from .errors import BracketError, DomainError

__all__ = [
    "PhysicalConstants",
    "CONSTANTS",
    "SensorParams",
    "BathParams",
    "resonance_frequencies",
    "omega_gd",
    "spectral_density",
    "gd_relaxation_rate",
    "gd_relaxation_rate_derivative",
    "total_t1",
    "total_relaxation_rate",
    "concentration_from_rate",
    "CONCENTRATION_BRACKET",
]

# Solver bracket for concentration_from_rate, mol/L.
CONCENTRATION_BRACKET = (0.0, 10.0)


@dataclass(frozen=True)
class PhysicalConstants:
    n_avogadro: float = _codata.N_A
    mu0: float = _codata.mu_0
    hbar: float = _codata.hbar


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class SensorParams:
    """Static properties of the V_B- ensemble.

    ``pl_dark`` may be left as ``None``; it is then filled in by the CW contrast
    calibration (see :func:`vbsense.protocols.calibrate_cw`).
    """

    d_gs: float = 3.47e9
    e_strain: float = 0.0
    gamma_e: float = 28.0e9
    b_field: float = 0.0
    depth: float = 6.4e-9
    gamma1_intrinsic: float = 1.0 / 11.24e-6
    gamma2_star: float = math.pi * 100e6
    pump_rate: float = 5.0e6
    pl_bright: float = 1.0e8
    pl_dark: float | None = None

    def __post_init__(self):
        if not self.d_gs > 0:
            raise DomainError(f"d_gs must be positive, got {self.d_gs}")
        if not self.depth > 0:
            raise DomainError(f"depth must be positive, got {self.depth}")
        if not self.gamma_e > 0:
            raise DomainError(f"gamma_e must be positive, got {self.gamma_e}")
        if self.e_strain < 0:
            raise DomainError(f"e_strain must be >= 0, got {self.e_strain}")
        for name in ("gamma1_intrinsic", "gamma2_star", "pump_rate", "pl_bright"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        if self.pl_dark is not None and not 0 <= self.pl_dark <= self.pl_bright:
            raise DomainError("need pl_bright >= pl_dark >= 0")

    @property
    def pl_contrast(self) -> float:
        """Fractional PL drop between m_s=0 and m_s=+-1 (1 - pl_dark/pl_bright)."""
        if self.pl_dark is None:
            raise DomainError("pl_dark is not set; run the CW calibration first")
        if self.pl_bright == 0:
            return 0.0
        return 1.0 - self.pl_dark / self.pl_bright

    def replace(self, **changes) -> SensorParams:
        return replace(self, **changes)


@dataclass(frozen=True)
class BathParams:
    concentration: float = 0.0
    omega_gd0: float = 50e9
    omega_gd_slope: float = 77e9
    omega_larmor: float = 0.0
    gamma_gd: float = 28.0e9

    def __post_init__(self):
        if self.concentration < 0:
            raise DomainError(f"concentration must be >= 0, got {self.concentration}")
        if not self.omega_gd0 > 0 or self.omega_gd_slope < 0:
            raise DomainError("omega_gd(C) must stay positive for C >= 0")

    @classmethod
    def for_field(cls, concentration: float, b_field: float, **kw) -> BathParams:
        """Bath whose Larmor frequency follows from the applied field."""
        gamma_gd = kw.pop("gamma_gd", cls.gamma_gd)
        return cls(
            concentration=concentration,
            gamma_gd=gamma_gd,
            omega_larmor=2.0 * math.pi * gamma_gd * b_field,
            **kw,
        )

    def with_concentration(self, concentration: float) -> BathParams:
        return replace(self, concentration=concentration)


def resonance_frequencies(s: SensorParams) -> tuple[float, float]:
    """Return (nu_minus, nu_plus) of the ground-state triplet in Hz."""
    split = math.hypot(s.e_strain, s.gamma_e * s.b_field)
    return s.d_gs - split, s.d_gs + split


def omega_gd(b: BathParams) -> float:
    """Composite Gd3+ relaxation rate (s^-1), affine in concentration."""
    if b.concentration < 0:
        raise DomainError("negative concentration")
    return b.omega_gd0 + b.omega_gd_slope * b.concentration


def spectral_density(omega, b: BathParams):
    """Lorentzian bath spectral density sqrt(2/pi) w_gd / ((w - w_L)^2 + w_gd^2).

    Accepts scalars or arrays for ``omega`` (rad/s).
    """
    w = omega_gd(b)
    x = np.asarray(omega, dtype=float) - b.omega_larmor
    out = math.sqrt(2.0 / math.pi) * w / (x * x + w * w)
    return out if out.ndim else float(out)


def _rate_prefactor(s: SensorParams, b: BathParams, c: PhysicalConstants) -> float:
    # 21e3*pi*N_A/(8 d^3) * (pi mu0 hbar gamma_e gamma_gd)^2 ; the 1e3 converts mol/L to mol/m^3
    coupling = math.pi * c.mu0 * c.hbar * s.gamma_e * b.gamma_gd
    return 21e3 * math.pi * c.n_avogadro / (8.0 * s.depth**3) * coupling**2


def gd_relaxation_rate(s: SensorParams, b: BathParams, constants: PhysicalConstants = CONSTANTS) -> float:
    """Gd3+-induced relaxation rate of the shallow ensemble, s^-1.

    The probe frequency is the zero-field splitting (Zeeman shifts ignored).
    """
    if not s.depth > 0:
        raise DomainError("depth must be positive")
    w = omega_gd(b)
    probe = 2.0 * math.pi * s.d_gs
    return _rate_prefactor(s, b, constants) * b.concentration * w / (w * w + probe * probe)


def gd_relaxation_rate_derivative(s: SensorParams, b: BathParams, constants: PhysicalConstants = CONSTANTS) -> float:
    """d(gd_relaxation_rate)/dC at b.concentration, s^-1 M^-1."""
    w = omega_gd(b)
    probe2 = (2.0 * math.pi * s.d_gs) ** 2
    den = w * w + probe2
    dshape = w / den + b.concentration * b.omega_gd_slope * (probe2 - w * w) / (den * den)
    return _rate_prefactor(s, b, constants) * dshape


def total_relaxation_rate(s: SensorParams, b: BathParams) -> float:
    return s.gamma1_intrinsic + gd_relaxation_rate(s, b)


def total_t1(s: SensorParams, b: BathParams) -> float:
    """T1 = 1 / (intrinsic rate + Gd-induced rate), seconds."""
    return 1.0 / total_relaxation_rate(s, b)


def concentration_from_rate(
    gamma_gd_measured: float,
    s: SensorParams,
    bath: BathParams | None = None,
    rtol: float = 1e-12,
) -> float:
    """Invert :func:`gd_relaxation_rate` for the concentration (mol/L).

    omega_gd depends on C, so the inversion is a root find: bisection on
    ``CONCENTRATION_BRACKET`` followed by a Newton polish. ``bath`` supplies
    the non-concentration bath parameters (defaults otherwise).
    """
    if gamma_gd_measured < 0:
        raise DomainError("measured rate must be >= 0")
    if gamma_gd_measured == 0:
        return 0.0
    bath = bath or BathParams()

    def rate(c):
        return gd_relaxation_rate(s, bath.with_concentration(c))

    lo, hi = CONCENTRATION_BRACKET
    top = rate(hi)
    if gamma_gd_measured > top:
        raise BracketError(
            f"rate {gamma_gd_measured:.6g} s^-1 exceeds {top:.6g} s^-1, "
            f"the value at the bracket bound C = {hi} M",
            bound=top,
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rate(mid) < gamma_gd_measured:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * max(hi, 1e-12):
            break
    c = 0.5 * (lo + hi)
    for _ in range(20):
        g = rate(c) - gamma_gd_measured
        if abs(g) <= rtol * gamma_gd_measured:
            break
        step = g / gd_relaxation_rate_derivative(s, bath.with_concentration(c))
        c_new = c - step
        if not lo <= c_new <= hi:
            break
        c = c_new
    return c
