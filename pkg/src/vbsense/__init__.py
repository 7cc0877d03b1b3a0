"""Simulation and analysis of hBN V_B- spin sensors detecting Gd3+ ions in liquid."""

from .errors import (
    AliasingError,
    BracketError,
    CalibrationError,
    ConfigError,
    DomainError,
    EmptySelectionError,
    FitError,
    RankDeficiencyError,
    SequenceError,
    UndefinedRatioError,
    VbsenseError,
)
from .physics import (
    CONSTANTS,
    BathParams,
    SensorParams,
    concentration_from_rate,
    gd_relaxation_rate,
    omega_gd,
    resonance_frequencies,
    spectral_density,
    total_relaxation_rate,
    total_t1,
)

__version__ = "0.1.0"
