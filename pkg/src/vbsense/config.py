"""Plain-text ``key = value`` configuration.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Missing keys take the defaults below. ``pl_dark_cps`` and
``cw_pump_rate_per_s`` default to ``calibrate``: they are then solved from the
CW contrast anchors (20 % at 1 W, 7 % at 50 mW in DI water at zero field).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .physics import BathParams, SensorParams
from .protocols import CwParams, ProtocolSettings, ensure_calibrated

CALIBRATE = "calibrate"

# key -> (default, description)
KEYS = {
    "d_gs_hz": (3.47e9, "zero-field splitting"),
    "e_strain_hz": (0.0, "transverse zero-field parameter E"),
    "gamma_e_hz_per_t": (28.0e9, "electron gyromagnetic ratio"),
    "b_field_t": (0.0, "field along the defect axis"),
    "depth_m": (6.4e-9, "mean defect depth below the liquid"),
    "gamma1_intrinsic_per_s": (1.0 / 11.24e-6, "1/T1 in DI water"),
    "gamma2_star_per_s": (math.pi * 100e6, "dephasing rate; ODMR FWHM floor is this / pi"),
    "pump_rate_per_s": (5.0e6, "optical repolarization rate, pulsed protocols"),
    "pl_bright_cps": (1.0e8, "PL count rate of m_s=0"),
    "pl_dark_cps": (CALIBRATE, "PL count rate of m_s=+-1"),
    "concentration_mol_per_l": (0.0, "Gd3+ concentration"),
    "omega_gd0_per_s": (50e9, "composite Gd relaxation rate at C=0"),
    "omega_gd_slope_per_s_per_m": (77e9, "composite Gd relaxation rate slope"),
    "gamma_gd_hz_per_t": (28.0e9, "Gd3+ gyromagnetic ratio"),
    "rabi_rate_hz": (21.6e6, "Rabi frequency at 1 W MW power"),
    "rabi_damping_s": (100e-9, "Rabi oscillation damping time"),
    "laser_init_s": (1.5e-6, "initialization laser pulse"),
    "readout_s": (300e-9, "readout counting window"),
    "mw_coupling_s": (6.0e-11, "MW rate per squared angular Rabi frequency (CW)"),
    "cw_pump_rate_per_s": (CALIBRATE, "optical repolarization rate, CW ODMR"),
    "conductivity_penalty_per_m": (0.0, "phenomenological dip-depth loss per mol/L (off by default)"),
    "mw_power_w": (0.05, "CW MW power"),
    "integration_time_s": (1.0, "CW integration time per frequency point"),
    "dark_count_cps": (0.0, "additive detector dark-count rate"),
    "counts_per_point": (1.0e6, "photon budget per point of pulsed traces"),
}


def _parse_value(key, text):
    text = text.strip()
    if KEYS[key][0] == CALIBRATE and text.lower() == CALIBRATE:
        return CALIBRATE
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as a number") from None


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, val)
    return values


def parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"override must be KEY=VAL, got {item!r}")
    key, val = (part.strip() for part in item.split("=", 1))
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    return key, val


@dataclass
class Config:
    values: dict = field(default_factory=lambda: {k: v[0] for k, v in KEYS.items()})
    overrides: list = field(default_factory=list)

    def __post_init__(self):
        self._resolved = None

    # raw (possibly uncalibrated) objects
    def _sensor(self):
        v = self.values
        return SensorParams(
            d_gs=v["d_gs_hz"],
            e_strain=v["e_strain_hz"],
            gamma_e=v["gamma_e_hz_per_t"],
            b_field=v["b_field_t"],
            depth=v["depth_m"],
            gamma1_intrinsic=v["gamma1_intrinsic_per_s"],
            gamma2_star=v["gamma2_star_per_s"],
            pump_rate=v["pump_rate_per_s"],
            pl_bright=v["pl_bright_cps"],
            pl_dark=None if v["pl_dark_cps"] == CALIBRATE else v["pl_dark_cps"],
        )

    def _cw(self):
        v = self.values
        return CwParams(
            rabi_rate_at_1w=v["rabi_rate_hz"],
            mw_coupling=v["mw_coupling_s"],
            pump_rate=None if v["cw_pump_rate_per_s"] == CALIBRATE else v["cw_pump_rate_per_s"],
            conductivity_penalty=v["conductivity_penalty_per_m"],
        )

    def _resolve(self):
        if self._resolved is None:
            self._resolved = ensure_calibrated(self._sensor(), self._cw())
        return self._resolved

    @property
    def sensor(self) -> SensorParams:
        return self._resolve()[0]

    @property
    def cw(self) -> CwParams:
        return self._resolve()[1]

    @property
    def bath(self) -> BathParams:
        v = self.values
        return BathParams.for_field(
            v["concentration_mol_per_l"],
            v["b_field_t"],
            gamma_gd=v["gamma_gd_hz_per_t"],
            omega_gd0=v["omega_gd0_per_s"],
            omega_gd_slope=v["omega_gd_slope_per_s_per_m"],
        )

    @property
    def protocol(self) -> ProtocolSettings:
        v = self.values
        return ProtocolSettings(
            laser_init=v["laser_init_s"],
            readout=v["readout_s"],
            rabi_rate=v["rabi_rate_hz"],
            rabi_damping=v["rabi_damping_s"],
        )

    def resolved_values(self) -> dict:
        """All keys with calibrated entries replaced by their solved values."""
        out = dict(self.values)
        if out["pl_dark_cps"] == CALIBRATE:
            out["pl_dark_cps"] = self.sensor.pl_dark
        if out["cw_pump_rate_per_s"] == CALIBRATE:
            out["cw_pump_rate_per_s"] = self.cw.pump_rate
        return out

    def echo_lines(self, seed=None) -> list[str]:
        """Header block: seed, verbatim overrides, then every resolved key."""
        lines = []
        if seed is not None:
            lines.append(f"seed = {seed}")
        for item in self.overrides:
            lines.append(f"set {item}")
        calibrated = {k for k, v in self.values.items() if v == CALIBRATE}
        for k, v in self.resolved_values().items():
            tag = "  # calibrated" if k in calibrated else ""
            lines.append(f"{k} = {v!r}{tag}")
        return lines


def load_config(path=None, overrides=()) -> Config:
    """Read ``path`` (optional) and apply ``KEY=VAL`` overrides in order."""
    values = {k: v[0] for k, v in KEYS.items()}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        values.update(parse_config_text(text))
    for item in overrides:
        key, val = parse_override(item)
        values[key] = _parse_value(key, val)
    return Config(values, list(overrides))


def format_config(values: dict | None = None) -> str:
    values = values or {k: v[0] for k, v in KEYS.items()}
    lines = []
    for k, (_, doc) in KEYS.items():
        v = values[k]
        lines.append(f"# {doc}")
        lines.append(f"{k} = {v if v == CALIBRATE else repr(float(v))}")
    return "\n".join(lines) + "\n"
