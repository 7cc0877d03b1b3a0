"""Pulse sequences and forward simulation of Rabi, pulsed T1 and CW ODMR.

The ground triplet is tracked as three populations (p0, p_minus, p_plus).
Optical pumping is collapsed into an effective rate moving p+- into p0, and
spin relaxation couples m_s=0 to each of m_s=+-1 at rate Gamma1/3, so that the
polarization p0 - 1/3 decays at exactly Gamma1 in the dark.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Union

import numpy as np

from .errors import CalibrationError, DomainError, SequenceError
from .physics import (
    BathParams,
    SensorParams,
    resonance_frequencies,
    total_relaxation_rate,
)

# ---------------------------------------------------------------- data types


@dataclass(frozen=True)
class Laser:
    duration: float


@dataclass(frozen=True)
class Microwave:
    duration: float
    frequency: float
    rabi_rate: float


@dataclass(frozen=True)
class Wait:
    duration: float


@dataclass(frozen=True)
class Readout:
    duration: float


Block = Union[Laser, Microwave, Wait, Readout]
_BLOCK_TYPES = (Laser, Microwave, Wait, Readout)


@dataclass(frozen=True)
class PulseSequence:
    blocks: tuple
    repetitions: int = 1

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        for blk in self.blocks:
            if not isinstance(blk, _BLOCK_TYPES):
                raise SequenceError(f"not a block: {blk!r}")
            if blk.duration < 0:
                raise SequenceError(f"negative duration in {blk!r}")
        if not any(isinstance(blk, Readout) for blk in self.blocks):
            raise SequenceError("sequence needs at least one Readout block")
        if self.repetitions < 1:
            raise SequenceError("repetitions must be >= 1")


@dataclass(frozen=True)
class Sweep:
    """Vary one field ('duration' or 'frequency') of one block."""

    block: int
    field: str
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.field not in ("duration", "frequency"):
            raise SequenceError(f"sweep field must be duration or frequency, got {self.field!r}")

    def apply(self, seq: PulseSequence, value: float) -> PulseSequence:
        if not 0 <= self.block < len(seq.blocks):
            raise SequenceError(f"sweep references block {self.block}, sequence has {len(seq.blocks)}")
        blk = seq.blocks[self.block]
        if self.field == "frequency" and not isinstance(blk, Microwave):
            raise SequenceError(f"block {self.block} ({type(blk).__name__}) has no frequency")
        blocks = list(seq.blocks)
        blocks[self.block] = replace(blk, **{self.field: value})
        return replace(seq, blocks=tuple(blocks))


@dataclass(frozen=True)
class SpinState:
    p0: float
    p_minus: float
    p_plus: float

    @classmethod
    def thermal(cls) -> SpinState:
        return cls(1 / 3, 1 / 3, 1 / 3)

    def as_array(self) -> np.ndarray:
        return np.array([self.p0, self.p_minus, self.p_plus])

    @property
    def total(self) -> float:
        return self.p0 + self.p_minus + self.p_plus


def _state(p0, pm) -> SpinState:
    # p_plus from conservation keeps the sum at 1 to rounding
    return SpinState(p0, pm, 1.0 - p0 - pm)


@dataclass
class TimeTrace:
    abscissa: np.ndarray
    signal: np.ndarray
    sigma: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.abscissa = np.asarray(self.abscissa, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        self.sigma = np.zeros_like(self.signal) if self.sigma is None else np.asarray(self.sigma, dtype=float)
        if not (self.abscissa.shape == self.signal.shape == self.sigma.shape):
            raise ValueError("abscissa, signal and sigma must have equal lengths")
        if self.abscissa.size > 1 and np.any(np.diff(self.abscissa) <= 0):
            raise ValueError("abscissa must be strictly increasing")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be >= 0")

    def __len__(self):
        return self.abscissa.size


@dataclass
class OdmrSpectrum:
    frequency: np.ndarray
    contrast: np.ndarray
    sigma: np.ndarray
    mw_power: float = 0.0

    def __post_init__(self):
        self.frequency = np.asarray(self.frequency, dtype=float)
        self.contrast = np.asarray(self.contrast, dtype=float)
        self.sigma = np.zeros_like(self.contrast) if self.sigma is None else np.asarray(self.sigma, dtype=float)
        if not (self.frequency.shape == self.contrast.shape == self.sigma.shape):
            raise ValueError("frequency, contrast and sigma must have equal lengths")
        if self.frequency.size > 1 and np.any(np.diff(self.frequency) <= 0):
            raise ValueError("frequencies must be strictly increasing")

    def __len__(self):
        return self.frequency.size


@dataclass(frozen=True)
class ProtocolSettings:
    """Timing of the pulsed protocols; defaults follow the 1.5 us laser pulses used in the experiment."""

    laser_init: float = 1.5e-6
    readout: float = 300e-9
    rabi_rate: float = 21.6e6
    rabi_damping: float = 100e-9


@dataclass(frozen=True)
class CwParams:
    """CW ODMR parameters.

    ``pump_rate`` is the CW repolarization rate; ``None`` means "solve it from
    the contrast anchors". The MW transition rate on resonance is
    ``mw_coupling * (2 pi Omega)^2`` with Omega = rabi_rate_at_1w * sqrt(P / 1 W).
    """

    rabi_rate_at_1w: float = 21.6e6
    mw_coupling: float = 6.0e-11
    pump_rate: float | None = None
    conductivity_penalty: float = 0.0


# Anchors (mw power in W, peak dip depth) for DI water at zero field.
CONTRAST_ANCHORS = ((1.0, 0.20), (0.05, 0.07))

# ---------------------------------------------------------------- propagation


def _pump_fixed_point(pump, gamma1):
    """Laser fixed point of p0 and the approach rate."""
    rate = pump + gamma1
    if rate == 0:
        return 1 / 3, 0.0
    return (pump + gamma1 / 3) / rate, rate


def _laser(state: SpinState, t, pump, gamma1) -> SpinState:
    x_star, lam = _pump_fixed_point(pump, gamma1)
    decay = math.exp(-lam * t)
    p0 = x_star + (state.p0 - x_star) * decay
    # imbalance p- - p+ is pumped and relaxed at pump + gamma1/3
    diff = (state.p_minus - state.p_plus) * math.exp(-(pump + gamma1 / 3) * t)
    return _state(p0, 0.5 * (1 - p0 + diff))


def _wait(state: SpinState, t, gamma1) -> SpinState:
    p0 = 1 / 3 + (state.p0 - 1 / 3) * math.exp(-gamma1 * t)
    diff = (state.p_minus - state.p_plus) * math.exp(-gamma1 * t / 3)
    return _state(p0, 0.5 * (1 - p0 + diff))


def mw_transfer(duration, rabi_rate, detuning, damping=math.inf) -> float:
    """Population fraction moved between m_s=0 and the addressed level."""
    f_eff = math.hypot(rabi_rate, detuning)
    if f_eff == 0:
        return 0.0
    envelope = math.exp(-duration / damping) if math.isfinite(damping) else 1.0
    return (rabi_rate / f_eff) ** 2 * 0.5 * (1.0 - math.cos(2 * math.pi * f_eff * duration) * envelope)


def addressed_transition(frequency, s: SensorParams) -> tuple[int, float]:
    """(-1 or +1, detuning in Hz) of the transition closest to ``frequency``; ties go to m_s=-1."""
    nu_m, nu_p = resonance_frequencies(s)
    if abs(frequency - nu_m) <= abs(frequency - nu_p):
        return -1, frequency - nu_m
    return +1, frequency - nu_p


def evolve(
    state: SpinState,
    block: Block,
    s: SensorParams,
    b: BathParams,
    settings: ProtocolSettings = ProtocolSettings(),
) -> SpinState:
    """Propagate populations through one block (closed-form solutions)."""
    gamma1 = total_relaxation_rate(s, b)
    if isinstance(block, (Laser, Readout)):
        return _laser(state, block.duration, s.pump_rate, gamma1)
    if isinstance(block, Wait):
        return _wait(state, block.duration, gamma1)
    if isinstance(block, Microwave):
        level, detuning = addressed_transition(block.frequency, s)
        p = mw_transfer(block.duration, block.rabi_rate, detuning, settings.rabi_damping)
        pk = state.p_minus if level < 0 else state.p_plus
        moved = (state.p0 - pk) * p
        p0 = state.p0 - moved
        if level < 0:
            return _state(p0, state.p_minus + moved)
        return SpinState(p0, state.p_minus, 1.0 - p0 - state.p_minus)
    raise SequenceError(f"unknown block {block!r}")


def readout_signal(state: SpinState, duration, s: SensorParams, b: BathParams) -> float:
    """PL normalized to the bright rate, averaged over a readout window."""
    x_star, lam = _pump_fixed_point(s.pump_rate, total_relaxation_rate(s, b))
    lt = lam * duration
    g = 1.0 if lt == 0 else -math.expm1(-lt) / lt
    p0_avg = x_star + (state.p0 - x_star) * g
    return 1.0 - s.pl_contrast * (1.0 - p0_avg)


def run_sequence(
    seq: PulseSequence,
    s: SensorParams,
    b: BathParams,
    sweep: Sweep | None = None,
    settings: ProtocolSettings = ProtocolSettings(),
) -> TimeTrace:
    """Simulate ``seq`` once per sweep value.

    Every repetition starts from the thermal state, so repetitions only scale
    the photon budget; the signal comes from the first Readout block.
    """
    if sweep is None:
        points = [(0.0, seq)]
    else:
        points = [(v, sweep.apply(seq, v)) for v in sweep.values]
    out = []
    for _, sq in points:
        state = SpinState.thermal()
        value = None
        for blk in sq.blocks:
            if isinstance(blk, Readout) and value is None:
                value = readout_signal(state, blk.duration, s, b)
            state = evolve(state, blk, s, b, settings)
        out.append(value)
    meta = {"protocol": "sequence", "repetitions": seq.repetitions}
    if sweep is not None:
        meta.update(sweep_block=sweep.block, sweep_field=sweep.field)
    return TimeTrace([v for v, _ in points], out, None, meta)


# ---------------------------------------------------------------- canonical protocols


def pi_pulse(s: SensorParams, settings: ProtocolSettings = ProtocolSettings()) -> Microwave:
    nu_m, _ = resonance_frequencies(s)
    return Microwave(0.5 / settings.rabi_rate, nu_m, settings.rabi_rate)


def t1_sequence(s: SensorParams, settings: ProtocolSettings = ProtocolSettings(), tau: float = 0.0) -> PulseSequence:
    """Laser init, wait tau, pi pulse on m_s=-1, laser readout."""
    return PulseSequence(
        (Laser(settings.laser_init), Wait(tau), pi_pulse(s, settings), Readout(settings.readout))
    )


def rabi_sequence(
    s: SensorParams, rabi_rate, detuning=0.0, settings: ProtocolSettings = ProtocolSettings(), duration=0.0
) -> PulseSequence:
    nu_m, _ = resonance_frequencies(s)
    return PulseSequence(
        (Laser(settings.laser_init), Microwave(duration, nu_m + detuning, rabi_rate), Readout(settings.readout))
    )


def _readout_affine(s: SensorParams, b: BathParams, settings: ProtocolSettings):
    """Signal = alpha + beta * p0 at the start of the readout window."""
    x_star, lam = _pump_fixed_point(s.pump_rate, total_relaxation_rate(s, b))
    lt = lam * settings.readout
    g = 1.0 if lt == 0 else -math.expm1(-lt) / lt
    k = s.pl_contrast
    return 1.0 - k * (1.0 - x_star * (1 - g)), k * g


def _initialized_p0(s: SensorParams, b: BathParams, settings: ProtocolSettings) -> float:
    x_star, lam = _pump_fixed_point(s.pump_rate, total_relaxation_rate(s, b))
    return x_star + (1 / 3 - x_star) * math.exp(-lam * settings.laser_init)


def simulate_rabi(
    s: SensorParams,
    b: BathParams,
    rabi_rate: float,
    detuning: float,
    durations,
    settings: ProtocolSettings = ProtocolSettings(),
) -> TimeTrace:
    """Noiseless Rabi trace: offset + A cos(2 pi f_eff t) exp(-t / tau_R)."""
    t = np.asarray(durations, dtype=float)
    p0 = _initialized_p0(s, b, settings)
    pk = 0.5 * (1.0 - p0)
    f_eff = math.hypot(rabi_rate, detuning)
    if f_eff == 0:
        transfer = np.zeros_like(t)
    else:
        envelope = np.exp(-t / settings.rabi_damping) if math.isfinite(settings.rabi_damping) else 1.0
        transfer = (rabi_rate / f_eff) ** 2 * 0.5 * (1.0 - np.cos(2 * math.pi * f_eff * t) * envelope)
    alpha, beta = _readout_affine(s, b, settings)
    signal = alpha + beta * (p0 - (p0 - pk) * transfer)
    meta = {"protocol": "rabi", "rabi_rate_hz": rabi_rate, "detuning_hz": detuning, "f_eff_hz": f_eff}
    return TimeTrace(t, signal, None, meta)


def simulate_t1(
    s: SensorParams,
    b: BathParams,
    taus,
    settings: ProtocolSettings = ProtocolSettings(),
) -> TimeTrace:
    """Noiseless pulsed-T1 trace: baseline + A exp(-tau / T1)."""
    tau = np.asarray(taus, dtype=float)
    gamma1 = total_relaxation_rate(s, b)
    p0_init = _initialized_p0(s, b, settings)
    p0_tau = 1 / 3 + (p0_init - 1 / 3) * np.exp(-gamma1 * tau)
    # resonant pi pulse, possibly damped; spectator p+ = p- since the imbalance starts at zero
    p = mw_transfer(0.5 / settings.rabi_rate, settings.rabi_rate, 0.0, settings.rabi_damping)
    p0_read = p0_tau * (1 - 1.5 * p) + 0.5 * p
    alpha, beta = _readout_affine(s, b, settings)
    meta = {"protocol": "t1", "t1_s": 1.0 / gamma1, "concentration_mol_per_l": b.concentration}
    return TimeTrace(tau, alpha + beta * p0_read, None, meta)


# ---------------------------------------------------------------- CW ODMR


def mw_peak_rate(cw: CwParams, mw_power: float, rabi_rate_at_1w: float | None = None) -> float:
    """MW-induced transition rate on resonance, s^-1 (proportional to power)."""
    if mw_power < 0:
        raise DomainError("mw_power must be >= 0")
    rabi = cw.rabi_rate_at_1w if rabi_rate_at_1w is None else rabi_rate_at_1w
    omega = 2 * math.pi * rabi * math.sqrt(mw_power)
    return cw.mw_coupling * omega * omega


def calibrate_cw(
    s: SensorParams,
    cw: CwParams = CwParams(),
    anchors=CONTRAST_ANCHORS,
    reference: BathParams = BathParams(),
) -> tuple[SensorParams, CwParams]:
    """Solve the CW pump rate and PL contrast coefficient from two contrast anchors.

    The anchors are peak dip depths in the reference liquid at zero field,
    where both transitions coincide. With u = 2 W0(1 W) / R and
    R = pump + 2 Gamma1 the depth is 2 kappa (pump/R) uP / (1 + uP); the ratio of
    the two anchors fixes u, the MW coupling then fixes R and hence the pump
    rate, and the absolute depth fixes kappa. A pump rate already present in
    ``cw`` is kept and only kappa is solved. Returns updated copies.
    """
    (pa, da), (pb, db) = anchors
    gamma1 = total_relaxation_rate(s, reference)
    w1 = mw_peak_rate(cw, 1.0)
    if cw.pump_rate is None:
        if da == db or pa == pb:
            raise CalibrationError("anchors must differ in power and depth")
        u = (db * pa - da * pb) / (pa * pb * (da - db))
        if not u > 0:
            raise CalibrationError(f"anchors imply a non-positive saturation parameter ({u:.4g})")
        r = 2 * w1 / u
        pump = r - 2 * gamma1
        if not pump > 0:
            raise CalibrationError(
                f"MW coupling too weak: anchors need R = {r:.4g} s^-1 but 2*Gamma1 = {2 * gamma1:.4g} s^-1"
            )
    else:
        pump = cw.pump_rate
        r = pump + 2 * gamma1
        u = 2 * w1 / r
    kappa = da * (1 + u * pa) / (u * pa) * r / (2 * pump)
    if not 0 < kappa <= 1:
        raise CalibrationError(f"calibrated PL contrast coefficient {kappa:.4g} outside (0, 1]")
    sensor = s.replace(pl_dark=s.pl_bright * (1 - kappa))
    return sensor, replace(cw, pump_rate=pump)


@lru_cache(maxsize=64)
def _calibrated(s: SensorParams, cw: CwParams):
    return calibrate_cw(s, cw)


def ensure_calibrated(s: SensorParams, cw: CwParams = CwParams()) -> tuple[SensorParams, CwParams]:
    """Fill in pl_dark / the CW pump rate from the anchors if either is missing."""
    if s.pl_dark is not None and cw.pump_rate is not None:
        return s, cw
    cal_s, cal_cw = _calibrated(s.replace(pl_dark=None), cw)
    if s.pl_dark is not None:
        cal_s = s
    return cal_s, cal_cw


def cw_contrast(freqs, s: SensorParams, b: BathParams, mw_power, rabi_rate_at_1w=None, cw: CwParams = CwParams()):
    """Noiseless CW ODMR contrast (PL_on / PL_off - 1) at ``freqs``."""
    s, cw = ensure_calibrated(s, cw)
    f = np.asarray(freqs, dtype=float)
    pump = cw.pump_rate
    r = pump + 2 * total_relaxation_rate(s, b)
    w0 = mw_peak_rate(cw, mw_power, rabi_rate_at_1w)
    hwhm = s.gamma2_star / (2 * math.pi)
    kappa = s.pl_contrast
    pol_off = pump / r
    out = np.zeros_like(f)
    if w0 == 0 or pump == 0:
        return out
    for nu in resonance_frequencies(s):
        x = f - nu
        w = w0 * hwhm * hwhm / (x * x + hwhm * hwhm)
        out += kappa * (pump / (r + 2 * w) - pol_off)
    if cw.conductivity_penalty:
        # phenomenological: fractional loss of dip depth proportional to ion concentration
        out *= max(0.0, 1.0 - cw.conductivity_penalty * b.concentration)
    return out


def cw_linewidth(s: SensorParams, b: BathParams, mw_power, rabi_rate_at_1w=None, cw: CwParams = CwParams()) -> float:
    """Power-broadened FWHM of one dip, Hz."""
    s, cw = ensure_calibrated(s, cw)
    r = cw.pump_rate + 2 * total_relaxation_rate(s, b)
    sat = 2 * mw_peak_rate(cw, mw_power, rabi_rate_at_1w) / r
    return s.gamma2_star / math.pi * math.sqrt(1 + sat)


def simulate_cw_odmr(
    s: SensorParams,
    b: BathParams,
    mw_power: float,
    rabi_rate_at_1w: float,
    freqs,
    cw: CwParams = CwParams(),
) -> OdmrSpectrum:
    """Noiseless CW ODMR spectrum: two power-broadened Lorentzian dips at nu+-."""
    c = cw_contrast(freqs, s, b, mw_power, rabi_rate_at_1w, cw)
    return OdmrSpectrum(freqs, c, None, mw_power)


def default_frequency_grid(s: SensorParams, margin=0.17e9, step=2e6) -> np.ndarray:
    """Integer-MHz grid spanning both resonances with ``margin`` on each side."""
    nu_m, nu_p = resonance_frequencies(s)
    lo = math.floor((nu_m - margin) / step)
    hi = math.ceil((nu_p + margin) / step)
    return np.arange(lo, hi + 1) * step


# ---------------------------------------------------------------- text format

_SWEEP_RE = re.compile(r"^SWEEP\s+block=(\d+)\s+field=(\w+)\s+values=(\S*)\s*$", re.IGNORECASE)
_REPS_RE = re.compile(r"^REPS\s+(\d+)\s*$", re.IGNORECASE)


def parse_sequence(text: str) -> tuple[PulseSequence, Sweep | None]:
    """Parse the one-block-per-line sequence format.

    ``LASER <s>``, ``MW <s> <Hz> <Hz_rabi>``, ``WAIT <s>``, ``READ <s>``; an
    optional ``SWEEP block=<i> field=<duration|frequency> values=<csv>``
    header and ``REPS <n>``. ``#`` starts a comment.
    """
    blocks, sweep, reps = [], None, 1
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SWEEP_RE.match(line)
        if m:
            vals = [v for v in m.group(3).split(",") if v.strip()]
            try:
                sweep = Sweep(int(m.group(1)), m.group(2).lower(), [float(v) for v in vals])
            except ValueError as exc:
                raise SequenceError(f"line {lineno}: bad sweep values") from exc
            continue
        m = _REPS_RE.match(line)
        if m:
            reps = int(m.group(1))
            continue
        tok = line.split()
        op, args = tok[0].upper(), tok[1:]
        try:
            nums = [float(a) for a in args]
        except ValueError as exc:
            raise SequenceError(f"line {lineno}: non-numeric argument in {raw!r}") from exc
        arity = {"LASER": 1, "MW": 3, "WAIT": 1, "READ": 1}
        if op not in arity:
            raise SequenceError(f"line {lineno}: unknown block {tok[0]!r}")
        if len(nums) != arity[op]:
            raise SequenceError(f"line {lineno}: {op} takes {arity[op]} argument(s)")
        blocks.append({"LASER": Laser, "MW": Microwave, "WAIT": Wait, "READ": Readout}[op](*nums))
    seq = PulseSequence(tuple(blocks), reps)
    if sweep is not None and not 0 <= sweep.block < len(blocks):
        raise SequenceError(f"sweep references block {sweep.block}, sequence has {len(blocks)}")
    return seq, sweep


def format_sequence(seq: PulseSequence, sweep: Sweep | None = None) -> str:
    lines = []
    if sweep is not None:
        vals = ",".join(repr(v) for v in sweep.values)
        lines.append(f"SWEEP block={sweep.block} field={sweep.field} values={vals}")
    if seq.repetitions != 1:
        lines.append(f"REPS {seq.repetitions}")
    for blk in seq.blocks:
        if isinstance(blk, Laser):
            lines.append(f"LASER {blk.duration!r}")
        elif isinstance(blk, Microwave):
            lines.append(f"MW {blk.duration!r} {blk.frequency!r} {blk.rabi_rate!r}")
        elif isinstance(blk, Wait):
            lines.append(f"WAIT {blk.duration!r}")
        else:
            lines.append(f"READ {blk.duration!r}")
    return "\n".join(lines) + "\n"
