"""Curve fitting (T1 decays, Rabi oscillations, ODMR dips) and concentration estimation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.signal import find_peaks, peak_widths

from .errors import AliasingError, CalibrationError, DomainError, FitError, RankDeficiencyError
from .lm import levenberg_marquardt
from .measurement import BAND, band_average_contrast
from .physics import (
    BathParams,
    SensorParams,
    concentration_from_rate,
    gd_relaxation_rate_derivative,
)
from .protocols import CwParams, OdmrSpectrum, TimeTrace, simulate_cw_odmr

MAX_ITER = 200
GTOL = 1e-10

# ---------------------------------------------------------------- models


class Exponential:
    name = "Exponential"
    units = {"amplitude": "1", "t1": "s", "offset": "1"}

    def __init__(self):
        self.names = list(self.units)

    @staticmethod
    def f(t, p):
        a, t1, b = p
        return b + a * np.exp(-t / t1)

    @staticmethod
    def jac(t, p):
        a, t1, b = p
        e = np.exp(-t / t1)
        return np.column_stack([e, a * e * t / t1**2, np.ones_like(t)])


class DampedCosine:
    name = "DampedCosine"
    units = {"amplitude": "1", "frequency": "Hz", "phase": "rad", "decay": "s", "offset": "1"}

    def __init__(self):
        self.names = list(self.units)

    @staticmethod
    def f(t, p):
        a, f, phi, tau, b = p
        return b + a * np.cos(2 * np.pi * f * t + phi) * np.exp(-t / tau)

    @staticmethod
    def jac(t, p):
        a, f, phi, tau, b = p
        e = np.exp(-t / tau)
        arg = 2 * np.pi * f * t + phi
        c, s = np.cos(arg) * e, np.sin(arg) * e
        return np.column_stack([c, -a * s * 2 * np.pi * t, -a * s, a * c * t / tau**2, np.ones_like(t)])


class MultiLorentzian:
    """offset - sum_k depth_k / (1 + 4 (f - center_k)^2 / fwhm_k^2)."""

    name = "MultiLorentzian"

    def __init__(self, n_dips: int):
        self.n = n_dips
        self.names = ["offset"]
        self.units = {"offset": "1"}
        for k in range(n_dips):
            for nm, u in (("depth", "1"), ("center", "Hz"), ("fwhm", "Hz")):
                self.names.append(f"{nm}_{k}")
                self.units[f"{nm}_{k}"] = u

    def f(self, x, p):
        y = np.full_like(x, p[0])
        for k in range(self.n):
            a, c, w = p[1 + 3 * k : 4 + 3 * k]
            y -= a / (1 + 4 * ((x - c) / w) ** 2)
        return y

    def jac(self, x, p):
        cols = [np.ones_like(x)]
        for k in range(self.n):
            a, c, w = p[1 + 3 * k : 4 + 3 * k]
            dx = x - c
            lor = 1 / (1 + 4 * (dx / w) ** 2)
            l2 = lor * lor
            cols += [-lor, -a * 8 * dx * l2 / w**2, -a * 8 * dx**2 * l2 / w**3]
        return np.column_stack(cols)


# ---------------------------------------------------------------- report


@dataclass
class FitReport:
    model: str
    params: dict
    stderr: dict
    units: dict
    residual_rms: float
    iterations: int
    converged: bool
    init_strategy: str
    gradient_cosine: float = 0.0
    n_points: int = 0
    warnings: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        """JSON document; keys as in the dataclass, parameters keyed by name."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float) + "\n"

    @classmethod
    def from_text(cls, text: str) -> FitReport:
        return cls(**json.loads(text))


def _weights(sigma):
    if sigma is None:
        return None
    sigma = np.asarray(sigma, dtype=float)
    if np.all(sigma > 0):
        return 1.0 / sigma
    return None


def _run(model, x, y, p0, weights, init_strategy, extra_warnings=()):
    w = np.ones_like(y) if weights is None else weights
    scale = float(np.ptp(y)) or 1.0

    def resid(p):
        return (model.f(x, p) - y) * w

    def jac(p):
        return model.jac(x, p) * w[:, None]

    floor = 1e-13 * scale * math.sqrt(y.size) * (float(np.max(w)) if weights is not None else 1.0)
    res = levenberg_marquardt(resid, jac, p0, max_iter=MAX_ITER, gtol=GTOL, floor=floor)
    J = res.jacobian
    n, p = J.shape
    warnings = list(extra_warnings)
    d = np.linalg.norm(J, axis=0)
    d[d == 0] = 1.0
    u, sv, vt = np.linalg.svd(J / d, full_matrices=False)
    if sv[-1] <= 1e-12 * sv[0]:
        warnings.append("singular Jacobian: parameters not identifiable")
        cov = np.full((p, p), np.inf)
    else:
        cov = (vt.T / sv**2) @ vt / np.outer(d, d)
        if weights is None:
            dof = max(n - p, 1)
            cov = cov * (res.residual @ res.residual) / dof
    err = np.sqrt(np.abs(np.diag(cov)))
    raw = model.f(x, res.x) - y
    return res, err, float(np.sqrt(np.mean(raw**2))), warnings


def _report(model, res, err, rms, n, init_strategy, warnings, converged=None):
    return FitReport(
        model=model.name,
        params={k: float(v) for k, v in zip(model.names, res.x)},
        stderr={k: float(v) for k, v in zip(model.names, err)},
        units=dict(model.units),
        residual_rms=rms,
        iterations=int(res.iterations),
        converged=bool(res.converged if converged is None else converged),
        init_strategy=init_strategy,
        gradient_cosine=float(res.gradient_cosine),
        n_points=int(n),
        warnings=list(warnings),
        message=res.message,
    )


# ---------------------------------------------------------------- exponential


def _check_trace(t, y, minimum):
    if t.size < minimum:
        raise FitError(f"need at least {minimum} points, got {t.size}")
    if not np.ptp(t) > 0:
        raise FitError("abscissa has zero span")


def fit_exponential(trace: TimeTrace, weights=None) -> FitReport:
    """Fit y = offset + amplitude * exp(-t / t1).

    Initial T1 from a log-linear regression against a tail baseline estimate.
    ``weights`` are per-point 1/sigma; by default the trace sigmas are used
    when all are positive.
    """
    t, y = trace.abscissa, trace.signal
    _check_trace(t, y, 4)
    if np.ptp(y) <= 1e-12 * max(np.max(np.abs(y)), 1e-300):
        raise RankDeficiencyError("flat trace: amplitude and decay time are not identifiable")
    w = _weights(trace.sigma) if weights is None else np.asarray(weights, dtype=float)
    span = float(np.ptp(t))
    ntail = max(2, t.size // 8)
    base = float(np.mean(y[-ntail:]))
    head = y[: max(2, t.size // 8)].mean()
    sign = 1.0 if head > base else -1.0
    z = sign * (y - base)
    ok = z > 0.1 * np.max(z)
    ok[-ntail:] = False
    t1 = span / 3
    if ok.sum() >= 2:
        slope = np.polyfit(t[ok], np.log(z[ok]), 1)[0]
        if slope < 0 and math.isfinite(slope):
            t1 = -1.0 / slope
    # linear amplitude/offset at the initial T1
    basis = np.column_stack([np.exp(-t / t1), np.ones_like(t)])
    amp, off = np.linalg.lstsq(basis, y, rcond=None)[0]
    model = Exponential()
    res, err, rms, warns = _run(model, t, y, [amp, t1, off], w, "log-linear")
    if res.x[1] <= 0:
        warns.append("negative decay time")
        return _report(model, res, err, rms, t.size, "log-linear", warns, converged=False)
    return _report(model, res, err, rms, t.size, "log-linear regression on tail-subtracted signal", warns)


# ---------------------------------------------------------------- damped cosine

ALIAS_FRACTION = 0.9


def _dft_peak(t, y):
    dt = float(np.median(np.diff(t)))
    n = t.size
    nfft = 16 * int(2 ** math.ceil(math.log2(n)))
    spec = np.abs(np.fft.rfft(y - y.mean(), nfft))
    freqs = np.fft.rfftfreq(nfft, dt)
    k = int(np.argmax(spec))
    if 0 < k < spec.size - 1:
        a, b, c = spec[k - 1 : k + 2]
        den = a - 2 * b + c
        shift = 0.5 * (a - c) / den if den != 0 else 0.0
        return freqs[k] + shift * (freqs[1] - freqs[0]), dt
    return freqs[k], dt


def fit_damped_cosine(trace: TimeTrace, weights=None) -> FitReport:
    """Fit y = offset + amplitude * cos(2 pi f t + phase) * exp(-t / decay).

    The frequency is initialized at the zero-padded DFT peak. A trace with no
    oscillation inside the window is fitted as an exponential instead and the
    report carries a "degenerate" warning.
    """
    t, y = trace.abscissa, trace.signal
    _check_trace(t, y, 8)
    if np.ptp(y) <= 1e-12 * max(np.max(np.abs(y)), 1e-300):
        raise RankDeficiencyError("flat trace: no oscillation to fit")
    w = _weights(trace.sigma) if weights is None else np.asarray(weights, dtype=float)
    f0, dt = _dft_peak(t, y)
    nyquist = 0.5 / dt
    if f0 >= ALIAS_FRACTION * nyquist:
        raise AliasingError(
            f"DFT peak at {f0:.6g} Hz is at the Nyquist limit {nyquist:.6g} Hz (sample spacing {dt:.6g} s)"
        )
    span = float(np.ptp(t))
    if f0 * span < 1.0:  # less than one cycle in the window is not a resolved oscillation
        rep = fit_exponential(trace, weights)
        rep.warnings.append("degenerate: no oscillation resolved, reduced to exponential")
        rep.init_strategy = "DFT peak at zero frequency -> " + rep.init_strategy
        return rep
    best = None
    for tau in (span / 4, span, 4 * span, 100 * span):
        e = np.exp(-t / tau)
        arg = 2 * np.pi * f0 * t
        basis = np.column_stack([np.cos(arg) * e, np.sin(arg) * e, np.ones_like(t)])
        coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
        cost = np.sum((basis @ coef - y) ** 2)
        if best is None or cost < best[0]:
            best = (cost, tau, coef)
    _, tau, (c1, c2, off) = best
    p0 = [math.hypot(c1, c2), f0, math.atan2(-c2, c1), tau, off]
    model = DampedCosine()
    init = "DFT peak frequency, linear amplitude/phase on decay grid"
    res, err, rms, warns = _run(model, t, y, p0, w, init)
    x = res.x
    if x[0] < 0:
        x[0], x[2] = -x[0], x[2] + math.pi
    if x[1] < 0:
        x[1], x[2] = -x[1], -x[2]
    x[2] = (x[2] + math.pi) % (2 * math.pi) - math.pi
    ok = res.converged and x[3] > 0
    if x[3] <= 0:
        warns.append("negative decay time")
    return _report(model, res, err, rms, t.size, init, warns, converged=ok)


# ---------------------------------------------------------------- ODMR dips


def _smooth(y, k=5):
    if y.size < 3 * k:
        return y
    kernel = np.ones(k) / k
    pad = np.pad(y, k // 2, mode="edge")
    return np.convolve(pad, kernel, mode="valid")


def fit_odmr_dips(spec: OdmrSpectrum, n_dips: int = 2) -> FitReport:
    """Fit a sum of Lorentzian dips; centers, FWHMs and depths are reported.

    Dips are initialized by a prominence scan of the (lightly smoothed)
    spectrum. Requesting more dips than the scan resolves yields
    ``converged=False`` with an identifiability warning; the fit is then run
    with the dips that were found.
    """
    if n_dips not in (1, 2):
        raise FitError("n_dips must be 1 or 2")
    x, y = spec.frequency, spec.contrast
    if x.size < 5 * n_dips:
        raise FitError(f"need at least {5 * n_dips} points for {n_dips} dips")
    w = _weights(spec.sigma)
    edge = max(2, x.size // 10)
    base = float(np.median(np.concatenate([y[:edge], y[-edge:]])))
    depth = base - _smooth(y)
    if np.ptp(y) == 0:
        raise RankDeficiencyError("flat spectrum: no dips")
    noise = float(np.median(spec.sigma)) if np.any(spec.sigma > 0) else 0.0
    peaks, props = find_peaks(depth, prominence=0)
    prom = props["prominences"]
    keep = prom >= max(5 * noise / math.sqrt(5), 0.1 * prom.max()) if prom.size else prom.astype(bool)
    peaks, prom = peaks[keep], prom[keep]
    order = np.argsort(prom)[::-1][:n_dips]
    peaks = np.sort(peaks[order])
    warnings = []
    if peaks.size < n_dips:
        warnings.append(f"identifiability: {n_dips} dips requested, {peaks.size} resolved")
    if peaks.size == 0:
        raise RankDeficiencyError("no dip found")
    widths = peak_widths(depth, peaks, rel_height=0.5)[0]
    step = float(np.median(np.diff(x)))
    p0 = [base]
    for pk, wd in zip(peaks, widths):
        p0 += [float(depth[pk]), float(x[pk]), max(float(wd) * step, 2 * step)]
    model = MultiLorentzian(peaks.size)
    init = "prominence scan for centers, half-height widths"
    res, err, rms, warns = _run(model, x, y, p0, w, init, warnings)
    converged = res.converged and peaks.size == n_dips
    if peaks.size == 2:
        c0, c1 = res.x[2], res.x[5]
        if abs(c1 - c0) < 0.5 * min(abs(res.x[3]), abs(res.x[6])):
            warns.append("identifiability: fitted dips overlap")
            converged = False
    for k in range(peaks.size):
        res.x[3 + 3 * k] = abs(res.x[3 + 3 * k])
    rep = _report(model, res, err, rms, x.size, init, warns, converged=converged)
    if res.converged and not converged:
        rep.message = "optimizer converged but the requested dips are not identifiable"
    return rep


# ---------------------------------------------------------------- concentration


@dataclass
class ConcentrationEstimate:
    concentration: float
    lower: float
    upper: float
    rate: float | None = None
    rate_sigma: float | None = None
    warnings: list = field(default_factory=list)

    @property
    def interval(self) -> tuple[float, float]:
        return self.lower, self.upper


# Half-width of reported intervals in standard errors (about 95 % for normal errors).
INTERVAL_SIGMAS = 2.0


def concentration_from_t1(
    t1_measured: float,
    t1_reference: float,
    s: SensorParams,
    sigma_measured: float = 0.0,
    sigma_reference: float = 0.0,
    bath: BathParams | None = None,
    k: float = INTERVAL_SIGMAS,
) -> ConcentrationEstimate:
    """Concentration from a T1 shortening relative to the reference liquid.

    Gamma = 1/T1 - 1/T1_ref is inverted through the relaxation-rate model;
    the interval is C +- k * sigma_C with sigma_C propagated to first order.
    A negative Gamma (noise-dominated) yields C = 0 and a warning.
    """
    if not (t1_measured > 0 and t1_reference > 0):
        raise DomainError("T1 values must be positive")
    bath = bath or BathParams()
    rate = 1.0 / t1_measured - 1.0 / t1_reference
    rate_sigma = math.hypot(sigma_measured / t1_measured**2, sigma_reference / t1_reference**2)
    warnings = []
    if rate < 0:
        warnings.append("negative relaxation-rate difference: noise-dominated, reported as C = 0")
        c = 0.0
    else:
        c = concentration_from_rate(rate, s, bath)
    slope = gd_relaxation_rate_derivative(s, bath.with_concentration(c))
    sigma_c = rate_sigma / slope
    return ConcentrationEstimate(c, max(0.0, c - k * sigma_c), c + k * sigma_c, rate, rate_sigma, warnings)


@dataclass
class CalibrationCurve:
    concentrations: np.ndarray
    band_contrasts: np.ndarray
    band_sigmas: np.ndarray | None = None
    interpolant: str = "pchip"

    def __post_init__(self):
        self.concentrations = np.asarray(self.concentrations, dtype=float)
        self.band_contrasts = np.asarray(self.band_contrasts, dtype=float)
        if self.band_sigmas is not None:
            self.band_sigmas = np.asarray(self.band_sigmas, dtype=float)
        if self.concentrations.shape != self.band_contrasts.shape or self.concentrations.size < 2:
            raise CalibrationError("need at least two (concentration, contrast) pairs of equal length")
        if np.any(np.diff(self.concentrations) <= 0):
            raise CalibrationError("concentrations must be strictly increasing")

    @property
    def monotone(self) -> bool:
        d = np.diff(self.band_contrasts)
        return bool(np.all(d > 0) or np.all(d < 0))


def concentration_from_contrast(
    avg_contrast: float,
    curve: CalibrationCurve,
    sigma: float = 0.0,
    k: float = INTERVAL_SIGMAS,
) -> ConcentrationEstimate:
    """Invert a monotone (PCHIP) calibration curve.

    Contrasts outside the curve range are clamped to the end knots with a
    warning. The interval inverts avg_contrast +- k * sigma.
    """
    if not curve.monotone:
        raise CalibrationError("calibration curve is not strictly monotone")
    cs, ys = curve.concentrations, curve.band_contrasts
    interp = PchipInterpolator(cs, ys)
    warnings = []

    def invert(v):
        hit = np.flatnonzero(ys == v)
        if hit.size:
            return float(cs[hit[0]]), False
        lo_y, hi_y = min(ys[0], ys[-1]), max(ys[0], ys[-1])
        if v <= lo_y or v >= hi_y:
            return float(cs[0] if (v - ys[0]) * (ys[-1] - ys[0]) <= 0 else cs[-1]), True
        j = int(np.flatnonzero((ys[:-1] - v) * (ys[1:] - v) < 0)[0])
        return float(brentq(lambda c: float(interp(c)) - v, cs[j], cs[j + 1], xtol=1e-15, rtol=1e-14)), False

    c, clamped = invert(avg_contrast)
    if clamped:
        warnings.append("contrast outside calibration range: clamped to end knot")
    bounds = sorted(invert(avg_contrast + sgn * k * sigma)[0] for sgn in (-1, 1))
    return ConcentrationEstimate(c, bounds[0], bounds[1], warnings=warnings)


def simulate_calibration_curve(
    s: SensorParams,
    concentrations,
    mw_power: float = 0.05,
    freqs=None,
    cw: CwParams = CwParams(),
    bath: BathParams | None = None,
    band=BAND,
) -> CalibrationCurve:
    """Noiseless band-average contrast at each concentration."""
    from .protocols import default_frequency_grid, ensure_calibrated

    s, cw = ensure_calibrated(s, cw)
    bath = bath or BathParams()
    freqs = default_frequency_grid(s) if freqs is None else freqs
    vals = []
    for c in concentrations:
        spec = simulate_cw_odmr(s, bath.with_concentration(c), mw_power, cw.rabi_rate_at_1w, freqs, cw)
        vals.append(band_average_contrast(spec, *band)[0])
    return CalibrationCurve(np.asarray(concentrations, dtype=float), np.asarray(vals))
