import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbsense.errors import AliasingError, BracketError, CalibrationError, FitError, RankDeficiencyError
from vbsense.fitting import (
    CalibrationCurve,
    DampedCosine,
    Exponential,
    FitReport,
    MultiLorentzian,
    concentration_from_contrast,
    concentration_from_t1,
    fit_damped_cosine,
    fit_exponential,
    fit_odmr_dips,
    simulate_calibration_curve,
)
from vbsense.measurement import add_shot_noise
from vbsense.physics import BathParams, SensorParams, gd_relaxation_rate, total_t1
from vbsense.protocols import OdmrSpectrum, TimeTrace

S = SensorParams()


def fd_jacobian(f, x, p):
    cols = []
    for i in range(len(p)):
        h = 1e-5 * max(abs(p[i]), 1.0)
        pp, pm = np.array(p, float), np.array(p, float)
        pp[i] += h
        pm[i] -= h
        cols.append((f(x, pp) - f(x, pm)) / (2 * h))
    return np.column_stack(cols)


def assert_jacobian(model, x, p):
    ana, num = model.jac(x, p), fd_jacobian(model.f, x, p)
    for k in range(ana.shape[1]):
        scale = max(np.linalg.norm(ana[:, k]), 1e-300)
        assert np.linalg.norm(ana[:, k] - num[:, k]) / scale <= 1e-6


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.01, 1), t1=st.floats(1, 10), b=st.floats(-1, 1))
def test_exponential_jacobian(a, t1, b):
    assert_jacobian(Exponential(), np.linspace(0, 20, 30), [a, t1, b])


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.01, 1), f=st.floats(0.05, 0.4), phi=st.floats(-3, 3), tau=st.floats(2, 50), b=st.floats(-1, 1))
def test_damped_cosine_jacobian(a, f, phi, tau, b):
    assert_jacobian(DampedCosine(), np.linspace(0, 20, 60), [a, f, phi, tau, b])


@settings(max_examples=40, deadline=None)
@given(d0=st.floats(0.01, 0.2), c0=st.floats(-2, 0), w0=st.floats(0.3, 2), d1=st.floats(0.01, 0.2), c1=st.floats(0.5, 3))
def test_lorentzian_jacobian(d0, c0, w0, d1, c1):
    assert_jacobian(MultiLorentzian(2), np.linspace(-4, 4, 80), [0.01, d0, c0, w0, d1, c1, 0.7])


def test_exponential_noiseless():
    t = np.linspace(0, 60e-6, 61)
    y = 0.85 - 0.05 * np.exp(-t / 9.578e-6)
    rep = fit_exponential(TimeTrace(t, y, None))
    assert rep.converged
    assert rep.params["t1"] == pytest.approx(9.578e-6, rel=1e-9)
    assert rep.units["t1"] == "s"


def test_exponential_flat_raises():
    with pytest.raises(RankDeficiencyError):
        fit_exponential(TimeTrace(np.arange(10.0), np.ones(10), None))
    with pytest.raises(FitError):
        fit_exponential(TimeTrace([0.0, 1.0], [1.0, 0.5], None))


def test_damped_cosine_noiseless():
    t = np.linspace(0, 300e-9, 151)
    y = 0.8 + 0.05 * np.cos(2 * np.pi * 21.6e6 * t) * np.exp(-t / 100e-9)
    rep = fit_damped_cosine(TimeTrace(t, y, None))
    assert rep.converged
    assert rep.params["frequency"] == pytest.approx(21.6e6, rel=1e-9)
    assert rep.params["decay"] == pytest.approx(100e-9, rel=1e-9)


def test_aliasing_detected():
    t = np.arange(40) * 10e-9  # Nyquist 50 MHz
    y = 1 + 0.1 * np.cos(2 * np.pi * 49.9e6 * t)
    with pytest.raises(AliasingError):
        fit_damped_cosine(TimeTrace(t, y, None))


def test_degenerate_reduces_to_exponential():
    t = np.linspace(0, 1e-6, 40)
    y = 1 - 0.1 * np.exp(-t / 3e-7)
    rep = fit_damped_cosine(TimeTrace(t, y, None))
    assert rep.model == "Exponential"
    assert any(w.startswith("degenerate") for w in rep.warnings)


def test_noisy_exponential_stderr_is_calibrated():
    t = np.linspace(0, 60e-6, 61)
    clean = TimeTrace(t, 0.85 - 0.05 * np.exp(-t / 10e-6), None)
    z = []
    for seed in range(40):
        rep = fit_exponential(add_shot_noise(clean, 1e6, seed))
        assert rep.converged
        z.append((rep.params["t1"] - 10e-6) / rep.stderr["t1"])
    assert np.mean(np.abs(z) < 3) >= 0.9
    assert 0.6 < np.std(z) < 1.5


def test_lorentzian_fit_and_identifiability():
    f = np.arange(3.0e9, 3.95e9, 2e6)
    y = -0.03 / (1 + 4 * ((f - 3.106e9) / 4e7) ** 2) - 0.03 / (1 + 4 * ((f - 3.834e9) / 4e7) ** 2)
    rep = fit_odmr_dips(OdmrSpectrum(f, y, None), 2)
    assert rep.converged
    assert rep.params["center_0"] == pytest.approx(3.106e9, rel=1e-10)
    assert rep.params["center_1"] == pytest.approx(3.834e9, rel=1e-10)
    single = -0.03 / (1 + 4 * ((f - 3.47e9) / 4e7) ** 2)
    rep2 = fit_odmr_dips(OdmrSpectrum(f, single, None), 2)
    assert not rep2.converged and any("identifiability" in w for w in rep2.warnings)
    rep1 = fit_odmr_dips(OdmrSpectrum(f, single, None), 1)
    assert rep1.converged and rep1.params["center_0"] == pytest.approx(3.47e9, rel=1e-10)


def test_report_text_round_trip():
    t = np.linspace(0, 10, 20)
    rep = fit_exponential(TimeTrace(t, 1 + np.exp(-t / 2), None))
    again = FitReport.from_text(rep.to_text())
    assert again == rep
    assert again.to_text() == rep.to_text()


def test_concentration_from_t1():
    t_ref = total_t1(S, BathParams(0.0))
    est = concentration_from_t1(total_t1(S, BathParams(0.5)), t_ref, S, 0.3e-6, 0.17e-6)
    assert est.concentration == pytest.approx(0.5, rel=1e-6)
    assert est.lower < 0.5 < est.upper
    assert not est.warnings
    neg = concentration_from_t1(12e-6, t_ref, S)
    assert neg.concentration == 0.0 and neg.warnings
    with pytest.raises(BracketError):
        concentration_from_t1(1e-6, t_ref, S)


def test_calibration_curve_inversion():
    cs = [0.0, 0.01, 0.05, 0.5, 1.0]
    curve = simulate_calibration_curve(S, cs)
    assert curve.monotone
    for c, y in zip(cs, curve.band_contrasts):
        assert concentration_from_contrast(y, curve).concentration == c
    mid = concentration_from_contrast(0.5 * (curve.band_contrasts[3] + curve.band_contrasts[4]), curve)
    assert 0.5 < mid.concentration < 1.0
    hi = concentration_from_contrast(curve.band_contrasts[-1] + 0.01, curve)
    assert hi.concentration == 1.0 and hi.warnings


def test_non_monotone_curve_rejected():
    curve = CalibrationCurve([0, 1, 2], [0.0, -1.0, -0.5])
    with pytest.raises(CalibrationError):
        concentration_from_contrast(-0.2, curve)
    with pytest.raises(CalibrationError):
        CalibrationCurve([0, 0], [1, 2])


@settings(max_examples=40, deadline=None)
@given(c=st.floats(1e-3, 5.0))
def test_t1_concentration_round_trip(c):
    t_ref = 1 / S.gamma1_intrinsic
    t1 = 1 / (S.gamma1_intrinsic + gd_relaxation_rate(S, BathParams(c)))
    assert concentration_from_t1(t1, t_ref, S).concentration == pytest.approx(c, rel=1e-6)
