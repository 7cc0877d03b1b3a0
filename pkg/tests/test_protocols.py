import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbsense.errors import CalibrationError, SequenceError
from vbsense.physics import BathParams, SensorParams, resonance_frequencies
from vbsense.protocols import (
    CONTRAST_ANCHORS,
    CwParams,
    Laser,
    Microwave,
    ProtocolSettings,
    PulseSequence,
    Readout,
    SpinState,
    Sweep,
    Wait,
    calibrate_cw,
    cw_contrast,
    cw_linewidth,
    default_frequency_grid,
    ensure_calibrated,
    evolve,
    format_sequence,
    parse_sequence,
    rabi_sequence,
    run_sequence,
    simulate_cw_odmr,
    simulate_rabi,
    simulate_t1,
    t1_sequence,
)

S, CW = ensure_calibrated(SensorParams())
B0 = BathParams()
SET = ProtocolSettings()


def test_calibration_reproduces_anchors():
    for power, depth in CONTRAST_ANCHORS:
        c = cw_contrast([S.d_gs], S, B0, power, cw=CW)[0]
        assert -c == pytest.approx(depth, abs=1e-12)


def test_calibrated_values_frozen():
    assert CW.pump_rate == pytest.approx(61511.71366685882, rel=1e-9)
    assert S.pl_contrast == pytest.approx(0.4314427345932854, rel=1e-9)


def test_calibration_rejects_bad_anchors():
    with pytest.raises(CalibrationError):
        calibrate_cw(SensorParams(), CwParams(), anchors=((1.0, 0.07), (0.05, 0.20)))
    with pytest.raises(CalibrationError):
        calibrate_cw(SensorParams(), CwParams(mw_coupling=1e-14))


def test_fixed_pump_only_solves_kappa():
    s, cw = calibrate_cw(SensorParams(), CwParams(pump_rate=1e5))
    assert cw.pump_rate == 1e5
    assert -cw_contrast([s.d_gs], s, B0, 1.0, cw=cw)[0] == pytest.approx(0.20, abs=1e-12)


def test_gd_reduces_contrast():
    c0 = -cw_contrast([S.d_gs], S, B0, 0.05, cw=CW)[0]
    c5 = -cw_contrast([S.d_gs], S, BathParams(0.5), 0.05, cw=CW)[0]
    assert 0 < c5 < c0
    assert c5 == pytest.approx(0.06053, abs=5e-5)


def test_linewidth_floor_and_broadening():
    assert cw_linewidth(S, B0, 0.0, cw=CW) == pytest.approx(S.gamma2_star / math.pi)
    assert cw_linewidth(S, B0, 1.0, cw=CW) > cw_linewidth(S, B0, 0.05, cw=CW)


def test_conductivity_penalty_off_by_default():
    f = [S.d_gs]
    base = cw_contrast(f, S, BathParams(1.0), 0.05, cw=CW)
    pen = cw_contrast(f, S, BathParams(1.0), 0.05, cw=replace(CW, conductivity_penalty=0.1))
    assert pen[0] == pytest.approx(0.9 * base[0])


def test_default_grid():
    g = default_frequency_grid(S)
    assert g[0] == 3.30e9 and g[-1] == 3.64e9 and g.size == 171
    g13 = default_frequency_grid(S.replace(b_field=0.013))
    lo, hi = resonance_frequencies(S.replace(b_field=0.013))
    assert g13[0] < lo and g13[-1] > hi


def test_two_dips_at_field():
    s = S.replace(b_field=0.013)
    spec = simulate_cw_odmr(s, B0, 0.05, CW.rabi_rate_at_1w, default_frequency_grid(s), CW)
    i = np.argsort(spec.contrast)[:2]
    assert sorted(spec.frequency[i]) == [3.106e9, 3.834e9]


@settings(max_examples=80, deadline=None)
@given(
    kind=st.sampled_from(["laser", "mw", "wait"]),
    dur=st.floats(0, 1e-4),
    det=st.floats(-5e8, 5e8),
    p0=st.floats(0, 1),
    frac=st.floats(0, 1),
)
def test_probability_conservation(kind, dur, det, p0, frac):
    pm = (1 - p0) * frac
    state = SpinState(p0, pm, 1 - p0 - pm)
    blk = {"laser": Laser(dur), "mw": Microwave(dur, S.d_gs + det, 21.6e6), "wait": Wait(dur)}[kind]
    out = evolve(state, blk, S, BathParams(0.5), SET)
    assert abs(out.total - 1.0) <= 1e-12
    assert min(out.p0, out.p_minus, out.p_plus) >= -1e-12


def test_thermal_state_and_laser_polarizes():
    th = SpinState.thermal()
    assert th.p0 == pytest.approx(1 / 3)
    pol = evolve(th, Laser(10e-6), S, B0, SET)
    assert pol.p0 > 0.9


def test_t1_sequence_matches_closed_form():
    taus = np.linspace(0, 40e-6, 21)
    b = BathParams(1.0)
    seq = t1_sequence(S, SET)
    sweep = Sweep(1, "duration", taus)
    via_seq = run_sequence(seq, S, b, sweep, SET).signal
    closed = simulate_t1(S, b, taus, SET).signal
    assert np.max(np.abs(via_seq - closed)) <= 1e-9


def test_rabi_sequence_matches_closed_form():
    t = np.linspace(0, 200e-9, 41)
    seq = rabi_sequence(S, 21.6e6, 3e6, SET)
    mw_index = next(i for i, b in enumerate(seq.blocks) if isinstance(b, Microwave))
    via_seq = run_sequence(seq, S, B0, Sweep(mw_index, "duration", t), SET).signal
    closed = simulate_rabi(S, B0, 21.6e6, 3e6, t, SET).signal
    assert np.max(np.abs(via_seq - closed)) <= 1e-9


def test_t1_trace_relaxes_to_baseline():
    tr = simulate_t1(S, BathParams(1.0), [0, 1e-3], SET)
    assert tr.signal[0] < tr.signal[1]
    assert tr.meta["t1_s"] == pytest.approx(9.578045981959e-6, rel=1e-10)


def test_sequence_validation():
    with pytest.raises(SequenceError):
        PulseSequence((Laser(1e-6), Wait(1e-6)))
    seq = PulseSequence((Laser(1e-6), Wait(0.0), Readout(3e-7)))
    with pytest.raises(SequenceError):
        Sweep(5, "duration", [0.0]).apply(seq, 1.0)
    with pytest.raises(SequenceError):
        Sweep(1, "frequency", [0.0]).apply(seq, 1.0)
    with pytest.raises(SequenceError):
        Sweep(1, "phase", [0.0])


def test_sequence_text_round_trip():
    seq = t1_sequence(S, SET)
    sweep = Sweep(1, "duration", [0.0, 1e-6, 2.5e-6])
    text = format_sequence(PulseSequence(seq.blocks, 4), sweep)
    seq2, sweep2 = parse_sequence(text)
    assert seq2.blocks == seq.blocks and seq2.repetitions == 4 and sweep2 == sweep


@pytest.mark.parametrize(
    "text",
    ["LASER 1e-6\nWAIT\nREAD 3e-7", "LASER 1e-6\nFOO 1\nREAD 3e-7", "LASER x\nREAD 3e-7", "SWEEP block=9 field=duration values=1\nREAD 3e-7"],
)
def test_sequence_parse_errors(text):
    with pytest.raises(SequenceError):
        parse_sequence(text)
