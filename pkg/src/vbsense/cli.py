"""Command-line entry point.

Each invocation runs one job: read config, simulate / fit / estimate, write
artifacts atomically. Failures print one JSON line to stderr with an error
category and exit with its code.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import io as vio
from .config import Config, load_config, parse_override
from .errors import BracketError, CalibrationError, ConfigError, DomainError, FitError, SequenceError
from .fitting import (
    INTERVAL_SIGMAS,
    CalibrationCurve,
    ConcentrationEstimate,
    FitReport,
    concentration_from_contrast,
    concentration_from_t1,
    fit_damped_cosine,
    fit_exponential,
    fit_odmr_dips,
    simulate_calibration_curve,
)
from .measurement import BAND, add_shot_noise, band_average_contrast, measure_odmr
from .oracle import GRID_COLUMNS, McConfig, halfspace_inverse_r6, mc_gamma_ratio, mc_rms_transverse_field, scaling_grid
from .physics import concentration_from_rate, gd_relaxation_rate_derivative, total_t1
from .protocols import default_frequency_grid, parse_sequence, run_sequence, simulate_cw_odmr, simulate_rabi, simulate_t1
from .reproduce import FIG4_CONCENTRATIONS, TARGETS, reproduce

COMMANDS = ("simulate-rabi", "simulate-t1", "simulate-odmr", "run-sequence", "fit", "estimate-c", "oracle", "reproduce")

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_FIT = 4
EXIT_BRACKET = 5
EXIT_DOMAIN = 6


class JobError(Exception):
    def __init__(self, category: str, code: int, message: str):
        super().__init__(message)
        self.category, self.code = category, code


@dataclass
class JobSpec:
    command: str
    config_path: str | None = None
    output_path: str | None = None
    seed: int = 0
    overrides: list = field(default_factory=list)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise JobError("usage", EXIT_CONFIG, f"unknown command {self.command!r}")
        for item in self.overrides:
            try:
                parse_override(item)
            except ConfigError as exc:
                raise JobError("config", EXIT_CONFIG, str(exc)) from None


# ---------------------------------------------------------------- helpers


def _grid(text: str):
    """``start:stop:num`` (inclusive, num points) or a comma list."""
    if ":" in text:
        a, b, n = text.split(":")
        return np.linspace(float(a), float(b), int(float(n)))
    return np.array([float(v) for v in text.split(",") if v.strip()])


def _out(job: JobSpec, default: str) -> str:
    return job.output_path or default


def _read(reader, path):
    try:
        return reader(path)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise JobError("input", EXIT_INPUT, f"cannot read {path}: {exc}") from None


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _config_dict(cfg: Config, seed) -> dict:
    return {"seed": seed, "overrides": list(cfg.overrides), "config": cfg.resolved_values()}


# ---------------------------------------------------------------- commands


def _simulate_t1(job, cfg):
    o = job.options
    taus = _grid(o.get("taus") or "0:60e-6:61")
    trace = simulate_t1(cfg.sensor, cfg.bath, taus, cfg.protocol)
    if not o.get("noiseless"):
        trace = add_shot_noise(trace, cfg.values["counts_per_point"], job.seed)
    notes = cfg.echo_lines(job.seed) + [f"t1_model_s = {total_t1(cfg.sensor, cfg.bath)!r}"]
    vio.write_trace(_out(job, "t1.csv"), trace, notes)


def _simulate_rabi(job, cfg):
    o = job.options
    t = _grid(o.get("durations") or "0:300e-9:151")
    rabi = cfg.values["rabi_rate_hz"]
    trace = simulate_rabi(cfg.sensor, cfg.bath, rabi, float(o.get("detuning") or 0.0), t, cfg.protocol)
    if not o.get("noiseless"):
        trace = add_shot_noise(trace, cfg.values["counts_per_point"], job.seed)
    vio.write_trace(_out(job, "rabi.csv"), trace, cfg.echo_lines(job.seed), abscissa_name="tau_s")


def _simulate_odmr(job, cfg):
    o, v = job.options, cfg.values
    s, cw = cfg.sensor, cfg.cw
    power = float(o["power"]) if o.get("power") is not None else v["mw_power_w"]
    if o.get("freqs"):
        a, b, step = (float(x) for x in o["freqs"].split(":"))
        freqs = np.arange(round(a / step), round(b / step) + 1) * step
    else:
        freqs = default_frequency_grid(s)
    spec = simulate_cw_odmr(s, cfg.bath, power, cw.rabi_rate_at_1w, freqs, cw)
    notes = cfg.echo_lines(job.seed) + [f"mw_power_used_w = {power!r}"]
    if not o.get("noiseless"):
        spec, records = measure_odmr(spec, v["pl_bright_cps"], v["integration_time_s"], job.seed, v["dark_count_cps"])
        if o.get("counts_out"):
            vio.write_counts(o["counts_out"], records, notes)
    avg, err = band_average_contrast(spec, *BAND)
    notes.append(f"band_average = {avg!r} +- {err!r}")
    vio.write_spectrum(_out(job, "odmr.csv"), spec, notes)


def _run_sequence(job, cfg):
    o = job.options
    if not o.get("sequence"):
        raise JobError("usage", EXIT_CONFIG, "run-sequence needs --sequence FILE")

    def load(path):
        with open(path, encoding="utf-8") as fh:
            return fh.read()

    text = _read(load, o["sequence"])
    try:
        seq, sweep = parse_sequence(text)
        trace = run_sequence(seq, cfg.sensor, cfg.bath, sweep, cfg.protocol)
    except SequenceError as exc:
        raise JobError("sequence", EXIT_INPUT, str(exc)) from None
    if o.get("shot_noise"):
        trace = add_shot_noise(trace, cfg.values["counts_per_point"] * seq.repetitions, job.seed)
    name = "freq_hz" if sweep is not None and sweep.field == "frequency" else "tau_s"
    vio.write_trace(_out(job, "sequence.csv"), trace, cfg.echo_lines(job.seed), abscissa_name=name)


def _fit(job, cfg):
    o = job.options
    model = o.get("model") or "exponential"
    if not o.get("input"):
        raise JobError("usage", EXIT_CONFIG, "fit needs --in FILE")
    try:
        if model == "lorentzian":
            rep = fit_odmr_dips(_read(vio.read_spectrum, o["input"]), int(o.get("n_dips") or 2))
        else:
            trace = _read(vio.read_trace, o["input"])
            rep = fit_exponential(trace) if model == "exponential" else fit_damped_cosine(trace)
    except FitError as exc:
        rep = FitReport(model, {}, {}, {}, math.nan, 0, False, "none", math.nan, 0, [str(exc)], type(exc).__name__)
    vio.atomic_write_text(_out(job, "fit.json"), rep.to_text())
    if not rep.converged:
        raise JobError("fit", EXIT_FIT, f"fit did not converge: {rep.message}")


def _t1_from_report(path):
    def load(p):
        with open(p, encoding="utf-8") as fh:
            return FitReport.from_text(fh.read())

    rep = _read(load, path)
    if "t1" not in rep.params:
        raise JobError("input", EXIT_INPUT, f"{path}: not an exponential fit report")
    return rep.params["t1"], rep.stderr.get("t1", 0.0)


def _estimate_c(job, cfg):
    o = job.options
    s, bath = cfg.sensor, cfg.bath
    k = float(o.get("k") or INTERVAL_SIGMAS)
    if o.get("t1_report"):
        o["t1"], o["t1_sigma"] = _t1_from_report(o["t1_report"])
    if o.get("t1_ref_report"):
        o["t1_ref"], o["t1_ref_sigma"] = _t1_from_report(o["t1_ref_report"])
    if o.get("t1") is not None:
        t1_ref = o.get("t1_ref")
        if t1_ref is None:
            t1_ref = 1.0 / s.gamma1_intrinsic
        est = concentration_from_t1(
            float(o["t1"]), float(t1_ref), s, float(o.get("t1_sigma") or 0), float(o.get("t1_ref_sigma") or 0), bath, k
        )
        method = "t1"
    elif o.get("rate") is not None:
        rate, rs = float(o["rate"]), float(o.get("rate_sigma") or 0)
        c = concentration_from_rate(rate, s, bath)
        sc = rs / gd_relaxation_rate_derivative(s, bath.with_concentration(c))
        est = ConcentrationEstimate(c, max(0.0, c - k * sc), c + k * sc, rate, rs)
        method = "rate"
    elif o.get("contrast") is not None:
        if o.get("curve"):
            cols, data = _read(lambda p: vio._numeric(p, ("concentration_mol_per_l",)), o["curve"])
            curve = CalibrationCurve(data[:, 0], data[:, 1])
        else:
            curve = simulate_calibration_curve(s, FIG4_CONCENTRATIONS, cfg.values["mw_power_w"], cw=cfg.cw, bath=bath)
        est = concentration_from_contrast(float(o["contrast"]), curve, float(o.get("contrast_sigma") or 0), k)
        method = "contrast"
    else:
        raise JobError("usage", EXIT_CONFIG, "estimate-c needs --t1, --rate or --contrast")
    doc = dict(
        method=method,
        concentration_mol_per_l=est.concentration,
        interval=[est.lower, est.upper],
        interval_sigmas=k,
        rate_per_s=est.rate,
        rate_sigma_per_s=est.rate_sigma,
        warnings=est.warnings,
        **_config_dict(cfg, job.seed),
    )
    vio.atomic_write_text(_out(job, "estimate.json"), _json(doc))


def _oracle(job, cfg):
    o = job.options
    kind = o.get("kind") or "r6"
    n = int(float(o.get("n") or 1e6))
    depth = float(o["d"]) if o.get("d") is not None else cfg.values["depth_m"]
    c = cfg.values["concentration_mol_per_l"]
    cutoff = float(o["cutoff"]) if o.get("cutoff") is not None else None
    sampler = o.get("sampler") or "importance"
    if kind == "grid":
        cs = _grid(o.get("concentrations") or "0.25,0.5,1.0")
        ds = _grid(o.get("depths") or "4e-9,6.4e-9,12.8e-9")
        rows = scaling_grid(cs, ds, cfg.sensor, n, job.seed)
        vio.write_csv(_out(job, "oracle_grid.csv"), GRID_COLUMNS, rows, cfg.echo_lines(job.seed) + [f"n_samples = {n}"])
        return
    if o.get("density") is not None:
        cfg_mc = McConfig(depth, float(o["density"]), n, job.seed, cutoff, sampler)
    else:
        cfg_mc = McConfig.from_concentration(depth, c, n_samples=n, seed=job.seed, cutoff_radius=cutoff, sampler=sampler)
    if kind == "r6":
        res = halfspace_inverse_r6(cfg_mc)
    elif kind == "field":
        res = mc_rms_transverse_field(cfg_mc, float(o.get("spin") or 3.5), cfg.values["gamma_gd_hz_per_t"])
    elif kind == "ratio":
        if not c > 0:
            raise JobError("domain", EXIT_DOMAIN, "ratio needs concentration_mol_per_l > 0")
        res = mc_gamma_ratio(cfg_mc, cfg.sensor.replace(depth=depth), cfg.bath, float(o.get("spin") or 3.5))
    else:
        raise JobError("usage", EXIT_CONFIG, f"unknown oracle kind {kind!r}")
    vio.atomic_write_text(_out(job, f"oracle_{kind}.json"), res.to_text())


def _reproduce(job, cfg):
    target = job.options.get("target")
    if target not in TARGETS:
        raise JobError("usage", EXIT_CONFIG, f"unknown reproduce target {target!r}; choose from {', '.join(TARGETS)}")
    rep = reproduce(target, cfg, job.seed)
    out = _out(job, f"{target}.csv")
    vio.write_csv(out, rep.columns, rep.rows, cfg.echo_lines(job.seed))
    summary = rep.summary()
    vio.atomic_write_text(os.path.splitext(out)[0] + ".summary.txt", summary)
    sys.stdout.write(summary)
    if not rep.passed:
        raise JobError("check", EXIT_FAILED_CHECK, f"{target}: at least one check failed")


_HANDLERS = {
    "simulate-t1": _simulate_t1,
    "simulate-rabi": _simulate_rabi,
    "simulate-odmr": _simulate_odmr,
    "run-sequence": _run_sequence,
    "fit": _fit,
    "estimate-c": _estimate_c,
    "oracle": _oracle,
    "reproduce": _reproduce,
}


def _fail(category: str, code: int, message: str) -> int:
    sys.stderr.write(json.dumps({"error": category, "exit": code, "message": message}) + "\n")
    return code


def execute(job: JobSpec) -> int:
    """Run one job; returns the process exit status."""
    try:
        try:
            cfg = load_config(job.config_path, job.overrides)
        except OSError as exc:
            raise JobError("input", EXIT_INPUT, f"cannot read config: {exc}") from None
        _HANDLERS[job.command](job, cfg)
    except JobError as exc:
        return _fail(exc.category, exc.code, str(exc))
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, str(exc))
    except BracketError as exc:
        return _fail("bracket", EXIT_BRACKET, str(exc))
    except FitError as exc:
        return _fail("fit", EXIT_FIT, str(exc))
    except (DomainError, CalibrationError) as exc:
        return _fail("domain", EXIT_DOMAIN, str(exc))
    except OSError as exc:
        return _fail("io", EXIT_INPUT, str(exc))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--out", metavar="PATH", help="output artifact path")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VAL", dest="overrides",
                        help="override one config key (repeatable)")

    p = argparse.ArgumentParser(prog="vbsense", description="hBN V_B- relaxometry / ODMR simulator")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate-t1", parents=[common], help="pulsed T1 trace")
    sp.add_argument("--taus", help="start:stop:num or comma list, seconds")
    sp.add_argument("--noiseless", action="store_true")

    sp = sub.add_parser("simulate-rabi", parents=[common], help="Rabi trace")
    sp.add_argument("--durations", help="start:stop:num or comma list, seconds")
    sp.add_argument("--detuning", type=float, help="MW detuning, Hz")
    sp.add_argument("--noiseless", action="store_true")

    sp = sub.add_parser("simulate-odmr", parents=[common], help="CW ODMR spectrum")
    sp.add_argument("--power", type=float, help="MW power, W")
    sp.add_argument("--freqs", help="start:stop:step in Hz")
    sp.add_argument("--noiseless", action="store_true")
    sp.add_argument("--counts-out", metavar="PATH", help="also write raw photon counts")

    sp = sub.add_parser("run-sequence", parents=[common], help="simulate a pulse-sequence file")
    sp.add_argument("--sequence", metavar="PATH")
    sp.add_argument("--shot-noise", action="store_true")

    sp = sub.add_parser("fit", parents=[common], help="fit a trace or spectrum CSV")
    sp.add_argument("--in", dest="input", metavar="PATH")
    sp.add_argument("--model", choices=("exponential", "damped-cosine", "lorentzian"), default="exponential")
    sp.add_argument("--n-dips", type=int, default=2)

    sp = sub.add_parser("estimate-c", parents=[common], help="Gd concentration from T1, rate or contrast")
    sp.add_argument("--t1", type=float)
    sp.add_argument("--t1-sigma", type=float)
    sp.add_argument("--t1-ref", type=float)
    sp.add_argument("--t1-ref-sigma", type=float)
    sp.add_argument("--t1-report", metavar="PATH", help="exponential fit report of the sample")
    sp.add_argument("--t1-ref-report", metavar="PATH", help="exponential fit report of the reference")
    sp.add_argument("--rate", type=float, help="Gd-induced relaxation rate, s^-1")
    sp.add_argument("--rate-sigma", type=float)
    sp.add_argument("--contrast", type=float, help="band-average contrast")
    sp.add_argument("--contrast-sigma", type=float)
    sp.add_argument("--curve", metavar="PATH", help="calibration CSV (concentration_mol_per_l,band_contrast)")
    sp.add_argument("--k", type=float, help=f"interval half-width in sigmas (default {INTERVAL_SIGMAS})")

    sp = sub.add_parser("oracle", parents=[common], help="Monte Carlo checks")
    sp.add_argument("--kind", choices=("r6", "field", "ratio", "grid"), default="r6")
    sp.add_argument("--d", type=float, help="depth (default: depth_m)")
    sp.add_argument("--density", type=float, help="number density (default: from concentration)")
    sp.add_argument("--n", help="samples (accepts 1e6)")
    sp.add_argument("--spin", type=float)
    sp.add_argument("--cutoff", type=float)
    sp.add_argument("--sampler", choices=("importance", "uniform"))
    sp.add_argument("--concentrations", help="grid concentrations, mol/L")
    sp.add_argument("--depths", help="grid depths, m")

    sp = sub.add_parser("reproduce", parents=[common], help="figure reproduction with pass/fail summary")
    sp.add_argument("target", help=", ".join(TARGETS))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    opts = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out", "seed", "overrides")}
    try:
        job = JobSpec(args.command, args.config, args.out, args.seed, args.overrides, opts)
    except JobError as exc:
        return _fail(exc.category, exc.code, str(exc))
    return execute(job)


if __name__ == "__main__":
    sys.exit(main())
