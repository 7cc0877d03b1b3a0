"""Photon shot-noise synthesis and contrast statistics.

Random numbers come from numpy's PCG64 bit generator. A seed is expanded with
``numpy.random.SeedSequence``; independent streams for parallel tasks use the
entropy pair ``(seed, task_index)`` (see :func:`rng_for`). PCG64 output for a
given SeedSequence is stable across platforms and numpy versions >= 1.17.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptySelectionError, UndefinedRatioError
from .protocols import OdmrSpectrum, TimeTrace

BAND = (3.40e9, 3.45e9)


def rng_for(seed: int, task: int | None = None) -> np.random.Generator:
    """Seeded PCG64 generator; ``task`` selects an independent child stream."""
    entropy = seed if task is None else [seed, task]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def child_seed(seed: int, index: int) -> int:
    """Independent integer seed for sub-task ``index`` of a seeded job."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass(frozen=True)
class CountRecord:
    signal_counts: int
    reference_counts: int
    duration: float
    seed: int

    def __post_init__(self):
        if self.signal_counts < 0 or self.reference_counts < 0:
            raise DomainError("counts must be >= 0")
        if not self.duration > 0:
            raise DomainError("duration must be positive")


def sample_photons(rate: float, duration: float, seed: int, size=None):
    """Poisson photon counts for a mean of ``rate * duration``."""
    if rate < 0:
        raise DomainError(f"negative count rate {rate}")
    if duration < 0:
        raise DomainError(f"negative duration {duration}")
    draws = rng_for(seed).poisson(rate * duration, size=size)
    return int(draws) if size is None else draws


def contrast_estimate(rec: CountRecord) -> tuple[float, float]:
    """signal/reference - 1 with first-order Poisson error propagation."""
    s, r = float(rec.signal_counts), float(rec.reference_counts)
    if r == 0:
        raise UndefinedRatioError("reference_counts is zero")
    return s / r - 1.0, math.sqrt(s / r**2 + s * s / r**3)


def _contrast_arrays(sig, ref):
    sig = np.asarray(sig, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if np.any(ref == 0):
        raise UndefinedRatioError("reference count of zero in spectrum")
    return sig / ref - 1.0, np.sqrt(sig / ref**2 + sig**2 / ref**3)


def add_shot_noise(trace: TimeTrace, counts_per_point: float, seed: int) -> TimeTrace:
    """Poisson realization of a normalized trace with ``counts_per_point`` at signal 1."""
    rng = rng_for(seed)
    mean = np.clip(trace.signal, 0, None) * counts_per_point
    counts = rng.poisson(mean).astype(float)
    sigma = np.sqrt(np.maximum(counts, 1.0)) / counts_per_point
    meta = dict(trace.meta, counts_per_point=counts_per_point, seed=seed)
    return TimeTrace(trace.abscissa, counts / counts_per_point, sigma, meta)


def measure_odmr(
    spec: OdmrSpectrum,
    pl_rate: float,
    integration_time: float,
    seed: int,
    dark_rate: float = 0.0,
) -> tuple[OdmrSpectrum, list[CountRecord]]:
    """Count MW-on and MW-off photons at every frequency and re-estimate contrast.

    Dark counts add to both channels and therefore dilute the contrast.
    """
    if pl_rate < 0 or dark_rate < 0:
        raise DomainError("rates must be >= 0")
    rng = rng_for(seed)
    on = rng.poisson((pl_rate * (1.0 + spec.contrast) + dark_rate) * integration_time)
    off = rng.poisson(np.full(spec.contrast.shape, (pl_rate + dark_rate) * integration_time))
    c, sig = _contrast_arrays(on, off)
    records = [CountRecord(int(a), int(b), integration_time, seed) for a, b in zip(on, off)]
    return OdmrSpectrum(spec.frequency, c, sig, spec.mw_power), records


def expected_sigma(spec: OdmrSpectrum, pl_rate: float, integration_time: float, dark_rate: float = 0.0) -> OdmrSpectrum:
    """Attach the shot-noise standard error implied by a count budget, without sampling."""
    on = (pl_rate * (1.0 + spec.contrast) + dark_rate) * integration_time
    off = np.full(spec.contrast.shape, (pl_rate + dark_rate) * integration_time)
    _, sig = _contrast_arrays(on, off)
    return OdmrSpectrum(spec.frequency, spec.contrast, sig, spec.mw_power)


def band_average_contrast(spec: OdmrSpectrum, f_lo: float = BAND[0], f_hi: float = BAND[1]) -> tuple[float, float]:
    """Unweighted mean contrast over [f_lo, f_hi] and its standard error."""
    sel = (spec.frequency >= f_lo) & (spec.frequency <= f_hi)
    n = int(sel.sum())
    if n == 0:
        raise EmptySelectionError(f"no frequency points in [{f_lo:.6g}, {f_hi:.6g}] Hz")
    mean = float(np.mean(spec.contrast[sel]))
    stderr = float(math.sqrt(np.sum(spec.sigma[sel] ** 2)) / n)
    return mean, stderr
