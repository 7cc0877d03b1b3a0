"""Monte Carlo check of the half-space dipolar relaxation model.

Positions are importance-sampled with density proportional to 1/r^6 on the
shell d <= r <= cutoff around the sensor (radius from p(r) ~ r^-4, isotropic
direction); samples below the liquid interface (z < d) score zero. Each Gd
spin is a classical vector of length sqrt(S(S+1)) with uniformly random
orientation, so <m_i m_j> = S(S+1)/3 delta_ij as for a quantum spin.

Angular convention: the sensor axis is the surface normal (z). Both
transverse components B_x and B_y of the dipole field count towards the
relaxation-driving field, i.e. B_perp^2 = B_x^2 + B_y^2, and the rate is
Gamma_MC = (2 pi gamma_e)^2 <B_perp^2> S_Gd(2 pi D_gs) with no further factor.
The ratio to the closed-form rate is reported, not forced to 1.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .measurement import child_seed, rng_for
from .physics import CONSTANTS, BathParams, SensorParams, gd_relaxation_rate, spectral_density

BATCH = 200_000


@dataclass(frozen=True)
class McConfig:
    depth: float
    number_density: float
    n_samples: int = 1_000_000
    seed: int = 0
    cutoff_radius: float | None = None
    sampler: str = "importance"

    def __post_init__(self):
        if not self.depth > 0:
            raise DomainError("depth must be positive")
        if self.n_samples < 1000:
            raise DomainError("n_samples must be >= 1000")
        if self.cutoff_radius is None:
            object.__setattr__(self, "cutoff_radius", 1000.0 * self.depth)
        if self.cutoff_radius < 10 * self.depth:
            raise DomainError("cutoff_radius must be >= 10 * depth")
        if self.sampler not in ("importance", "uniform"):
            raise DomainError(f"unknown sampler {self.sampler!r}")

    @classmethod
    def from_concentration(cls, depth: float, concentration: float, **kw) -> McConfig:
        return cls(depth, 1e3 * CONSTANTS.n_avogadro * concentration, **kw)


@dataclass
class McResult:
    estimate: float
    stderr: float
    n_samples: int
    seed: int
    config: dict

    def to_text(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


class _Accumulator:
    """Streaming mean / M2 with Chan's parallel merge."""

    def __init__(self):
        self.n, self.mean, self.m2 = 0, 0.0, 0.0

    def add(self, x):
        n_b = x.size
        mean_b = float(np.mean(x))
        m2_b = float(np.sum((x - mean_b) ** 2))
        n = self.n + n_b
        delta = mean_b - self.mean
        self.mean += delta * n_b / n
        self.m2 += m2_b + delta * delta * self.n * n_b / n
        self.n = n

    @property
    def stderr(self):
        return math.sqrt(self.m2 / (self.n - 1) / self.n) if self.n > 1 else math.inf


def halfspace_r6_exact(d: float, cutoff: float = math.inf) -> float:
    """Integral of r^-6 over {z >= d, r <= cutoff}."""
    inv = 0.0 if math.isinf(cutoff) else 1.0 / cutoff
    return 2 * math.pi * ((d**-3 - inv**3) / 3 - d * (d**-4 - inv**4) / 4)


def _batches(cfg: McConfig):
    done, idx = 0, 0
    while done < cfg.n_samples:
        n = min(BATCH, cfg.n_samples - done)
        yield idx, n
        done += n
        idx += 1


def _sample_importance(rng, n, d, cutoff):
    """Points with density r^-6 / Z on d <= r <= cutoff; returns (xyz, r, Z)."""
    u = rng.random(n)
    a, b = d**-3, cutoff**-3
    r = (a - u * (a - b)) ** (-1 / 3)
    cos_t = 2 * rng.random(n) - 1
    phi = 2 * math.pi * rng.random(n)
    sin_t = np.sqrt(1 - cos_t**2)
    xyz = np.column_stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t]) * r[:, None]
    z_norm = 4 * math.pi / 3 * (a - b)
    return xyz, r, z_norm


def _sample_uniform(rng, n, d, cutoff):
    """Uniform points in the box [-c, c]^2 x [d, c]; returns (xyz, r, volume)."""
    lo = np.array([-cutoff, -cutoff, d])
    hi = np.array([cutoff, cutoff, cutoff])
    xyz = lo + (hi - lo) * rng.random((n, 3))
    return xyz, np.linalg.norm(xyz, axis=1), float(np.prod(hi - lo))


def _check_cutoff(cfg: McConfig, stderr_rel: float):
    bias = 1 - halfspace_r6_exact(cfg.depth, cfg.cutoff_radius) / halfspace_r6_exact(cfg.depth)
    if bias > stderr_rel:
        warnings.warn(
            f"cutoff {cfg.cutoff_radius:.3g} m truncates the integral by {bias:.2e} (relative), "
            f"above the statistical error {stderr_rel:.2e}",
            RuntimeWarning,
            stacklevel=3,
        )


def halfspace_inverse_r6(cfg: McConfig) -> McResult:
    """MC estimate of the integral of r^-6 over the half space z >= d (target pi / (6 d^3))."""
    acc = _Accumulator()
    for idx, n in _batches(cfg):
        rng = rng_for(cfg.seed, idx)
        if cfg.sampler == "importance":
            xyz, r, z_norm = _sample_importance(rng, n, cfg.depth, cfg.cutoff_radius)
            acc.add(z_norm * (xyz[:, 2] >= cfg.depth))
        else:
            xyz, r, vol = _sample_uniform(rng, n, cfg.depth, cfg.cutoff_radius)
            acc.add(vol * np.where(r <= cfg.cutoff_radius, r**-6.0, 0.0))
    _check_cutoff(cfg, acc.stderr / acc.mean if acc.mean else math.inf)
    return McResult(acc.mean, acc.stderr, cfg.n_samples, cfg.seed, asdict(cfg))


def _random_unit(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1)[:, None]


def mc_rms_transverse_field(cfg: McConfig, spin_S: float, gamma_gd: float) -> McResult:
    """MC estimate of <B_perp^2> (T^2) from a uniform density of randomly oriented spins."""
    if not spin_S > 0:
        raise DomainError("spin_S must be positive")
    moment = CONSTANTS.hbar * 2 * math.pi * gamma_gd * math.sqrt(spin_S * (spin_S + 1))
    pref = (CONSTANTS.mu0 / (4 * math.pi) * moment) ** 2 * cfg.number_density
    acc = _Accumulator()
    for idx, n in _batches(cfg):
        rng = rng_for(cfg.seed, idx)
        if cfg.sampler == "importance":
            xyz, r, z_norm = _sample_importance(rng, n, cfg.depth, cfg.cutoff_radius)
            weight = z_norm * r**6 * (xyz[:, 2] >= cfg.depth)
        else:
            xyz, r, vol = _sample_uniform(rng, n, cfg.depth, cfg.cutoff_radius)
            weight = vol * (r <= cfg.cutoff_radius)
        m = _random_unit(rng, n)
        rhat = xyz / r[:, None]
        field = (3 * np.sum(m * rhat, axis=1)[:, None] * rhat - m) / (r**3)[:, None]
        acc.add(pref * weight * (field[:, 0] ** 2 + field[:, 1] ** 2))
    return McResult(acc.mean, acc.stderr, cfg.n_samples, cfg.seed, dict(asdict(cfg), spin_S=spin_S, gamma_gd=gamma_gd))


GD_SPIN = 3.5


def mc_gamma_ratio(cfg: McConfig, s: SensorParams, b: BathParams, spin_S: float = GD_SPIN) -> McResult:
    """Gamma_MC / closed-form rate, with the MC standard error propagated.

    ``cfg.number_density`` must match ``b.concentration``.
    """
    expected = 1e3 * CONSTANTS.n_avogadro * b.concentration
    if not math.isclose(cfg.number_density, expected, rel_tol=1e-9):
        raise DomainError("number_density does not match the bath concentration")
    if not math.isclose(cfg.depth, s.depth, rel_tol=1e-12):
        raise DomainError("MC depth does not match the sensor depth")
    field = mc_rms_transverse_field(cfg, spin_S, b.gamma_gd)
    factor = (2 * math.pi * s.gamma_e) ** 2 * spectral_density(2 * math.pi * s.d_gs, b)
    closed = gd_relaxation_rate(s, b)
    cfg_echo = dict(field.config, gamma_mc=factor * field.estimate, gamma_closed_form=closed)
    return McResult(factor * field.estimate / closed, factor * field.stderr / closed, cfg.n_samples, cfg.seed, cfg_echo)


GRID_COLUMNS = (
    "concentration_mol_per_l",
    "depth_m",
    "b_perp_sq_t2",
    "b_perp_sq_stderr",
    "gamma_mc_per_s",
    "gamma_mc_stderr",
    "collapse",
    "collapse_stderr",
    "ratio",
    "ratio_stderr",
)


def scaling_grid(concentrations, depths, s: SensorParams, n_samples=200_000, seed=0, spin_S=GD_SPIN):
    """Rows over the (C, d) grid, one independent seed per cell.

    ``collapse`` is Gamma_MC d^3 / (C S_Gd(2 pi D)), i.e. <B_perp^2> d^3 / C up to
    constants. The spectral factor is divided out because omega_Gd itself
    depends on C; with it left in, Gamma_MC d^3 / C drifts with C by design.
    """
    rows = []
    i = 0
    for c in concentrations:
        if not c > 0:
            raise DomainError("grid concentrations must be positive")
        for d in depths:
            sd = s.replace(depth=d)
            b = BathParams.for_field(c, s.b_field)
            cfg = McConfig.from_concentration(d, c, n_samples=n_samples, seed=child_seed(seed, i))
            field = mc_rms_transverse_field(cfg, spin_S, b.gamma_gd)
            spec = spectral_density(2 * math.pi * s.d_gs, b)
            factor = (2 * math.pi * s.gamma_e) ** 2 * spec
            closed = gd_relaxation_rate(sd, b)
            g, ge = factor * field.estimate, factor * field.stderr
            scale = d**3 / (c * spec)
            rows.append((c, d, field.estimate, field.stderr, g, ge, g * scale, ge * scale, g / closed, ge / closed))
            i += 1
    return rows
