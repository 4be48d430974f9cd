"""Repeated-sampling error rates of the pivots.

A one-sided limit misses the true value on the left (psi0 < L_alpha) exactly
when the decreasing pivot evaluated at psi0 exceeds z_{1-alpha}, and on the
right when it falls below -z_{1-alpha}; replicates are classified that way.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import kernels, pivots as pv, streams
from .errors import ConjunctionError, NumericalFailure, ValidationError
from .geometry import ConjunctionParams, DispersionSpec, PlanarParams, spherical_to_state
from .likelihood import LikelihoodContext

DEFAULT_ALPHAS = (0.05, 0.025, 0.005)
DEFAULT_PIVOTS = ("wald", "root", "modified")
MAX_FAILURE_FRACTION = 0.01
# below this |r| the modified root cannot be formed; such replicates are counted as indeterminate
R_MIN = 1e-6
CHUNK = 64


@dataclass(frozen=True)
class PlanarNoise:
    """Planar variances scaled by c2, with the true crossing point scaled by c_prime."""

    variances: tuple
    c2: float = 1.0
    c_prime: float = 1.0

    def __post_init__(self):
        v = tuple(float(x) for x in self.variances)
        if len(v) != 2 or min(v) <= 0:
            raise ValidationError("planar variances must be two positive numbers")
        if self.c2 <= 0 or self.c_prime <= 0:
            raise ValidationError("c2 and c_prime must be positive")
        object.__setattr__(self, "variances", v)

    @property
    def scaled_variances(self):
        return (self.c2 * self.variances[0], self.c2 * self.variances[1])


@dataclass(frozen=True)
class CalibrationConfig:
    truth: object
    noise: object
    replicates: int = 2000
    alphas: tuple = DEFAULT_ALPHAS
    pivots: tuple = DEFAULT_PIVOTS
    seed: int = 0
    mode: str = "six_dim"
    keep_samples: bool = False

    def __post_init__(self):
        if self.mode not in ("six_dim", "planar"):
            raise ValidationError(f"mode must be 'six_dim' or 'planar', got {self.mode!r}")
        if self.replicates < 100:
            raise ValidationError("replicates must be at least 100")
        if not self.alphas or any(not 0 < a < 0.5 for a in self.alphas):
            raise ValidationError("alphas must lie in (0, 0.5)")
        bad = set(self.pivots) - set(DEFAULT_PIVOTS)
        if bad:
            raise ValidationError(f"unknown pivots {sorted(bad)}")
        if self.mode == "six_dim":
            if not isinstance(self.truth, ConjunctionParams) or not isinstance(self.noise, DispersionSpec):
                raise ValidationError("six_dim mode needs ConjunctionParams truth and DispersionSpec noise")
        else:
            if not isinstance(self.truth, PlanarParams) or not isinstance(self.noise, PlanarNoise):
                raise ValidationError("planar mode needs PlanarParams truth and PlanarNoise noise")

    @property
    def psi0(self):
        if self.mode == "planar":
            return self.truth.psi * self.noise.c_prime
        return self.truth.psi


@dataclass
class CalibrationReport:
    """Left/right error rates per (pivot, alpha) with Monte Carlo standard errors."""

    alphas: tuple
    pivots: tuple
    replicates: int
    used: int
    failures: int
    left: dict
    right: dict
    indeterminate: dict
    samples: dict = field(default_factory=dict)

    def standard_error(self, alpha):
        return math.sqrt(alpha * (1.0 - alpha) / self.used)

    def rows(self):
        for kind in self.pivots:
            for a in self.alphas:
                yield kind, a, self.left[kind][a], self.right[kind][a], self.standard_error(a)

    def to_dict(self):
        return {
            "replicates": self.replicates,
            "used": self.used,
            "failures": self.failures,
            "indeterminate": self.indeterminate,
            "alphas": list(self.alphas),
            "rates": {
                kind: {
                    f"{a:.10g}": {"left": self.left[kind][a], "right": self.right[kind][a], "se": self.standard_error(a)}
                    for a in self.alphas
                }
                for kind in self.pivots
            },
        }


def simulate_observation(truth, noise, rng):
    """One draw of the relative state (or planar x) about the truth."""
    if isinstance(truth, ConjunctionParams):
        mean = spherical_to_state(truth)
        cov = noise.covariance if isinstance(noise, DispersionSpec) else np.asarray(noise, float)
        return mean + np.linalg.cholesky(cov) @ rng.standard_normal(mean.size)
    noise = noise if isinstance(noise, PlanarNoise) else PlanarNoise(noise)
    xi = truth.xi * noise.c_prime
    return xi + np.sqrt(noise.scaled_variances) * rng.standard_normal(2)


def _classify(values, alphas, kinds):
    """Counts of pivot > z (left miss) and pivot < -z (right miss)."""
    left, right, indet = {}, {}, {}
    for kind in kinds:
        v = values[kind]
        indet[kind] = int(np.sum(~np.isfinite(v)))
        left[kind], right[kind] = {}, {}
        for a in alphas:
            z = norm.isf(a)
            left[kind][a] = int(np.sum(v > z))
            right[kind][a] = int(np.sum(v < -z))
    return left, right, indet


def _report(values, ok, config):
    used = int(ok.sum())
    failures = config.replicates - used
    if failures > MAX_FAILURE_FRACTION * config.replicates:
        raise NumericalFailure(f"{failures} of {config.replicates} replicates failed; aborting")
    values = {k: v[ok] for k, v in values.items()}
    left, right, indet = _classify(values, config.alphas, config.pivots)
    report = CalibrationReport(
        alphas=tuple(config.alphas),
        pivots=tuple(config.pivots),
        replicates=config.replicates,
        used=used,
        failures=failures,
        left={k: {a: c / used for a, c in d.items()} for k, d in left.items()},
        right={k: {a: c / used for a, c in d.items()} for k, d in right.items()},
        indeterminate=indet,
    )
    if config.keep_samples:
        report.samples = {k: values[k] for k in config.pivots}
    return report


def _six_dim_chunk(args):
    config, start, stop = args
    truth = config.truth
    mean = spherical_to_state(truth)
    chol = np.linalg.cholesky(config.noise.covariance)
    precision = config.noise.precision
    out = np.full((stop - start, 3), np.nan)
    ok = np.zeros(stop - start, dtype=bool)
    for j, i in enumerate(range(start, stop)):
        rng = streams.substream(config.seed, streams.SIX_DIM_COVERAGE, i)
        y = mean + chol @ rng.standard_normal(6)
        try:
            ctx = LikelihoodContext(y, precision)
            fit = ctx.profile_fit(truth.psi)
            ps = pv.pivot_set(truth.psi, ctx, fit, threshold=R_MIN)
        except ConjunctionError:
            continue
        out[j] = (ps.wald, ps.root, ps.modified)
        ok[j] = True
    return out, ok


def _planar_chunk(args):
    config, block, start, stop = args
    noise = config.noise
    xi = config.truth.xi * noise.c_prime
    v1, v2 = noise.scaled_variances
    z = streams.normal_block(config.seed, streams.PLANAR_COVERAGE, block, stop - start, 2)
    x = xi + z * np.sqrt([v1, v2])
    _, w, r, _, rs = kernels.planar_pivots_batch(x[:, 0], x[:, 1], v1, v2, config.psi0, R_MIN)
    return np.column_stack([w, r, rs]), np.isfinite(w) & np.isfinite(r)


def _run(func, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves task order, so the reduction is independent of scheduling
        return list(pool.map(func, tasks))


def _collect(results, config):
    vals = np.concatenate([r[0] for r in results])
    ok = np.concatenate([r[1] for r in results])
    values = {"wald": vals[:, 0], "root": vals[:, 1], "modified": vals[:, 2]}
    return _report(values, ok, config)


def default_workers():
    env = os.environ.get("MISSDISTANCE_WORKERS")
    return int(env) if env else 1


def coverage_experiment(config, workers=None):
    """Six-dimensional coverage study: one substream per replicate, pivots at the true psi."""
    if config.mode != "six_dim":
        return planar_coverage_experiment(config, workers)
    workers = default_workers() if workers is None else workers
    tasks = [(config, s, min(s + CHUNK, config.replicates)) for s in range(0, config.replicates, CHUNK)]
    return _collect(_run(_six_dim_chunk, tasks, workers), config)


def planar_coverage_experiment(config, workers=None):
    """Encounter-plane coverage study using the closed-form pivots; draws come in fixed blocks."""
    if config.mode != "planar":
        raise ValidationError("planar_coverage_experiment needs a planar config")
    workers = default_workers() if workers is None else workers
    tasks = [(config, b, s, e) for b, (s, e) in enumerate(streams.block_ranges(config.replicates))]
    return _collect(_run(_planar_chunk, tasks, workers), config)


def qq_export(config, workers=None):
    """Sorted pivot values at the truth paired with standard normal plotting positions."""
    cfg = CalibrationConfig(**{**config.__dict__, "keep_samples": True})
    report = coverage_experiment(cfg, workers)
    out = {}
    for kind, vals in report.samples.items():
        v = np.sort(vals[np.isfinite(vals)])
        n = v.size
        out[kind] = (norm.ppf((np.arange(1, n + 1) - 0.5) / n), v)
    return out
