"""Gaussian mass of the hard-body disk in the encounter plane and the plug-in bias study."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, streams
from .errors import DegenerateGeometry, NumericalFailure, ValidationError
from .geometry import EncounterFrame

PC_TOL = 1e-10
PC_MAX_NODES = 1 << 20

DEFAULT_SCALE_GRID = (0.005, 0.01, 0.05, 0.1, 0.2, 0.5, 0.8, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0)
SUMMARY_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def _variances(obj):
    if isinstance(obj, EncounterFrame):
        obj = obj.planar_variances
    v = np.asarray(obj, float).reshape(-1)
    if v.shape != (2,) or not np.all(v > 0) or not np.all(np.isfinite(v)):
        raise ValidationError(f"planar variances must be two positive numbers, got {obj!r}")
    return float(v[0]), float(v[1])


@dataclass(frozen=True)
class DiskIntegralSpec:
    """Disk of given radius about the origin; Gaussian with ``center`` and diagonal ``variances``."""

    center: tuple
    variances: tuple
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, float).reshape(-1)
        if c.shape != (2,) or not np.all(np.isfinite(c)):
            raise ValidationError("center must be a finite 2-vector")
        object.__setattr__(self, "center", (float(c[0]), float(c[1])))
        object.__setattr__(self, "variances", _variances(self.variances))
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValidationError("radius must be positive and finite")


def pc_disk(spec):
    """Probability that the planar crossing point falls within ``spec.radius`` of the origin.

    Polar quadrature: the radial integral along each ray is closed-form, and the
    angular integral uses the periodic trapezoidal rule, doubled until successive
    estimates agree to 1e-10.  Values below 1e-300 are returned as 0.
    """
    v1, v2 = spec.variances
    prob, _, ok = kernels.pc_disk_batch([spec.center[0]], [spec.center[1]], v1, v2, spec.radius, PC_TOL, PC_MAX_NODES)
    if not ok[0]:
        raise NumericalFailure(f"disk quadrature did not converge within {PC_MAX_NODES} nodes")
    return float(prob[0])


def pc_batch(centers, variances, radius):
    """Vectorised :func:`pc_disk` over an ``(n, 2)`` array of centers."""
    centers = np.asarray(centers, float).reshape(-1, 2)
    v1, v2 = _variances(variances)
    if not radius > 0:
        raise ValidationError("radius must be positive")
    prob, _, ok = kernels.pc_disk_batch(centers[:, 0], centers[:, 1], v1, v2, float(radius), PC_TOL, PC_MAX_NODES)
    if not np.all(ok):
        raise NumericalFailure(f"disk quadrature did not converge for {int(np.sum(~ok))} centers")
    return prob


def pc_estimate(x, frame_or_variances, radius):
    """Plug-in estimator p_c(x): the disk mass with the observation as center."""
    return pc_disk(DiskIntegralSpec(tuple(np.asarray(x, float)), _variances(frame_or_variances), radius))


def expected_norm_excess(xi, variances):
    """Large-psi approximation of E||x|| - psi, namely psi*sqrt(1 + (d1^2 + d2^2)/psi^2) - psi."""
    psi = float(np.hypot(*np.asarray(xi, float)))
    if psi == 0:
        raise DegenerateGeometry("excess undefined at psi = 0")
    v = np.asarray(variances, float)
    if np.any(v < 0):
        raise ValidationError("variances must be non-negative")
    total = float(v.sum())
    # psi*(sqrt(1+t)-1) written to avoid cancellation for small t
    t = total / psi**2
    return psi * t / (math.sqrt(1.0 + t) + 1.0)


@dataclass(frozen=True)
class BiasStudyConfig:
    xi: tuple
    base_variances: tuple
    radius: float
    scale_grid: tuple = DEFAULT_SCALE_GRID
    replicates: int = 20000
    seed: int = 0
    quantiles: tuple = SUMMARY_QUANTILES
    thresholds: tuple = (1e-4,)

    def __post_init__(self):
        object.__setattr__(self, "xi", tuple(float(v) for v in np.asarray(self.xi, float).reshape(2)))
        object.__setattr__(self, "base_variances", _variances(self.base_variances))
        object.__setattr__(self, "scale_grid", tuple(float(c) for c in self.scale_grid))
        if not self.scale_grid or any(c <= 0 for c in self.scale_grid):
            raise ValidationError("scale_grid entries must be positive")
        if self.replicates < 1:
            raise ValidationError("replicates must be at least 1")
        if not self.radius > 0:
            raise ValidationError("radius must be positive")


@dataclass(frozen=True)
class BiasSummary:
    c2: float
    pc_truth: float
    mean: float
    quantiles: dict
    fraction_below: dict = field(default_factory=dict)

    @property
    def median(self):
        return self.quantiles[0.5]


def bias_study(config):
    """Distribution of p_c(x) for x ~ N2(xi, c^2 D) at each scale c^2.

    The same standard-normal draws are reused across scales, so the summaries
    for different c^2 are directly comparable.
    """
    v1, v2 = config.base_variances
    z = streams.normal_draws(config.seed, streams.BIAS_STUDY, config.replicates, 2)
    xi = np.asarray(config.xi)
    qs = sorted(set(config.quantiles) | {0.5})
    out = []
    for c2 in config.scale_grid:
        sd = np.sqrt(c2 * np.array([v1, v2]))
        x = xi + z * sd
        pcx = pc_batch(x, (c2 * v1, c2 * v2), config.radius)
        truth = pc_disk(DiskIntegralSpec(config.xi, (c2 * v1, c2 * v2), config.radius))
        qv = np.quantile(pcx, qs)
        out.append(
            BiasSummary(
                c2=c2,
                pc_truth=truth,
                mean=float(pcx.mean()),
                quantiles={q: float(v) for q, v in zip(qs, qv)},
                fraction_below={t: float(np.mean(pcx < t)) for t in config.thresholds},
            )
        )
    return out
