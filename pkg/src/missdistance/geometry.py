"""Relative-state geometry: spherical parametrisation, miss distance, encounter plane.

All quantities are stored in metres and metres per second.  Constructors that
read case-study inputs accept ``"km"``/``"km/s"`` unit tags and convert.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, NumericalFailure, ValidationError

SIN_BETA_MIN = 1e-12

_LENGTH = {"m": 1.0, "km": 1e3}
_SPEED = {"m/s": 1.0, "km/s": 1e3}


def length_scale(unit):
    try:
        return _LENGTH[unit]
    except KeyError:
        raise ValidationError(f"unknown length unit {unit!r}; expected one of {sorted(_LENGTH)}") from None


def speed_scale(unit):
    try:
        return _SPEED[unit]
    except KeyError:
        raise ValidationError(f"unknown speed unit {unit!r}; expected one of {sorted(_SPEED)}") from None


def _vec3(values, name):
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValidationError(f"{name} must have 3 components, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite components")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RelativeState:
    """Observed relative position (m) and velocity (m/s) of the secondary object."""

    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position, "position"))
        object.__setattr__(self, "velocity", _vec3(self.velocity, "velocity"))
        if not np.linalg.norm(self.velocity) > 0:
            raise ValidationError("velocity norm must be strictly positive")

    @classmethod
    def from_units(cls, position, velocity, position_unit="m", velocity_unit="m/s"):
        return cls(
            np.asarray(position, float) * length_scale(position_unit),
            np.asarray(velocity, float) * speed_scale(velocity_unit),
        )

    @classmethod
    def from_vector(cls, y):
        y = np.asarray(y, float)
        return cls(y[:3], y[3:6])

    def as_vector(self):
        return np.concatenate([self.position, self.velocity])


@dataclass(frozen=True)
class DispersionSpec:
    """6x6 covariance of the relative state, blocks ordered (position, velocity)."""

    covariance: np.ndarray

    def __post_init__(self):
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (6, 6):
            raise ValidationError(f"covariance must be 6x6, got {cov.shape}")
        if not np.all(np.isfinite(cov)):
            raise ValidationError("covariance has non-finite entries")
        scale = np.max(np.abs(cov))
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise ValidationError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        eig = np.linalg.eigvalsh(cov)
        if eig[0] <= 0:
            raise ValidationError(f"covariance is not positive definite (smallest eigenvalue {eig[0]:.3g})")
        cov.setflags(write=False)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def from_sigma_tau(cls, sigma2, tau, unit="km"):
        """Isotropic blocks P1 = tau*sigma2*I, P2 = sigma2*I, P12 = 0.

        ``sigma2`` is in ``unit``^2 (velocity block in (unit/s)^2).
        """
        if sigma2 <= 0 or tau <= 0:
            raise ValidationError("sigma2 and tau must be positive")
        s = length_scale(unit) ** 2
        cov = np.zeros((6, 6))
        cov[:3, :3] = tau * sigma2 * s * np.eye(3)
        cov[3:, 3:] = sigma2 * s * np.eye(3)
        return cls(cov)

    @classmethod
    def from_blocks(cls, p1, p2, p12=None):
        p12 = np.zeros((3, 3)) if p12 is None else np.asarray(p12, float)
        cov = np.block([[np.asarray(p1, float), p12], [p12.T, np.asarray(p2, float)]])
        return cls(cov)

    @property
    def position_block(self):
        return self.covariance[:3, :3]

    @property
    def velocity_block(self):
        return self.covariance[3:, 3:]

    @property
    def cross_block(self):
        return self.covariance[:3, 3:]

    @property
    def precision(self):
        prec = np.linalg.inv(self.covariance)
        return 0.5 * (prec + prec.T)


@dataclass(frozen=True)
class ConjunctionParams:
    """Interest parameter ``psi`` (m) and nuisance angles/speed of the linear-motion model."""

    psi: float
    theta1: float
    phi1: float
    speed: float
    theta2: float
    phi2: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValidationError("parameters must be finite")
        if self.psi < 0:
            raise ValidationError("psi must be non-negative")
        if self.speed <= 0:
            raise ValidationError("speed must be positive")

    def as_array(self):
        return np.array([self.psi, self.theta1, self.phi1, self.speed, self.theta2, self.phi2], dtype=float)

    @classmethod
    def from_array(cls, theta):
        t = np.asarray(theta, float)
        return cls(*(float(v) for v in t))

    @property
    def nuisance(self):
        return self.as_array()[1:]

    @property
    def cos_beta(self):
        return float(unit_vector(self.theta1, self.phi1) @ unit_vector(self.theta2, self.phi2))

    @property
    def position_norm(self):
        s = math.sqrt(max(0.0, 1.0 - self.cos_beta**2))
        if self.psi == 0:
            return 0.0
        if s < SIN_BETA_MIN:
            raise DegenerateGeometry("sin(beta) vanishes with psi > 0")
        return self.psi / s


@dataclass(frozen=True)
class PlanarParams:
    """Polar coordinates of the encounter-plane crossing point."""

    psi: float
    lam: float

    @property
    def xi(self):
        return np.array([self.psi * math.cos(self.lam), self.psi * math.sin(self.lam)])


@dataclass(frozen=True)
class EncounterFrame:
    """Orthogonal frame A = (CV, nu/|nu|) diagonalising the projected position covariance."""

    rotation: np.ndarray
    planar_variances: tuple

    @property
    def planar_basis(self):
        return self.rotation[:, :2]

    @property
    def d(self):
        return np.sqrt(np.asarray(self.planar_variances))


def unit_vector(theta, phi):
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def wrap_angle(phi):
    """Map an azimuth into [-pi, pi)."""
    return (phi + math.pi) % (2.0 * math.pi) - math.pi


def normalize_angles(theta, phi):
    """Return (theta, phi) with theta in [0, pi] and phi in [-pi, pi) describing the same direction."""
    t = theta % (2.0 * math.pi)
    if t > math.pi:
        t = 2.0 * math.pi - t
        phi = phi + math.pi
    return t, wrap_angle(phi)


def _polar_angles(v):
    n = np.linalg.norm(v)
    theta = math.acos(min(1.0, max(-1.0, v[2] / n)))
    phi = wrap_angle(math.atan2(v[1], v[0]))
    return theta, phi


def miss_distance(mu, nu):
    """Closest approach of the line mu + t*nu to the origin."""
    mu = np.asarray(mu, float)
    nu = np.asarray(nu, float)
    nn = float(nu @ nu)
    if not nn > 0:
        raise DegenerateGeometry("relative velocity has zero norm")
    mm = float(mu @ mu)
    if mm == 0.0:
        return 0.0
    cos_beta = float(mu @ nu) / math.sqrt(mm * nn)
    cos_beta = min(1.0, max(-1.0, cos_beta))
    # sqrt(1 - c^2) loses digits when c ~ +-1; use the cross product instead
    cross = np.cross(mu, nu)
    sin_beta = math.sqrt(float(cross @ cross) / (mm * nn))
    return math.sqrt(mm) * abs(sin_beta)


def spherical_to_state(params):
    """Mean vector eta(theta) = (mu, nu) of the six-dimensional observation."""
    u1 = unit_vector(params.theta1, params.phi1)
    u2 = unit_vector(params.theta2, params.phi2)
    nu = params.speed * u2
    if params.psi == 0:
        return np.concatenate([np.zeros(3), nu])
    sin_beta = np.linalg.norm(np.cross(u1, u2))
    if sin_beta < SIN_BETA_MIN:
        raise DegenerateGeometry(f"|sin beta| = {sin_beta:.3g} with psi = {params.psi:g} > 0")
    return np.concatenate([(params.psi / sin_beta) * u1, nu])


def state_to_spherical(state):
    """Overall MLE: the parametrisation is a smooth bijection, so eta(theta_hat) = y."""
    mu, nu = state.position, state.velocity
    speed = float(np.linalg.norm(nu))
    if speed == 0:
        raise DegenerateGeometry("relative velocity has zero norm")
    theta2, phi2 = _polar_angles(nu)
    if not np.any(mu):
        return ConjunctionParams(0.0, 0.0, 0.0, speed, theta2, phi2)
    theta1, phi1 = _polar_angles(mu)
    psi = miss_distance(mu, nu)
    if psi / np.linalg.norm(mu) < SIN_BETA_MIN:
        raise DegenerateGeometry("position and velocity are collinear")
    return ConjunctionParams(psi, theta1, phi1, speed, theta2, phi2)


def _plane_basis(nu):
    """Columns spanning the plane orthogonal to ``nu`` (first two columns of BN)."""
    n1, n2, n3 = nu
    b1 = np.array([0.0, n3, -n2])
    b2 = np.array([n2 * n2 + n3 * n3, -n1 * n2, -n1 * n3])
    if np.linalg.norm(b1) < 1e-8 * np.linalg.norm(nu):
        # nu along the x axis: the construction collapses, use the y and z axes
        b1 = np.array([0.0, 1.0, 0.0])
        b2 = np.cross(b1, nu)
    return np.column_stack([b1 / np.linalg.norm(b1), b2 / np.linalg.norm(b2)])


def _orient(vectors):
    """Fix eigenvector signs: largest-magnitude component of each column positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        k = np.argmax(np.abs(out[:, j]))
        if out[k, j] < 0:
            out[:, j] = -out[:, j]
    return out


def encounter_frame(nu, position_covariance):
    """Frame whose first two axes diagonalise the projected position covariance.

    ``position_covariance`` is the 3x3 position block of the dispersion
    (a :class:`DispersionSpec` is also accepted).  Planar variances are
    returned in decreasing order.
    """
    nu = np.asarray(nu, float)
    speed = np.linalg.norm(nu)
    if not speed > 0:
        raise DegenerateGeometry("relative velocity has zero norm")
    if isinstance(position_covariance, DispersionSpec):
        position_covariance = position_covariance.position_block
    p1 = np.asarray(position_covariance, float)
    if p1.shape != (3, 3):
        raise ValidationError("position covariance must be 3x3")
    c = _plane_basis(nu)
    m = c.T @ p1 @ c
    m = 0.5 * (m + m.T)
    try:
        evals, evecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"spectral decomposition failed: {exc}") from exc
    if evals[0] <= 0:
        raise ValidationError("projected position covariance is not positive definite")
    order = np.argsort(evals)[::-1]
    evals, v = evals[order], _orient(evecs[:, order])
    a = np.column_stack([c @ v, nu / speed])
    return EncounterFrame(rotation=a, planar_variances=(float(evals[0]), float(evals[1])))


def project_state(y, frame):
    """Encounter-plane coordinates x = (CV)^T y of a position vector."""
    return frame.planar_basis.T @ np.asarray(y, float)
