"""Gaussian log-likelihoods for the relative state, profile fits and observed information.

Both models are curved Gaussian families ``y ~ N(eta(theta), Omega^-1)`` with
``theta[0]`` the miss distance and ``theta[1:]`` the nuisance parameters, so
the profile machinery is shared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .errors import DegenerateGeometry, NonConvergence, SingularInformation, ValidationError
from .geometry import (
    SIN_BETA_MIN,
    ConjunctionParams,
    DispersionSpec,
    PlanarParams,
    RelativeState,
    normalize_angles,
    unit_vector,
    state_to_spherical,
    wrap_angle,
)

GRAD_TOL = 1e-8
MAX_ITER = 500
RESTARTS = 5
FD_STEP = 1e-6


def _units(theta, phi):
    """Unit vectors and their angle derivatives, vectorised over leading axes."""
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    u = np.stack([st * cp, st * sp, ct], axis=-1)
    u_t = np.stack([ct * cp, ct * sp, -st], axis=-1)
    u_p = np.stack([-st * sp, st * cp, np.zeros_like(st)], axis=-1)
    return u, u_t, u_p


def eta_6d(theta):
    """Mean of the 6-D observation at parameter(s) ``theta`` (shape ``(..., 6)``)."""
    theta = np.asarray(theta, float)
    psi, t1, p1, s, t2, p2 = np.moveaxis(theta, -1, 0)
    u1, _, _ = _units(t1, p1)
    u2, _, _ = _units(t2, p2)
    sin_beta = np.linalg.norm(np.cross(u1, u2), axis=-1)
    if np.any((sin_beta < SIN_BETA_MIN) & (psi > 0)):
        raise DegenerateGeometry("sin(beta) vanishes with psi > 0")
    scale = np.divide(psi, sin_beta, out=np.zeros_like(sin_beta), where=psi > 0)
    return np.concatenate([scale[..., None] * u1, s[..., None] * u2], axis=-1)


def jacobian_6d(theta):
    """Analytic 6x6 Jacobian d eta / d theta, rows (mu, nu), columns (psi, theta1, phi1, speed, theta2, phi2)."""
    theta = np.asarray(theta, float)
    psi, t1, p1, s, t2, p2 = np.moveaxis(theta, -1, 0)
    u1, u1t, u1p = _units(t1, p1)
    u2, u2t, u2p = _units(t2, p2)
    c = np.sum(u1 * u2, axis=-1)
    sb = np.linalg.norm(np.cross(u1, u2), axis=-1)
    if np.any(sb < SIN_BETA_MIN):
        raise DegenerateGeometry("sin(beta) vanishes; Jacobian undefined")
    m = psi / sb
    # d(1/S)/dc = c/S^3, so d mu = m du1 + u1 * psi * c / S^3 * dc
    k = (psi * c / sb**3)[..., None]
    dc = [
        np.sum(u1t * u2, axis=-1),
        np.sum(u1p * u2, axis=-1),
        np.sum(u1 * u2t, axis=-1),
        np.sum(u1 * u2p, axis=-1),
    ]
    jac = np.zeros(theta.shape[:-1] + (6, 6))
    jac[..., :3, 0] = u1 / sb[..., None]
    jac[..., :3, 1] = m[..., None] * u1t + k * u1 * dc[0][..., None]
    jac[..., :3, 2] = m[..., None] * u1p + k * u1 * dc[1][..., None]
    jac[..., :3, 4] = k * u1 * dc[2][..., None]
    jac[..., :3, 5] = k * u1 * dc[3][..., None]
    jac[..., 3:, 3] = u2
    jac[..., 3:, 4] = s[..., None] * u2t
    jac[..., 3:, 5] = s[..., None] * u2p
    return jac


def eta_planar(theta):
    theta = np.asarray(theta, float)
    psi, lam = theta[..., 0], theta[..., 1]
    return np.stack([psi * np.cos(lam), psi * np.sin(lam)], axis=-1)


def jacobian_planar(theta):
    theta = np.asarray(theta, float)
    psi, lam = theta[..., 0], theta[..., 1]
    c, s = np.cos(lam), np.sin(lam)
    return np.stack([np.stack([c, -psi * s], axis=-1), np.stack([s, psi * c], axis=-1)], axis=-2)


@dataclass
class ProfileFit:
    """Constrained maximum of the log-likelihood at fixed ``psi``."""

    psi: float
    lambda_hat: np.ndarray
    loglik: float
    info_lambda: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float = 0.0
    decrement: float = 0.0

    @property
    def theta(self):
        return np.concatenate([[self.psi], self.lambda_hat])


class _CurvedGaussian:
    """Shared machinery for ``y ~ N(eta(theta), Omega^-1)``; subclasses supply eta and its Jacobian."""

    observation: np.ndarray
    precision: np.ndarray

    # -- model hooks -------------------------------------------------------
    def eta(self, theta):
        raise NotImplementedError

    def jacobian(self, theta):
        raise NotImplementedError

    def mle(self):
        raise NotImplementedError

    def normalize(self, theta):
        return np.asarray(theta, float)

    def feasible(self, theta):
        return True

    def initial_nuisance(self, psi):
        return self.mle()[1:]

    def restart_nuisance(self, psi, rng, base):
        return base + rng.normal(scale=0.3, size=base.shape)

    # -- likelihood quantities ---------------------------------------------
    @property
    def dim(self):
        return self.observation.size

    def residual(self, theta):
        return self.observation - self.eta(theta)

    def loglik(self, theta):
        e = self.residual(theta)
        return -0.5 * float(e @ self.precision @ e)

    def eta_hessian(self, theta):
        """Second derivatives d2 eta_k / d theta_a d theta_b, shape ``(n, p, p)``, by central differences of the Jacobian."""
        theta = np.asarray(theta, float)
        p = theta.size
        h = FD_STEP * np.maximum(1.0, np.abs(theta))
        pts = np.concatenate([theta + np.diag(h), theta - np.diag(h)])
        jac = self.jacobian(pts)
        d2 = (jac[:p] - jac[p:]) / (2.0 * h)[:, None, None]  # (b, k, a)
        d2 = np.transpose(d2, (1, 2, 0))
        return 0.5 * (d2 + np.transpose(d2, (0, 2, 1)))

    def score(self, theta):
        return self.jacobian(theta).T @ self.precision @ self.residual(theta)

    def observed_information(self, theta, residual=None):
        """j(theta) = J' Omega J - sum_k (Omega e)_k d2 eta_k, with e = y - eta(theta)."""
        theta = np.asarray(theta, float)
        jac = self.jacobian(theta)
        e = self.residual(theta) if residual is None else residual
        info = jac.T @ self.precision @ jac
        we = self.precision @ e
        if np.any(we):
            info = info - np.einsum("k,kab->ab", we, self.eta_hessian(theta))
        return 0.5 * (info + info.T)

    def mle_information(self):
        """j at the overall MLE, where the residual vanishes."""
        theta = self.mle()
        jac = self.jacobian(theta)
        info = jac.T @ self.precision @ jac
        return 0.5 * (info + info.T)

    # -- profile optimisation ----------------------------------------------
    def _objective(self, psi, lam):
        theta = np.concatenate([[psi], lam])
        if not self.feasible(theta):
            return math.inf, None
        try:
            e = self.residual(theta)
        except DegenerateGeometry:
            return math.inf, None
        return 0.5 * float(e @ self.precision @ e), e

    def _newton(self, psi, lam, tol, max_iter):
        """Damped Newton on -loglik over the nuisance block.

        Uses the observed nuisance information when it is positive definite and
        the Gauss-Newton matrix otherwise.  Returns (lam, f, converged, iterations,
        grad_norm, decrement).
        """
        f, e = self._objective(psi, lam)
        if not math.isfinite(f):
            return lam, f, False, 0, math.inf, math.inf
        mu = 0.0
        dec = grad_norm = math.inf
        for it in range(1, max_iter + 1):
            theta = np.concatenate([[psi], lam])
            jl = self.jacobian(theta)[:, 1:]
            gn = jl.T @ self.precision @ jl
            g = -(jl.T @ (self.precision @ e))
            we = self.precision @ e
            hess = gn - np.einsum("k,kab->ab", we, self.eta_hessian(theta)[:, 1:, 1:]) if np.any(we) else gn
            hess = 0.5 * (hess + hess.T)
            try:
                np.linalg.cholesky(hess)
                model = hess
            except np.linalg.LinAlgError:
                model = gn
            grad_norm = float(np.linalg.norm(g))
            try:
                newton = -np.linalg.solve(model, g)
            except np.linalg.LinAlgError:
                # unidentified directions (psi = 0) carry no gradient; use the minimum-norm step
                newton = -np.linalg.lstsq(model, g, rcond=1e-12)[0]
            dec = math.sqrt(max(0.0, -float(g @ newton)))
            if dec < tol or grad_norm == 0.0:
                if model is hess and grad_norm > 0.0:
                    # the final Newton step is nearly free and squares the remaining error
                    f_new, e_new = self._objective(psi, lam + newton)
                    if f_new <= f + 1e-12 * (1.0 + abs(f)):
                        lam, f = lam + newton, f_new
                return lam, f, True, it, grad_norm, dec
            scale = np.maximum(np.diag(gn), 1e-12 * max(1.0, float(np.max(np.diag(gn)))))
            accepted = False
            for _ in range(60):
                if mu == 0.0:
                    step = newton
                else:
                    try:
                        step = -np.linalg.solve(model + mu * np.diag(scale), g)
                    except np.linalg.LinAlgError:
                        mu = max(4.0 * mu, 1e-6)
                        continue
                f_new, e_new = self._objective(psi, lam + step)
                # near the optimum the decrease is below rounding; accept Newton steps there
                if f_new < f or (dec < 1e-4 and mu == 0.0 and f_new <= f + 1e-12 * (1.0 + abs(f))):
                    lam, f, e = lam + step, f_new, e_new
                    mu = 0.0 if mu < 1e-10 else mu / 4.0
                    accepted = True
                    break
                mu = max(4.0 * mu, 1e-6)
            if not accepted:
                return lam, f, False, it, grad_norm, dec
        return lam, f, False, max_iter, grad_norm, dec

    def profile_fit(self, psi, init=None, tol=GRAD_TOL, max_iter=MAX_ITER, restarts=RESTARTS):
        """Maximise the log-likelihood over the nuisance parameters at fixed ``psi``."""
        if not psi >= 0:
            raise ValidationError("psi must be non-negative")
        psi = float(psi)
        start = np.asarray(self.initial_nuisance(psi) if init is None else init, float)
        best = None
        for attempt in range(restarts + 1):
            if attempt == 0:
                lam0 = start
            else:
                rng = streams.substream(attempt, streams.RESTARTS, int(psi * 1e6) % (1 << 31))
                lam0 = self.restart_nuisance(psi, rng, start)
            lam, f, ok, it, gnorm, dec = self._newton(psi, lam0, tol, max_iter)
            if best is None or f < best[1] or (ok and not best[2]):
                best = (lam, f, ok, it, gnorm, dec)
            if ok:
                break
        lam, f, ok, it, gnorm, dec = best
        if not ok:
            raise NonConvergence(
                f"profile fit at psi={psi:g} did not converge (decrement {dec:.3g})",
                psi=psi,
                best=np.concatenate([[psi], lam]),
                grad_norm=gnorm,
            )
        theta = self.normalize(np.concatenate([[psi], lam]))
        info = self.observed_information(theta)
        return ProfileFit(
            psi=psi,
            lambda_hat=theta[1:],
            loglik=self.loglik(theta),
            info_lambda=info[1:, 1:],
            converged=True,
            iterations=it,
            grad_norm=gnorm,
            decrement=dec,
        )

    def mle_fit(self):
        theta = self.mle()
        info = self.mle_information()
        return ProfileFit(theta[0], theta[1:], self.loglik(theta), info[1:, 1:], True, 0)


def _polar(v):
    n = np.linalg.norm(v)
    return math.acos(min(1.0, max(-1.0, v[2] / n))), wrap_angle(math.atan2(v[1], v[0]))


def _frame_rotation(direction):
    """Orthogonal Q with Q @ direction/|direction| = e_x."""
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    k = int(np.argmin(np.abs(d)))
    p = np.zeros(3)
    p[k] = 1.0
    p = p - (p @ d) * d
    p /= np.linalg.norm(p)
    return np.vstack([d, p, np.cross(d, p)])


class _MissDistanceChart(_CurvedGaussian):
    """Smooth chart for profile fits: mu = a u + psi (cos w b1 + sin w b2), nu = s u.

    ``u`` has spherical angles (theta, phi) and (b1, b2) is the spherical frame
    orthogonal to it.  Unlike the angles of mu, this chart stays regular as psi -> 0.
    The data are rotated so the observed velocity points along the x axis, far
    from the poles of the frame.
    """

    def __init__(self, observation, precision):
        self.rotation = _frame_rotation(observation[3:])
        block = np.kron(np.eye(2), self.rotation)
        self._block = block
        self.observation = block @ observation
        self.precision = block @ precision @ block.T

    @staticmethod
    def _frame(theta, phi):
        u, u_t, u_p = _units(theta, phi)
        b2 = np.stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)], axis=-1)
        return u, u_t, b2

    def eta(self, theta):
        theta = np.asarray(theta, float)
        psi, a, w, s, t, p = np.moveaxis(theta, -1, 0)
        u, b1, b2 = self._frame(t, p)
        e = np.cos(w)[..., None] * b1 + np.sin(w)[..., None] * b2
        mu = a[..., None] * u + psi[..., None] * e
        return np.concatenate([mu, s[..., None] * u], axis=-1)

    def jacobian(self, theta):
        theta = np.asarray(theta, float)
        psi, a, w, s, t, p = np.moveaxis(theta, -1, 0)
        u, b1, b2 = self._frame(t, p)
        cw, sw = np.cos(w)[..., None], np.sin(w)[..., None]
        st, ct = np.sin(t)[..., None], np.cos(t)[..., None]
        db2_p = np.stack([-np.cos(p), -np.sin(p), np.zeros_like(p)], axis=-1)
        ps, a_, s_ = psi[..., None], a[..., None], s[..., None]
        jac = np.zeros(theta.shape[:-1] + (6, 6))
        jac[..., :3, 0] = cw * b1 + sw * b2
        jac[..., :3, 1] = u
        jac[..., :3, 2] = ps * (-sw * b1 + cw * b2)
        # d b1/d theta = -u, d b1/d phi = cos(theta) b2, d u/d phi = sin(theta) b2
        jac[..., :3, 4] = a_ * b1 - ps * cw * u
        jac[..., :3, 5] = a_ * st * b2 + ps * (cw * ct * b2 + sw * db2_p)
        jac[..., 3:, 3] = u
        jac[..., 3:, 4] = s_ * b1
        jac[..., 3:, 5] = s_ * st * b2
        return jac

    def coordinates(self, state):
        """Chart nuisance (a, w, s, theta, phi) of a rotated state, keeping its direction of closest approach."""
        mu, nu = state[:3], state[3:]
        s = float(np.linalg.norm(nu))
        t, p = _polar(nu)
        u, b1, b2 = self._frame(np.array(t), np.array(p))
        a = float(mu @ u)
        perp = mu - a * u
        w = math.atan2(float(perp @ b2), float(perp @ b1))
        return np.array([a, w, s, t, p])

    def mle(self):
        state = self.observation
        lam = self.coordinates(state)
        u = unit_vector(lam[3], lam[4])
        psi = float(np.linalg.norm(state[:3] - (state[:3] @ u) * u))
        return np.concatenate([[psi], lam])

    def restart_nuisance(self, psi, rng, base):
        out = base.copy()
        out[1] += rng.uniform(-math.pi, math.pi)
        out[[3, 4]] += rng.normal(scale=0.05, size=2)
        return out

    def feasible(self, theta):
        return theta[3] > 0

    def to_state(self, theta):
        """State in the original frame."""
        return self._block.T @ self.eta(theta)


@dataclass
class LikelihoodContext(_CurvedGaussian):
    """Six-dimensional relative-state observation with precision matrix Omega."""

    observation: np.ndarray
    precision: np.ndarray
    _mle: np.ndarray = field(default=None, init=False, repr=False)
    _chart: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.observation = np.asarray(self.observation, float).reshape(6)
        prec = np.asarray(self.precision, float)
        if prec.shape != (6, 6):
            raise ValidationError("precision must be 6x6")
        if np.max(np.abs(prec - prec.T)) > 1e-10 * np.max(np.abs(prec)):
            raise ValidationError("precision is not symmetric")
        prec = 0.5 * (prec + prec.T)
        if np.linalg.eigvalsh(prec)[0] <= 0:
            raise ValidationError("precision is not positive definite")
        self.precision = prec

    @classmethod
    def from_state(cls, state, dispersion):
        if not isinstance(state, RelativeState):
            state = RelativeState.from_vector(state)
        if not isinstance(dispersion, DispersionSpec):
            dispersion = DispersionSpec(dispersion)
        return cls(state.as_vector(), dispersion.precision)

    def eta(self, theta):
        return eta_6d(theta)

    def jacobian(self, theta):
        return jacobian_6d(theta)

    def mle(self):
        if self._mle is None:
            self._mle = state_to_spherical(RelativeState.from_vector(self.observation)).as_array()
        return self._mle

    def feasible(self, theta):
        return theta[3] > 0

    def normalize(self, theta):
        t = np.array(theta, float)
        t[1], t[2] = normalize_angles(t[1], t[2])
        t[4], t[5] = normalize_angles(t[4], t[5])
        return t

    @property
    def chart(self):
        if self._chart is None:
            self._chart = _MissDistanceChart(self.observation, self.precision)
        return self._chart

    def profile_fit(self, psi, init=None, tol=GRAD_TOL, max_iter=MAX_ITER, restarts=RESTARTS):
        """Constrained fit, computed in the regular chart and reported in spherical parameters."""
        if not psi >= 0:
            raise ValidationError("psi must be non-negative")
        chart = self.chart
        if init is None:
            start = chart.mle()[1:]
        else:
            state = chart._block @ eta_6d(np.concatenate([[psi], np.asarray(init, float)]))
            start = chart.coordinates(state)
        cfit = _CurvedGaussian.profile_fit(chart, psi, init=start, tol=tol, max_iter=max_iter, restarts=restarts)
        state = chart.to_state(cfit.theta)
        if psi == 0:
            # boundary: the spherical chart is singular, report the limit from the regular chart
            theta = np.empty(6)
            theta[0] = 0.0
            direction = state[:3] if np.any(state[:3]) else state[3:]
            theta[1:3] = _polar(direction)
            theta[3] = np.linalg.norm(state[3:])
            theta[4:6] = _polar(state[3:])
            loglik, info_lambda = cfit.loglik, np.full((5, 5), np.nan)
        else:
            theta = state_to_spherical(RelativeState.from_vector(state)).as_array()
            theta[0] = psi
            theta = self.normalize(theta)
            loglik = self.loglik(theta)
            info_lambda = self.observed_information(theta)[1:, 1:]
        return ProfileFit(
            psi=float(psi),
            lambda_hat=theta[1:],
            loglik=loglik,
            info_lambda=info_lambda,
            converged=True,
            iterations=cfit.iterations,
            grad_norm=cfit.grad_norm,
            decrement=cfit.decrement,
        )


@dataclass
class PlanarLikelihoodContext(_CurvedGaussian):
    """Encounter-plane observation x ~ N2((psi cos lam, psi sin lam), diag(d1^2, d2^2))."""

    observation: np.ndarray
    variances: tuple
    precision: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.observation = np.asarray(self.observation, float).reshape(2)
        v = np.asarray(self.variances, float).reshape(2)
        if not np.all(v > 0):
            raise ValidationError("planar variances must be positive")
        self.variances = (float(v[0]), float(v[1]))
        self.precision = np.diag(1.0 / v)

    def eta(self, theta):
        return eta_planar(theta)

    def jacobian(self, theta):
        return jacobian_planar(theta)

    def eta_hessian(self, theta):
        psi, lam = float(theta[0]), float(theta[1])
        c, s = math.cos(lam), math.sin(lam)
        # d2/dpsi2 = 0, d2/dpsi dlam = (-s, c), d2/dlam2 = -psi (c, s)
        return np.array([[[0.0, -s], [-s, -psi * c]], [[0.0, c], [c, -psi * s]]])

    def mle(self):
        x1, x2 = self.observation
        return np.array([math.hypot(x1, x2), math.atan2(x2, x1)])

    def normalize(self, theta):
        t = np.array(theta, float)
        t[1] = wrap_angle(t[1])
        return t

    def _scan_peaks(self, psi, n=64):
        lam = self.mle()[1] + np.linspace(-math.pi, math.pi, n, endpoint=False)
        vals = np.array([self.loglik(np.array([psi, a])) for a in lam])
        peaks = np.flatnonzero((vals >= np.roll(vals, 1)) & (vals >= np.roll(vals, -1)))
        return lam[peaks[np.argsort(-vals[peaks])]]

    def initial_nuisance(self, psi):
        return np.array([self._scan_peaks(psi)[0]])

    def profile_fit(self, psi, init=None, **kwargs):
        """Constrained fit; without ``init`` every local peak of an angle scan is polished.

        Under strong anisotropy the constrained objective has two narrow peaks in the
        angle and a coarse scan alone can rank them wrongly.
        """
        if init is not None or not psi > 0:
            return super().profile_fit(psi, init=init, **kwargs)
        fits = [super(PlanarLikelihoodContext, self).profile_fit(psi, init=[a], **kwargs)
                for a in self._scan_peaks(psi)[:4]]
        return max(fits, key=lambda f: f.loglik)

    def restart_nuisance(self, psi, rng, base):
        return base + rng.uniform(-math.pi, math.pi, size=1)


def loglik_6d(params, ctx):
    theta = params.as_array() if isinstance(params, ConjunctionParams) else np.asarray(params, float)
    return ctx.loglik(theta)


def loglik_planar(params, ctx):
    theta = np.array([params.psi, params.lam]) if isinstance(params, PlanarParams) else np.asarray(params, float)
    return ctx.loglik(theta)


def loglik_multi(psi, nuisances, observations):
    """Sum of per-epoch six-dimensional log-likelihoods sharing the miss distance."""
    if not nuisances or len(nuisances) != len(observations):
        raise ValidationError("nuisances and observations must be non-empty and of equal length")
    total = 0.0
    for lam, obs in zip(nuisances, observations):
        ctx = obs if isinstance(obs, LikelihoodContext) else LikelihoodContext(*obs)
        total += ctx.loglik(np.concatenate([[psi], np.asarray(lam, float)]))
    return total


def eta_jacobian(params):
    theta = params.as_array() if isinstance(params, ConjunctionParams) else np.asarray(params, float)
    return jacobian_6d(theta)


def observed_information(params, ctx):
    theta = params.as_array() if isinstance(params, ConjunctionParams) else np.asarray(params, float)
    return ctx.observed_information(theta)


def profile_fit(psi, ctx, init=None):
    return ctx.profile_fit(psi, init=init)


def profile_information(fit, ctx):
    """Profile information |j| / |j_lamlam| at the constrained fit, via the Schur complement."""
    info = ctx.observed_information(fit.theta)
    return schur_psi(info)


def schur_psi(info):
    """j_psipsi - j_psilam j_lamlam^-1 j_lampsi, which equals |j| / |j_lamlam|."""
    jll = info[1:, 1:]
    scale = np.sqrt(np.abs(np.diag(jll)))
    if np.any(scale == 0):
        raise SingularInformation("nuisance information has a zero diagonal entry")
    corr = jll / np.outer(scale, scale)
    sign, logdet = np.linalg.slogdet(corr)
    if sign <= 0 or logdet < -600:
        raise SingularInformation("nuisance information is singular")
    sol = np.linalg.solve(jll, info[1:, 0])
    return float(info[0, 0] - info[0, 1:] @ sol)
