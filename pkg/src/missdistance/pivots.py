"""Approximate pivots for the miss distance: Wald, likelihood root, modified likelihood root.

All pivots are oriented so that they decrease in ``psi`` and vanish (w, r) at the
maximum likelihood estimate; the significance probability for ``H0: psi = psi0``
against larger values is ``1 - Phi(pivot(psi0))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import kernels
from .errors import Indeterminate, InvalidProfile, SingularInformation, ValidationError
from .likelihood import ProfileFit, schur_psi

EXCLUSION = 0.1
LOGLIK_SLACK = 1e-10

PIVOT_KINDS = ("wald", "root", "modified", "modified_bayes")


@dataclass(frozen=True)
class PivotSet:
    psi: float
    wald: float
    root: float
    correction: float
    modified: float
    modified_bayes: float | None = None

    def get(self, kind):
        return getattr(self, kind)


@dataclass(frozen=True)
class PriorSpec:
    """Prior on the full parameter: ``"flat"`` or ``"jeffreys"`` (proportional to |det d eta/d theta|)."""

    kind: str = "jeffreys"

    def __post_init__(self):
        if self.kind not in ("flat", "jeffreys"):
            raise ValidationError(f"unsupported prior {self.kind!r}")

    def log_density(self, theta, ctx):
        if self.kind == "flat":
            return 0.0
        sign, logdet = np.linalg.slogdet(ctx.jacobian(np.asarray(theta, float)))
        if sign == 0:
            raise SingularInformation("Jeffreys prior vanishes at this parameter")
        return float(logdet)


def _sign(x):
    return 1.0 if x > 0 else (-1.0 if x < 0 else 0.0)


def profile_information_at_mle(ctx):
    """j_p(psi_hat) from the information at the overall MLE."""
    return schur_psi(ctx.mle_information())


def wald(psi, ctx, jp_hat=None):
    """w(psi) = j_p(psi_hat)^{1/2} (psi_hat - psi)."""
    if jp_hat is None:
        jp_hat = profile_information_at_mle(ctx)
    if not jp_hat > 0:
        raise SingularInformation("profile information at the MLE is not positive")
    return math.sqrt(jp_hat) * (ctx.mle()[0] - psi)


def likelihood_root(profile, ctx, loglik_hat=None):
    """Signed root of twice the drop in log-likelihood from the MLE to the constrained fit."""
    theta_hat = ctx.mle()
    if loglik_hat is None:
        loglik_hat = ctx.loglik(theta_hat)
    drop = loglik_hat - profile.loglik
    if drop < -LOGLIK_SLACK * max(1.0, abs(loglik_hat)):
        raise InvalidProfile(f"constrained log-likelihood exceeds the maximum by {-drop:.3g}")
    return _sign(theta_hat[0] - profile.psi) * math.sqrt(max(drop, 0.0) * 2.0)


def _logdet_pd(mat, what):
    sign, logdet = np.linalg.slogdet(mat)
    if sign <= 0:
        raise SingularInformation(f"{what} is not positive definite")
    return logdet


def q_frequentist(profile, ctx, sign=None):
    """Correction q for the curved Gaussian model.

    |y - eta(theta_psi), eta_lambda(theta_psi)| |Omega|^{1/2} / |j_lamlam(theta_psi)|^{1/2};
    the magnitude is returned with the sign of ``sign`` (the likelihood root).
    """
    theta = profile.theta
    jac = ctx.jacobian(theta)
    mat = np.column_stack([ctx.observation - ctx.eta(theta), jac[:, 1:]])
    _, logdet_num = np.linalg.slogdet(mat)
    logdet_omega = _logdet_pd(ctx.precision, "precision")
    logdet_jll = _logdet_pd(profile.info_lambda, "nuisance information")
    q = math.exp(logdet_num + 0.5 * logdet_omega - 0.5 * logdet_jll) if np.isfinite(logdet_num) else 0.0
    if sign is None:
        sign = _sign(ctx.mle()[0] - profile.psi)
    return _sign(sign) * q


def q_tem(profile, ctx, transform=None):
    """Correction q from a constructed parameter phi = G eta + a (default phi = eta).

    Ratio |phi(theta_hat) - phi(theta_psi), phi_lambda(theta_psi)| / |phi_theta(theta_hat)|
    times |j(theta_hat)|^{1/2} / |j_lamlam(theta_psi)|^{1/2}, with signs kept.
    """
    theta_hat = ctx.mle()
    theta = profile.theta
    g = np.eye(ctx.dim) if transform is None else np.asarray(transform[0], float)
    diff = g @ (ctx.eta(theta_hat) - ctx.eta(theta))
    num = np.linalg.det(np.column_stack([diff, g @ ctx.jacobian(theta)[:, 1:]]))
    den = np.linalg.det(g @ ctx.jacobian(theta_hat))
    logdet_j = _logdet_pd(ctx.mle_information(), "information at the MLE")
    logdet_jll = _logdet_pd(profile.info_lambda, "nuisance information")
    return num / den * math.exp(0.5 * (logdet_j - logdet_jll))


def canonical_transform(ctx):
    """G = -eta_theta(theta_hat)' Omega and a = eta_theta(theta_hat)' Omega y: the canonical parameter of the tangent model."""
    jac = ctx.jacobian(ctx.mle())
    g = -jac.T @ ctx.precision
    a = jac.T @ ctx.precision @ ctx.observation
    return g, a


def modified_root(root, correction, threshold=EXCLUSION):
    """r* = r + log(q/r)/r."""
    if abs(root) < threshold:
        raise Indeterminate(f"|r| = {abs(root):.3g} is below the exclusion threshold {threshold:g}")
    ratio = correction / root
    if not ratio > 0:
        raise Indeterminate("q/r is not positive")
    return root + math.log(ratio) / root


def q_bayes(profile, ctx, prior=None):
    """Bayesian correction l_psi(theta_psi) |j_lamlam(theta_psi)|^{1/2} / |j(theta_hat)|^{1/2} f(theta_hat)/f(theta_psi).

    The derivative of the profile log-likelihood is the partial derivative at the
    constrained fit, since the nuisance score vanishes there.
    """
    prior = PriorSpec("jeffreys") if prior is None else prior
    theta = profile.theta
    theta_hat = ctx.mle()
    score_psi = float(ctx.score(theta)[0])
    logdet_jll = _logdet_pd(profile.info_lambda, "nuisance information")
    logdet_j = _logdet_pd(ctx.mle_information(), "information at the MLE")
    log_prior_ratio = prior.log_density(theta_hat, ctx) - prior.log_density(theta, ctx)
    return score_psi * math.exp(0.5 * (logdet_jll - logdet_j) + log_prior_ratio)


def pivot_set(psi, ctx, fit=None, jp_hat=None, prior=None, threshold=EXCLUSION, bayes=False):
    """All pivots at ``psi`` from a (possibly supplied) constrained fit.

    ``modified`` is NaN when ``|r|`` is below ``threshold``.
    """
    if fit is None:
        fit = ctx.profile_fit(psi)
    w = wald(psi, ctx, jp_hat)
    r = likelihood_root(fit, ctx)
    q = q_frequentist(fit, ctx, sign=r)
    try:
        rs = modified_root(r, q, threshold)
    except Indeterminate:
        rs = math.nan
    rb = None
    if bayes:
        try:
            rb = modified_root(r, q_bayes(fit, ctx, prior), threshold)
        except Indeterminate:
            rb = math.nan
    return PivotSet(float(psi), w, r, q, rs, rb)


@dataclass(frozen=True)
class RayleighPivots:
    wald: float
    root: float
    correction: float
    modified: float
    exact_tail: float

    def tails(self):
        """Upper-tail probabilities 1 - Phi(pivot) for (wald, root, modified) and the exact value."""
        return {
            "wald": float(norm.sf(self.wald)),
            "root": float(norm.sf(self.root)),
            "modified": float(norm.sf(self.modified)),
            "exact": self.exact_tail,
        }


def rayleigh_pivots(psi, y_obs):
    """Pivots for one Rayleigh observation with scale ``psi``.

    The MLE is y/sqrt(2) with information 4/psi_hat^2; the exact significance
    against larger scales is Pr(Y >= y) = exp(-y^2 / (2 psi^2)).
    """
    if not (psi > 0 and y_obs > 0):
        raise ValidationError("psi and y_obs must be positive")
    psi_hat = y_obs / math.sqrt(2.0)
    w = 2.0 * (1.0 - psi / psi_hat)
    ratio = psi_hat / psi
    dev = 2.0 * (2.0 * math.log(psi / psi_hat) + ratio * ratio - 1.0)
    r = _sign(psi_hat - psi) * math.sqrt(max(dev, 0.0))
    # tangent-model q is psi_hat^2/psi^2 - 1, which carries the sign of r
    q = ratio * ratio - 1.0
    rs = modified_root(r, q, threshold=1e-8) if r != 0 else math.nan
    return RayleighPivots(w, r, q, rs, math.exp(-y_obs * y_obs / (2.0 * psi * psi)))


def planar_pivots(psi, x, variances, r_min=EXCLUSION):
    """Closed-form pivots for the encounter-plane model with known velocity."""
    x = np.asarray(x, float)
    v1, v2 = (float(v) for v in variances)
    if not (v1 > 0 and v2 > 0):
        raise ValidationError("variances must be positive")
    if psi < 0:
        raise ValidationError("psi must be non-negative")
    _, w, r, q, rs = kernels.planar_pivots_batch(x[0], x[1], v1, v2, float(psi), r_min)
    return PivotSet(float(psi), float(w), float(r), float(q), float(rs))


def planar_pivots_array(psi, x, variances, r_min=EXCLUSION):
    """Vectorised planar pivots; returns dict of arrays keyed by pivot kind plus ``lam``."""
    x = np.asarray(x, float)
    lam, w, r, q, rs = kernels.planar_pivots_batch(x[..., 0], x[..., 1], variances[0], variances[1], psi, r_min)
    return {"lam": lam, "wald": w, "root": r, "correction": q, "modified": rs}
