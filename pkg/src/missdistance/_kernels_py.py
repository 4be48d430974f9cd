"""Pure-numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` function for function and are used when the
compiled extension is unavailable (or ``MISSDISTANCE_PURE_PYTHON=1``).
"""

import numpy as np
from scipy.special import erfc

TWO_PI = 2.0 * np.pi
SQRT2 = np.sqrt(2.0)
TINY_PROB = 1e-300
_LAMBDA_GRID = 32


def _normal_mass(lower, upper):
    """Phi(upper) - Phi(lower) without cancellation in either tail."""
    left = lower > 0
    out = np.empty(np.broadcast(lower, upper).shape)
    # both limits in the upper tail: difference of upper-tail areas
    out[left] = 0.5 * (erfc(lower[left] / SQRT2) - erfc(upper[left] / SQRT2))
    out[~left] = 0.5 * (erfc(-upper[~left] / SQRT2) - erfc(-lower[~left] / SQRT2))
    return out


def _ray_integrand(theta, cx, cy, var1, var2, radius):
    """Gaussian mass along the ray at angle theta, integrated in closed form over [0, radius].

    Returns the radial integral of rho * exp(-Q/2) (density normalisation excluded).
    """
    ct, st = np.cos(theta), np.sin(theta)
    a = ct * ct / var1 + st * st / var2
    b = cx * ct / var1 + cy * st / var2
    k = cx * cx / var1 + cy * cy / var2
    m = b / a
    sa = np.sqrt(a)
    term1 = (np.exp(-0.5 * k) - np.exp(-0.5 * (a * radius * radius - 2.0 * b * radius + k))) / a
    perp = np.maximum(k - b * m, 0.0)
    mass = _normal_mass(-sa * m, sa * (radius - m))
    term2 = np.exp(-0.5 * perp) * m * np.sqrt(TWO_PI) / sa * mass
    return term1 + term2


def pc_disk_batch(cx, cy, var1, var2, radius, tol=1e-10, max_nodes=1 << 20):
    """Probability that N2((cx, cy), diag(var1, var2)) falls in the disk of given radius.

    Periodic trapezoidal rule over the polar angle with nested doubling.
    Returns ``(prob, nodes, converged)`` arrays.
    """
    cx = np.atleast_1d(np.asarray(cx, float))
    cy = np.atleast_1d(np.asarray(cy, float))
    n = cx.size
    var1 = np.broadcast_to(np.asarray(var1, float), (n,))
    var2 = np.broadcast_to(np.asarray(var2, float), (n,))
    norm = 1.0 / (TWO_PI * np.sqrt(var1 * var2))

    nodes = 8
    theta = np.arange(nodes) * (TWO_PI / nodes)
    f = _ray_integrand(theta[None, :], cx[:, None], cy[:, None], var1[:, None], var2[:, None], radius)
    total = f.sum(axis=1)
    est = total * (TWO_PI / nodes) * norm
    used = np.full(n, nodes, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    while nodes < max_nodes and not done.all():
        act = np.flatnonzero(~done)
        mid = (np.arange(nodes) + 0.5) * (TWO_PI / nodes)
        fm = _ray_integrand(
            mid[None, :], cx[act, None], cy[act, None], var1[act, None], var2[act, None], radius
        )
        total[act] += fm.sum(axis=1)
        nodes *= 2
        new = total[act] * (TWO_PI / nodes) * norm[act]
        conv = np.abs(new - est[act]) < tol
        est[act] = new
        used[act] = nodes
        done[act[conv]] = True
    est = np.clip(est, 0.0, 1.0)
    est[est < TINY_PROB] = 0.0
    return est, used, done


def _profile_objective(lam, x1, x2, var1, var2, psi):
    e1 = x1 - psi * np.cos(lam)
    e2 = x2 - psi * np.sin(lam)
    return e1 * e1 / var1 + e2 * e2 / var2


def _profile_slope(lam, x1, x2, var1, var2, psi):
    """h(lam) with d/dlam of the objective equal to 2*psi*h; also returns dh/dlam."""
    c, s = np.cos(lam), np.sin(lam)
    k = 1.0 / var2 - 1.0 / var1
    h = x1 * s / var1 - x2 * c / var2 + psi * s * c * k
    dh = x1 * c / var1 + x2 * s / var2 + psi * (c * c - s * s) * k
    return h, dh


def profile_angle(x1, x2, var1, var2, psi):
    """Constrained estimate lambda_psi minimising the planar sum of squares for each psi."""
    x1, x2, var1, var2, psi = np.broadcast_arrays(*(np.asarray(v, float) for v in (x1, x2, var1, var2, psi)))
    lam_hat = np.arctan2(x2, x1)
    # the minimiser shares the quadrant of x, where the objective has a single stationary point
    base = np.where(x2 >= 0, np.where(x1 >= 0, 0.0, 0.5 * np.pi), np.where(x1 >= 0, -0.5 * np.pi, -np.pi))
    step = 0.5 * np.pi / _LAMBDA_GRID
    offsets = (np.arange(_LAMBDA_GRID) + 0.5) * step
    cand = base[..., None] + offsets
    vals = _profile_objective(cand, x1[..., None], x2[..., None], var1[..., None], var2[..., None], psi[..., None])
    best = np.take_along_axis(cand, np.argmin(vals, axis=-1)[..., None], axis=-1)[..., 0]
    lo, hi = best - step, best + step
    hlo, _ = _profile_slope(lo, x1, x2, var1, var2, psi)
    hhi, _ = _profile_slope(hi, x1, x2, var1, var2, psi)
    bracketed = (hlo < 0) & (hhi > 0)
    lam = best.copy()
    for _ in range(80):
        h, dh = _profile_slope(lam, x1, x2, var1, var2, psi)
        neg = h < 0
        lo = np.where(neg & bracketed, lam, lo)
        hi = np.where(~neg & bracketed, lam, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = lam - h / dh
        outside = ~np.isfinite(newton) | (newton <= lo) | (newton >= hi) | (dh <= 0)
        new = np.where(outside & bracketed, 0.5 * (lo + hi), newton)
        new = np.where(~bracketed & ~np.isfinite(new), lam, new)
        delta = np.abs(new - lam)
        lam = new
        if np.all(delta <= 1e-15 * (1.0 + np.abs(lam))):
            break
    lam = np.where(psi == 0, lam_hat, lam)
    return (lam + np.pi) % (2.0 * np.pi) - np.pi


def planar_pivots_batch(x1, x2, var1, var2, psi, r_min=1e-8):
    """Closed-form planar pivots at each (x, psi).

    Returns ``(lam_psi, w, r, q, rstar)``; ``q`` carries the sign of ``r`` and
    ``rstar`` is NaN where ``|r| < r_min``.
    """
    x1, x2, var1, var2, psi = np.broadcast_arrays(*(np.asarray(v, float) for v in (x1, x2, var1, var2, psi)))
    lam = profile_angle(x1, x2, var1, var2, psi)
    psi_hat = np.hypot(x1, x2)
    lam_hat = np.arctan2(x2, x1)
    c, s = np.cos(lam), np.sin(lam)
    e1, e2 = x1 - psi * c, x2 - psi * s
    g = e1 * e1 / var1 + e2 * e2 / var2
    sgn = np.sign(psi_hat - psi)
    r = sgn * np.sqrt(g)
    w = (psi_hat - psi) / np.sqrt(var1 * np.cos(lam_hat) ** 2 + var2 * np.sin(lam_hat) ** 2)
    cos2 = c * c - s * s
    den2 = var2 * (x1 * c - psi * cos2) + var1 * (x2 * s + psi * cos2)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.sqrt(psi) * np.abs(x1 * c + x2 * s - psi) / np.sqrt(den2)
        q = sgn * q
        rstar = r + np.log(q / r) / r
    rstar = np.where(np.abs(r) < r_min, np.nan, rstar)
    return lam, w, r, q, rstar
