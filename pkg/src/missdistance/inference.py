"""Grid-based significance functions, confidence intervals and decisions.

Workflow: evaluate the pivots on a non-uniform grid of psi values around the
MLE, drop points where the modified root is numerically unreliable (|r| small
or implausibly large r*), interpolate psi as a cubic spline in the pivot value,
and polish each inversion with secant steps on the true pivot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.stats import norm

from . import pivots as pv
from .collision_probability import pc_estimate
from .errors import InvalidLosses, NonConvergence, NumericalFailure, OutOfRange, ValidationError
from .likelihood import PlanarLikelihoodContext

DEFAULT_POINTS = 80
REFINE_TOL = 1e-4
OUTLIER_FACTOR = 3.0


@dataclass(frozen=True)
class LossTable:
    """Losses for (act, event): l10 evasive action without collision course, l01 collision without action, l11 both."""

    l01: float
    l10: float
    l11: float = 0.0

    def __post_init__(self):
        if min(self.l01, self.l10, self.l11) < 0:
            raise InvalidLosses("losses must be non-negative")
        if not self.l10 + self.l01 - self.l11 > 0:
            raise InvalidLosses("l10 + l01 - l11 must be positive")


def decision_threshold(losses):
    """Posterior probability of psi <= psi0 above which evasive action is preferred."""
    if not isinstance(losses, LossTable):
        losses = LossTable(**losses)
    return losses.l10 / (losses.l10 + losses.l01 - losses.l11)


def build_grid(psi_hat, se, alpha, n_points=DEFAULT_POINTS):
    """Grid on [max(psi_hat - z se, 0), psi_hat + z se] with z = z_{1-alpha}.

    Nodes are lo + (hi - lo) t^p for uniform t; p is close to 2 and chosen so
    psi_hat is a node, which makes spacing increase with psi.
    """
    if not se > 0:
        raise ValidationError("standard error must be positive")
    if n_points < 20:
        raise ValidationError("grid needs at least 20 points")
    if not 0 < alpha < 0.5:
        raise ValidationError("alpha must lie in (0, 0.5)")
    z = norm.isf(alpha)
    lo = max(psi_hat - z * se, 0.0)
    hi = psi_hat + z * se
    s = (psi_hat - lo) / (hi - lo)
    t = np.linspace(0.0, 1.0, n_points)
    if s <= 0:
        power = 2.0
    else:
        k = min(max(int(round(math.sqrt(s) * (n_points - 1))), 1), n_points - 2)
        power = math.log(s) / math.log(t[k])
        if power < 1.0:
            # psi_hat very close to hi; fall back to linear spacing with psi_hat inserted
            power = 1.0
    grid = lo + (hi - lo) * t**power
    j = int(np.argmin(np.abs(grid - psi_hat)))
    if abs(grid[j] - psi_hat) <= 1e-9 * (hi - lo):
        # snap rather than insert, so rounding cannot leave two nodes a few ulps apart
        grid[j] = psi_hat
    else:
        grid = np.unique(np.append(grid, psi_hat))
    return grid


@dataclass
class PivotCurve:
    """Pivots tabulated on a grid; ``evaluate`` recomputes them at any psi."""

    grid: np.ndarray
    pivots: list
    excluded: np.ndarray
    psi_hat: float
    se: float
    evaluate: object = field(default=None, repr=False)
    outliers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def values(self, kind):
        return np.array([np.nan if p.get(kind) is None else p.get(kind) for p in self.pivots], dtype=float)

    def usable(self, kind):
        """Mask of grid points used to interpolate ``kind``."""
        vals = self.values(kind)
        mask = np.isfinite(vals)
        if kind in ("modified", "modified_bayes"):
            mask[self.excluded] = False
            mask[self.outliers] = False
            mask &= _monotone_branch(self.grid, vals, mask, self.psi_hat)
        return mask


def _monotone_branch(grid, vals, mask, psi_hat):
    """Points on the decreasing stretch of the curve that contains psi_hat."""
    idx = np.flatnonzero(mask)
    keep = np.zeros_like(mask)
    if idx.size == 0:
        return keep
    centre = np.searchsorted(grid[idx], psi_hat)
    # walk outward from psi_hat while values keep decreasing in psi
    left = idx[:centre][::-1]
    right = idx[centre:]
    prev = None
    for i in right:
        if prev is not None and not vals[i] < vals[prev]:
            break
        keep[i] = True
        prev = i
    prev = right[0] if right.size else None
    for i in left:
        if prev is not None and not vals[i] > vals[prev]:
            break
        keep[i] = True
        prev = i
    return keep


def _general_evaluator(ctx, jp_hat, bayes, prior):
    cache = {}

    def evaluate(psi, init=None):
        psi = float(psi)
        if psi in cache:
            return cache[psi]
        fit = ctx.profile_fit(psi, init=init)
        out = pv.pivot_set(psi, ctx, fit, jp_hat, prior, threshold=pv.EXCLUSION, bayes=bayes)
        cache[psi] = (out, fit)
        return out, fit

    return evaluate


def evaluate_curve(grid, ctx, bayes=False, prior=None, closed_form=True):
    """Pivot curve on ``grid``.

    Planar contexts use the closed forms unless ``closed_form`` is False; other
    contexts run profile fits with continuation outward from the MLE.
    """
    grid = np.asarray(grid, float)
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be strictly increasing")
    psi_hat = float(ctx.mle()[0])
    jp_hat = pv.profile_information_at_mle(ctx)
    se = 1.0 / math.sqrt(jp_hat)
    planar = isinstance(ctx, PlanarLikelihoodContext) and closed_form and not bayes
    if planar:
        def evaluate_one(psi):
            return pv.planar_pivots(psi, ctx.observation, ctx.variances)

        sets = [evaluate_one(p) if p > 0 else _degenerate(p, ctx, jp_hat) for p in grid]
    else:
        ev = _general_evaluator(ctx, jp_hat, bayes, prior)

        def evaluate_one(psi):
            return ev(psi)[0]

        sets = [None] * grid.size
        start = int(np.argmin(np.abs(grid - psi_hat)))
        for order in (range(start, grid.size), range(start - 1, -1, -1)):
            init = None
            for i in order:
                if grid[i] <= 0:
                    sets[i] = _degenerate(grid[i], ctx, jp_hat)
                    continue
                try:
                    sets[i], fit = ev(grid[i], init)
                except NonConvergence as exc:
                    raise NonConvergence(f"profile fit failed at psi={grid[i]:.6g}: {exc}", psi=grid[i],
                                         best=exc.best, grad_norm=exc.grad_norm) from exc
                init = fit.lambda_hat
    roots = np.array([s.root for s in sets])
    excluded = np.flatnonzero(np.abs(roots) < pv.EXCLUSION)
    curve = PivotCurve(grid, sets, excluded, psi_hat, se, evaluate_one)
    rmax = np.nanmax(np.abs(roots[np.isfinite(roots)])) if np.any(np.isfinite(roots)) else 0.0
    rs = curve.values("modified")
    curve.outliers = np.flatnonzero(np.isfinite(rs) & (np.abs(rs) > OUTLIER_FACTOR * max(rmax, 1.0)))
    return curve


def _degenerate(psi, ctx, jp_hat):
    """Pivots at psi = 0, where the modified root is undefined."""
    w = pv.wald(psi, ctx, jp_hat)
    if isinstance(ctx, PlanarLikelihoodContext):
        r = math.sqrt(-2.0 * ctx.loglik(np.array([0.0, 0.0])))
    else:
        r = math.nan
    return pv.PivotSet(float(psi), w, r, 0.0, math.nan, None)


def invert_curve(curve, kind, target, refine=True):
    """psi at which the pivot equals ``target``, by spline inversion then secant refinement."""
    mask = curve.usable(kind)
    vals = curve.values(kind)[mask]
    psis = curve.grid[mask]
    if vals.size < 4:
        raise NumericalFailure(f"too few usable grid points for {kind}")
    if not vals.min() <= target <= vals.max():
        raise OutOfRange(f"{kind} target {target:g} outside [{vals.min():.4g}, {vals.max():.4g}]")
    order = np.argsort(vals)
    spline = CubicSpline(vals[order], psis[order], bc_type="natural")
    psi = float(spline(target))
    if not refine or curve.evaluate is None:
        return psi
    # bracket from the grid for safeguarding
    above = psis[vals >= target]
    below = psis[vals <= target]
    lo_b = above.max() if above.size else psis.min()
    hi_b = below.min() if below.size else psis.max()
    f = _pivot_at(curve, kind, psi)
    if not math.isfinite(f):
        return psi
    prev_psi, prev_f = None, None
    for _ in range(20):
        if abs(f - target) < REFINE_TOL:
            return psi
        if prev_psi is None or prev_f == f:
            # slope from the spline
            slope = float(spline(target, 1))
            step = slope * (target - f)
        else:
            step = (psi - prev_psi) / (f - prev_f) * (target - f)
        new = psi + step
        if not lo_b <= new <= hi_b:
            new = 0.5 * (psi + (lo_b if new < lo_b else hi_b))
        prev_psi, prev_f = psi, f
        psi = new
        f = _pivot_at(curve, kind, psi)
        if not math.isfinite(f):
            return prev_psi
    return psi


def _pivot_at(curve, kind, psi):
    if psi <= 0:
        return math.nan
    try:
        val = curve.evaluate(psi).get(kind)
    except NumericalFailure:
        return math.nan
    return math.nan if val is None else float(val)


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    pivot_kind: str
    lower_clamped: bool = False


def confidence_interval(curve, alpha, kind, ctx=None):
    """Equi-tailed interval with pivot(lower) = z_{1-alpha} and pivot(upper) = -z_{1-alpha}.

    The lower limit is clamped to 0 when the pivot never reaches z_{1-alpha}.
    If the upper limit lies beyond the grid and ``ctx`` is given, the grid is
    widened once to twice its span.
    """
    if not 0 < alpha < 0.5:
        raise ValidationError("alpha must lie in (0, 0.5)")
    z = norm.isf(alpha)
    mask = curve.usable(kind)
    vals = curve.values(kind)[mask]
    if vals.size < 4:
        raise NumericalFailure(f"too few usable grid points for {kind}")
    if z > vals.max():
        lower, clamped = 0.0, True
    else:
        lower, clamped = invert_curve(curve, kind, z), False
        lower = max(lower, 0.0)
        clamped = lower == 0.0
    if -z < vals.min():
        if ctx is None:
            raise OutOfRange(f"upper limit for {kind} at level {alpha} lies beyond the grid")
        span = curve.grid[-1] - curve.grid[0]
        wider = build_grid(curve.psi_hat, curve.se, alpha, len(curve.grid))
        wider = wider[wider <= curve.grid[0] + 2.0 * span]
        extra = np.linspace(curve.grid[-1], curve.grid[0] + 2.0 * span, len(curve.grid) // 2)[1:]
        grid = np.unique(np.concatenate([curve.grid, wider, extra]))
        curve = evaluate_curve(grid, ctx)
        vals = curve.values(kind)[curve.usable(kind)]
        if -z < vals.min():
            raise OutOfRange(f"upper limit for {kind} at level {alpha} lies beyond the widened grid")
    upper = invert_curve(curve, kind, -z)
    return ConfidenceInterval(lower, upper, 1.0 - 2.0 * alpha, kind, clamped)


def pivot_value(curve, psi0, kind):
    """Pivot at psi0: evaluated directly, or interpolated in psi across the exclusion window."""
    val = _pivot_at(curve, kind, psi0) if psi0 > 0 else math.nan
    if math.isfinite(val):
        return val
    mask = curve.usable(kind)
    psis, vals = curve.grid[mask], curve.values(kind)[mask]
    if not psis.min() <= psi0 <= psis.max():
        raise OutOfRange(f"psi0 = {psi0:g} outside the usable range of the {kind} curve")
    return float(CubicSpline(psis, vals, bc_type="natural")(psi0))


def significance_probability(curve, psi0, kind):
    """p_obs = 1 - Phi(pivot(psi0)) for H0: psi = psi0 against larger miss distances."""
    if psi0 < 0:
        raise ValidationError("psi0 must be non-negative")
    return float(norm.sf(pivot_value(curve, psi0, kind)))


def significance_function(curve, kind):
    """(psi, Phi(pivot(psi))) at the usable grid points."""
    mask = curve.usable(kind)
    return list(zip(curve.grid[mask].tolist(), norm.cdf(curve.values(kind)[mask]).tolist()))


@dataclass
class AssessmentReport:
    psi_hat: float
    psi_hat_star: float
    se: float
    intervals: dict
    significance: dict
    epsilon: float
    psi0: float
    evasive: dict
    pc_estimate: float | None = None
    hard_body_radius: float | None = None
    excluded: int = 0
    outliers: int = 0

    @property
    def decision(self):
        """True when the modified-root significance is below epsilon (no evasive action indicated)."""
        return not self.evasive["modified"]

    def to_dict(self):
        return {
            "psi_hat": self.psi_hat,
            "psi_hat_star": self.psi_hat_star,
            "se": self.se,
            "psi0": self.psi0,
            "epsilon": self.epsilon,
            "significance": self.significance,
            "evasive_action": self.evasive,
            "below_threshold": {k: not v for k, v in self.evasive.items()},
            "intervals": {
                kind: {
                    f"{level:.10g}": {"lower": ci.lower, "upper": ci.upper, "lower_clamped": ci.lower_clamped}
                    for level, ci in by_level.items()
                }
                for kind, by_level in self.intervals.items()
            },
            "pc_estimate": self.pc_estimate,
            "hard_body_radius": self.hard_body_radius,
            "excluded_points": self.excluded,
            "outlier_points": self.outliers,
        }


def curve_for(ctx, alpha_min=1e-5, n_points=DEFAULT_POINTS, bayes=False):
    jp_hat = pv.profile_information_at_mle(ctx)
    se = 1.0 / math.sqrt(jp_hat)
    grid = build_grid(float(ctx.mle()[0]), se, min(alpha_min, 1e-5) / 2.0, n_points)
    return evaluate_curve(grid, ctx, bayes=bayes)


def assess(ctx, psi0, epsilon=1e-4, alphas=(0.05, 0.025, 0.005), radius=None, kinds=("wald", "root", "modified"),
           n_points=DEFAULT_POINTS):
    """Point estimates, intervals, significance at psi0 and the evasive-action flags."""
    if not 0 < epsilon <= 1:
        raise ValidationError("epsilon must lie in (0, 1]")
    curve = curve_for(ctx, min(alphas), n_points)
    intervals = {kind: {} for kind in kinds}
    for kind in kinds:
        for a in alphas:
            intervals[kind][1.0 - 2.0 * a] = confidence_interval(curve, a, kind, ctx)
    significance = {kind: significance_probability(curve, psi0, kind) for kind in kinds}
    try:
        psi_star = invert_curve(curve, "modified", 0.0)
    except OutOfRange:
        psi_star = math.nan
    pc = None
    if radius is not None:
        if isinstance(ctx, PlanarLikelihoodContext):
            pc = pc_estimate(ctx.observation, ctx.variances, radius)
    return AssessmentReport(
        psi_hat=curve.psi_hat,
        psi_hat_star=psi_star,
        se=curve.se,
        intervals=intervals,
        significance=significance,
        epsilon=epsilon,
        psi0=psi0,
        evasive={k: p >= epsilon for k, p in significance.items()},
        pc_estimate=pc,
        hard_body_radius=radius,
        excluded=int(curve.excluded.size),
        outliers=int(curve.outliers.size),
    )
