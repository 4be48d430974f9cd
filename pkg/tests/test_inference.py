import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import norm

from missdistance import pivots as pv
from missdistance.errors import InvalidLosses, OutOfRange, ValidationError
from missdistance.geometry import DispersionSpec
from missdistance.inference import (
    LossTable,
    assess,
    build_grid,
    confidence_interval,
    curve_for,
    decision_threshold,
    evaluate_curve,
    invert_curve,
    significance_function,
    significance_probability,
)
from missdistance.likelihood import LikelihoodContext, PlanarLikelihoodContext

from conftest import CASE_C_VAR, CASE_C_X
from test_likelihood import CASE_B


@pytest.fixture(scope="module")
def case_b_curve():
    ctx = LikelihoodContext(CASE_B, DispersionSpec.from_sigma_tau(0.05, 1.0).precision)
    return ctx, curve_for(ctx)


@pytest.fixture(scope="module")
def case_c_curve():
    ctx = PlanarLikelihoodContext(CASE_C_X, CASE_C_VAR)
    return ctx, curve_for(ctx)


def test_grid_layout():
    grid = build_grid(1.0, 0.1, 0.05, 50)
    assert grid.size == 50
    assert grid[0] == pytest.approx(1 - 0.1 * norm.isf(0.05), abs=1e-12)
    assert grid[-1] == pytest.approx(1 + 0.1 * norm.isf(0.05), abs=1e-12)
    assert grid[0] == pytest.approx(0.8355, abs=1e-4) and grid[-1] == pytest.approx(1.1645, abs=1e-4)
    assert 1.0 in grid
    assert np.all(np.diff(grid) > 0)
    # spacing widens with psi
    assert np.all(np.diff(np.diff(grid)) > -1e-12)


def test_grid_clamped_at_zero():
    grid = build_grid(0.5, 1.0, 0.01)
    assert grid[0] == 0.0 and np.all(np.diff(grid) > 0)
    with pytest.raises(ValidationError):
        build_grid(1.0, 0.0, 0.05)


def test_decision_threshold():
    assert decision_threshold(LossTable(l01=1e4 + 1, l10=1, l11=1)) == pytest.approx(1 / (1e4 + 1), rel=1e-12)
    assert decision_threshold(LossTable(l01=1e4, l10=1, l11=1)) == pytest.approx(1e-4, rel=1e-12)
    assert decision_threshold({"l01": 3.0, "l10": 3.0}) == 0.5
    assert decision_threshold(LossTable(l01=1e12, l10=1.0)) < 1e-11
    with pytest.raises(InvalidLosses):
        LossTable(l01=-1.0, l10=1.0)


def test_planar_curve_general_path_matches_closed_forms():
    ctx = PlanarLikelihoodContext([3.0, 4.0], (0.64, 0.64))
    grid = build_grid(5.0, 0.8, 1e-4, 40)
    closed = evaluate_curve(grid, ctx)
    general = evaluate_curve(grid, ctx, closed_form=False)
    for kind in ("wald", "root", "modified"):
        np.testing.assert_allclose(general.values(kind), closed.values(kind), rtol=1e-9, atol=1e-10)
    # the node at psi_hat has r = 0 and falls in the exclusion window
    k = int(np.argmin(np.abs(grid - 5.0)))
    assert k in closed.excluded


def test_case_c_significance_and_clamp(case_c_curve):
    ctx, curve = case_c_curve
    sig = {k: significance_probability(curve, 10.0, k) for k in ("wald", "root", "modified")}
    assert sig["wald"] == pytest.approx(0.46939, abs=1e-4)
    assert sig["root"] == pytest.approx(0.46937, abs=1e-4)
    assert sig["modified"] == pytest.approx(0.57590, abs=1e-4)
    ci = confidence_interval(curve, 0.025, "root", ctx)
    assert ci.lower == 0.0 and ci.lower_clamped
    assert ci.upper > curve.psi_hat


def test_significance_at_mle(case_c_curve):
    _, curve = case_c_curve
    for kind in ("wald", "root"):
        assert significance_probability(curve, curve.psi_hat, kind) == pytest.approx(0.5, abs=1e-9)


def test_case_b_curves(case_b_curve):
    _, curve = case_b_curve
    ok = curve.usable("modified")
    w, r, rs = curve.values("wald"), curve.values("root"), curve.values("modified")
    # w and r are nearly indistinguishable; r* sits below them, shifting the significance function left
    assert np.max(np.abs(w - r)[np.isfinite(r)]) < 0.02
    assert np.all(rs[ok] < r[ok])
    assert significance_probability(curve, 20.0, "root") == pytest.approx(1.214e-3, rel=2e-3)
    assert significance_probability(curve, 20.0, "modified") == pytest.approx(7.204e-3, rel=2e-3)


def test_point_estimates(case_b_curve):
    _, curve = case_b_curve
    assert invert_curve(curve, "root", 0.0) == pytest.approx(curve.psi_hat, abs=1e-3)
    assert invert_curve(curve, "modified", 0.0) == pytest.approx(661.35, abs=0.05)


def test_invert_matches_scalar_root(case_c_curve):
    ctx, curve = case_c_curve
    z = norm.isf(0.05)
    got = invert_curve(curve, "root", -z)
    ref = brentq(lambda p: pv.planar_pivots(p, CASE_C_X, CASE_C_VAR).root + z, curve.psi_hat, 500.0, xtol=1e-12)
    assert got == pytest.approx(ref, abs=1e-3)
    with pytest.raises(OutOfRange):
        invert_curve(curve, "root", 50.0)


def test_equal_variance_intervals():
    d, x = 0.5, np.array([3.0, 4.0])
    ctx = PlanarLikelihoodContext(x, (d * d, d * d))
    curve = curve_for(ctx)
    for alpha in (0.05, 0.005):
        z = norm.isf(alpha)
        ci_r = confidence_interval(curve, alpha, "root", ctx)
        ci_s = confidence_interval(curve, alpha, "modified", ctx)
        assert ci_r.lower == pytest.approx(5.0 - z * d, abs=1e-4)
        assert ci_r.upper == pytest.approx(5.0 + z * d, abs=1e-4)
        assert ci_s.lower < ci_r.lower and ci_s.upper < ci_r.upper
    assert invert_curve(curve, "modified", 0.0) <= curve.psi_hat


def test_interval_nesting_and_decision_equivalence(case_b_curve):
    ctx, curve = case_b_curve
    for kind in ("wald", "root", "modified"):
        wide = confidence_interval(curve, 0.005, kind, ctx)
        narrow = confidence_interval(curve, 0.05, kind, ctx)
        assert wide.lower <= narrow.lower and wide.upper >= narrow.upper
    for eps in (1e-3, 5e-3, 1e-2):
        for kind in ("root", "modified"):
            lower = confidence_interval(curve, eps, kind, ctx).lower
            for psi0 in (15.0, 20.0, 30.0, 60.0):
                assert (significance_probability(curve, psi0, kind) < eps) == (psi0 < lower)


def test_significance_function_monotone(case_b_curve, case_c_curve):
    for _, curve in (case_b_curve, case_c_curve):
        for kind in ("wald", "root", "modified"):
            psi, phi = np.array(significance_function(curve, kind)).T
            assert np.all(np.diff(psi) > 0)
            # the confidence density is the negative derivative and must be non-negative
            assert np.all(np.diff(phi) < 0)


def test_assess_report(case_b_curve):
    ctx, _ = case_b_curve
    rep = assess(ctx, 20.0, 1e-4)
    assert rep.significance["modified"] == pytest.approx(7.204e-3, rel=2e-3)
    assert rep.evasive == {"wald": True, "root": True, "modified": True}
    assert not rep.decision
    d = rep.to_dict()
    assert set(d["intervals"]) == {"wald", "root", "modified"}
    assert d["psi_hat_star"] == pytest.approx(661.35, abs=0.05)
    with pytest.raises(ValidationError):
        assess(ctx, 20.0, 0.0)
