import math

import numpy as np
import pytest
from scipy.stats import kstest

from missdistance import calibration as cal, streams
from missdistance.errors import NumericalFailure, ValidationError
from missdistance.geometry import DispersionSpec, PlanarParams, RelativeState, spherical_to_state, state_to_spherical

from conftest import CASE_C_VAR, CASE_C_X
from test_likelihood import CASE_A

TRUTH_A = state_to_spherical(RelativeState.from_vector(CASE_A))
TRUTH_C = PlanarParams(float(np.hypot(*CASE_C_X)), float(np.arctan2(CASE_C_X[1], CASE_C_X[0])))


def six_dim(sigma2, tau=1.0, n=200, seed=0, **kw):
    return cal.CalibrationConfig(TRUTH_A, DispersionSpec.from_sigma_tau(sigma2, tau, "km"), n, seed=seed, **kw)


def planar(c2=1.0, c_prime=1.0, n=100_000, alphas=(0.025, 0.005, 0.0005, 0.00005), seed=42, variances=CASE_C_VAR):
    return cal.CalibrationConfig(TRUTH_C, cal.PlanarNoise(variances, c2, c_prime), n, alphas, seed=seed, mode="planar")


def test_config_validation():
    with pytest.raises(ValidationError):
        six_dim(1e-3, n=50)
    with pytest.raises(ValidationError):
        six_dim(1e-3, alphas=(0.6,))
    with pytest.raises(ValidationError):
        six_dim(1e-3, pivots=("bogus",))
    with pytest.raises(ValidationError):
        cal.CalibrationConfig(TRUTH_C, cal.PlanarNoise(CASE_C_VAR), 100, mode="six_dim")


def test_simulate_noiseless_limit():
    rng = streams.substream(1, 99)
    y = cal.simulate_observation(TRUTH_A, DispersionSpec(np.eye(6) * 1e-20), rng)
    np.testing.assert_allclose(y, spherical_to_state(TRUTH_A), rtol=1e-12, atol=1e-8)


def test_simulate_moments():
    rng = streams.substream(2, 99)
    noise = DispersionSpec.from_sigma_tau(2.0, 3.0, "km")
    draws = np.array([cal.simulate_observation(TRUTH_A, noise, rng) for _ in range(100_000)])
    mean = spherical_to_state(TRUTH_A)
    se = np.sqrt(np.diag(noise.covariance) / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * se)
    cov = np.cov(draws.T)
    assert np.linalg.norm(cov - noise.covariance) / np.linalg.norm(noise.covariance) < 0.05
    x = np.array([cal.simulate_observation(TRUTH_C, cal.PlanarNoise(CASE_C_VAR, 0.5), rng) for _ in range(50_000)])
    np.testing.assert_allclose(x.var(axis=0), 0.5 * np.array(CASE_C_VAR), rtol=0.03)


def test_smoke_report_structure():
    rep = cal.coverage_experiment(six_dim(1e-3, n=100))
    assert rep.used + rep.failures == 100
    assert rep.standard_error(0.05) == pytest.approx(math.sqrt(0.05 * 0.95 / rep.used))
    for kind, a, left, right, se in rep.rows():
        assert 0 <= left <= 1 and 0 <= right <= 1 and se > 0.005
    d = rep.to_dict()
    assert set(d["rates"]) == {"wald", "root", "modified"}


def test_failure_cap():
    cfg = six_dim(1e-3, n=200)
    values = {k: np.zeros(200) for k in ("wald", "root", "modified")}
    ok = np.ones(200, dtype=bool)
    ok[:2] = False
    assert cal._report(values, ok, cfg).failures == 2
    ok[:3] = False
    with pytest.raises(NumericalFailure):
        cal._report(values, ok, cfg)


def test_worker_independence():
    cfg = six_dim(0.5, n=130, seed=9)
    a = cal.coverage_experiment(cfg, workers=1)
    b = cal.coverage_experiment(cfg, workers=3)
    assert a.to_dict() == b.to_dict()
    p = planar(n=9000)
    assert cal.coverage_experiment(p, 1).to_dict() == cal.coverage_experiment(p, 2).to_dict()


def test_planar_small_noise_near_nominal():
    rep = cal.coverage_experiment(planar(c2=0.005, alphas=(0.025, 0.005)))
    for kind in ("wald", "root", "modified"):
        for a in (0.025, 0.005):
            se = rep.standard_error(a)
            assert abs(rep.left[kind][a] - a) < 4 * se
            assert abs(rep.right[kind][a] - a) < 4 * se
            # two-sided error
            assert abs(rep.left[kind][a] + rep.right[kind][a] - 2 * a) < 3 * math.sqrt(2) * se + 2 * se


def test_planar_unit_scaling_matches_published_pattern():
    rep = cal.coverage_experiment(planar(c2=1.0, alphas=(0.025,)))
    a = 0.025
    assert rep.right["wald"][a] == 0.0 and rep.right["root"][a] == 0.0
    assert rep.left["root"][a] > rep.left["wald"][a] > rep.left["modified"][a]
    assert rep.left["modified"][a] == pytest.approx(0.0253, abs=4 * rep.standard_error(a))


def test_planar_shifted_truth_near_nominal():
    rep = cal.coverage_experiment(planar(c_prime=6.0, alphas=(0.025, 0.005)))
    for a in (0.025, 0.005):
        for kind in ("wald", "root", "modified"):
            assert abs(rep.left[kind][a] - a) < 0.3 * a
        assert abs(rep.left["modified"][a] - a) <= abs(rep.left["wald"][a] - a) + 2 * rep.standard_error(a)


def test_qq_export_equal_variance_small_noise():
    truth = PlanarParams(50.0, 0.3)
    cfg = cal.CalibrationConfig(truth, cal.PlanarNoise((1.0, 1.0)), 10_000, seed=5, mode="planar")
    qq = cal.qq_export(cfg)
    for kind, (theo, sample) in qq.items():
        assert sample.size == 10_000
        assert np.all(np.diff(sample) >= 0) and np.all(np.diff(theo) > 0)
        assert kstest(sample, "norm").statistic < 0.02


@pytest.mark.slow
def test_qq_large_noise_skew():
    qq = cal.qq_export(six_dim(5.0, tau=2.0, n=400, seed=3))
    n_used = qq["wald"][1].size
    assert n_used >= 396
    mean = {k: v[1].mean() for k, v in qq.items()}
    assert mean["wald"] > 0 and mean["root"] > 0
    assert abs(mean["modified"]) < abs(mean["wald"]) and abs(mean["modified"]) < abs(mean["root"])


@pytest.mark.slow
def test_left_tail_ordering_at_large_noise():
    blocks = [(1.0, 1.0), (2.0, 1.0), (5.0, 1.0), (2.0, 3.0)]
    hits = total = 0
    for sigma2, tau in blocks:
        rep = cal.coverage_experiment(six_dim(sigma2, tau, n=1000, seed=11))
        for a in rep.alphas:
            err = {k: abs(rep.left[k][a] - a) for k in rep.pivots}
            total += 1
            hits += err["modified"] <= err["root"] <= err["wald"]
    assert hits >= 0.8 * total
