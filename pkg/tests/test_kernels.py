import os
import subprocess
import sys

import numpy as np
import pytest

from missdistance import kernels
from missdistance.kernels import available_backends, get_backend

compiled = pytest.mark.skipif("cython" not in available_backends(), reason="compiled kernels not built")


def _planar_inputs(rng, n=2000):
    x = rng.normal(scale=30.0, size=(n, 2))
    var = rng.uniform(1.0, 900.0, size=(n, 2))
    psi = rng.uniform(0.01, 80.0, size=n)
    return x[:, 0], x[:, 1], var[:, 0], var[:, 1], psi


def test_backend_lookup():
    assert kernels.BACKEND in available_backends()
    assert get_backend("python").__name__.endswith("_kernels_py")
    with pytest.raises(ValueError):
        get_backend("fortran")


@compiled
def test_pc_backends_agree(rng):
    cx, cy = rng.normal(scale=20.0, size=(2, 500))
    v1, v2 = rng.uniform(1.0, 700.0, size=(2, 500))
    a = get_backend("cython").pc_disk_batch(cx, cy, v1, v2, 7.5)
    b = get_backend("python").pc_disk_batch(cx, cy, v1, v2, 7.5)
    np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-13)
    np.testing.assert_array_equal(a[1], b[1])
    assert a[2].all() and b[2].all()


@compiled
def test_planar_backends_agree(rng):
    args = _planar_inputs(rng)
    a = get_backend("cython").planar_pivots_batch(*args, 0.1)
    b = get_backend("python").planar_pivots_batch(*args, 0.1)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(
        get_backend("cython").profile_angle(*args), get_backend("python").profile_angle(*args), atol=1e-12
    )


def test_profile_angle_minimises(rng):
    x1, x2, v1, v2, psi = _planar_inputs(rng, 300)
    lam = kernels.profile_angle(x1, x2, v1, v2, psi)
    grid = np.linspace(-np.pi, np.pi, 20001)

    def obj(a, i):
        return (x1[i] - psi[i] * np.cos(a)) ** 2 / v1[i] + (x2[i] - psi[i] * np.sin(a)) ** 2 / v2[i]

    for i in range(300):
        assert obj(lam[i], i) <= obj(grid, i).min() + 1e-9


def test_equal_variance_angle_is_mle_angle(rng):
    x1, x2 = rng.normal(size=(2, 100))
    lam = kernels.profile_angle(x1, x2, 4.0, 4.0, rng.uniform(0.1, 5, 100))
    np.testing.assert_allclose(lam, np.arctan2(x2, x1), atol=1e-12)


def test_pure_python_switch():
    env = dict(os.environ, MISSDISTANCE_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import missdistance.kernels as k; print(k.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
