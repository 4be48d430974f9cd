"""Backend selection for the hot kernels.

The compiled extension is used when importable; setting
``MISSDISTANCE_PURE_PYTHON=1`` forces the numpy implementation.
"""

import os

from . import _kernels_py

_python = _kernels_py
_compiled = None
if not os.environ.get("MISSDISTANCE_PURE_PYTHON"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _python
BACKEND = "cython" if _compiled is not None else "python"


def get_backend(name=None):
    """Module implementing the kernels: ``"cython"``, ``"python"`` or the default."""
    if name is None:
        return _impl
    if name == "python":
        return _python
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])


def pc_disk_batch(cx, cy, var1, var2, radius, tol=1e-10, max_nodes=1 << 20):
    return _impl.pc_disk_batch(cx, cy, var1, var2, radius, tol, max_nodes)


def planar_pivots_batch(x1, x2, var1, var2, psi, r_min=1e-8):
    return _impl.planar_pivots_batch(x1, x2, var1, var2, psi, r_min)


def profile_angle(x1, x2, var1, var2, psi):
    return _impl.profile_angle(x1, x2, var1, var2, psi)
