"""Kernel backend selection.

The compiled extension is used when it imports; setting ``PQFLEX_PURE_PYTHON=1``
forces the numpy fallback. :func:`use_backend` switches at runtime (benchmarks,
tests).
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

_active = _pykernels if os.environ.get("PQFLEX_PURE_PYTHON") or _ckernels is None else _ckernels


def backend() -> str:
    return "cython" if _active is _ckernels and _ckernels is not None else "python"


def use_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}")
    _active = BACKENDS[name]


def newton_dense(Y, v0, var, sspec, tol=1e-8, max_iter=50):
    return _active.newton_dense(Y, v0, var, sspec, tol, max_iter)


def newton_dense_batch(Y, v0, var, sspec, tol=1e-8, max_iter=50):
    return _active.newton_dense_batch(Y, v0, var, sspec, tol, max_iter)
