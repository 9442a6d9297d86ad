"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

The Cython extension ``distmle._kernels`` is used when it was built;
otherwise (or when ``DISTMLE_PURE_PYTHON=1`` is set before import) the
numpy/``math`` reference in ``_kernels_py`` is used. ``BACKEND`` names the
active one; :func:`get_backend` returns either explicitly for benchmarking
and cross-checks.
"""

from __future__ import annotations

import math
import os
from functools import lru_cache
from types import ModuleType

import numpy as np

from . import _kernels_py

GRID_SIZE = 1024


def _load_compiled():
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return None
    return _kernels


_compiled = None if os.environ.get("DISTMLE_PURE_PYTHON") == "1" else _load_compiled()
_active: ModuleType = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"


def compiled_available() -> bool:
    return _load_compiled() is not None


def get_backend(name: str) -> ModuleType:
    if name == "python":
        return _kernels_py
    if name == "cython":
        mod = _load_compiled()
        if mod is None:
            raise ImportError("compiled kernels are not built")
        return mod
    raise ValueError(f"unknown backend {name!r}")


@lru_cache(maxsize=8)
def angle_grid(size: int = GRID_SIZE):
    """Grid on (-pi, pi]: ``-pi + (j + 1) * 2 pi / size``; includes pi, excludes -pi."""
    theta = -math.pi + (np.arange(size) + 1) * (2.0 * math.pi / size)
    theta[-1] = math.pi
    c, s = np.cos(theta), np.sin(theta)
    for a in (theta, c, s):
        a.setflags(write=False)
    return theta, c, s


def ellipse_argmax(mu, a: float, b: float, grid_size: int = GRID_SIZE, backend: ModuleType | None = None):
    """Row-wise maximiser of ``a cos(t) mu1 + b sin(t) mu2 - (a^2 cos^2 t + b^2 sin^2 t)/2``.

    Returns ``(theta, value)``. This is the ellipse log-likelihood in terms of
    the mean sufficient statistic, and also the KL-average objective.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    theta, c, s = angle_grid(grid_size)
    mod = backend or _active
    return mod.ellipse_argmax(mu, float(a), float(b), c, s, theta)


def mixture_log_density(X, means, chols, log_weights, backend: ModuleType | None = None):
    return (backend or _active).mixture_log_density(X, means, chols, log_weights)


def logsumexp_rows(M, backend: ModuleType | None = None):
    return (backend or _active).logsumexp_rows(M)
