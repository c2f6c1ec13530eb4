"""Numerical Finsler geometry: metrics, curvature, Finsler-Laplacian and
first-eigenvalue lower bounds on model manifolds.

Submodules are imported lazily so the command-line entry point can set
thread limits before jax and numpy load.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("bounds", "calculus", "curvature", "domain", "errors", "experiment",
               "metric", "spectral", "volume")

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
