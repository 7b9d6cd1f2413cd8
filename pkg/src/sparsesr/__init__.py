"""Explorable single-image super-resolution via variational sparse representation.

Submodules are imported lazily so the command-line front end can pin BLAS
thread counts through environment variables before numpy ever loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "checkpoint",
    "cli",
    "config",
    "errors",
    "imaging",
    "manifest",
    "metrics",
    "model",
    "numerics",
    "objective",
    "oracles",
    "rng",
    "synthetic",
    "trainer",
)


def __getattr__(name):
    if name in _SUBMODULES:
        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
