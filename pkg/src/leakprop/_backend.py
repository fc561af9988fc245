"""Selects the simulation kernel at import: compiled if available, else numpy.

Set ``LEAKPROP_BACKEND=python`` to force the fallback.
"""

import importlib
import os


def load(name=None):
    """Return the kernel module for ``name`` ("compiled" or "python")."""
    if name == "python":
        return importlib.import_module("leakprop._pykernels")
    if name == "compiled":
        return importlib.import_module("leakprop._kernels")
    raise ValueError(f"unknown backend {name!r}")


if os.environ.get("LEAKPROP_BACKEND", "").lower() == "python":
    kernels = load("python")
    BACKEND = "python"
else:
    try:
        kernels = load("compiled")
        BACKEND = "compiled"
    except ImportError:
        kernels = load("python")
        BACKEND = "python"
