"""Kernel backend selection.

``BFDMR_BACKEND=numpy`` forces the pure numpy path; the default is numba
when it imports, else numpy.
"""

import importlib
import logging
import os

logger = logging.getLogger(__name__)

BACKENDS = ("numba", "numpy")


def load(name: str):
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose from {BACKENDS}")
    return importlib.import_module(f"bfdmr._kernels_{name}")


def _select():
    want = os.environ.get("BFDMR_BACKEND", "numba").strip().lower()
    if want == "numba":
        try:
            return "numba", load("numba")
        except ImportError:
            logger.warning("numba unavailable; falling back to numpy kernels")
            return "numpy", load("numpy")
    return want, load(want)


NAME, kernels = _select()
