"""Kernel backend dispatch.

``CF_BACKEND=numba`` (default when numba imports) runs the JIT-compiled
kernels; ``CF_BACKEND=numpy`` runs the identical source as plain Python.
Model bytes are bitwise-identical across backends; the numpy path exists so
the package works without a compiler toolchain and as a reference for the
backend benchmark.
"""

import functools
import os

import numpy as np

from . import _impl


def _plain_backend():
    @functools.wraps(_impl.grow_tree_cls)
    def grow_tree_cls(*args):
        # uint64 splitmix wraparound is intentional; silence scalar overflow
        with np.errstate(over="ignore"):
            return _impl.grow_tree_cls(*args)

    ns = type(_impl)("cascadeforest.kernels._plain")
    ns.grow_tree_cls = grow_tree_cls
    ns.grow_tree_reg_presorted = _impl.grow_tree_reg_presorted
    ns.forest_raw_scores = _impl.forest_raw_scores
    ns.NAME = "numpy"
    return ns


def _select():
    requested = os.environ.get("CF_BACKEND", "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        raise RuntimeError(f"CF_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy":
        return _plain_backend()
    try:
        from . import _numba
        return _numba
    except ImportError:
        if requested == "numba":
            raise
        return _plain_backend()


_active = _select()

BACKEND = _active.NAME
grow_tree_cls = _active.grow_tree_cls
grow_tree_reg_presorted = _active.grow_tree_reg_presorted
forest_raw_scores = _active.forest_raw_scores


def backends_available():
    """Names of backends importable in this process."""
    names = ["numpy"]
    try:
        from . import _numba  # noqa: F401
        names.insert(0, "numba")
    except ImportError:
        pass
    return names
