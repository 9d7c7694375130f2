"""numba-compiled kernel set. Import fails cleanly when numba is absent."""

from numba import njit

from . import _impl

_jit = njit(cache=True, nogil=True, fastmath=False)

grow_tree_cls = _jit(_impl.grow_tree_cls)
grow_tree_reg_presorted = _jit(_impl.grow_tree_reg_presorted)
forest_raw_scores = _jit(_impl.forest_raw_scores)

NAME = "numba"
