"""Kernel dispatch: compiled core when importable, pure Python otherwise.

Set ``UNDERCROWD_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pycore

if os.environ.get("UNDERCROWD_PURE_PYTHON"):
    _impl = _pycore
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pycore
        BACKEND = "python"

depth_at = _impl.depth_at
depth_all = _impl.depth_all
line_side_weights = _impl.line_side_weights
grow_tree = _impl.grow_tree
predict_forest = _impl.predict_forest

__all__ = ["BACKEND", "depth_at", "depth_all", "line_side_weights", "grow_tree", "predict_forest"]
