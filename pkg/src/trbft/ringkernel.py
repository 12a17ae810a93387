"""Backend selection for the ring lookup kernel.

The compiled extension is used when it was built; set ``TRBFT_PURE_PYTHON=1``
to force the fallback.
"""
import os
from array import array

from . import _ring_py

if os.environ.get("TRBFT_PURE_PYTHON"):
    _core = None
else:
    try:
        from . import _ring_core as _core
    except ImportError:
        _core = None

BACKEND = "cython" if _core is not None else "python"


def successor_indices(points, keys, backend=None):
    """Index of the first ring point at or clockwise-after each key."""
    if (backend or BACKEND) == "cython":
        if _core is None:
            raise RuntimeError("compiled ring kernel is not available")
        return list(_core.successor_indices(array("I", points), array("I", keys)))
    return _ring_py.successor_indices(points, keys)


def group_histogram(point_groups, indices, k, backend=None):
    if (backend or BACKEND) == "cython":
        if _core is None:
            raise RuntimeError("compiled ring kernel is not available")
        return list(_core.group_histogram(array("l", point_groups), array("l", indices), k))
    return _ring_py.group_histogram(point_groups, indices, k)
