"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``BIRKHOFF_GIRSANOV_PURE`` is set to a non-empty value
other than ``0``, the NumPy twin is used.  ``BACKEND`` names the choice.
"""
import os

from . import _kernels_py

NORM_ABS = _kernels_py.NORM_ABS
NORM_EUCLID = _kernels_py.NORM_EUCLID
NORM_SUP = _kernels_py.NORM_SUP
NORM_MEANABS = _kernels_py.NORM_MEANABS

_force_pure = os.environ.get("BIRKHOFF_GIRSANOV_PURE", "") not in ("", "0")

if _force_pure:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

group_moments = _impl.group_moments
cell_diameter = _impl.cell_diameter
farthest_pair = _impl.farthest_pair
cumulative_trapezoid = _impl.cumulative_trapezoid

__all__ = [
    "BACKEND",
    "NORM_ABS",
    "NORM_EUCLID",
    "NORM_MEANABS",
    "NORM_SUP",
    "cell_diameter",
    "cumulative_trapezoid",
    "farthest_pair",
    "group_moments",
]
