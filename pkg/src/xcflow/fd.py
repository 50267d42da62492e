"""Finite difference stencils on ghost-extended arrays.

All operators act on full arrays (ghosts included, arbitrary trailing
component axes) and return full-shape arrays whose values are valid on the
interior left after shaving one layer per differentiated axis.  Nothing here
fills ghosts; callers own that.

Second derivatives use the compact three point stencil along an axis and the
four corner stencil across a pair of axes.  Both have reach one, so a single
valid ghost layer suffices for first derivatives and the curvature assembly
needs two.
"""

from __future__ import annotations

import numpy as np


def _sl(axis, s):
    out = [slice(None)] * 3
    out[axis] = s
    return tuple(out)


def d1(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Central first derivative along a grid axis."""
    out = np.zeros_like(arr)
    inner = _sl(axis, slice(1, -1))
    out[inner] = (arr[_sl(axis, slice(2, None))] - arr[_sl(axis, slice(None, -2))]) / (2.0 * h)
    return out


def d2(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Compact second derivative along a grid axis."""
    out = np.zeros_like(arr)
    inner = _sl(axis, slice(1, -1))
    out[inner] = (arr[_sl(axis, slice(2, None))] - 2.0 * arr[inner]
                  + arr[_sl(axis, slice(None, -2))]) / (h * h)
    return out


def d2_cross(arr: np.ndarray, axis_a: int, axis_b: int, ha: float, hb: float) -> np.ndarray:
    """Mixed second derivative across two distinct grid axes."""
    def shift(sa, sb):
        return arr[_sl(axis_a, sa)][_sl(axis_b, sb)]

    up = slice(2, None)
    dn = slice(None, -2)
    out = np.zeros_like(arr)
    sl_both = [slice(None)] * 3
    sl_both[axis_a] = slice(1, -1)
    sl_both[axis_b] = slice(1, -1)
    out[tuple(sl_both)] = (shift(up, up) - shift(up, dn) - shift(dn, up)
                           + shift(dn, dn)) / (4.0 * ha * hb)
    return out


def second_derivative(arr: np.ndarray, axis_a: int, axis_b: int, spacings) -> np.ndarray:
    """Dispatch between the compact and the mixed stencil."""
    if axis_a == axis_b:
        return d2(arr, axis_a, spacings[axis_a])
    return d2_cross(arr, axis_a, axis_b, spacings[axis_a], spacings[axis_b])
