"""Finite-difference primitives on uniform grids.

All operators are second-order accurate, centered in the interior with
one-sided three/four-point formulas at the edges, so coefficient products
can be differentiated on the whole node set including the boundary ring.
"""
from __future__ import annotations

import numpy as np


def d1(u: np.ndarray, h: float, axis: int) -> np.ndarray:
    """First derivative, centered interior, second-order one-sided edges.

    Axes with fewer than three nodes (a one-step trajectory) fall back to
    the first-order difference; a single node differentiates to zero.
    """
    n = u.shape[axis]
    if n < 2:
        return np.zeros_like(u)
    return np.gradient(u, h, axis=axis, edge_order=2 if n >= 3 else 1)


def d2(u: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second derivative, centered interior, second-order one-sided edges."""
    n = u.shape[axis]
    if n < 3:
        return np.zeros_like(u)
    u = np.moveaxis(u, axis, 0)
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (h * h)
    if n >= 4:
        # 4-point one-sided stencils keep O(h^2) at the edges
        out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / (h * h)
        out[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / (h * h)
    else:
        out[0] = out[1]
        out[-1] = out[1]
    return np.moveaxis(out, 0, axis)


def d2_cross(u: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Mixed second derivative of a 2D field on its last two axes.

    Centered four-point stencil in the interior; edges fall back to nested
    `d1` calls (one-sided), which keeps second order everywhere.
    """
    return d1(d1(u, hx, axis=-2), hy, axis=-1)


def cross_diff_interior(u: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Centered mixed difference on interior nodes, zero on the edge ring.

    Written as nested differences so constant fields map to exact zeros.
    """
    out = np.zeros_like(u)
    dxp = u[..., 2:, 1:-1] - u[..., 2:, :-2] - (u[..., :-2, 1:-1] - u[..., :-2, :-2])
    dxm = u[..., 2:, 2:] - u[..., 2:, 1:-1] - (u[..., :-2, 2:] - u[..., :-2, 1:-1])
    out[..., 1:-1, 1:-1] = (dxp + dxm) / (4.0 * hx * hy)
    return out


def second_diff_interior(u: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Centered second difference on interior nodes, zero on the edge ring."""
    u = np.moveaxis(u, axis, 0)
    out = np.zeros_like(u)
    out[1:-1] = ((u[2:] - u[1:-1]) - (u[1:-1] - u[:-2])) / (h * h)
    return np.moveaxis(out, 0, axis)


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    """Composite-trapezoid quadrature weights for n nodes spaced by h."""
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w
