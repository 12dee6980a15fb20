"""Discrete Hoelder-norm estimation under the parabolic distance.

The distance between grid points P = (t, x) and Q = (t', x') is
``sqrt(|x - x'|^2 + |t - t'|)``; a field's order-(k+h) norm adds the plain
sup norm, the Hoelder quotient, the same quotient applied to every spatial
derivative up to order k, and (for space-time fields with k >= 1) the time
derivative's contribution.

Quotients are estimated over nearest and next-nearest neighbor pairs; for
smooth fields the supremum is attained in the small-separation limit, so
this is the relevant restriction.  An exhaustive all-pairs mode exists for
small validation fields.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fd

# index offsets (time, space...) defining the neighbor pairs per field kind
_OFFSETS = {
    "tSy": [(0, 1, 0), (0, 0, 1), (0, 1, 1), (0, 1, -1), (0, 2, 0), (0, 0, 2),
            (1, 0, 0), (2, 0, 0), (1, 1, 0), (1, 0, 1)],
    "Sy": [(1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2)],
    "tS": [(0, 1), (0, 2), (1, 0), (2, 0), (1, 1)],
    "S": [(1,), (2,)],
}
_HAS_TIME = {"tSy": True, "Sy": False, "tS": True, "S": False}
_N_SPACE = {"tSy": 2, "Sy": 2, "tS": 1, "S": 1}


@dataclass
class HolderNormEstimate:
    """Norm estimate split into its constituent parts."""

    value: float
    sup_norm: float
    quotient: float
    derivative_parts: dict = field(default_factory=dict)
    k: int = 0
    h: float = 0.5

    def __post_init__(self):
        if self.value < self.sup_norm - 1e-12:
            raise ValueError("norm estimate below its sup-norm part")


def _spacings(grid, kind):
    if kind == "tSy":
        return grid.dt, (grid.ds, grid.dy)
    if kind == "Sy":
        return None, (grid.ds, grid.dy)
    if kind == "tS":
        return grid.dt, (grid.ds,)
    if kind == "S":
        return None, (grid.ds,)
    raise ValueError(f"unknown field kind {kind!r}")


def infer_kind(u: np.ndarray, grid) -> str:
    shape = u.shape
    if shape == (grid.n_s + 2, grid.n_y + 2):
        return "Sy"
    if len(shape) == 3 and shape[1:] == (grid.n_s + 2, grid.n_y + 2):
        return "tSy"
    if len(shape) == 2 and shape[1] == grid.n_s + 2:
        return "tS"
    if shape == (grid.n_s + 2,):
        return "S"
    raise ValueError(f"cannot infer field kind from shape {shape}")


def _pair_views(u, offset):
    a = u
    b = u
    for ax, o in enumerate(offset):
        if o == 0:
            continue
        n = u.shape[ax]
        if abs(o) >= n:
            return None, None
        sl_a = [slice(None)] * u.ndim
        sl_b = [slice(None)] * u.ndim
        if o > 0:
            sl_a[ax] = slice(o, None)
            sl_b[ax] = slice(None, n - o)
        else:
            sl_a[ax] = slice(None, o)
            sl_b[ax] = slice(-o, None)
        a = a[tuple(sl_a)]
        b = b[tuple(sl_b)]
    return a, b


def _offset_distance(offset, dt, hs, has_time):
    d2 = 0.0
    if has_time:
        d2 += abs(offset[0]) * dt
        space = offset[1:]
    else:
        space = offset
    for o, h in zip(space, hs):
        d2 += (o * h) ** 2
    return np.sqrt(d2)


def _neighbor_quotient(u, kind, dt, hs, h_exp):
    best = 0.0
    has_time = _HAS_TIME[kind]
    for off in _OFFSETS[kind]:
        a, b = _pair_views(u, off)
        if a is None or a.size == 0:
            continue
        dist = _offset_distance(off, dt, hs, has_time)
        gap = float(np.max(np.abs(a - b)))
        best = max(best, gap / dist ** h_exp)
    return best


def _all_pairs_quotient(u, kind, dt, hs, h_exp):
    coords = []
    has_time = _HAS_TIME[kind]
    axes_h = ([] if not has_time else [None]) + list(hs)
    grids = np.meshgrid(*[np.arange(n) for n in u.shape], indexing="ij")
    flat = u.ravel()
    n = flat.size
    if n > 4000:
        raise ValueError("all-pairs quotient restricted to <= 4000 nodes")
    cols = [g.ravel().astype(float) for g in grids]
    best = 0.0
    for i in range(n - 1):
        d2 = np.zeros(n - i - 1)
        for ax, (c, h) in enumerate(zip(cols, axes_h)):
            delta = c[i + 1:] - c[i]
            if h is None:
                d2 += np.abs(delta) * dt
            else:
                d2 += (delta * h) ** 2
        dist = np.sqrt(d2)
        gaps = np.abs(flat[i + 1:] - flat[i])
        mask = dist > 0
        if mask.any():
            best = max(best, float(np.max(gaps[mask] / dist[mask] ** h_exp)))
    return best


def _base_norm(u, kind, dt, hs, h_exp, all_pairs):
    sup = float(np.max(np.abs(u))) if u.size else 0.0
    if all_pairs:
        quot = _all_pairs_quotient(u, kind, dt, hs, h_exp)
    else:
        quot = _neighbor_quotient(u, kind, dt, hs, h_exp)
    return sup, quot


def _derivative_fields(u, kind, dt, hs, k):
    """Yield (name, field) for spatial derivatives up to order k plus d/dt."""
    has_time = _HAS_TIME[kind]
    nsp = _N_SPACE[kind]
    ax0 = 1 if has_time else 0
    names = ["S", "y"][:nsp]
    if k >= 1:
        for ax in range(nsp):
            yield f"d{names[ax]}", fd.d1(u, hs[ax], axis=ax0 + ax)
    if k >= 2:
        for ax in range(nsp):
            yield f"d{names[ax]}{names[ax]}", fd.d2(u, hs[ax], axis=ax0 + ax)
        if nsp == 2:
            yield "dSy", fd.d1(fd.d1(u, hs[0], axis=ax0), hs[1], axis=ax0 + 1)
    if k >= 1 and has_time:
        yield "dt", fd.d1(u, dt, axis=0)


def holder_norm(u: np.ndarray, k: int, h: float, grid, kind: str | None = None,
                all_pairs: bool = False) -> HolderNormEstimate:
    """Estimate the order-(k+h) Hoelder norm of a grid field.

    Args:
        u: field over (t, S, y), (S, y), (t, S) or (S,) nodes.
        k: number of spatial derivative orders to include (0, 1 or 2).
        h: Hoelder exponent in (0, 1).
        grid: GridSpec supplying spacings.
        kind: field layout; inferred from the shape when omitted.
        all_pairs: use the exhaustive pair set (small fields only).
    """
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    u = np.asarray(u, dtype=float)
    if kind is None:
        kind = infer_kind(u, grid)
    dt, hs = _spacings(grid, kind)
    sup, quot = _base_norm(u, kind, dt, hs, h, all_pairs)
    value = sup + quot
    parts = {}
    for name, f_arr in _derivative_fields(u, kind, dt, hs, k):
        s, q = _base_norm(f_arr, kind, dt, hs, h, all_pairs)
        parts[name] = float(s + q)
        value += s + q
    return HolderNormEstimate(float(value), float(sup), float(quot), parts, k, h)
