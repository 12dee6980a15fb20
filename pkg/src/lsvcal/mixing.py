"""Marginals, the nonlocal mixing ratio and the leverage surface.

The mixing ratio at a spot node is

    ratio(t, S) = (integral of p over y) / (integral of b^2 p over y),

i.e. the reciprocal of the conditional second moment of the volatility
transform b given the spot.  Multiplying the squared Dupire volatility by
this ratio yields the squared leverage.  Both integrals use the same
composite-trapezoid weights so a constant b cancels exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDenominator, DensityBoundViolation
from .fd import trapezoid_weights
from .grids import GridSpec
from .holder import holder_norm

_BOUND_SLACK = 1e-9


def marginal(p: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Trapezoid marginal over y; accepts a (..., n_y+2) slice or trajectory."""
    w = trapezoid_weights(grid.n_y + 2, grid.dy)
    return p @ w


def _b_values(b, grid: GridSpec) -> np.ndarray:
    if callable(b):
        return np.broadcast_to(b(grid.y_nodes), grid.n_y + 2).astype(float)
    return np.broadcast_to(np.asarray(b, dtype=float), grid.n_y + 2)


@dataclass
class MixingField:
    """Mixing ratio and its square root per (t, S) node."""

    ratio: np.ndarray
    sqrt_ratio: np.ndarray
    denominator_min: float

    def __post_init__(self):
        if np.any(self.ratio <= 0):
            raise ValueError("mixing ratio must be strictly positive")


def mixing_ratio(p: np.ndarray, b, grid: GridSpec, eps_den: float | None = None) -> MixingField:
    """Mixing ratio of a density slice (n_s+2, n_y+2) or trajectory (..., n_s+2, n_y+2).

    When b is constant on the y-nodes the ratio is returned as the exact
    constant 1/b^2 (and its root as 1/b), so the constant-volatility model
    degenerates without floating-point residue.

    Raises:
        DegenerateDenominator: weighted marginal below ``eps_den`` somewhere.
    """
    p = np.asarray(p, dtype=float)
    bv = _b_values(b, grid)
    w = trapezoid_weights(grid.n_y + 2, grid.dy)
    num = p @ w
    den = p @ (w * bv * bv)
    den_min = float(den.min()) if den.size else math.inf

    if eps_den is None:
        b_lo = float(np.min(bv))
        eps_den = 1e-12 * b_lo * b_lo * max(num.max(), 1.0) if num.size else 1e-12
    if den_min < eps_den:
        flat = np.argmin(den)
        s_index = int(np.unravel_index(flat, den.shape)[-1])
        raise DegenerateDenominator(s_index, den_min)

    if np.all(bv == bv[0]):
        b0 = float(bv[0])
        ratio = np.full_like(num, 1.0 / (b0 * b0))
        root = np.full_like(num, 1.0 / b0)
        return MixingField(ratio, root, den_min)

    ratio = num / den
    b_lo = float(np.min(bv))
    b_hi = float(np.max(bv))
    lo, hi = 1.0 / (b_hi * b_hi), 1.0 / (b_lo * b_lo)
    if ratio.min() < lo * (1 - _BOUND_SLACK) or ratio.max() > hi * (1 + _BOUND_SLACK):
        raise ValueError(
            f"mixing ratio left [{lo:.6g}, {hi:.6g}]: "
            f"[{ratio.min():.6g}, {ratio.max():.6g}]")
    return MixingField(ratio, np.sqrt(ratio), den_min)


def leverage(sigma_d: np.ndarray, mixing: MixingField) -> np.ndarray:
    """Leverage surface a = sigma_D * sqrt(ratio), pointwise on (t, S)."""
    return np.asarray(sigma_d, dtype=float) * mixing.sqrt_ratio


@dataclass
class GapRecord:
    """One evaluation of the perturbation-gap monitor.

    ``lhs`` is the Hoelder-2 norm of (ratio - 1/b_ref^2) plus that of
    (sqrt(ratio) - 1/b_ref); ``scaled`` divides it by
    slope * (1 + |p|)**6, the growth law the short-time theory predicts.
    """

    lhs: float
    lhs_parts: tuple
    p_norm: float
    slope: float
    scaled: float | None

    def as_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "lhs_ratio_part": self.lhs_parts[0],
            "lhs_root_part": self.lhs_parts[1],
            "p_norm": self.p_norm,
            "bsq_slope": self.slope,
            "scaled": self.scaled,
        }


def ratio_gap_monitor(p: np.ndarray, b, b_ref: float, grid: GridSpec,
                      bsq_slope: float, p_floor: float | None = None,
                      eps_den: float | None = None) -> GapRecord:
    """Measure how far the mixing ratio sits from its constant-b anchor.

    Args:
        p: density trajectory (n_t+1, n_s+2, n_y+2) or a single slice.
        b_ref: anchor value of b (the freeze used by the linear solves).
        bsq_slope: measured sup |d(b^2)/dy| on the grid.
        p_floor: initial density floor; when given, p must stay above half
            of it (raises DensityBoundViolation otherwise).
    """
    p = np.asarray(p, dtype=float)
    if p_floor is not None and p.min() < 0.5 * p_floor:
        raise DensityBoundViolation(
            f"density fell to {p.min():.3e} < {0.5 * p_floor:.3e}")
    mix = mixing_ratio(p, b, grid, eps_den=eps_den)
    gap_ratio = mix.ratio - 1.0 / (b_ref * b_ref)
    gap_root = mix.sqrt_ratio - 1.0 / b_ref
    kind = "tS" if p.ndim == 3 else "S"
    n1 = holder_norm(gap_ratio, 2, grid.holder_exp, grid, kind=kind)
    n2 = holder_norm(gap_root, 2, grid.holder_exp, grid, kind=kind)
    lhs = n1.value + n2.value
    if not np.isfinite(lhs):
        raise ValueError("gap norm is not finite")
    pn = holder_norm(p, 2, grid.holder_exp, grid,
                     kind="tSy" if p.ndim == 3 else "Sy").value
    scaled = None
    if bsq_slope > 0:
        scaled = lhs / (bsq_slope * (1.0 + pn) ** 6)
    return GapRecord(lhs, (n1.value, n2.value), pn, bsq_slope, scaled)


def write_ts_csv(path, values: np.ndarray, grid: GridSpec, name: str,
                 t_indices=None) -> None:
    """Persist a (t, S) field as CSV rows ``t,S,<name>``."""
    values = np.asarray(values)
    if t_indices is None:
        t_indices = range(values.shape[0])
    t_nodes = grid.t_nodes
    s_nodes = grid.s_nodes
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"t,S,{name}\n")
        for k in t_indices:
            t = t_nodes[k]
            for i, s in enumerate(s_nodes):
                fh.write(f"{t:.17g},{s:.17g},{values[k, i]:.17g}\n")
