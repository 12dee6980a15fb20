"""Frozen-coefficient linear parabolic solver.

The divergence-form operator produced by freezing the mixing ratio is
expanded into non-divergence form (diffusion matrix, drift, zeroth-order
term) by differentiating the coefficient products on the grid.  Time
stepping uses an alternating-direction scheme: implicit tridiagonal sweeps
in S and in y, the mixed derivative and the source handled explicitly with
a second corrector pass (Craig-Sneyd splitting).  All stages work on the
increment relative to the previous step, so constants and the Dirichlet
boundary template are preserved exactly.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import fd, tridiag
from .errors import CrossTermCFL, NonElliptic, NonEllipticAssembly, StabilityFailure
from .grids import GridSpec
from .model import ModelSpec, eval_coeff


@dataclass
class CoefficientFields:
    """Space-time coefficient arrays of the non-divergence operator.

    ``a_sy`` stores the symmetric off-diagonal entry (the operator term is
    ``2 a_sy d2u/dSdy``).  ``f`` is the source; it may be swapped per solve
    via :meth:`with_source` without copying the other arrays.
    """

    a_ss: np.ndarray
    a_sy: np.ndarray
    a_yy: np.ndarray
    b_s: np.ndarray
    b_y: np.ndarray
    c: np.ndarray
    f: np.ndarray | None = None
    ellipticity_floor: float | None = None
    time_constant: bool = False

    def with_source(self, f: np.ndarray | None) -> "CoefficientFields":
        return replace(self, f=f)

    def slice(self, k: int) -> dict:
        return {"a_ss": self.a_ss[k], "a_sy": self.a_sy[k], "a_yy": self.a_yy[k],
                "b_s": self.b_s[k], "b_y": self.b_y[k], "c": self.c[k]}


@dataclass
class LinearSolveReport:
    """Diagnostics of one trajectory solve."""

    k2: float
    max_residual: float
    n_tridiag_solves: int
    cross_cfl: float
    n_steps: int


def _min_eig_2x2(a_ss, a_sy, a_yy):
    half_tr = 0.5 * (a_ss + a_yy)
    disc = np.sqrt((0.5 * (a_ss - a_yy)) ** 2 + a_sy * a_sy)
    return half_tr - disc


def assemble_slice(spec: ModelSpec, grid: GridSpec, k: int,
                   ratio, root) -> dict:
    """Non-divergence coefficients at time index k for a frozen mixing ratio.

    ``ratio``/``root`` may be scalars (the constant-b freeze) or per-S-node
    arrays (time-lagged mode).  Derivatives of the coefficient products are
    taken with second-order differences on the full node set.
    """
    t = grid.t_nodes[k] if k < grid.n_t + 1 else grid.horizon
    ds, dy = grid.ds, grid.dy
    a1 = eval_coeff(spec.alpha1, k, t, grid)
    a2 = eval_coeff(spec.alpha2, k, t, grid)
    rho = spec.corr.entries
    ratio_col = np.asarray(ratio, dtype=float).reshape(-1, 1) if np.ndim(ratio) else float(ratio)
    root_col = np.asarray(root, dtype=float).reshape(-1, 1) if np.ndim(root) else float(root)

    big_a = rho[0, 0] * a1 * a1 * ratio_col
    cross_full = 2.0 * rho[0, 1] * a1 * a2 * root_col
    big_b = rho[1, 1] * a2 * a2

    beta1 = eval_coeff(spec.beta1, k, t, grid) + spec.rate * grid.s_nodes[:, None]
    beta2 = eval_coeff(spec.beta2, k, t, grid)
    gamma = eval_coeff(spec.gamma, k, t, grid) + spec.rate

    b_s = -2.0 * fd.d1(big_a, ds, axis=0) - fd.d1(cross_full, dy, axis=1) + beta1
    b_y = -2.0 * fd.d1(big_b, dy, axis=1) - fd.d1(cross_full, ds, axis=0) + beta2
    c = (-fd.d2(big_a, ds, axis=0) - fd.d2_cross(cross_full, ds, dy)
         - fd.d2(big_b, dy, axis=1)
         + fd.d1(beta1, ds, axis=0) + fd.d1(beta2, dy, axis=1) + gamma)

    return {"a_ss": big_a, "a_sy": 0.5 * cross_full, "a_yy": big_b,
            "b_s": b_s, "b_y": b_y, "c": c}


def _probe_time_constant(spec: ModelSpec, grid: GridSpec) -> bool:
    ks = {0, grid.n_t // 2, grid.n_t}
    slices = [assemble_slice(spec, grid, k, 1.0, 1.0) for k in sorted(ks)]
    first = slices[0]
    return all(np.array_equal(first[key], s[key]) for s in slices[1:] for key in first)


def assemble_frozen(spec: ModelSpec, grid: GridSpec, mixing=None,
                    b_ref: float | None = None) -> CoefficientFields:
    """Assemble the frozen linear operator over the whole horizon.

    With ``b_ref`` given, the mixing ratio is frozen at the exact constants
    1/b_ref^2 and 1/b_ref.  With ``mixing`` given (a MixingField trajectory),
    each time slice freezes at that slice's ratio.  Time-independent
    coefficients are detected and stored as broadcast views.

    Raises:
        NonEllipticAssembly: the assembled diffusion matrix is not
        uniformly positive definite.
    """
    if (mixing is None) == (b_ref is None):
        raise ValueError("give exactly one of mixing or b_ref")
    n_k = grid.n_t + 1
    shape = grid.shape

    if mixing is None:
        ratio_of = lambda k: 1.0 / (b_ref * b_ref)
        root_of = lambda k: 1.0 / b_ref
        time_const = _probe_time_constant(spec, grid)
    else:
        ratio_of = lambda k: mixing.ratio[k]
        root_of = lambda k: mixing.sqrt_ratio[k]
        time_const = False

    a1_lo = math.inf
    a2_lo = math.inf

    def alpha_mins(k, t):
        nonlocal a1_lo, a2_lo
        a1_lo = min(a1_lo, float(eval_coeff(spec.alpha1, k, t, grid).min()))
        a2_lo = min(a2_lo, float(eval_coeff(spec.alpha2, k, t, grid).min()))

    if time_const:
        sl = assemble_slice(spec, grid, 0, ratio_of(0), root_of(0))
        arrays = {key: np.broadcast_to(val, shape) for key, val in sl.items()}
        alpha_mins(0, grid.t_nodes[0])
    else:
        arrays = {key: np.empty(shape) for key in
                  ("a_ss", "a_sy", "a_yy", "b_s", "b_y", "c")}
        for k in range(n_k):
            sl = assemble_slice(spec, grid, k, ratio_of(k), root_of(k))
            for key, val in sl.items():
                arrays[key][k] = val
            alpha_mins(k, grid.t_nodes[k])

    bv = spec.b_values(grid) if spec.b is not None else np.ones(grid.n_y + 2)
    b_hi = float(np.max(bv))
    floor = spec.corr.min_eig * min(a1_lo / b_hi, a2_lo) ** 2

    fields = CoefficientFields(**arrays, ellipticity_floor=floor,
                               time_constant=time_const)
    k2 = ellipticity_constant(fields)
    if k2 <= 0:
        raise NonEllipticAssembly(f"assembled operator has K2 = {k2:.3e}")
    return fields


def ellipticity_constant(fields: CoefficientFields) -> float:
    """Smallest eigenvalue of the diffusion matrix over all nodes.

    Raises:
        NonElliptic: the minimum is not strictly positive, or it undercuts
        the theoretical floor recorded at assembly by more than round-off.
    """
    k2 = math.inf
    for k in range(fields.a_ss.shape[0]):
        lam = _min_eig_2x2(fields.a_ss[k], fields.a_sy[k], fields.a_yy[k])
        k2 = min(k2, float(lam.min()))
        if fields.time_constant:
            break
    if k2 <= 0:
        raise NonElliptic(f"K2 = {k2:.3e} <= 0")
    if fields.ellipticity_floor is not None:
        tol = 1e-10 * max(1.0, abs(fields.ellipticity_floor))
        if k2 < fields.ellipticity_floor - tol:
            raise NonElliptic(
                f"K2 = {k2:.6e} below theoretical floor {fields.ellipticity_floor:.6e}")
    return k2


# ---------------------------------------------------------------------------
# operator applications (difference form: constants map to exact zeros)
# ---------------------------------------------------------------------------

def _apply_s(sl: dict, u: np.ndarray, ds: float) -> np.ndarray:
    """One-dimensional S-part: a_ss d2_S u - b_s d1_S u - c/2 u, interior."""
    out = np.zeros_like(u)
    a = sl["a_ss"][1:-1, :]
    b = sl["b_s"][1:-1, :]
    lo = a / (ds * ds) + b / (2.0 * ds)
    up = a / (ds * ds) - b / (2.0 * ds)
    out[1:-1, :] = (lo * (u[:-2, :] - u[1:-1, :]) + up * (u[2:, :] - u[1:-1, :])
                    - 0.5 * sl["c"][1:-1, :] * u[1:-1, :])
    return out


def _apply_y(sl: dict, u: np.ndarray, dy: float) -> np.ndarray:
    out = np.zeros_like(u)
    a = sl["a_yy"][:, 1:-1]
    b = sl["b_y"][:, 1:-1]
    lo = a / (dy * dy) + b / (2.0 * dy)
    up = a / (dy * dy) - b / (2.0 * dy)
    out[:, 1:-1] = (lo * (u[:, :-2] - u[:, 1:-1]) + up * (u[:, 2:] - u[:, 1:-1])
                    - 0.5 * sl["c"][:, 1:-1] * u[:, 1:-1])
    return out


def _apply_mix(sl: dict, u: np.ndarray, ds: float, dy: float) -> np.ndarray:
    return 2.0 * sl["a_sy"] * fd.cross_diff_interior(u, ds, dy)


def _zero_ring(v: np.ndarray) -> np.ndarray:
    v[0, :] = v[-1, :] = 0.0
    v[:, 0] = v[:, -1] = 0.0
    return v


def _sweep_s(sl1: dict, rhs: np.ndarray, theta_dt: float, ds: float,
             collect_residual: bool) -> tuple:
    """Solve (I - theta*dt*A_S) delta = rhs along S for every y-row."""
    a = sl1["a_ss"]
    b = sl1["b_s"]
    lo = a / (ds * ds) + b / (2.0 * ds)
    up = a / (ds * ds) - b / (2.0 * ds)
    lower = -theta_dt * lo
    upper = -theta_dt * up
    diag = 1.0 + theta_dt * (lo + up) + theta_dt * 0.5 * sl1["c"]
    # boundary unknowns within each system, then the two boundary systems
    lower[0, :] = lower[-1, :] = 0.0
    upper[0, :] = upper[-1, :] = 0.0
    diag[0, :] = diag[-1, :] = 1.0
    lower[:, 0] = lower[:, -1] = 0.0
    upper[:, 0] = upper[:, -1] = 0.0
    diag[:, 0] = diag[:, -1] = 1.0
    rhs = rhs.copy()
    rhs[0, :] = rhs[-1, :] = 0.0

    lt, dt_, ut, rt = (np.ascontiguousarray(x.T) for x in (lower, diag, upper, rhs))
    x = tridiag.solve_batch(lt, dt_, ut, rt)
    res = tridiag.residual_batch(lt, dt_, ut, rt, x) if collect_residual else 0.0
    return np.ascontiguousarray(x.T), res


def _sweep_y(sl1: dict, rhs: np.ndarray, theta_dt: float, dy: float,
             collect_residual: bool) -> tuple:
    a = sl1["a_yy"]
    b = sl1["b_y"]
    lo = a / (dy * dy) + b / (2.0 * dy)
    up = a / (dy * dy) - b / (2.0 * dy)
    lower = -theta_dt * lo
    upper = -theta_dt * up
    diag = 1.0 + theta_dt * (lo + up) + theta_dt * 0.5 * sl1["c"]
    lower[:, 0] = lower[:, -1] = 0.0
    upper[:, 0] = upper[:, -1] = 0.0
    diag[:, 0] = diag[:, -1] = 1.0
    lower[0, :] = lower[-1, :] = 0.0
    upper[0, :] = upper[-1, :] = 0.0
    diag[0, :] = diag[-1, :] = 1.0
    rhs = rhs.copy()
    rhs[:, 0] = rhs[:, -1] = 0.0

    x = tridiag.solve_batch(lower, diag, upper, rhs)
    res = tridiag.residual_batch(lower, diag, upper, rhs, x) if collect_residual else 0.0
    return x, res


def step_slices(sl0: dict, sl1: dict, u: np.ndarray, grid: GridSpec,
                theta: float = 0.5, f0=None, f1=None, time_constant: bool = False,
                collect_residual: bool = False, cross_iterations: int = 1) -> tuple:
    """One Craig-Sneyd step from coefficient slices at t_k and t_{k+1}.

    Returns (u_next, max_sweep_residual).  Dirichlet values are enforced by
    keeping the boundary increment at zero, so the lateral trace of ``u``
    carries through every stage unchanged.  ``cross_iterations`` > 1 repeats
    the mixed-derivative corrector against the latest increment until it
    stabilizes, making the cross term effectively implicit.
    """
    ds, dy, dt = grid.ds, grid.dy, grid.dt
    theta_dt = theta * dt

    as0 = _apply_s(sl0, u, ds)
    ay0 = _apply_y(sl0, u, dy)
    am0 = _apply_mix(sl0, u, ds, dy)
    rhs_full = as0 + ay0 + am0
    if f0 is not None:
        rhs_full = rhs_full + f0
    delta0 = _zero_ring(dt * rhs_full)

    if time_constant:
        chi_s = None
        chi_y = None
    else:
        chi_s = _zero_ring(theta_dt * (_apply_s(sl1, u, ds) - as0))
        chi_y = _zero_ring(theta_dt * (_apply_y(sl1, u, dy) - ay0))

    def sweeps(d0):
        r = d0 if chi_s is None else d0 + chi_s
        d1_, res1 = _sweep_s(sl1, r, theta_dt, ds, collect_residual)
        r = d1_ if chi_y is None else d1_ + chi_y
        d2_, res2 = _sweep_y(sl1, r, theta_dt, dy, collect_residual)
        return d2_, max(res1, res2)

    delta2, res = sweeps(delta0)

    df = None
    if f0 is not None or f1 is not None:
        z = np.zeros_like(u)
        df = 0.5 * dt * ((f1 if f1 is not None else z)
                         - (f0 if f0 is not None else z))

    prev = delta2
    for _ in range(max(1, cross_iterations)):
        corr = 0.5 * dt * (_apply_mix(sl1, u + prev, ds, dy) - am0)
        if df is not None:
            corr = corr + df
        delta0h = _zero_ring(delta0 + _zero_ring(corr))
        nxt, res_b = sweeps(delta0h)
        res = max(res, res_b)
        gap = float(np.max(np.abs(nxt - prev)))
        prev = nxt
        if gap <= 1e-13 * (float(np.max(np.abs(nxt))) + 1e-300):
            break

    u_next = u + prev
    if np.isnan(u_next).any():
        raise StabilityFailure("time step produced NaNs")
    return u_next, res


def step_linear(fields: CoefficientFields, u: np.ndarray, k: int, grid: GridSpec,
                theta: float = 0.5, f: np.ndarray | None = None,
                collect_residual: bool = False, cross_iterations: int = 1) -> tuple:
    """Advance one step k -> k+1 of the assembled operator."""
    src = f if f is not None else fields.f
    f0 = src[k] if src is not None else None
    f1 = src[k + 1] if src is not None else None
    return step_slices(fields.slice(k), fields.slice(k + 1), u, grid,
                       theta=theta, f0=f0, f1=f1,
                       time_constant=fields.time_constant,
                       collect_residual=collect_residual,
                       cross_iterations=cross_iterations)


def cross_cfl_number(fields: CoefficientFields, grid: GridSpec) -> float:
    """Explicit mixed-term stability estimate dt * max|2 a_sy| / (dS dy)."""
    m = float(np.max(np.abs(fields.a_sy[0]))) if fields.time_constant \
        else float(np.max(np.abs(fields.a_sy)))
    return grid.dt * 2.0 * m / (grid.ds * grid.dy)


def solve_linear(fields: CoefficientFields, psi: np.ndarray, grid: GridSpec,
                 f: np.ndarray | None = None, n_steps: int | None = None,
                 theta: float = 0.5, collect_residual: bool = True,
                 cross_iterations: int = 1) -> tuple:
    """Solve the frozen equation over [0, n_steps * dt] from and with psi.

    ``psi`` provides both the initial slice and (through its boundary trace,
    held constant in time) the lateral Dirichlet data.

    Returns:
        (trajectory (n_steps+1, n_s+2, n_y+2), LinearSolveReport)
    """
    n = grid.n_t if n_steps is None else int(n_steps)
    if not 1 <= n <= grid.n_t:
        raise ValueError(f"step count {n} outside [1, {grid.n_t}]")
    traj = np.empty((n + 1, grid.n_s + 2, grid.n_y + 2))
    traj[0] = psi
    u = np.array(psi, dtype=float)
    max_res = 0.0
    for k in range(n):
        u, res = step_linear(fields, u, k, grid, theta=theta, f=f,
                             collect_residual=collect_residual,
                             cross_iterations=cross_iterations)
        max_res = max(max_res, res)
        traj[k + 1] = u

    nu = cross_cfl_number(fields, grid)
    if nu > 1.0:
        warnings.warn(f"explicit cross-term estimate {nu:.2f} > 1", CrossTermCFL)
    k2 = ellipticity_constant(fields)
    report = LinearSolveReport(k2=k2, max_residual=max_res,
                               n_tridiag_solves=4 * n, cross_cfl=nu, n_steps=n)
    return traj, report


def supnorm_time_bound(fields: CoefficientFields, f, grid: GridSpec,
                       n_steps: int | None = None, theta: float = 0.5) -> dict:
    """Empirical sup-norm growth constant for zero boundary and initial data.

    Solves with psi = 0 and the given source, then returns the curve
    ``max_x |u(x, t)| / (t * |f|_0)`` over the time ladder together with its
    supremum.  The curve must stay finite; blow-up raises StabilityFailure.
    """
    n = grid.n_t if n_steps is None else int(n_steps)
    shape = grid.shape
    if np.ndim(f) == 0:
        f_arr = np.broadcast_to(float(f), shape)
    else:
        f_arr = np.asarray(f, dtype=float)
    f_sup = float(np.max(np.abs(f_arr[:n + 1])))
    if f_sup == 0.0:
        traj, _ = solve_linear(fields, np.zeros(shape[1:]), grid, f=f_arr,
                               n_steps=n, theta=theta, collect_residual=False)
        return {"t": grid.t_nodes[1:n + 1], "ratio": np.zeros(n), "k0": 0.0,
                "sup_curve": np.zeros(n)}

    traj, _ = solve_linear(fields, np.zeros(shape[1:]), grid, f=f_arr,
                           n_steps=n, theta=theta, collect_residual=False)
    ts = grid.t_nodes[1:n + 1]
    sups = np.max(np.abs(traj[1:]), axis=(1, 2))
    ratio = sups / (ts * f_sup)
    if not np.all(np.isfinite(ratio)):
        raise StabilityFailure("sup-norm ratio curve blew up")
    return {"t": ts, "ratio": ratio, "k0": float(ratio.max()), "sup_curve": sups}
