"""End-to-end calibration pipeline: quotes in, leverage surface out.

Configuration is a flat ``key = value`` text file (see README for the key
table).  The pipeline builds the implied-variance surface, extracts Dupire
local volatility, solves the nonlocal forward equation for the joint
density, derives the leverage surface and verifies the calibration by
comparing the solution's spot marginal against the one-dimensional forward
solve.  All artifacts are written atomically; timestamps live only in a
metadata sidecar so identical inputs give byte-identical outputs.
"""
from __future__ import annotations

import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from ._version import __version__
from .errors import (CalibrationError, HorizonExhausted, MembershipLost,
                     NotConverged)
from .fixed_point import (IterateBounds, iterate, shrink_horizon,
                          solve_lagged)
from .fd import trapezoid_weights
from .grids import GridSpec
from .market import (LocalVolSurface, _bs_call, build_implied_surface,
                     check_price_bounds, dupire_forward_solve, dupire_local_vol,
                     implied_vol_from_price, load_quotes)
from .mixing import leverage, marginal, mixing_ratio, write_ts_csv
from .model import (DensityField, ModelSpec, SpotAmplitude,
                    compatibility_residual, convert_correlation, grid_mass,
                    smoothed_dirac, validate_model)


# ---------------------------------------------------------------------------
# coefficient builtins
# ---------------------------------------------------------------------------

def _table_fn(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    xs, vs = data[:, 0], data[:, 1]

    def fn(y):
        return np.interp(np.asarray(y, dtype=float), xs, vs)
    return fn


def builtin_y_function(spec_str: str, base_dir: str = "."):
    """Resolve a named y-function: ``const:v``, ``exp``,
    ``exp_clamped:lo:hi``, ``sqrt1p_sin:s``, ``cir:nu:floor``,
    ``mean_revert:kappa:theta`` or ``table:file.csv``."""
    parts = spec_str.strip().split(":")
    name, args = parts[0], [p for p in parts[1:]]
    if name == "const":
        v = float(args[0])
        return lambda y: np.full_like(np.asarray(y, dtype=float), v)
    if name == "exp":
        return lambda y: np.exp(np.asarray(y, dtype=float))
    if name == "exp_clamped":
        lo, hi = float(args[0]), float(args[1])
        return lambda y: np.clip(np.exp(np.asarray(y, dtype=float)), lo, hi)
    if name == "sqrt1p_sin":
        s = float(args[0])
        floor = float(args[1]) if len(args) > 1 else 0.04
        return lambda y: np.sqrt(np.maximum(1.0 + s * np.sin(np.asarray(y, dtype=float)), floor))
    if name == "cir":
        nu, floor = float(args[0]), float(args[1])
        return lambda y: nu * np.sqrt(np.maximum(np.asarray(y, dtype=float), floor))
    if name == "mean_revert":
        kappa, theta = float(args[0]), float(args[1])
        return lambda y: kappa * (theta - np.asarray(y, dtype=float))
    if name == "table":
        return _table_fn(os.path.join(base_dir, args[0]))
    raise ValueError(f"unknown builtin {spec_str!r}")


def _as_txy(fn):
    """Lift a y-function to the (t, S, y) coefficient signature."""
    if fn is None:
        return None
    return lambda t, s, y: fn(y) + 0.0 * s


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "paths.output_dir": "out",
    "model.b": "const:1.0",
    "model.alpha2": "const:0.2",
    "model.beta1": "",
    "model.beta2": "mean_revert:1.0:0.0",
    "model.gamma": "",
    "model.rho": "0.0",
    "model.rate": "0.0",
    "model.spot0": "100.0",
    "model.y0": "0.0",
    "model.alpha_floor": "1e-4",
    "model.b_ref": "center",
    "grid.holder_exp": "0.5",
    "init.floor_rel": "1e-6",
    "fp.mode": "fixed-point",
    "fp.max_iter": "50",
    "fp.tol_factor": "1e-8",
    "fp.cap_factor": "1.5",
    "fp.max_halvings": "6",
    "fp.auto_shrink": "true",
    "fp.cross_iterations": "1",
    "run.verify": "true",
    "run.snapshot_every": "0",
    "run.snapshot_format": "csv",
    "vol.floor": "0.01",
    "vol.cap": "3.0",
    "verify.l1_tol": "1e-2",
    "verify.mass_tol": "5e-3",
    "verify.identity_tol": "1e-8",
}

_REQUIRED = ["paths.quotes", "grid.s_min", "grid.s_max", "grid.y_min",
             "grid.y_max", "grid.ns", "grid.ny", "grid.t", "grid.nt",
             "init.bandwidth_s", "init.bandwidth_y"]


@dataclass
class RunConfig:
    """Parsed configuration plus the directory paths are resolved against."""

    values: dict
    base_dir: str = "."

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        values = dict(_DEFAULTS)
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{line_no}: expected key = value")
                key, val = (s.strip() for s in line.split("=", 1))
                values[key] = val
        missing = [k for k in _REQUIRED if k not in values]
        if missing:
            raise ValueError(f"missing config keys: {', '.join(missing)}")
        return cls(values=values, base_dir=os.path.dirname(os.path.abspath(path)))

    def get(self, key, cast=str):
        v = self.values[key]
        if cast is bool:
            return str(v).strip().lower() in ("1", "true", "yes", "on")
        return cast(v)

    def path(self, key) -> str:
        return os.path.join(self.base_dir, self.get(key))

    def grid(self) -> GridSpec:
        return GridSpec(
            s_min=self.get("grid.s_min", float), s_max=self.get("grid.s_max", float),
            y_min=self.get("grid.y_min", float), y_max=self.get("grid.y_max", float),
            n_s=self.get("grid.ns", int), n_y=self.get("grid.ny", int),
            horizon=self.get("grid.t", float), n_t=self.get("grid.nt", int),
            holder_exp=self.get("grid.holder_exp", float))


# ---------------------------------------------------------------------------
# pricing and verification
# ---------------------------------------------------------------------------

def reprice_calls(q: np.ndarray, strikes, rate: float, grid: GridSpec,
                  t_indices=None) -> np.ndarray:
    """Discounted call prices by quadrature against the spot marginal.

    ``q`` is a marginal trajectory (n_k, n_s+2) or a single slice; returns
    an array of shape (len(t_indices), len(strikes)).
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if np.any(q < -1e-10):
        raise ValueError("marginal density must be nonnegative")
    strikes = np.asarray(strikes, dtype=float)
    if t_indices is None:
        t_indices = range(q.shape[0])
    s = grid.s_nodes
    w = trapezoid_weights(grid.n_s + 2, grid.ds)
    payoff = np.maximum(s[None, :] - strikes[:, None], 0.0)   # (nK, nS)
    out = np.empty((len(list(t_indices)), len(strikes)))
    for row, k in enumerate(t_indices):
        disc = math.exp(-rate * grid.t_nodes[k])
        out[row] = disc * (payoff * (w * q[k])[None, :]).sum(axis=1)
    return out


@dataclass
class VerificationReport:
    """Calibration-quality metrics for one converged run."""

    marginal_l1: dict                  # time -> L1 distance q_p vs q_D
    mass_drift: float
    identity_max_rel: float
    reprice_max_rel_err: float | None
    uncorrected_l1: float | None
    gates: dict
    extras: dict = field(default_factory=dict)

    @property
    def all_within_tolerance(self) -> bool:
        return all(self.gates.values())

    def as_json_dict(self) -> dict:
        return {
            "marginal_l1": {f"{t:.10g}": v for t, v in self.marginal_l1.items()},
            "mass_drift": self.mass_drift,
            "identity_max_rel": self.identity_max_rel,
            "reprice_max_rel_err": self.reprice_max_rel_err,
            "uncorrected_l1": self.uncorrected_l1,
            "gates": dict(self.gates),
            "extras": dict(self.extras),
        }


def verify_calibration(density: DensityField, sigma_d, spec: ModelSpec,
                       grid: GridSpec, snapshot_ks=None, quotes=None,
                       l1_tol: float = 1e-2, mass_tol: float = 5e-3,
                       identity_tol: float = 1e-8) -> VerificationReport:
    """Compare the joint solution's marginal with the 1D forward target.

    Records the L1 marginal distance per output maturity, the mass drift of
    the joint density, the pointwise consistency of the leverage identity,
    and (when quotes are given) repricing errors against them.
    """
    p = density.values
    n_k = p.shape[0] - 1
    sig = sigma_d.values if isinstance(sigma_d, LocalVolSurface) else np.asarray(sigma_d)
    if snapshot_ks is None:
        step = max(1, n_k // 10)
        snapshot_ks = list(range(step, n_k + 1, step))

    q_p = marginal(p, grid)
    q_d = dupire_forward_solve(sig, spec.rate, grid, q_p[0], n_steps=n_k)
    l1 = {}
    for k in snapshot_ks:
        l1[float(grid.t_nodes[k])] = float(
            np.sum(np.abs(q_p[k] - q_d[k])) * grid.ds)

    masses = np.array([grid_mass(p[k], grid) for k in range(n_k + 1)])
    mass_drift = float(np.max(np.abs(masses - masses[0])))

    mix = mixing_ratio(p, spec.b, grid)
    lev = leverage(sig[:n_k + 1], mix)
    w = trapezoid_weights(grid.n_y + 2, grid.dy)
    bv = spec.b_values(grid)
    cond = (p @ (w * bv * bv)) / np.maximum(p @ w, 1e-300)
    identity = float(np.max(np.abs(lev * lev * cond - sig[:n_k + 1] ** 2)
                            / np.maximum(sig[:n_k + 1] ** 2, 1e-300)))

    # two repricing views: literally against the quoted Black-Scholes prices
    # (includes the bias of the regularized start) and against the
    # one-dimensional target densities (pure cross-scheme error)
    reprice_err = None
    reprice_vs_target = None
    if quotes:
        errs_quote = []
        errs_target = []
        for q in quotes:
            if q.implied_vol is None or q.maturity > grid.t_nodes[n_k] + 1e-12:
                continue
            if not 0.8 <= q.strike / spec.spot0 <= 1.2:
                continue
            k = int(round(q.maturity / grid.dt))
            if abs(k * grid.dt - q.maturity) > 1e-9 or k > n_k:
                continue
            model_px = float(reprice_calls(q_p[k][None, :], [q.strike],
                                           spec.rate, grid, t_indices=[0])[0, 0])
            target_px = float(reprice_calls(q_d[k][None, :], [q.strike],
                                            spec.rate, grid, t_indices=[0])[0, 0])
            quote_px = _bs_call(spec.spot0, q.strike, q.maturity, spec.rate,
                                q.implied_vol)
            if target_px > 1e-12:
                errs_target.append(abs(model_px - target_px) / target_px)
            if quote_px > 1e-12:
                errs_quote.append(abs(model_px - quote_px) / quote_px)
        reprice_err = max(errs_quote) if errs_quote else None
        reprice_vs_target = max(errs_target) if errs_target else None

    gates = {
        "marginal_l1": max(l1.values()) <= l1_tol if l1 else True,
        "mass_drift": mass_drift <= mass_tol,
        "identity": identity <= identity_tol,
    }
    return VerificationReport(
        marginal_l1=l1, mass_drift=mass_drift, identity_max_rel=identity,
        reprice_max_rel_err=reprice_err, uncorrected_l1=None, gates=gates,
        extras={"final_mass": float(masses[-1]),
                "reprice_vs_target_rel_err": reprice_vs_target})


# ---------------------------------------------------------------------------
# artifact writers
# ---------------------------------------------------------------------------

def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _write_json(path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True,
                                   default=_json_default) + "\n")


def _write_marginals(path, q_p, q_d, grid, ks) -> None:
    lines = ["t,S,q_p,q_D"]
    for k in ks:
        t = grid.t_nodes[k]
        for i, s in enumerate(grid.s_nodes):
            lines.append(f"{t:.17g},{s:.17g},{q_p[k, i]:.17g},{q_d[k, i]:.17g}")
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_density_csv(path, p_slice, grid) -> None:
    lines = ["S,y,p"]
    for i, s in enumerate(grid.s_nodes):
        for j, y in enumerate(grid.y_nodes):
            lines.append(f"{s:.17g},{y:.17g},{p_slice[i, j]:.17g}")
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_density_bin(path, p_slice, grid) -> None:
    """Flat binary: magic, dims (2 int64), origin+spacing (4 float64),
    then the row-major float64 payload."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"LSVD0001")
        np.array(p_slice.shape, dtype=np.int64).tofile(fh)
        np.array([grid.s_min, grid.ds, grid.y_min, grid.dy],
                 dtype=np.float64).tofile(fh)
        np.ascontiguousarray(p_slice, dtype=np.float64).tofile(fh)
    os.replace(tmp, path)


def read_density_bin(path) -> tuple:
    """Read a density snapshot written by the binary writer."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != b"LSVD0001":
            raise ValueError(f"bad magic {magic!r}")
        dims = np.fromfile(fh, dtype=np.int64, count=2)
        meta = np.fromfile(fh, dtype=np.float64, count=4)
        payload = np.fromfile(fh, dtype=np.float64).reshape(tuple(dims))
    return payload, {"s_min": meta[0], "ds": meta[1], "y_min": meta[2], "dy": meta[3]}


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def run_pipeline(config: RunConfig, output_dir: str | None = None,
                 mode: str | None = None, verify: bool | None = None,
                 snapshot_every: int | None = None, log=None) -> int:
    """Execute the full calibration; returns the process exit status.

    0: converged and every enabled verification within tolerance.
    1: input/configuration error (no artifacts written).
    2: no convergence at any horizon, or verification out of tolerance
       (artifacts still written).
    """
    log = log or (lambda msg: print(msg, file=sys.stderr))
    t_start = time.time()

    # ---- stage 1: inputs (any failure leaves no artifacts behind) ----
    try:
        quotes_path = config.path("paths.quotes")
        if not os.path.exists(quotes_path):
            raise FileNotFoundError(f"quotes file not found: {quotes_path}")
        grid = config.grid()
        spot0 = config.get("model.spot0", float)
        rate = config.get("model.rate", float)
        y0 = config.get("model.y0", float)

        quotes = load_quotes(quotes_path)
        if any(q.price is not None for q in quotes):
            check_price_bounds(quotes, spot0, rate)
            quotes = [q if q.implied_vol is not None else
                      type(q)(q.maturity, q.strike, implied_vol=implied_vol_from_price(
                          q.price, spot0, q.strike, q.maturity, rate))
                      for q in quotes]
        surface = build_implied_surface(quotes, spot0, t_max=grid.horizon)
        sigma_d = dupire_local_vol(
            surface, rate, grid,
            floor=config.get("vol.floor", float), cap=config.get("vol.cap", float))

        b_fn = builtin_y_function(config.get("model.b"), config.base_dir)
        alpha2 = _as_txy(builtin_y_function(config.get("model.alpha2"), config.base_dir))
        beta1 = config.get("model.beta1")
        beta2 = config.get("model.beta2")
        gamma = config.get("model.gamma")
        spec = ModelSpec(
            b=b_fn,
            alpha1=SpotAmplitude(sigma_d.values, b_fn, grid),
            alpha2=alpha2,
            beta1=_as_txy(builtin_y_function(beta1, config.base_dir)) if beta1 else None,
            beta2=_as_txy(builtin_y_function(beta2, config.base_dir)) if beta2 else None,
            gamma=_as_txy(builtin_y_function(gamma, config.base_dir)) if gamma else None,
            corr=convert_correlation(config.get("model.rho", float)),
            rate=rate, spot0=spot0, y0=y0,
            alpha_floor=config.get("model.alpha_floor", float))

        bw_s = config.get("init.bandwidth_s", float)
        bw_y = config.get("init.bandwidth_y", float)
        peak = 1.0 / (2.0 * math.pi * bw_s * bw_y)
        floor = config.get("init.floor_rel", float) * peak
        psi = smoothed_dirac(spot0, y0, bw_s, bw_y, floor, grid)
        validation = validate_model(spec, grid)
        corner_residual = compatibility_residual(psi, spec, grid)
        if corner_residual > 1.0:
            log(f"note: corner-compatibility residual {corner_residual:.3e} "
                f"(accuracy is locally degraded near t = 0)")
    except (CalibrationError, OSError, ValueError) as err:
        log(f"input error: {err}")
        return 1

    out_dir = output_dir or config.path("paths.output_dir")
    os.makedirs(out_dir, exist_ok=True)
    mode = mode or config.get("fp.mode")
    do_verify = verify if verify is not None else config.get("run.verify", bool)
    snap_every = snapshot_every if snapshot_every is not None \
        else config.get("run.snapshot_every", int)
    if snap_every <= 0:
        snap_every = max(1, grid.n_t // 10)
    threads = os.environ.get("CALIBRATE_THREADS")
    if threads is not None and (not threads.isdigit() or int(threads) < 1):
        log(f"ignoring invalid CALIBRATE_THREADS={threads!r}")
        threads = None

    # ---- stage 2: solve ----
    status = 0
    fp_json = None
    fp_report = None
    density = None
    if mode == "time-lagged":
        density, lag_report = solve_lagged(spec, grid, psi)
        fp_json = dict(lag_report)
    elif mode == "fixed-point":
        params = IterateBounds.from_initial(
            psi, grid, cap_factor=config.get("fp.cap_factor", float),
            tol_factor=config.get("fp.tol_factor", float))
        b_ref_mode = config.get("model.b_ref")
        try:
            density, fp_report = iterate(
                spec, grid, psi, params=params,
                max_iter=config.get("fp.max_iter", int), b_ref_mode=b_ref_mode,
                cross_iterations=config.get("fp.cross_iterations", int))
        except (MembershipLost, NotConverged) as err:
            log(f"fixed point failed at full horizon: {err}")
            if config.get("fp.auto_shrink", bool):
                try:
                    params = shrink_horizon(
                        spec, grid, psi, params,
                        max_halvings=config.get("fp.max_halvings", int),
                        max_iter=config.get("fp.max_iter", int),
                        b_ref_mode=b_ref_mode)
                    density, fp_report = iterate(
                        spec, grid, psi, params=params,
                        max_iter=config.get("fp.max_iter", int),
                        b_ref_mode=b_ref_mode)
                    log(f"recovered at t_star = {fp_report.t_star:.6g}")
                except (HorizonExhausted, MembershipLost, NotConverged) as err2:
                    log(f"horizon search failed: {err2}")
                    status = 2
                    fp_report = getattr(err2, "report", None) or \
                        getattr(getattr(err2, "last_error", None), "report", None)
                    density = getattr(err2, "density", None) or \
                        getattr(getattr(err2, "last_error", None), "density", None)
            else:
                status = 2
                fp_report = err.report
                density = err.density
        if fp_report is not None and fp_json is None:
            fp_json = fp_report.as_json_dict()
    else:
        log(f"unknown mode {mode!r}")
        return 1

    # ---- stage 3: artifacts ----
    if fp_json is not None:
        _write_json(os.path.join(out_dir, "fixed_point.json"), fp_json)

    report_obj = {"validation": validation.as_dict(), "mode": mode,
                  "corner_residual": corner_residual, "status_hint": status}
    if density is not None:
        n_k = density.values.shape[0] - 1
        ks = list(range(0, n_k + 1, snap_every))
        if ks[-1] != n_k:
            ks.append(n_k)

        mix = mixing_ratio(density.values, spec.b, grid)
        lev = leverage(sigma_d.values[:n_k + 1], mix)
        write_ts_csv(os.path.join(out_dir, "leverage.csv"), lev, grid, "a")
        sigma_d.to_csv(os.path.join(out_dir, "local_vol.csv"), grid)

        q_p = marginal(density.values, grid)
        q_d = dupire_forward_solve(sigma_d.values, rate, grid, q_p[0], n_steps=n_k)
        _write_marginals(os.path.join(out_dir, "marginals.csv"), q_p, q_d, grid, ks)

        fmt = config.get("run.snapshot_format")
        for k in ks:
            name = os.path.join(out_dir, f"density_{k}.{'bin' if fmt == 'bin' else 'csv'}")
            if fmt == "bin":
                _write_density_bin(name, density.values[k], grid)
            else:
                _write_density_csv(name, density.values[k], grid)

        if do_verify and status == 0:
            ver = verify_calibration(
                density, sigma_d, spec, grid, snapshot_ks=ks[1:] or [n_k],
                quotes=quotes,
                l1_tol=config.get("verify.l1_tol", float),
                mass_tol=config.get("verify.mass_tol", float),
                identity_tol=config.get("verify.identity_tol", float))
            report_obj["verification"] = ver.as_json_dict()
            if not ver.all_within_tolerance:
                log(f"verification out of tolerance: {ver.gates}")
                status = 2

    _write_json(os.path.join(out_dir, "report.json"), report_obj)
    _write_json(os.path.join(out_dir, "run_meta.json"), {
        "wall_seconds": time.time() - t_start,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "version": __version__,
        "threads": threads,
    })
    return status
