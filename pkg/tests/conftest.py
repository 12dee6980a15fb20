import numpy as np
import pytest

from lsvcal import (GridSpec, ModelSpec, SpotAmplitude, convert_correlation,
                    smoothed_dirac)


def make_grid(n_s=80, n_y=40, n_t=80, horizon=1.0, s_span=(30.0, 330.0),
              y_span=(-1.0, 1.0), h=0.5):
    return GridSpec(s_min=s_span[0], s_max=s_span[1], y_min=y_span[0],
                    y_max=y_span[1], n_s=n_s, n_y=n_y, horizon=horizon,
                    n_t=n_t, holder_exp=h)


def flat_sigma(grid, level=0.2):
    return np.full((grid.n_t + 1, grid.n_s + 2), level)


def b_const(y):
    return np.ones_like(np.asarray(y, dtype=float))


def b_perturbed(s):
    def b(y):
        return np.sqrt(np.maximum(1.0 + s * np.sin(np.asarray(y, dtype=float)), 0.04))
    return b


def ou_drift(t, s, y):
    # gentle mean reversion: stationary width 0.2/sqrt(0.5) = 0.28 matches
    # the default initial bandwidths even on coarse test grids
    return -0.25 * (y + 0.0 * s)


def make_spec(grid, b=b_const, sigma=None, rho=0.0, rate=0.0, alpha2=0.2,
              beta2=ou_drift, spot0=100.0, y0=0.0):
    sig = flat_sigma(grid) if sigma is None else sigma
    return ModelSpec(b=b, alpha1=SpotAmplitude(sig, b, grid), alpha2=alpha2,
                     corr=convert_correlation(rho), rate=rate, spot0=spot0,
                     y0=y0, beta2=beta2)


def make_psi(grid, spot0=100.0, y0=0.0, bw_s=16.0, bw_y=0.25, floor_rel=1e-6):
    # widen to the coarsest admissible bump on very coarse test grids
    bw_s = max(bw_s, 3.05 * grid.ds)
    bw_y = max(bw_y, 3.05 * grid.dy)
    peak = 1.0 / (2.0 * np.pi * bw_s * bw_y)
    return smoothed_dirac(spot0, y0, bw_s, bw_y, floor_rel * peak, grid)


@pytest.fixture
def grid():
    return make_grid()


@pytest.fixture
def small_grid():
    return make_grid(n_s=40, n_y=24, n_t=20)


def write_flat_quotes(path, vol=0.2, maturities=(0.25, 0.5, 1.0, 1.5, 2.0),
                      strikes=(60, 80, 100, 120, 160)):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("maturity,strike,implied_vol\n")
        for t in maturities:
            for k in strikes:
                fh.write(f"{t},{k},{vol}\n")
    return path
