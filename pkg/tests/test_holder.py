import itertools
import math

import numpy as np
import pytest

from lsvcal import holder_norm
from lsvcal.holder import HolderNormEstimate

from conftest import make_grid


def brute_force_quotient(values, coords, h):
    """All-pairs Hoelder quotient with explicit python loops (oracle)."""
    best = 0.0
    pts = list(range(len(values)))
    for i, j in itertools.combinations(pts, 2):
        dx2 = sum((a - b) ** 2 for a, b in zip(coords[i][1:], coords[j][1:]))
        d = math.sqrt(dx2 + abs(coords[i][0] - coords[j][0]))
        if d > 0:
            best = max(best, abs(values[i] - values[j]) / d ** h)
    return best


def smooth_random_field(rng, grid, kind="Sy"):
    s = grid.s_nodes[:, None] / grid.s_max
    y = grid.y_nodes[None, :]
    a, b, c = rng.uniform(-1, 1, 3)
    f = a * np.sin(2 * s + y) + b * np.cos(s - 2 * y) + c * s * y
    if kind == "tSy":
        t = grid.t_nodes[:, None, None]
        return f[None] * (1.0 + 0.3 * np.sin(t))
    return f


class TestBaseNorm:
    def test_constant_field(self):
        grid = make_grid(n_s=16, n_y=12, n_t=8)
        u = np.full((grid.n_s + 2, grid.n_y + 2), -4.2)
        est = holder_norm(u, 0, 0.5, grid, kind="Sy")
        assert est.value == 4.2
        assert est.quotient == 0.0

    def test_linear_1d_neighbor_quotient(self):
        # u(x) = x on [0, 1]; neighbor pairs give gap/d^h = (k dx)^(1/2),
        # largest for the next-nearest offset
        grid = make_grid(n_s=98, n_y=12, n_t=8, s_span=(0.0, 1.0))
        u = grid.s_nodes.copy()
        est = holder_norm(u, 0, 0.5, grid, kind="S")
        dx = grid.ds
        assert est.sup_norm == pytest.approx(1.0)
        assert est.quotient == pytest.approx(math.sqrt(2 * dx), rel=1e-12)
        assert est.value == pytest.approx(1.0 + math.sqrt(2 * dx), rel=1e-12)

    def test_linear_1d_all_pairs_matches_brute_force(self):
        grid = make_grid(n_s=30, n_y=12, n_t=8, s_span=(0.0, 1.0))
        u = grid.s_nodes ** 2
        est = holder_norm(u, 0, 0.5, grid, kind="S", all_pairs=True)
        coords = [(0.0, s) for s in grid.s_nodes]
        oracle = brute_force_quotient(list(u), coords, 0.5)
        assert est.quotient == pytest.approx(oracle, rel=1e-12)

    def test_space_time_all_pairs_matches_brute_force(self):
        grid = make_grid(n_s=8, n_y=8, n_t=5, horizon=0.3)
        rng = np.random.default_rng(3)
        u = rng.standard_normal((grid.n_t + 1, grid.n_s + 2))
        est = holder_norm(u, 0, 0.4, grid, kind="tS", all_pairs=True)
        coords = [(t, s) for t in grid.t_nodes for s in grid.s_nodes]
        oracle = brute_force_quotient(list(u.ravel()), coords, 0.4)
        assert est.quotient == pytest.approx(oracle, rel=1e-12)

    def test_neighbor_below_all_pairs(self):
        grid = make_grid(n_s=14, n_y=10, n_t=6)
        rng = np.random.default_rng(11)
        u = smooth_random_field(rng, grid)
        near = holder_norm(u, 0, 0.5, grid, kind="Sy").quotient
        full = holder_norm(u, 0, 0.5, grid, kind="Sy", all_pairs=True).quotient
        assert near <= full + 1e-12


class TestAlgebraAndMonotonicity:
    def test_product_inequality_20_random_pairs(self):
        # the space is an algebra: |uv| <= |u| |v| at the base level
        grid = make_grid(n_s=20, n_y=16, n_t=8)
        rng = np.random.default_rng(42)
        for _ in range(20):
            u = smooth_random_field(rng, grid)
            v = smooth_random_field(rng, grid)
            nu = holder_norm(u, 0, 0.5, grid, kind="Sy").value
            nv = holder_norm(v, 0, 0.5, grid, kind="Sy").value
            nuv = holder_norm(u * v, 0, 0.5, grid, kind="Sy").value
            assert nuv <= nu * nv + 1e-12

    @pytest.mark.parametrize("kind", ["Sy", "tSy"])
    def test_monotone_in_k(self, kind):
        grid = make_grid(n_s=20, n_y=16, n_t=8)
        rng = np.random.default_rng(5)
        for _ in range(5):
            u = smooth_random_field(rng, grid, kind=kind)
            n0 = holder_norm(u, 0, 0.5, grid, kind=kind).value
            n1 = holder_norm(u, 1, 0.5, grid, kind=kind).value
            n2 = holder_norm(u, 2, 0.5, grid, kind=kind).value
            assert n0 <= n1 <= n2

    def test_value_at_least_sup(self):
        grid = make_grid(n_s=20, n_y=16, n_t=8)
        rng = np.random.default_rng(9)
        u = smooth_random_field(rng, grid)
        est = holder_norm(u, 2, 0.5, grid, kind="Sy")
        assert est.value >= est.sup_norm
        assert all(v >= 0 for v in est.derivative_parts.values())

    def test_invalid_estimate_rejected(self):
        with pytest.raises(ValueError):
            HolderNormEstimate(value=0.5, sup_norm=1.0, quotient=0.0)

    def test_time_constant_extension_equals_slice_norm(self):
        # a field constant in time has no time contributions, so its
        # space-time norm equals the spatial-slice norm
        grid = make_grid(n_s=20, n_y=16, n_t=8)
        rng = np.random.default_rng(13)
        u2 = smooth_random_field(rng, grid)
        u3 = np.broadcast_to(u2, (grid.n_t + 1,) + u2.shape)
        n2 = holder_norm(u2, 2, 0.5, grid, kind="Sy").value
        n3 = holder_norm(u3, 2, 0.5, grid, kind="tSy").value
        assert n3 == pytest.approx(n2, rel=1e-12)
