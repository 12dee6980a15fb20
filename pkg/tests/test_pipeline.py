import json
import os

import numpy as np
import pytest

from lsvcal import (dupire_forward_solve, iterate, marginal, solve_lagged,
                    verify_calibration)
from lsvcal.pipeline import (RunConfig, builtin_y_function, read_density_bin,
                             run_pipeline)

from conftest import (flat_sigma, make_grid, make_psi, make_spec,
                      write_flat_quotes)

CONFIG_TEMPLATE = """\
paths.quotes = quotes.csv
paths.output_dir = out
model.b = {b}
model.alpha2 = const:0.2
model.beta2 = mean_revert:0.25:0.0
model.rho = {rho}
grid.s_min = 30
grid.s_max = 330
grid.y_min = -1
grid.y_max = 1
grid.ns = {ns}
grid.ny = {ny}
grid.t = 1.0
grid.nt = {nt}
init.bandwidth_s = 20
init.bandwidth_y = 0.25
{extra}
"""


def write_config(tmp_path, b="const:1.0", rho="0.0", ns=48, ny=28, nt=24,
                 extra=""):
    write_flat_quotes(tmp_path / "quotes.csv")
    path = tmp_path / "run.cfg"
    path.write_text(CONFIG_TEMPLATE.format(b=b, rho=rho, ns=ns, ny=ny, nt=nt,
                                           extra=extra))
    return path


class TestConfig:
    def test_parse_and_defaults(self, tmp_path):
        cfg = RunConfig.from_file(write_config(tmp_path))
        assert cfg.get("grid.ns", int) == 48
        assert cfg.get("fp.mode") == "fixed-point"
        assert cfg.get("run.verify", bool) is True
        grid = cfg.grid()
        assert grid.n_t == 24

    def test_missing_required_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("paths.quotes = q.csv\n")
        with pytest.raises(ValueError, match="missing config keys"):
            RunConfig.from_file(path)

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("this is not a key value line\n")
        with pytest.raises(ValueError, match="expected key = value"):
            RunConfig.from_file(path)

    def test_comments_and_blanks_ignored(self, tmp_path):
        cfg_path = write_config(tmp_path, extra="# a comment\n\nfp.max_iter = 7")
        cfg = RunConfig.from_file(cfg_path)
        assert cfg.get("fp.max_iter", int) == 7


class TestBuiltins:
    def test_const(self):
        f = builtin_y_function("const:0.3")
        assert np.all(f(np.linspace(-1, 1, 5)) == 0.3)

    def test_exp_clamped(self):
        f = builtin_y_function("exp_clamped:0.5:2.0")
        y = np.linspace(-3, 3, 7)
        v = f(y)
        assert v.min() == 0.5 and v.max() == 2.0
        assert f(np.array([0.0]))[0] == 1.0

    def test_cir(self):
        f = builtin_y_function("cir:0.4:0.01")
        assert f(np.array([0.25]))[0] == pytest.approx(0.4 * 0.5)
        assert f(np.array([-3.0]))[0] == pytest.approx(0.4 * 0.1)

    def test_mean_revert(self):
        f = builtin_y_function("mean_revert:2.0:0.5")
        assert f(np.array([1.0]))[0] == pytest.approx(-1.0)

    def test_table(self, tmp_path):
        path = tmp_path / "b.csv"
        path.write_text("y,value\n-1,0.5\n0,1.0\n1,2.0\n")
        f = builtin_y_function(f"table:{path.name}", base_dir=str(tmp_path))
        assert f(np.array([0.5]))[0] == pytest.approx(1.5)

    def test_unknown_rejected(self):
        with pytest.raises(ValueError):
            builtin_y_function("warp:9")


class TestExitCodes:
    def test_missing_quotes_no_artifacts(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(CONFIG_TEMPLATE.format(b="const:1.0", rho="0.0",
                                               ns=48, ny=28, nt=24, extra=""))
        cfg = RunConfig.from_file(path)
        logged = []
        rc = run_pipeline(cfg, log=logged.append)
        assert rc == 1
        assert not os.path.exists(tmp_path / "out")
        assert any("quotes" in msg for msg in logged)

    def test_flat_run_exits_zero(self, tmp_path):
        cfg = RunConfig.from_file(write_config(tmp_path))
        rc = run_pipeline(cfg, log=lambda m: None)
        assert rc == 0
        out = tmp_path / "out"
        for name in ("leverage.csv", "marginals.csv", "report.json",
                     "fixed_point.json", "local_vol.csv", "run_meta.json",
                     "density_0.csv"):
            assert (out / name).exists()
        rep = json.loads((out / "report.json").read_text())
        assert rep["verification"]["gates"] == {
            "identity": True, "marginal_l1": True, "mass_drift": True}

    def test_unconverged_exits_two_with_artifacts(self, tmp_path):
        extra = "fp.max_iter = 1\nfp.auto_shrink = false"
        cfg = RunConfig.from_file(write_config(tmp_path, b="sqrt1p_sin:0.05",
                                               extra=extra))
        rc = run_pipeline(cfg, log=lambda m: None)
        assert rc == 2
        out = tmp_path / "out"
        assert (out / "fixed_point.json").exists()
        assert (out / "leverage.csv").exists()
        fp = json.loads((out / "fixed_point.json").read_text())
        assert fp["converged"] is False

    def test_auto_shrink_recovers(self, tmp_path):
        cfg = RunConfig.from_file(write_config(tmp_path, b="sqrt1p_sin:5.0",
                                               ns=48, ny=32, nt=32))
        rc = run_pipeline(cfg, log=lambda m: None)
        assert rc == 0
        fp = json.loads((tmp_path / "out" / "fixed_point.json").read_text())
        assert fp["converged"] is True
        assert fp["t_star"] < 1.0

    def test_time_lagged_mode(self, tmp_path):
        cfg = RunConfig.from_file(write_config(tmp_path, b="sqrt1p_sin:0.05"))
        rc = run_pipeline(cfg, mode="time-lagged", log=lambda m: None)
        assert rc == 0
        fp = json.loads((tmp_path / "out" / "fixed_point.json").read_text())
        assert fp["mode"] == "time-lagged"


class TestDeterminism:
    def test_byte_identical_artifacts(self, tmp_path):
        cfg = RunConfig.from_file(write_config(tmp_path, b="sqrt1p_sin:0.05"))
        assert run_pipeline(cfg, output_dir=str(tmp_path / "o1"),
                            log=lambda m: None) == 0
        assert run_pipeline(cfg, output_dir=str(tmp_path / "o2"),
                            log=lambda m: None) == 0
        for name in ("leverage.csv", "report.json", "fixed_point.json",
                     "marginals.csv"):
            b1 = (tmp_path / "o1" / name).read_bytes()
            b2 = (tmp_path / "o2" / name).read_bytes()
            assert b1 == b2, name


class TestSnapshots:
    def test_binary_roundtrip(self, tmp_path):
        extra = "run.snapshot_format = bin"
        cfg = RunConfig.from_file(write_config(tmp_path, extra=extra))
        assert run_pipeline(cfg, snapshot_every=12, log=lambda m: None) == 0
        payload, meta = read_density_bin(tmp_path / "out" / "density_24.bin")
        assert payload.shape == (50, 30)
        assert meta["s_min"] == 30.0
        assert payload.min() > 0

    def test_snapshot_cadence(self, tmp_path):
        cfg = RunConfig.from_file(write_config(tmp_path))
        assert run_pipeline(cfg, snapshot_every=6, log=lambda m: None) == 0
        names = sorted(p.name for p in (tmp_path / "out").glob("density_*.csv"))
        assert names == [f"density_{k}.csv" for k in (0, 12, 18, 24, 6)]


class TestVerification:
    def test_cross_scheme_marginals_close(self):
        grid = make_grid(n_s=64, n_y=32, n_t=48)
        spec = make_spec(grid)
        psi = make_psi(grid)
        dens, _ = iterate(spec, grid, psi)
        sigma = flat_sigma(grid)
        rep = verify_calibration(dens, sigma, spec, grid)
        assert max(rep.marginal_l1.values()) < 5e-3
        assert rep.identity_max_rel < 1e-8
        assert rep.mass_drift < 1e-3
        assert rep.all_within_tolerance

    def test_uncorrected_baseline_is_worse(self):
        # dropping the conditional correction with nonconstant b visibly
        # degrades the marginal match
        grid = make_grid(n_s=64, n_y=32, n_t=48)
        b = lambda y: np.clip(np.exp(np.asarray(y, dtype=float)), 0.5, 2.0)
        spec = make_spec(grid, b=b)
        psi = make_psi(grid)
        sigma = flat_sigma(grid)

        dens, _ = solve_lagged(spec, grid, psi)
        dens_off, _ = solve_lagged(spec, grid, psi, mixing_override=1.0)
        q0 = marginal(psi, grid)
        q_d = dupire_forward_solve(sigma, 0.0, grid, q0)

        def l1_at_end(d):
            q = marginal(d.values[-1], grid)
            return float(np.sum(np.abs(q - q_d[-1])) * grid.ds)

        corrected = l1_at_end(dens)
        uncorrected = l1_at_end(dens_off)
        assert corrected < 1e-2
        assert uncorrected > 3.0 * corrected
