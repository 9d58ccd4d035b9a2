import math
import subprocess
import sys

import numpy as np
import pytest

from thermalsw import harness, presets
from thermalsw.diagnostics import (CSV_HEADER, observed_order, read_snapshot,
                                   write_snapshot)
from thermalsw.mesh import ConfigError
from thermalsw.spaces import SpaceKind


class TestPresets:
    def test_preset_aliases(self):
        assert presets.canonical_preset("advection") == "SolidBodyAdvection"
        assert presets.canonical_preset("ThermalInstability") == "ThermalInstability"
        with pytest.raises(ConfigError):
            presets.canonical_preset("nope")

    def test_advection_tracer_peak(self):
        setup = presets.advection_setup(48)
        peak = setup.tracer_analytic(0.4 * np.pi, -0.4 * np.pi)
        assert peak == pytest.approx(1.0)
        assert setup.s0.max() <= 1.0 + 1e-12

    def test_balance_values_near_equator_row(self):
        setup = presets.balance_setup(32)
        fine = setup.hierarchy.fine
        # cells in the first row sit near y = 0: h ~ H0, u ~ U0
        assert np.allclose(setup.state.h[:32], 5960.0, rtol=2e-2)
        assert np.allclose(setup.state.u[:32], 20.0, rtol=2e-2)

    def test_instability_buoyancy_reference_value(self):
        # at r = 1 with no perturbation: g - 0.2 * (1 + 0.05) = 0.79
        c = presets.InstabilityConstants()
        _, _, s_fn = presets.instability_fields(c)
        base = s_fn(np.array([1.0]), np.array([0.0]))
        eps_free = base - 0.01 * np.exp(-60 * 0.25) * np.sin(3 * np.pi)  # eps(1,0)=~0
        assert base[0] == pytest.approx(0.79, abs=1e-6)

    def test_instability_coriolis(self):
        assert presets.InstabilityConstants().coriolis == pytest.approx(1.0)

    def test_advection_dt_pairing(self):
        assert presets.advection_dt(48) == pytest.approx(np.pi / 300)
        assert presets.advection_dt(96) == pytest.approx(np.pi / 600)
        assert presets.advection_dt(192) == pytest.approx(np.pi / 1200)


class TestObservedOrder:
    def test_fourth_order(self):
        assert observed_order([1.0, 1.0 / 16.0], [1.0, 0.5]) == pytest.approx(4.0)

    def test_second_order(self):
        assert observed_order([1.0, 0.25], [1.0, 0.5]) == pytest.approx(2.0)

    def test_exact_solution(self):
        assert math.isinf(observed_order([0.0, 0.0], [1.0, 0.5]))

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            observed_order([1.0], [1.0])
        with pytest.raises(ValueError):
            observed_order([1.0, -1.0], [1.0, 0.5])


class TestSnapshots:
    def test_roundtrip(self, tmp_path):
        vals = np.arange(12.0)
        path = tmp_path / "snap.txt"
        write_snapshot(path, vals, 4, 3, 2, SpaceKind.W2L, 1.5)
        grid, meta = read_snapshot(path)
        assert grid.shape == (3, 4)
        assert np.allclose(grid.ravel(), vals)
        assert meta == {"nx": 4, "ny": 3, "level": 2, "space": "W2L", "time": 1.5}


class TestRunConfig:
    def test_defaults_resolved(self):
        cfg = harness.RunConfig("advection", 48).resolved()
        assert cfg.preset == "SolidBodyAdvection"
        assert cfg.levels == 3
        assert cfg.dt == pytest.approx(np.pi / 300)
        assert cfg.t_final == pytest.approx(2 * np.pi)
        assert cfg.alpha == 1.0

    def test_instability_defaults(self):
        cfg = harness.RunConfig("instability", 144).resolved()
        assert cfg.newton == "fixed4"
        assert cfg.dt == 0.02 and cfg.t_final == 50.0

    def test_scheme_alpha(self):
        cfg = harness.RunConfig("balance", 32, scheme="HighOrderCentered").resolved()
        assert cfg.alpha == 0.0

    def test_config_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("preset = balance   # a comment\nresolution=32\ndt=900\n"
                        "verbose = true\n")
        cfg = harness.config_from_mapping(harness.parse_config_file(path))
        assert cfg.preset == "balance" and cfg.resolution == 32
        assert cfg.dt == 900.0 and cfg.verbose is True

    def test_config_rejects_unknown_key(self):
        with pytest.raises(ConfigError):
            harness.config_from_mapping({"preset": "balance", "resolution": "32",
                                         "frobnicate": "1"})


class TestRuns:
    def test_advection_run_outputs(self, tmp_path):
        out = tmp_path / "adv"
        cfg = harness.RunConfig("advection", 48, t_final=np.pi / 30,
                                out=str(out), snapshots=5)
        result = harness.run(cfg)
        csv = (out / "diagnostics.csv").read_text().splitlines()
        assert csv[0] == CSV_HEADER
        assert len(csv) == len(result.records) + 1
        snaps = sorted(out.glob("snap_s_*.txt"))
        assert snaps, "snapshots expected"
        grid, meta = read_snapshot(snaps[0])
        assert meta["space"] == "W2H" and grid.shape == (48, 48)
        assert (out / "summary.txt").exists()

    def test_advection_mass_variance_columns(self):
        cfg = harness.RunConfig("advection", 48, t_final=np.pi / 60)
        result = harness.run(cfg)
        s = result.series
        assert np.allclose(s["mass"], s["total_S"])
        drift = np.abs(s["mass"] - s["mass"][0]).max() / s["mass"][0]
        assert drift < 1e-12

    def test_determinism(self, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            cfg = harness.RunConfig("instability", 32, t_final=0.1,
                                    out=str(out))
            harness.run(cfg)
            outs.append((out / "diagnostics.csv").read_text())
        assert outs[0] == outs[1]

    def test_balance_short_run_conserves(self):
        cfg = harness.RunConfig("balance", 32, t_final=4 * 1800.0)
        result = harness.run(cfg)
        s = result.series
        for key in ("mass", "total_S", "energy"):
            drift = np.abs(s[key] - s[key][0]).max() / abs(s[key][0])
            assert drift < 1e-11, key

    def test_dynamics_snapshots(self, tmp_path):
        out = tmp_path / "inst"
        cfg = harness.RunConfig("instability", 32, t_final=0.06, out=str(out),
                                snapshots=2, verbose=True)
        harness.run(cfg)
        for name in ("h", "S", "s"):
            assert (out / f"snap_{name}_000000.txt").exists()
        assert (out / "residuals.csv").exists()


class TestConvergenceDriver:
    def test_advection_table(self, tmp_path):
        rows, orders = harness.run_convergence(
            "advection", [16, 32], out=str(tmp_path), t_final=np.pi / 30)
        assert len(rows) == 2 and "err_s" in rows[0]
        assert (tmp_path / "convergence.csv").exists()
        text = (tmp_path / "orders.csv").read_text().splitlines()
        assert text[0] == "field,order"


class TestCli:
    def run_cli(self, *args):
        return subprocess.run([sys.executable, "-m", "thermalsw.cli", *args],
                              capture_output=True, text=True)

    def test_mesh_summary(self):
        proc = self.run_cli("mesh", "--resolution", "48", "--levels", "3")
        assert proc.returncode == 0
        assert "transport elements" in proc.stdout

    def test_run_subcommand(self, tmp_path):
        proc = self.run_cli("run", "--preset", "advection", "--resolution", "16",
                            "--t-final", "0.2", "--out", str(tmp_path / "o"))
        assert proc.returncode == 0, proc.stderr
        assert "completed" in proc.stdout

    def test_bad_preset_fails_cleanly(self):
        proc = self.run_cli("run", "--preset", "bogus", "--resolution", "16")
        assert proc.returncode == 1
        assert "error" in proc.stderr

    def test_divisibility_error_names_counts(self):
        proc = self.run_cli("mesh", "--resolution", "36", "--levels", "4")
        assert proc.returncode == 1
        assert "36" in proc.stderr
