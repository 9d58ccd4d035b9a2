import subprocess
import sys

import numpy as np
import pytest

from swfigures import (FigureSpec, SchemaError, plot_convergence, plot_field,
                       plot_timeseries, read_snapshot, read_timeseries)

HEADER = "step,time,mass,total_S,energy,tracer_variance,vorticity,newton_iters"


def write_csv(path, rows):
    lines = [HEADER] + [",".join(f"{v:.17g}" for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def synthetic_csv(path, n=20, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n):
        rows.append([k, 0.1 * k, 1.0 + 1e-12 * rng.random(), 2.0, 3.0,
                     4.0 * (1 - 1e-6 * k), 1e-8 * rng.standard_normal(), 4])
    write_csv(path, rows)


def write_snapshot_file(path, nx=8, ny=6, time=2.5):
    grid = np.arange(nx * ny, dtype=float).reshape(ny, nx)
    with open(path, "w") as fh:
        fh.write(f"{nx} {ny} 2 W2L {time}\n")
        np.savetxt(fh, grid, fmt="%.17g")
    return grid


class TestReaders:
    def test_timeseries_roundtrip(self, tmp_path):
        path = tmp_path / "d.csv"
        synthetic_csv(path)
        series = read_timeseries(path)
        assert len(series["time"]) == 20
        assert series["newton_iters"][0] == 4

    def test_schema_mismatch_names_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("step,time,mass\n0,0,1\n")
        with pytest.raises(SchemaError, match="expected columns"):
            read_timeseries(path)

    def test_empty_csv_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text(HEADER + "\n")
        with pytest.raises(SchemaError, match="no data"):
            read_timeseries(path)

    def test_snapshot_roundtrip(self, tmp_path):
        path = tmp_path / "snap.txt"
        grid = write_snapshot_file(path)
        got, meta = read_snapshot(path)
        assert np.allclose(got, grid)
        assert meta["space"] == "W2L" and meta["time"] == 2.5

    def test_snapshot_header_mismatch(self, tmp_path):
        path = tmp_path / "snap.txt"
        path.write_text("8 banana\n1 2 3\n")
        with pytest.raises(SchemaError, match="header"):
            read_snapshot(path)

    def test_missing_snapshot(self, tmp_path):
        with pytest.raises(SchemaError, match="not found"):
            read_snapshot(tmp_path / "nope.txt")


class TestTimeseriesFigure:
    def test_single_run(self, tmp_path):
        csv = tmp_path / "run.csv"
        synthetic_csv(csv)
        out = plot_timeseries(FigureSpec([csv], tmp_path / "ts.png"))
        assert out.exists() and out.stat().st_size > 0

    def test_four_scheme_panel(self, tmp_path):
        inputs = []
        for k in range(4):
            csv = tmp_path / f"scheme{k}.csv"
            synthetic_csv(csv, seed=k)
            inputs.append(csv)
        out = plot_timeseries(FigureSpec(inputs, tmp_path / "schemes.png"))
        assert out.exists()

    def test_empty_input_no_file(self, tmp_path):
        csv = tmp_path / "empty.csv"
        csv.write_text(HEADER + "\n")
        out = tmp_path / "nope.png"
        with pytest.raises(SchemaError):
            plot_timeseries(FigureSpec([csv], out))
        assert not out.exists()


class TestConvergenceFigure:
    def test_synthetic_fourth_order(self, tmp_path):
        table = tmp_path / "convergence.csv"
        dx = np.array([1.0, 0.5, 0.25])
        err = 0.3 * dx ** 4
        lines = ["resolution,dx,err_s"]
        for k in range(3):
            lines.append(f"{int(1 / dx[k])},{dx[k]:.17g},{err[k]:.17g}")
        table.write_text("\n".join(lines) + "\n")
        slopes = plot_convergence(FigureSpec([table], tmp_path / "conv.png"))
        assert slopes["err_s"] == pytest.approx(4.0, abs=1e-12)

    def test_single_point_rejected(self, tmp_path):
        table = tmp_path / "convergence.csv"
        table.write_text("resolution,dx,err_s\n32,1.0,0.5\n")
        with pytest.raises(SchemaError, match="two resolutions"):
            plot_convergence(FigureSpec([table], tmp_path / "conv.png"))

    def test_nonpositive_errors_rejected(self, tmp_path):
        table = tmp_path / "convergence.csv"
        table.write_text("resolution,dx,err_s\n32,1.0,0.5\n64,0.5,0.0\n")
        with pytest.raises(SchemaError, match="positive"):
            plot_convergence(FigureSpec([table], tmp_path / "conv.png"))


class TestFieldFigure:
    def test_constant_field_panel(self, tmp_path):
        path = tmp_path / "snap.txt"
        with open(path, "w") as fh:
            fh.write("6 6 2 W2L 0\n")
            np.savetxt(fh, np.ones((6, 6)))
        out = plot_field(FigureSpec([path], tmp_path / "field.png"))
        assert out.exists()

    def test_triptych(self, tmp_path):
        inputs = []
        for k in range(3):
            p = tmp_path / f"s{k}.txt"
            write_snapshot_file(p, time=float(k))
            inputs.append(p)
        out = plot_field(FigureSpec(inputs, tmp_path / "panels.png"))
        assert out.exists()

    def test_missing_file_errors(self, tmp_path):
        with pytest.raises(SchemaError):
            plot_field(FigureSpec([tmp_path / "missing.txt"], tmp_path / "x.png"))


class TestAcceptanceSecondary:
    """Regenerate all three figure kinds from real solver outputs."""

    @pytest.fixture(scope="class")
    def solver_outputs(self, tmp_path_factory):
        base = tmp_path_factory.mktemp("runs")
        cli = [sys.executable, "-m", "thermalsw.cli"]
        conv = base / "conv"
        proc = subprocess.run(
            cli + ["convergence", "--preset", "balance", "--resolutions",
                   "32,64", "--out", str(conv)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        run = base / "run"
        proc = subprocess.run(
            cli + ["run", "--preset", "instability", "--resolution", "48",
                   "--t-final", "0.5", "--out", str(run), "--snapshots", "25"],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        return conv, run

    def test_timeseries_from_run(self, solver_outputs, tmp_path):
        _, run = solver_outputs
        out = plot_timeseries(FigureSpec([run / "diagnostics.csv"],
                                         tmp_path / "ts.png", column="energy"))
        assert out.exists()

    def test_field_panel_from_run(self, solver_outputs, tmp_path):
        _, run = solver_outputs
        snaps = sorted(run.glob("snap_s_*.txt"))
        assert snaps
        out = plot_field(FigureSpec(snaps[-2:], tmp_path / "panel.png"))
        assert out.exists()

    def test_convergence_annotation_matches_solver(self, solver_outputs, tmp_path):
        conv, _ = solver_outputs
        slopes = plot_convergence(FigureSpec([conv / "convergence.csv"],
                                             tmp_path / "conv.png"))
        recorded = {}
        for line in (conv / "orders.csv").read_text().splitlines()[1:]:
            name, value = line.split(",")
            recorded[name] = value
        for name, slope in slopes.items():
            assert f"{slope:.17g}" == recorded[name] or \
                float(recorded[name]) == pytest.approx(slope, abs=0.0), name
