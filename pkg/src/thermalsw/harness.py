"""Run driver: configuration, time loops, output writing, convergence study."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import diagnostics as diag_io
from . import presets
from .diagnostics import CsvWriter, DiagnosticsRecord, observed_order
from .dynamics import BuoyancyScheme, Model, State
from .krylov_mg import SolverParams
from .mesh import ConfigError, StateError
from .spaces import SpaceKind, interpolate_w1l, project_w2l
from .transport import TransportOperator


@dataclass
class RunConfig:
    preset: str
    resolution: int
    dt: float | None = None
    t_final: float | None = None
    scheme: str = "HighOrderUpwind"
    alpha: float | None = None
    newton: str | None = None        # "tol" or "fixed4"; preset default if unset
    newton_tol: float = 1e-12
    newton_max: int = 30
    levels: int | None = None
    smooth_iters: int = 2
    coarse_iters: int = 4
    vcycle_tol: float = 1e-13
    vcycle_max: int = 50
    out: str | None = None
    snapshots: int = 0
    verbose: bool = False

    def resolved(self) -> "RunConfig":
        cfg = replace(self)
        cfg.preset = presets.canonical_preset(cfg.preset)
        if cfg.levels is None:
            cfg.levels = 3 if cfg.preset == "SolidBodyAdvection" else 4
        if cfg.newton is None:
            cfg.newton = "fixed4" if cfg.preset == "ThermalInstability" else "tol"
        if cfg.newton == "fixed4" and self.vcycle_tol == RunConfig.vcycle_tol:
            # fixed-iteration Newton truncates at ~1e-9; driving the inner
            # solves to 1e-13 would only burn cycles
            cfg.vcycle_tol = 1e-9
        if cfg.dt is None:
            cfg.dt = {
                "SolidBodyAdvection": presets.advection_dt(cfg.resolution),
                "ThermogeostrophicBalance": presets.balance_dt(cfg.resolution),
                "ThermalInstability": 0.02,
            }[cfg.preset]
        if cfg.t_final is None:
            cfg.t_final = {
                "SolidBodyAdvection": 2 * np.pi,
                "ThermogeostrophicBalance": 86400.0,
                "ThermalInstability": 50.0,
            }[cfg.preset]
        BuoyancyScheme(cfg.scheme)  # validate
        if cfg.alpha is None:
            cfg.alpha = 0.0 if cfg.scheme == "HighOrderCentered" else 1.0
        return cfg

    def solver_params(self) -> SolverParams:
        return SolverParams(self.smooth_iters, self.coarse_iters,
                            self.vcycle_tol, self.vcycle_max)


def parse_config_file(path: str) -> dict:
    """KEY=VALUE per line; '#' starts a comment. Keys mirror RunConfig."""
    out = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected KEY=VALUE, got {raw!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key] = value
    return out


_CONFIG_TYPES = {
    "preset": str, "resolution": int, "dt": float, "t_final": float,
    "scheme": str, "alpha": float, "newton": str, "newton_tol": float,
    "newton_max": int, "levels": int, "smooth_iters": int, "coarse_iters": int,
    "vcycle_tol": float, "vcycle_max": int, "out": str, "snapshots": int,
    "verbose": lambda v: v.lower() in ("1", "true", "yes"),
}


def config_from_mapping(mapping: dict) -> RunConfig:
    kwargs = {}
    for key, value in mapping.items():
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"unknown configuration key {key!r}")
        kwargs[key] = _CONFIG_TYPES[key](value) if isinstance(value, str) else value
    if "preset" not in kwargs or "resolution" not in kwargs:
        raise ConfigError("configuration needs at least 'preset' and 'resolution'")
    return RunConfig(**kwargs)


@dataclass
class RunResult:
    config: RunConfig
    records: list
    final: object            # State for dynamics presets, tracer array for advection
    setup: object
    status: int = 0

    @property
    def series(self) -> dict:
        keys = ("step", "time", "mass", "total_S", "energy",
                "tracer_variance", "vorticity", "newton_iters")
        return {k: np.array([getattr(r, k) for r in self.records]) for k in keys}


def _snapshot_paths(outdir: Path, step: int):
    return {name: outdir / f"snap_{name}_{step:06d}.txt" for name in ("h", "S", "s")}


def run(config: RunConfig, observer=None) -> RunResult:
    """Execute one configured run, writing diagnostics as it goes.

    ``observer(step, time, state_or_tracer, model_or_op)`` is called after
    every step when given (used by the convergence driver).
    """
    cfg = config.resolved()
    outdir = Path(cfg.out) if cfg.out else None
    writer = CsvWriter(outdir / "diagnostics.csv") if outdir else None
    try:
        if cfg.preset == "SolidBodyAdvection":
            result = _run_advection(cfg, writer, outdir, observer)
        else:
            result = _run_dynamics(cfg, writer, outdir, observer)
    except StateError as err:
        if writer:
            writer.close()
        raise
    if writer:
        writer.close()
    if outdir:
        _write_summary(outdir / "summary.txt", result)
    return result


def _record(records, writer, rec):
    records.append(rec)
    if writer:
        writer.write(rec)


def _run_advection(cfg: RunConfig, writer, outdir, observer=None):
    setup = presets.advection_setup(cfg.resolution, cfg.levels)
    op = TransportOperator(setup.hierarchy, setup.dofmap)
    flux = op.prepare_analytic_flux(setup.flux_fn, assemble=True)
    mdiag = op.mass_diag(setup.h_fine)
    n_steps = int(round(cfg.t_final / cfg.dt))
    s = setup.s0.copy()
    records = []

    def audit_record(step, time):
        mass = float(mdiag @ s)
        return DiagnosticsRecord(step, time, mass, mass, 0.0,
                                 0.5 * float(mdiag @ (s * s)), 0.0, 0)

    def maybe_snapshot(step, time):
        if outdir and cfg.snapshots and (step % cfg.snapshots == 0 or step == n_steps):
            fine = setup.hierarchy.fine
            diag_io.write_snapshot(outdir / f"snap_s_{step:06d}.txt",
                                   s[setup.dofmap.fine_to_w2h], fine.nx, fine.ny,
                                   setup.hierarchy.dg_index, SpaceKind.W2H, time)

    _record(records, writer, audit_record(0, 0.0))
    maybe_snapshot(0, 0.0)
    for step in range(1, n_steps + 1):
        try:
            s = op.rk3_step(s, flux, setup.h_fine, cfg.dt, cfg.alpha)
        except StateError as err:
            raise StateError(f"step {step}: {err}") from err
        _record(records, writer, audit_record(step, step * cfg.dt))
        if observer:
            observer(step, step * cfg.dt, s, op)
        maybe_snapshot(step, step * cfg.dt)
    return RunResult(cfg, records, s, setup)


def _run_dynamics(cfg: RunConfig, writer, outdir, observer=None):
    if cfg.preset == "ThermogeostrophicBalance":
        setup = presets.balance_setup(cfg.resolution, cfg.levels)
    else:
        setup = presets.instability_setup(cfg.resolution, cfg.levels, cfg.t_final)
    model = Model(setup.hierarchy, BuoyancyScheme(cfg.scheme), cfg.alpha,
                  setup.coriolis, cfg.dt, cfg.solver_params(),
                  newton_mode=("fixed4" if cfg.newton == "fixed4" else "tol"),
                  newton_tol=cfg.newton_tol, newton_max=cfg.newton_max)
    model.setup_ref = setup
    state = setup.state
    if model.scheme.high_order:
        state = State(state.u, state.h, state.S, model.diagnose_s(state.h, state.S))
    model.set_reference_state(state)
    n_steps = int(round(cfg.t_final / cfg.dt))
    records = []
    res_fh = open(Path(cfg.out) / "residuals.csv", "w") if (outdir and cfg.verbose) else None
    if res_fh:
        res_fh.write("step,newton_iter,cycle,residual\n")

    def make_record(step, time, iters):
        return DiagnosticsRecord(
            step, time, model.total_mass(state), model.total_buoyancy(state),
            model.energy(state), model.tracer_variance(state),
            model.total_vorticity(state), iters)

    def maybe_snapshot(step, time):
        if outdir and cfg.snapshots and (step % cfg.snapshots == 0 or step == n_steps):
            fine = setup.hierarchy.fine
            paths = _snapshot_paths(outdir, step)
            lvl = len(setup.hierarchy.levels) - 1
            diag_io.write_snapshot(paths["h"], state.h, fine.nx, fine.ny,
                                   lvl, SpaceKind.W2L, time)
            diag_io.write_snapshot(paths["S"], state.S, fine.nx, fine.ny,
                                   lvl, SpaceKind.W2L, time)
            s_cells = (model.project_low(state.s_high)
                       if state.s_high is not None else state.S / state.h)
            diag_io.write_snapshot(paths["s"], s_cells, fine.nx, fine.ny,
                                   setup.hierarchy.dg_index, SpaceKind.W2H, time)

    _record(records, writer, make_record(0, 0.0, 0))
    maybe_snapshot(0, 0.0)
    for step in range(1, n_steps + 1):
        try:
            state, info = model.advance(state)
        except StateError as err:
            if res_fh:
                res_fh.close()
            raise StateError(f"step {step}: {err}") from err
        _record(records, writer, make_record(step, step * cfg.dt, info.newton_iters))
        if observer:
            observer(step, step * cfg.dt, state, model)
        if res_fh:
            for it, hist in enumerate(info.residual_histories):
                for cyc, resid in enumerate(hist):
                    res_fh.write(f"{step},{it},{cyc},{resid:.17g}\n")
        maybe_snapshot(step, step * cfg.dt)
    if res_fh:
        res_fh.close()
    result = RunResult(cfg, records, state, setup)
    result.model = model
    return result


def _write_summary(path: Path, result: RunResult):
    series = result.series
    with open(path, "w") as fh:
        fh.write(f"preset={result.config.preset} resolution={result.config.resolution} "
                 f"scheme={result.config.scheme} dt={result.config.dt:.17g}\n")
        for key in ("mass", "total_S", "energy", "tracer_variance"):
            ref = series[key][0]
            drift = np.abs(series[key] - ref)
            rel = drift.max() / abs(ref) if ref != 0 else drift.max()
            fh.write(f"max_rel_drift_{key}={rel:.6e}\n")
        fh.write(f"max_abs_vorticity={np.abs(series['vorticity']).max():.6e}\n")


# ---------------------------------------------------------------------------
# convergence driver
# ---------------------------------------------------------------------------

def reference_fields(setup, model=None):
    """Project the preset's analytic solution into the discrete spaces.

    The buoyancy reference is the diagnosis applied to the projected
    depth and weighted buoyancy, i.e. the same representation the solver
    evolves (cell data collocated at the quadrature points), so the error
    measures the scheme and not the representation offset.
    """
    fine = setup.hierarchy.fine
    refs = {
        "u": interpolate_w1l(fine, setup.analytic["u"]),
        "h": project_w2l(fine, setup.analytic["h"]),
        "S": project_w2l(fine, setup.analytic["S"]),
    }
    if model is not None and model.dofmap is not None:
        refs["s"] = model.diagnose_s(refs["h"], refs["S"])
    return refs


def run_convergence(preset: str, resolutions, out: str | None = None,
                    **config_overrides):
    """Run the preset over several resolutions and report L2 orders.

    Returns (rows, orders): rows carry dx and per-field errors, orders the
    fitted slopes. For the advection preset the error is measured against
    the initial tracer after one revolution; for the balance preset each
    prognostic is compared with the projected steady solution.
    """
    preset = presets.canonical_preset(preset)
    rows = []
    for res in resolutions:
        cfg = RunConfig(preset=preset, resolution=res, **config_overrides)
        if preset == "SolidBodyAdvection":
            result = run(cfg)
            setup = result.setup
            err = diag_io.l2_error_collocated(setup.hierarchy, setup.dofmap,
                                              result.final, setup.s0)
            var = result.series["tracer_variance"]
            rows.append({"resolution": res, "dx": 2 * np.pi / res, "err_s": err,
                         "var_drift": abs(var[-1] - var[0])})
        elif preset == "ThermogeostrophicBalance":
            # the steady solution is tracked through its adjustment
            # oscillation, so report the worst error over the run (the
            # endpoint alone aliases the oscillation phase)
            errs = {"err_u": 0.0, "err_h": 0.0, "err_S": 0.0, "err_s": 0.0}
            refs = {}

            def watch(step, time, state, model):
                if not refs:
                    refs.update(reference_fields(model.setup_ref, model))
                fine = model.fine.level
                errs["err_u"] = max(errs["err_u"], diag_io.l2_error_edges(
                    fine, model.fine.m1, state.u, refs["u"]))
                errs["err_h"] = max(errs["err_h"], diag_io.l2_error_cells(
                    fine, state.h, refs["h"]))
                errs["err_S"] = max(errs["err_S"], diag_io.l2_error_cells(
                    fine, state.S, refs["S"]))
                if "s" in refs and state.s_high is not None:
                    errs["err_s"] = max(errs["err_s"], diag_io.l2_error_collocated(
                        model.hierarchy, model.dofmap, state.s_high, refs["s"]))

            result = run(cfg, observer=watch)
            row = {"resolution": res, "dx": result.setup.hierarchy.fine.lx / res}
            row.update({k: v for k, v in errs.items() if v > 0.0})
            rows.append(row)
        else:
            raise ConfigError(f"no convergence reference for preset {preset}")
    error_keys = [k for k in rows[0] if k.startswith("err_")]
    dxs = [row["dx"] for row in rows]
    orders = {k: observed_order([row[k] for row in rows], dxs) for k in error_keys}
    if out:
        outdir = Path(out)
        outdir.mkdir(parents=True, exist_ok=True)
        keys = list(rows[0].keys())
        with open(outdir / "convergence.csv", "w") as fh:
            fh.write(",".join(keys) + "\n")
            for row in rows:
                fh.write(",".join(
                    str(row[k]) if k == "resolution" else f"{row[k]:.17g}"
                    for k in keys) + "\n")
        with open(outdir / "orders.csv", "w") as fh:
            fh.write("field,order\n")
            for k, v in orders.items():
                fh.write(f"{k},{'exact' if np.isinf(v) else f'{v:.17g}'}\n")
    return rows, orders
