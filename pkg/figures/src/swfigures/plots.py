"""Render diagnostics time series, convergence fits, and field panels.

Pure renderers: every number comes from the input files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import fit_order, read_convergence, read_snapshot, read_timeseries


@dataclass
class FigureSpec:
    inputs: list
    output: Path
    kind: str = "timeseries"
    column: str = "tracer_variance"
    logy: bool = True
    relative: bool = True
    title: str | None = None


def plot_timeseries(spec: FigureSpec) -> Path:
    """One curve per input CSV; by default the normalised drift of a column."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for path in spec.inputs:
        series = read_timeseries(path)
        t = series["time"]
        y = series[spec.column]
        if spec.relative:
            ref = y[0] if y[0] != 0 else 1.0
            y = np.abs(y - y[0]) / abs(ref)
            # zero drift cannot sit on a log axis
            y = np.where(y > 0, y, np.nan)
        ax.plot(t, y, label=Path(path).stem)
    if spec.logy:
        ax.set_yscale("log")
    ax.set_xlabel("time")
    label = spec.column + (" conservation error" if spec.relative else "")
    ax.set_ylabel(label)
    if spec.title:
        ax.set_title(spec.title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def plot_convergence(spec: FigureSpec) -> dict:
    """Log-log error curves with fitted slopes; returns the slopes."""
    table = read_convergence(spec.inputs[0])
    dx = table["dx"]
    fields = [k for k in table if k.startswith("err_")]
    if not fields:
        fields = [k for k in table if k not in ("dx", "resolution")]
    fig, ax = plt.subplots(figsize=(6.0, 4.4))
    slopes = {}
    for name in fields:
        slope = fit_order(dx, table[name])
        slopes[name] = slope
        ax.loglog(dx, table[name], "o-", label=f"{name} (slope {slope:.2f})")
    guide = table[fields[0]][0] * (dx / dx[0]) ** 2
    ax.loglog(dx, guide, "k--", lw=0.8, label="second order")
    ax.set_xlabel("cell size")
    ax.set_ylabel("L2 error")
    if spec.title:
        ax.set_title(spec.title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return slopes


def plot_field(spec: FigureSpec) -> Path:
    """Filled-contour panels, one per snapshot input."""
    n = len(spec.inputs)
    fig, axes = plt.subplots(1, n, figsize=(4.6 * n, 4.0), squeeze=False)
    for ax, path in zip(axes[0], spec.inputs):
        grid, meta = read_snapshot(path)
        im = ax.contourf(grid, levels=31, cmap="RdYlBu_r")
        ax.set_title(f"{Path(path).stem} (t={meta['time']:g})", fontsize=9)
        ax.set_aspect("equal")
        fig.colorbar(im, ax=ax, shrink=0.8)
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
