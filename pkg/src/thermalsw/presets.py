"""Experiment presets: domains, physical constants, initial conditions.

Three configurations are provided:

* solid-body advection of a Gaussian tracer in a rotating flux field
  (transport only, one revolution in 2*pi time units);
* a steady zonal jet in thermogeostrophic balance on an Earth-sized
  doubly periodic plane;
* a thermally unstable vortex with a small wavenumber-4 ring
  perturbation, run in dimensionless units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import State
from .mesh import ConfigError, MeshHierarchy, build_hierarchy
from .spaces import (Space, SpaceKind, build_dofmap, interpolate_w1l,
                     interpolate_w2h, project_w2l)

PRESET_NAMES = ("SolidBodyAdvection", "ThermogeostrophicBalance", "ThermalInstability")

_ALIASES = {
    "advection": "SolidBodyAdvection",
    "balance": "ThermogeostrophicBalance",
    "instability": "ThermalInstability",
}


def canonical_preset(name: str) -> str:
    if name in PRESET_NAMES:
        return name
    if name in _ALIASES:
        return _ALIASES[name]
    raise ConfigError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")


# ---------------------------------------------------------------------------
# solid body advection
# ---------------------------------------------------------------------------

@dataclass
class AdvectionSetup:
    hierarchy: MeshHierarchy
    dofmap: object
    s0: np.ndarray          # collocated DG tracer
    h_fine: np.ndarray      # unit depth
    t_final: float

    @staticmethod
    def flux_fn(x, y):
        """Solid-body carrier flux (analytic, divergence free)."""
        return y, -x

    def tracer_analytic(self, x, y):
        x0, y0 = 0.4 * np.pi, -0.4 * np.pi
        return np.exp(-5.0 * ((x - x0) ** 2 + (y - y0) ** 2))


def advection_dt(resolution: int) -> float:
    """Time step paired with the grid so one revolution stays at fixed CFL."""
    return np.pi * 48.0 / (300.0 * resolution)


def advection_setup(resolution: int, levels: int = 3) -> AdvectionSetup:
    if resolution % 4 != 0:
        raise ConfigError(f"advection resolution must be a multiple of 4, got {resolution}")
    hierarchy = build_hierarchy(2 * np.pi, resolution, levels=levels,
                                origin=(-np.pi, -np.pi))
    dofmap = build_dofmap(hierarchy, Space(SpaceKind.W2H, hierarchy.dg_index))
    return AdvectionSetup(
        hierarchy=hierarchy,
        dofmap=dofmap,
        s0=interpolate_w2h(hierarchy, dofmap,
                           lambda x, y: np.exp(-5.0 * ((x - 0.4 * np.pi) ** 2
                                                       + (y + 0.4 * np.pi) ** 2))),
        h_fine=np.ones(hierarchy.fine.n_cells),
        t_final=2 * np.pi,
    )


# ---------------------------------------------------------------------------
# thermogeostrophic balance
# ---------------------------------------------------------------------------

@dataclass
class BalanceConstants:
    earth_radius: float = 6371220.0
    u0: float = 20.0
    h0: float = 5960.0
    gravity: float = 9.80616
    coriolis: float = 6.147e-5

    @property
    def length(self) -> float:
        return 2 * np.pi * self.earth_radius


@dataclass
class DynamicsSetup:
    hierarchy: MeshHierarchy
    state: State
    coriolis: float
    t_final: float
    analytic: dict  # callables keyed by 'u', 'h', 's'


def balance_dt(resolution: int) -> float:
    return 1800.0 * 32.0 / resolution


def balance_setup(resolution: int, levels: int = 4) -> DynamicsSetup:
    c = BalanceConstants()
    hierarchy = build_hierarchy(c.length, resolution, levels=levels)
    fine = hierarchy.fine

    def u_fn(x, y):
        return c.u0 * np.cos(y / c.earth_radius), np.zeros_like(np.asarray(x, dtype=float))

    def h_fn(x, y):
        return c.h0 - c.earth_radius * c.coriolis * c.u0 / c.gravity * np.sin(y / c.earth_radius)

    def s_fn(x, y):
        h = h_fn(x, y)
        return c.gravity * (1.0 + 0.05 * c.h0 ** 2 / h ** 2)

    state = State(
        u=interpolate_w1l(fine, u_fn),
        h=project_w2l(fine, h_fn),
        S=project_w2l(fine, lambda x, y: s_fn(x, y) * h_fn(x, y)),
    )
    return DynamicsSetup(hierarchy, state, c.coriolis, 86400.0,
                         {"u": u_fn, "h": h_fn, "s": s_fn,
                          "S": lambda x, y: s_fn(x, y) * h_fn(x, y)})


# ---------------------------------------------------------------------------
# thermal instability
# ---------------------------------------------------------------------------

@dataclass
class InstabilityConstants:
    h0: float = 1.0
    gravity: float = 1.0
    beta: float = 2.0
    r_c: float = 0.5
    u0: float = 0.1
    rossby: float = 0.1
    burger: float = 1.0

    @property
    def coriolis(self) -> float:
        # Ro = U0 / (f L) with unit storm scale, consistent with Bu = g H0 / (f L)^2
        return self.u0 / self.rossby


def instability_fields(c: InstabilityConstants):
    def polar(x, y):
        return np.sqrt(x ** 2 + y ** 2), np.arctan2(y, x)

    def eps(x, y):
        r, th = polar(x, y)
        return 0.01 * np.exp(-60.0 * (r - c.r_c) ** 2) * np.sin(6 * np.pi * (r - c.r_c)) \
            * np.cos(4 * th)

    def u_fn(x, y):
        r, th = polar(x, y)
        swirl = c.u0 * r * np.exp((1.0 - r ** c.beta) / c.beta)
        e = eps(x, y)
        return e - swirl * np.sin(th), e + swirl * np.cos(th)

    def h_fn(x, y):
        return c.h0 - eps(x, y)

    def s_fn(x, y):
        r, _ = polar(x, y)
        base = c.gravity - (2.0 * c.rossby / c.burger) * (
            np.exp((1.0 - r ** 2) / 2.0) + 0.5 * c.rossby * np.exp(1.0 - r ** 2))
        return eps(x, y) + base

    return u_fn, h_fn, s_fn


def instability_setup(resolution: int, levels: int = 4,
                      t_final: float = 50.0) -> DynamicsSetup:
    c = InstabilityConstants()
    hierarchy = build_hierarchy(2 * np.pi, resolution, levels=levels,
                                origin=(-np.pi, -np.pi))
    fine = hierarchy.fine
    u_fn, h_fn, s_fn = instability_fields(c)
    state = State(
        u=interpolate_w1l(fine, u_fn),
        h=project_w2l(fine, h_fn),
        S=project_w2l(fine, lambda x, y: s_fn(x, y) * h_fn(x, y)),
    )
    return DynamicsSetup(hierarchy, state, c.coriolis, t_final,
                         {"u": u_fn, "h": h_fn, "s": s_fn,
                          "S": lambda x, y: s_fn(x, y) * h_fn(x, y)})
