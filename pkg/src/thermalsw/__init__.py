"""Thermal shallow water solver with collocated high-order buoyancy transport."""

from .mesh import ConfigError, StateError, build_hierarchy, gauss_legendre
from .dynamics import BuoyancyScheme, Model, State
from .harness import RunConfig, run, run_convergence

__all__ = [
    "BuoyancyScheme", "ConfigError", "Model", "RunConfig", "State",
    "StateError", "build_hierarchy", "gauss_legendre", "run", "run_convergence",
]

__version__ = "0.1.0"
