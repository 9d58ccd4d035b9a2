"""Command-line interface: run, convergence, mesh."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness
from .mesh import ConfigError, StateError, build_hierarchy


def _add_run_options(p):
    p.add_argument("--preset", required=False)
    p.add_argument("--scheme", default=None,
                   help="one of " + ", ".join(s.value for s in harness.BuoyancyScheme))
    p.add_argument("--alpha", type=float, default=None, choices=[0.0, 1.0])
    p.add_argument("--resolution", type=int, default=None,
                   help="fine-level cells per dimension")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-final", dest="t_final", type=float, default=None)
    p.add_argument("--newton", choices=["tol", "fixed4"], default=None)
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--snapshots", type=int, default=None,
                   help="write field snapshots every K steps")
    p.add_argument("--config", default=None, help="KEY=VALUE configuration file")
    p.add_argument("--verbose", action="store_true", default=None)


def _config_from_args(args) -> harness.RunConfig:
    mapping = {}
    if args.config:
        mapping.update(harness.parse_config_file(args.config))
    for key in ("preset", "scheme", "alpha", "resolution", "dt", "t_final",
                "newton", "levels", "out", "snapshots", "verbose"):
        value = getattr(args, key, None)
        if value is not None:
            mapping[key] = value
    return harness.config_from_mapping(mapping)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="thermalsw",
                                     description="Thermal shallow water simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_run_options(p_run)

    p_conv = sub.add_parser("convergence", help="run a resolution sweep and fit orders")
    _add_run_options(p_conv)
    p_conv.add_argument("--resolutions", required=True,
                        help="comma-separated fine-cell counts, e.g. 48,96,192")

    p_mesh = sub.add_parser("mesh", help="print a mesh hierarchy summary")
    p_mesh.add_argument("--resolution", type=int, required=True)
    p_mesh.add_argument("--levels", type=int, default=4)
    p_mesh.add_argument("--extent", type=float, default=2 * np.pi)

    args = parser.parse_args(argv)
    try:
        if args.command == "mesh":
            print(build_hierarchy(args.extent, args.resolution, args.levels).summary())
            return 0
        if args.command == "run":
            cfg = _config_from_args(args)
            result = harness.run(cfg)
            last = result.records[-1]
            print(f"completed {last.step} steps to t={last.time:g}; "
                  f"outputs in {cfg.out or '(memory only)'}")
            return 0
        if args.command == "convergence":
            resolutions = [int(tok) for tok in args.resolutions.split(",")]
            mapping = _config_from_args_conv(args)
            rows, orders = harness.run_convergence(
                mapping.pop("preset"), resolutions, **mapping)
            _print_order_table(rows, orders)
            return 0
    except (ConfigError, StateError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


def _config_from_args_conv(args) -> dict:
    mapping = {}
    if args.config:
        mapping.update({k: harness._CONFIG_TYPES[k](v)
                        for k, v in harness.parse_config_file(args.config).items()})
    for key in ("preset", "scheme", "alpha", "dt", "t_final", "newton",
                "levels", "out", "snapshots", "verbose"):
        value = getattr(args, key, None)
        if value is not None:
            mapping[key] = value
    if "preset" not in mapping:
        raise ConfigError("convergence needs --preset")
    return mapping


def _print_order_table(rows, orders):
    keys = list(rows[0].keys())
    print("  ".join(f"{k:>14}" for k in keys))
    for row in rows:
        print("  ".join(f"{row[k]:14.6e}" if k != "resolution" else f"{row[k]:>14d}"
                        for k in keys))
    for name, slope in orders.items():
        label = "exact" if np.isinf(slope) else f"{slope:.3f}"
        print(f"observed order {name}: {label}")


if __name__ == "__main__":
    sys.exit(main())
