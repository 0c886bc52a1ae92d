"""Command-line entry point.

Subcommands: run, study, table, layers, init-layers.
Exit codes: 0 success, 2 solver non-convergence, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, kinetic as kn
from .config import load_config
from .errors import ConfigError, RadslabError
from .grids import build_angular_quadrature, build_slab_mesh
from .planck import group_emission


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radslab",
        description="Radiative transfer slab laboratory: kinetic solves, "
        "layer problems, diffusion limits, and cross-verification studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "single kinetic run with CSV/snapshot export"),
        ("study", "epsilon convergence study against the matched limit"),
        ("table", "regime classification table at fixed epsilon"),
        ("layers", "Milne/thermalization layer study"),
        ("init-layers", "bulk initial-layer study"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="experiment config file")
        cmd.add_argument("--out", default=None, help="output directory")
        cmd.add_argument("--workers", type=int, default=None, help="parallel runs")
        cmd.add_argument("--seed", type=int, default=None, help="seed recorded in reports")
    return parser


def _run_single(config) -> int:
    quad = build_angular_quadrature("slab_polar", config.order)
    eps = config.epsilons[0]
    regime = config.regime(eps)
    mesh = build_slab_mesh(config.cells_for(eps))
    grid = config.material.freq_grid
    if regime.light_mode == "stationary":
        state = kn.solve_stationary(
            regime, config.material, mesh, quad, config.left, config.right,
            kn.SolverOptions(l_max=config.l_max),
        )
    else:
        T0 = np.ones(mesh.size)
        I0 = np.broadcast_to(
            group_emission(T0, grid)[:, None, :], (mesh.size, quad.size, grid.size)
        ).copy()
        state = kn.KineticState(mesh, quad, grid, I0, T0)
        steps = max(1, int(round(config.t_end / config.dt)))
        stepper = kn.step_time_instant if regime.light_mode == "instant" else kn.step_time_finite
        for _ in range(steps):
            state = stepper(
                state, config.dt, regime, config.material, config.left, config.right,
                kn.SolverOptions(l_max=config.l_max),
            )
    config.out_dir.mkdir(parents=True, exist_ok=True)
    kn.write_state_csv(state, config.material, config.out_dir / "state.csv")
    kn.write_snapshot(config.out_dir / "state.snapshot", state)
    print(f"wrote {config.out_dir / 'state.csv'} and state.snapshot")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    overrides = {}
    if args.out is not None:
        overrides["out"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        config = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3

    report = None
    try:
        if args.command == "run":
            return _run_single(config)
        if args.command == "study":
            report = harness.run_convergence_study(config)
            paths = harness.export_results(report, config.out_dir, prefix="convergence")
        elif args.command == "table":
            report = harness.run_regime_table(config)
            paths = harness.export_results(report, config.out_dir, prefix="regime_table")
        elif args.command == "layers":
            config.out_dir.mkdir(parents=True, exist_ok=True)
            result = harness.run_layer_study(config, out_dir=config.out_dir)
            path = Path(config.out_dir) / "layers.json"
            path.write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
            paths = [path]
        else:
            config.out_dir.mkdir(parents=True, exist_ok=True)
            result = harness.run_initial_layer_study(config, out_dir=config.out_dir)
            path = Path(config.out_dir) / "initial_layers.json"
            path.write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
            paths = [path]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except RadslabError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(f"wrote {path}")
    if report is not None and report.partial:
        print("study completed partially; see the failure field", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
