#!/usr/bin/env python3
"""Convergence study driver: kinetic vs matched diffusion limit over epsilon.

Equivalent to `radslab study --config configs/convergence_grey_11.ini`, kept
as a script for interactive tinkering with the sweep parameters.
"""

import sys
from pathlib import Path

from radslab.config import load_config
from radslab.harness import export_results, run_convergence_study


def main() -> int:
    config_path = sys.argv[1] if len(sys.argv) > 1 else "configs/convergence_grey_11.ini"
    out = sys.argv[2] if len(sys.argv) > 2 else "out/convergence"
    config = load_config(config_path, {"out": out})
    report = run_convergence_study(config)
    paths = export_results(report, config.out_dir, prefix="convergence")
    for entry in report.entries:
        print(
            f"eps={entry.epsilon:<6g} L1={entry.l1:.6f} Linf={entry.linf:.6f} "
            f"({entry.runtime_s:.2f}s)"
        )
    print(f"fitted orders: {report.orders}")
    for path in paths:
        print(f"wrote {path}")
    return 2 if report.partial else 0


if __name__ == "__main__":
    sys.exit(main())
