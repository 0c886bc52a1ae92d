#!/usr/bin/env python3
"""Regime-table driver: reproduce the four-column classification at fixed epsilon."""

import sys

from radslab.config import load_config
from radslab.harness import export_results, run_regime_table


def main() -> int:
    config_path = sys.argv[1] if len(sys.argv) > 1 else "configs/regime_table.ini"
    out = sys.argv[2] if len(sys.argv) > 2 else "out/regime_table"
    config = load_config(config_path, {"out": out})
    report = run_regime_table(config)
    for name in sorted(report.regimes):
        row = report.regimes[name]
        print(
            f"{name:<12} {row['classification']:<16} milne={row['milne_present']} "
            f"thermal={row['thermal_kind']:<11} bulk_departure={row['bulk_departure']:.3f}"
        )
    for path in export_results(report, config.out_dir, prefix="regime_table"):
        print(f"wrote {path}")
    return 2 if report.partial else 0


if __name__ == "__main__":
    sys.exit(main())
