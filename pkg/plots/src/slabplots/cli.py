"""Command line: one subcommand per figure kind."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .render import PlotSpec, SchemaError, render

_KIND_BY_COMMAND = {
    "profile": "profile",
    "convergence": "convergence",
    "table": "regime_table",
    "layer": "layer_profile",
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slabplots", description="Render figures from radslab exports."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("profile", "temperature/departure profile from a run CSV"),
        ("convergence", "log-log error plot with fitted order from a study CSV"),
        ("table", "regime classification grid from a table JSON"),
        ("layer", "layer profile from a layer CSV"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("input", help="radslab export file")
        cmd.add_argument("-o", "--output", required=True, help="image path (.png or .svg)")
        cmd.add_argument("--title", default="")
        cmd.add_argument("--logy", action="store_true", help="log scale for metrics")
        if name == "profile":
            cmd.add_argument(
                "--windows", default=None,
                help="regime-table JSON supplying the layer widths to shade",
            )
            cmd.add_argument("--regime", default=None, help="regime key inside --windows")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    windows = {}
    if getattr(args, "windows", None):
        payload = json.loads(Path(args.windows).read_text())
        regimes = payload.get("regimes", {})
        key = args.regime or (sorted(regimes)[0] if regimes else None)
        if key is None or key not in regimes:
            print(f"error: regime {args.regime!r} not found in {args.windows}", file=sys.stderr)
            return 2
        entry = regimes[key]
        windows = {
            "milne_width": entry.get("milne_width"),
            "thermal_width": entry.get("thermal_width"),
        }
    try:
        spec = PlotSpec(
            kind=_KIND_BY_COMMAND[args.command],
            inputs=[args.input],
            output=Path(args.output),
            title=args.title,
            windows=windows,
            logy=args.logy,
        )
        path = render(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
