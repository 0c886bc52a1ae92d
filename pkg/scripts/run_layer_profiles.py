#!/usr/bin/env python3
"""Layer-profile driver: Milne and thermalization solves with CSV export."""

import json
import sys
from pathlib import Path

from radslab.config import load_config
from radslab.harness import run_layer_study


def main() -> int:
    config_path = sys.argv[1] if len(sys.argv) > 1 else "configs/layers_grey.ini"
    out = sys.argv[2] if len(sys.argv) > 2 else "out/layers"
    config = load_config(config_path, {"out": out})
    config.out_dir.mkdir(parents=True, exist_ok=True)
    result = run_layer_study(config, out_dir=config.out_dir)
    path = Path(config.out_dir) / "layers.json"
    path.write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
    for face, entry in result["faces"].items():
        print(f"{face}: T_inf = {entry['T_inf']:.6f}  certificate = {entry['certificate']}")
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
