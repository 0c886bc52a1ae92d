"""Figure rendering from radslab exports.

Four figure kinds:

* ``profile``      -- run CSV (x, T, flux, departure, anisotropy), with
                      optional layer-window shading from a regime-table JSON
* ``convergence``  -- study CSV (epsilon, l1, linf, ...) on log-log axes with
                      the fitted order annotated
* ``regime_table`` -- regime-table JSON as a colored classification grid
* ``layer_profile``-- layer CSV (y/eta, per-group means, T, anisotropy)

Rendering is deterministic: fixed style, fixed fonts and sizes, constant
image metadata, no timestamps.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGURE_KINDS = ("profile", "convergence", "regime_table", "layer_profile")

# fixed style: identical output whatever the user's matplotlibrc says
_STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 10.0,
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "slabplots",
}
_METADATA = {"Software": "slabplots"}


class SchemaError(ValueError):
    """Input file does not match the documented radslab schema."""


@dataclass(frozen=True)
class PlotSpec:
    kind: str
    inputs: list
    output: Path
    title: str = ""
    windows: dict = field(default_factory=dict)  # {"milne_width": .., "thermal_width": ..}
    logy: bool = False

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        for path in self.inputs:
            if not Path(path).exists():
                raise SchemaError(f"input file {path} does not exist")


def read_csv_columns(path, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Read a radslab CSV (comment line, header row); check required columns."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise SchemaError(f"{path}: no header row found")
    header = [h.strip() for h in rows[0]]
    for name in required:
        if name not in header:
            raise SchemaError(f"{path}: missing column {name!r} (have {header})")
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    if data.size == 0:
        raise SchemaError(f"{path}: no data rows")
    return {name: data[:, i] for i, name in enumerate(header)}


def _shade_windows(ax, windows, x_max):
    milne = windows.get("milne_width")
    thermal = windows.get("thermal_width")
    if thermal is not None and np.isfinite(thermal):
        for x0 in (0.0, x_max - thermal):
            ax.axvspan(x0, x0 + thermal, color="tab:orange", alpha=0.15, lw=0)
    if milne is not None and np.isfinite(milne):
        for x0 in (0.0, x_max - milne):
            ax.axvspan(x0, x0 + milne, color="tab:red", alpha=0.2, lw=0)


def _render_profile(spec, ax):
    cols = read_csv_columns(spec.inputs[0], ("x", "T", "flux", "departure", "anisotropy"))
    ax.plot(cols["x"], cols["T"], color="tab:blue", label="T")
    ax.set_xlabel("x")
    ax.set_ylabel("temperature", color="tab:blue")
    twin = ax.twinx()
    twin.plot(cols["x"], cols["departure"], color="tab:orange", label="departure")
    twin.plot(cols["x"], cols["anisotropy"], color="tab:red", ls="--", label="anisotropy")
    twin.set_ylabel("departure / anisotropy")
    twin.set_yscale("log" if spec.logy else "linear")
    twin.grid(False)
    _shade_windows(ax, spec.windows, float(cols["x"].max() + cols["x"].min()))
    lines, labels = twin.get_legend_handles_labels()
    ax.legend(lines, labels, loc="upper center")


def _render_convergence(spec, ax):
    cols = read_csv_columns(spec.inputs[0], ("epsilon", "l1", "linf"))
    eps = cols["epsilon"]
    for name, marker in (("l1", "o"), ("linf", "s")):
        ax.loglog(eps, cols[name], marker=marker, label=name)
        if eps.size >= 3:
            order = np.polyfit(np.log(eps), np.log(cols[name]), 1)[0]
            ax.annotate(
                f"{name}: order {order:.2f}",
                xy=(eps[-1], cols[name][-1]),
                xytext=(5, 5 if name == "l1" else -12),
                textcoords="offset points",
                fontsize=9,
            )
    ax.set_xlabel("epsilon (Milne length)")
    ax.set_ylabel("bulk-window error")
    ax.legend()


_CLASS_COLOR = {
    "equilibrium": "#79b473",
    "non_equilibrium": "#d1605e",
}
_THERMAL_COLOR = {
    "coincident": "#8ab6d6",
    "nested": "#4a7ba6",
    "none": "#cccccc",
}


def _render_regime_table(spec, ax):
    payload = json.loads(Path(spec.inputs[0]).read_text())
    regimes = payload.get("regimes")
    if not regimes:
        raise SchemaError(f"{spec.inputs[0]}: missing 'regimes' section")
    names = sorted(regimes)
    required = ("milne_present", "thermal_kind", "classification", "bulk_departure")
    for name in names:
        for key in required:
            if key not in regimes[name]:
                raise SchemaError(f"{spec.inputs[0]}: regime {name!r} missing key {key!r}")
    rows = ("Milne layer", "Thermalization", "Bulk")
    ax.set_xlim(0, len(names))
    ax.set_ylim(0, len(rows))
    for j, name in enumerate(names):
        entry = regimes[name]
        cells = [
            ("yes" if entry["milne_present"] else "no",
             "#8ab6d6" if entry["milne_present"] else "#cccccc"),
            (entry["thermal_kind"], _THERMAL_COLOR.get(entry["thermal_kind"], "#cccccc")),
            (entry["classification"].replace("_", " "),
             _CLASS_COLOR.get(entry["classification"], "#cccccc")),
        ]
        for i, (text, color) in enumerate(cells):
            y = len(rows) - 1 - i
            ax.add_patch(plt.Rectangle((j, y), 1, 1, facecolor=color, edgecolor="white"))
            ax.text(j + 0.5, y + 0.5, text, ha="center", va="center", fontsize=9)
        ax.text(j + 0.5, len(rows) + 0.08, name, ha="center", va="bottom", fontsize=9)
    for i, row in enumerate(rows):
        ax.text(-0.08, len(rows) - 0.5 - i, row, ha="right", va="center", fontsize=9)
    ax.set_axis_off()


def _render_layer_profile(spec, ax):
    cols = read_csv_columns(spec.inputs[0], ("T", "anisotropy"))
    coord = "y" if "y" in cols else "eta"
    if coord not in cols:
        raise SchemaError(f"{spec.inputs[0]}: missing column 'y' (or 'eta')")
    x = cols[coord]
    for name, vals in cols.items():
        if name.startswith("mean_g"):
            ax.plot(x, vals, label=name)
    ax.plot(x, cols["T"], color="black", lw=2, label="T")
    ax.set_xlabel(coord)
    ax.set_ylabel("angular mean / temperature")
    twin = ax.twinx()
    twin.semilogy(x, np.maximum(cols["anisotropy"], 1e-16), color="tab:red", ls="--",
                  label="anisotropy")
    twin.set_ylabel("anisotropy")
    twin.grid(False)
    ax.legend(loc="center right", fontsize=8)


_RENDERERS = {
    "profile": _render_profile,
    "convergence": _render_convergence,
    "regime_table": _render_regime_table,
    "layer_profile": _render_layer_profile,
}


def render(spec: PlotSpec) -> Path:
    """Render one figure; returns the written path.

    Deterministic by construction: fixed style, constant metadata, and no
    source timestamps, so identical inputs give identical bytes.
    """
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        try:
            _RENDERERS[spec.kind](spec, ax)
            if spec.title:
                ax.set_title(spec.title)
            fig.tight_layout()
            out = Path(spec.output)
            out.parent.mkdir(parents=True, exist_ok=True)
            if out.suffix.lower() == ".svg":
                # Date=None strips the embedded timestamp (determinism)
                metadata = {"Creator": "slabplots", "Date": None}
            else:
                metadata = _METADATA
            fig.savefig(out, metadata=metadata)
        finally:
            plt.close(fig)
    return Path(spec.output)
