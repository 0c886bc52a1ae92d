"""Experiment orchestration: single runs, convergence studies, the regime
table, layer studies, and deterministic result export."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import boundary_layers as bl
from . import diffusion as df
from . import initial_layers as il
from . import kinetic as kn
from .config import ExperimentConfig
from .errors import RadslabError
from .grids import build_angular_quadrature, build_slab_mesh
from .planck import group_emission
from .scattering import discretize_scattering


@dataclass
class StudyEntry:
    epsilon: float
    l1: float
    linf: float
    l1_windowed: float
    linf_windowed: float
    bulk_departure: float
    bulk_anisotropy: float
    runtime_s: float


@dataclass
class StudyReport:
    kind: str
    entries: list = field(default_factory=list)
    orders: dict = field(default_factory=dict)
    window: tuple = (0.0, 1.0)
    partial: bool = False
    failure: str = ""
    seed: int = 0
    regimes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "entries": [vars(e) for e in self.entries],
            "orders": self.orders,
            "window": list(self.window),
            "partial": self.partial,
            "failure": self.failure,
            "seed": self.seed,
            "regimes": self.regimes,
        }


def _limit_temperature(config: ExperimentConfig, regime, mesh, quad, op):
    """Limit-problem temperature with boundary data from the layer pipeline."""
    classification = regime.classification()
    datum_l = bl.boundary_temperature(regime, config.material, 0.0, quad, config.left)
    datum_r = bl.boundary_temperature(regime, config.material, 1.0, quad, config.right)
    if classification in df.EQUILIBRIUM_REGIMES:
        state = df.solve_equilibrium_stationary(
            classification, config.material, mesh, op, datum_l, datum_r
        )
        return state.T
    state = df.solve_nonequilibrium_stationary(
        classification, config.material, mesh, op, datum_l, datum_r
    )
    return state.T


def _run_one_epsilon(config: ExperimentConfig, eps: float, quad, margin: float):
    start = time.perf_counter()
    regime = config.regime(eps, "stationary")
    mesh = build_slab_mesh(config.cells_for(eps))
    op = discretize_scattering(config.material.kernel, quad, config.l_max)
    state = kn.solve_stationary(
        regime, config.material, mesh, quad, config.left, config.right,
        kn.SolverOptions(l_max=config.l_max),
    )
    T_limit = _limit_temperature(config, regime, mesh, quad, op)
    diff = np.abs(state.T - T_limit)
    common = (mesh.centers > margin) & (mesh.centers < 1.0 - margin)
    own_margin = min(regime.ell_T, 1.0) * np.log(1.0 / eps)
    own = (mesh.centers > own_margin) & (mesh.centers < 1.0 - own_margin)
    dep, ani = kn.equilibrium_departure(state, config.material)
    wts = mesh.widths
    entry = StudyEntry(
        epsilon=eps,
        l1=float(np.sum(diff[common] * wts[common]) / np.sum(wts[common])),
        linf=float(diff[common].max()),
        l1_windowed=float(np.sum(diff[own] * wts[own]) / np.sum(wts[own])),
        linf_windowed=float(diff[own].max()),
        bulk_departure=float(np.median(dep[common])),
        bulk_anisotropy=float(np.median(ani[common])),
        runtime_s=time.perf_counter() - start,
    )
    return entry, state


def run_convergence_study(config: ExperimentConfig) -> StudyReport:
    """Kinetic vs matched-limit errors over the epsilon list.

    Errors are compared on a common bulk window (the widest per-epsilon layer
    margin): per-epsilon windows creep toward the walls as epsilon decreases
    and would hide the O(eps) convergence behind the extrapolation-length
    slip.  Orders are least-squares log-log fits over >= 3 epsilons.
    """
    report = StudyReport(kind="convergence_study", seed=config.seed)
    margin = config.bulk_margin()
    report.window = (margin, 1.0 - margin)
    quad = build_angular_quadrature("slab_polar", config.order)

    def job(eps):
        return _run_one_epsilon(config, eps, quad, margin)

    try:
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(job, config.epsilons))
        else:
            results = [job(eps) for eps in config.epsilons]
        report.entries = [r[0] for r in results]
    except RadslabError as exc:
        report.partial = True
        report.failure = f"{type(exc).__name__}: {exc}"
        return report

    if len(report.entries) >= 3:
        eps = np.log([e.epsilon for e in report.entries])
        for name in ("l1", "linf"):
            vals = np.log([max(getattr(e, name), 1e-300) for e in report.entries])
            report.orders[name] = float(np.polyfit(eps, vals, 1)[0])
    return report


# ---------------------------------------------------------------------------
# Regime table
# ---------------------------------------------------------------------------

# (name, beta, gamma, time multiplier): the equilibrium columns are sampled
# after their profile has developed, the non-equilibrium ones mid-transient,
# each in its own heat-scale time.
TABLE_PRESETS = (
    ("regime_1.1", -1.0, 0.0, 5.0),
    ("regime_2", -0.4, -1.0, 5.0),
    ("regime_3", 1.0, -1.0, 0.5),
    ("regime_4", 2.0, -1.0, 0.5),
)


def _layer_width(x: np.ndarray, metric: np.ndarray, bulk_level: float) -> tuple[float, float]:
    """One-e-fold decay distance of a wall-peaked metric.

    Returns (wall value, width): the first x where the excess over the bulk
    level has dropped by a factor e.  Layer tails ride on the smooth O(eps)
    slip correction, so a 95%-decay rule would report the slip scale instead
    of the layer scale.
    """
    wall = float(metric[0])
    target = bulk_level + (wall - bulk_level) / np.e
    below = np.nonzero(metric <= target)[0]
    width = float(x[below[0]]) if below.size else float(x[-1])
    return wall, width


def classify_state(state: kn.KineticState, model, regime) -> dict:
    """Layer-presence metrics of a kinetic state (left-wall oriented).

    The thermalization layer is detected on the isotropic Planck-departure
    residue max(departure - anisotropy, 0): the departure metric itself is
    dominated near the wall by the angular spike, which would mask the
    frequency-shape relaxation scale the thermalization layer lives on.
    """
    eps = regime.epsilon
    dep, ani = kn.equilibrium_departure(state, model)
    shape = np.maximum(dep - ani, 0.0)
    x = state.mesh.centers
    margin = eps * np.log(1.0 / eps)
    bulk = (x > max(margin, 0.1)) & (x < 1.0 - max(margin, 0.1))
    bulk_dep = float(np.median(dep[bulk]))
    bulk_ani = float(np.median(ani[bulk]))
    bulk_shape = float(np.median(shape[bulk]))
    wall_ani, width_ani = _layer_width(x, ani, bulk_ani)
    wall_dep, _ = _layer_width(x, dep, bulk_dep)
    wall_shape, width_shape = _layer_width(x, shape, bulk_shape)

    milne_allow = 4.0 * eps * np.log(1.0 / eps)
    thermal_allow = 4.0 * min(regime.ell_T, 1.0) * np.log(1.0 / eps)
    milne_present = wall_ani > max(5.0 * bulk_ani, 10.0 * eps**2) and width_ani <= milne_allow
    equilibrium = bulk_dep < 10.0 * eps
    shape_layer = (
        wall_shape > max(5.0 * bulk_shape, 10.0 * eps**2)
        and width_shape <= thermal_allow
    )

    if not equilibrium:
        thermal_kind = "none"  # departure is not localized: no thermalization layer
        thermal_width = float("nan")
    elif shape_layer and width_shape >= 2.0 * width_ani:
        thermal_kind = "nested"
        thermal_width = width_shape
    elif milne_present:
        # isotropization and thermalization happen in the same layer
        thermal_kind = "coincident"
        thermal_width = width_ani
    else:
        thermal_kind = "none"
        thermal_width = float("nan")
    return {
        "epsilon": eps,
        "beta": regime.beta,
        "gamma": regime.gamma,
        "milne_present": bool(milne_present),
        "milne_width": width_ani,
        "thermal_kind": thermal_kind,
        "thermal_width": thermal_width,
        "wall_anisotropy": wall_ani,
        "wall_departure": wall_dep,
        "wall_shape_departure": wall_shape,
        "bulk_departure": bulk_dep,
        "bulk_anisotropy": bulk_ani,
        "classification": "equilibrium" if equilibrium else "non_equilibrium",
    }


def run_regime_table(config: ExperimentConfig, presets=TABLE_PRESETS) -> StudyReport:
    """Instant-light runs at fixed epsilon for the four scaling presets.

    The quasi-static stepper is used (rather than the stationary solver)
    because the stationary energy balance slaves the temperature pointwise,
    which hides the non-equilibrium bulk of the thick-absorption column.
    """
    report = StudyReport(kind="regime_table", seed=config.seed)
    eps = config.epsilons[0]
    quad = build_angular_quadrature("slab_polar", config.order)
    mesh = build_slab_mesh(config.cells_for(eps))
    grid = config.material.freq_grid
    for name, beta, gamma, t_scale in presets:
        regime = kn.ScalingRegime(eps, beta, gamma, "instant")
        T0 = np.full(mesh.size, config.T0)
        I0 = np.broadcast_to(
            group_emission(T0, grid)[:, None, :], (mesh.size, quad.size, grid.size)
        ).copy()
        state = kn.KineticState(mesh, quad, grid, I0, T0)
        t_run = config.t_end * t_scale
        steps = 12
        dt = t_run / steps
        try:
            for _ in range(steps):
                state = kn.step_time_instant(
                    state, dt, regime, config.material, config.left, config.right,
                    kn.SolverOptions(l_max=config.l_max),
                )
        except RadslabError as exc:
            report.partial = True
            report.failure = f"{name}: {type(exc).__name__}: {exc}"
            continue
        report.regimes[name] = classify_state(state, config.material, regime)
    return report


# ---------------------------------------------------------------------------
# Layer studies
# ---------------------------------------------------------------------------


def run_layer_study(config: ExperimentConfig, out_dir=None) -> dict:
    """Milne (and thermalization, when applicable) solves at both faces.

    When ``out_dir`` is given, the layer profiles are also written as CSV
    next to the JSON certificates.
    """
    quad = build_angular_quadrature("slab_polar", config.order)
    eps = config.epsilons[0]
    regime = config.regime(eps, "stationary")
    variant = bl.variant_for_regime(regime)
    out = {"variant": variant.kind, "faces": {}}
    for face, g, p in (("left", config.left, 0.0), ("right", config.right, 1.0)):
        layer = bl.solve_milne(variant, config.material, p, quad, g)
        far = bl.extract_far_field(layer)
        entry = {
            "certificate": layer.certificate,
            "T_inf": far["T_inf"],
            "I_inf": far["I_inf"].tolist(),
        }
        if out_dir is not None:
            path = Path(out_dir) / f"layer_{face}.csv"
            bl.write_layer_csv(layer, path)
            entry["profile_csv"] = path.name
        if regime.classification() == "eq_scattering":
            therm = bl.solve_thermalization(far["I_inf"], config.material, p, quad)
            entry["thermalization"] = {
                "T_inf": bl.thermal_far_field(therm)["T_inf"],
                "certificate": therm.certificate,
            }
            if out_dir is not None:
                path = Path(out_dir) / f"thermalization_{face}.csv"
                bl.write_layer_csv(therm, path)
                entry["thermalization"]["profile_csv"] = path.name
        out["faces"][face] = entry
    return out


def run_initial_layer_study(config: ExperimentConfig, out_dir=None) -> dict:
    """Bulk initial-layer trajectories for the configured regime."""
    quad = build_angular_quadrature("slab_polar", config.order)
    eps = config.epsilons[0]
    regime = config.regime(eps)
    grid = config.material.freq_grid
    g_table = config.left.sample(0.0, quad, grid)
    I0 = np.clip(g_table, 0.0, None) + 0.1
    out = {"regime": regime.classification(), "layers": {}}
    for kind in il._ADMISSIBLE[regime.classification()]:
        variant = il.InitialLayerVariant.for_regime(regime, kind)
        traj = il.solve_initial_layer(variant, I0, config.T0, config.material, quad)
        entry = {
            "settled": bool(traj.settled),
            "T_inf": traj.T_inf,
            "final_T": float(traj.T[-1]),
            "T_frozen": bool(traj.invariants.get("T_frozen", False)),
        }
        if out_dir is not None:
            path = Path(out_dir) / f"initial_layer_{kind}.csv"
            il.write_trajectory_csv(traj, quad, path)
            entry["trajectory_csv"] = path.name
        out["layers"][kind] = entry
    return out


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def export_results(report, out_dir, formats=("json", "csv"), prefix="report") -> list[Path]:
    """Deterministic exports: same config + seed gives identical bytes.

    Wall-clock runtimes stay on the in-memory report only; they would break
    the byte-determinism contract of the files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict() if hasattr(report, "to_dict") else report
    if isinstance(payload, dict) and payload.get("entries"):
        payload = dict(payload)
        payload["entries"] = [
            {k: v for k, v in entry.items() if k != "runtime_s"} for entry in payload["entries"]
        ]
    written = []
    if "json" in formats:
        path = out_dir / f"{prefix}.json"
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        written.append(path)
    if "csv" in formats and isinstance(payload, dict) and payload.get("entries"):
        path = out_dir / f"{prefix}.csv"
        cols = list(payload["entries"][0].keys())
        lines = ["# columns: " + ",".join(cols), ",".join(cols)]
        for entry in payload["entries"]:
            lines.append(",".join(f"{entry[c]:.17g}" for c in cols))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    if "csv" in formats and isinstance(payload, dict) and payload.get("regimes"):
        path = out_dir / f"{prefix}_table.csv"
        names = sorted(payload["regimes"])
        cols = list(payload["regimes"][names[0]].keys())
        lines = ["# columns: regime," + ",".join(cols), "regime," + ",".join(cols)]
        for name in names:
            row = payload["regimes"][name]
            lines.append(name + "," + ",".join(_fmt(row[c]) for c in cols))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)
