"""Experiment configuration: INI-style key/value files with sections.

Schema (all keys optional unless noted; CLI flags override file values):

    [experiment]
    kind = single_run | convergence_study | regime_table | layer_study |
           initial_layer_study          (required)

    [regime]
    epsilons   = 0.2, 0.1, 0.05          # one value for single runs
    beta       = -1.0
    gamma      = 0.0
    light_mode = stationary | instant | unit | power_law
    kappa      = 2.0                     # power_law only

    [material]
    preset   = grey | power_window | two_group | csv
    alpha_a  = 1.0                       # grey
    alpha_s  = 0.5
    a_groups = 2.0, 0.4                  # two_group
    s_groups = 1.0, 1.0
    path     = coefficients.csv          # csv preset (columns x, nu, alpha_a, alpha_s)
    kernel   = isotropic | henyey_greenstein | cutoff_forward
    g        = 0.5                       # HG asymmetry
    c0       = 0.5                       # cutoff cosine

    [grids]
    order   = 16                         # angular Gauss-Legendre order
    cells   = 160                        # slab cells (scaled with epsilon)
    l_max   = 16
    freq_mode = grey | multigroup
    nu_min  = 0.05
    nu_max  = 30.0
    groups  = 32

    [boundary]
    left  = planckian:T=1.0              # planckian:T=..[,ramp=..]
    right = beam:mu0=0.8,width=0.3,amplitude=30.0
                                         # vacuum | reflecting also accepted

    [time]
    dt    = 0.02
    t_end = 0.4
    t0    = 1.0                          # uniform initial temperature

    [output]
    directory = out

    [study]
    workers = 1
    seed    = 0
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grids import build_frequency_grid
from .kinetic import (
    BoundarySource,
    ScalingRegime,
    beam_source,
    planckian_source,
    reflecting_source,
    vacuum_source,
)
from .planck import MaterialModel, from_group_values, grey_constant, power_window
from .scattering import (
    cutoff_forward_kernel,
    henyey_greenstein_kernel,
    isotropic_kernel,
)

EXPERIMENT_KINDS = (
    "single_run",
    "convergence_study",
    "regime_table",
    "layer_study",
    "initial_layer_study",
)


@dataclass
class ExperimentConfig:
    kind: str
    epsilons: list[float]
    beta: float
    gamma: float
    light_mode: str
    kappa: float
    material: MaterialModel
    order: int
    cells: int
    l_max: int
    left: BoundarySource
    right: BoundarySource
    dt: float
    t_end: float
    T0: float
    out_dir: Path
    workers: int = 1
    seed: int = 0
    raw: dict = field(default_factory=dict)

    def regime(self, epsilon: float, light_mode: str | None = None) -> ScalingRegime:
        return ScalingRegime(
            epsilon, self.beta, self.gamma,
            light_mode if light_mode is not None else self.light_mode, self.kappa,
        )

    def cells_for(self, epsilon: float) -> int:
        # keep a few cells per mean free path as epsilon shrinks
        return max(self.cells, int(np.ceil(8.0 / epsilon)))

    def bulk_margin(self) -> float:
        """Common bulk-window margin over the configured epsilon list.

        Convergence fits compare all runs on one window; the margin is the
        largest of the per-epsilon layer allowances ell_T * ln(1/eps).
        """
        margin = 0.0
        for eps in self.epsilons:
            reg = self.regime(eps, "stationary")
            margin = max(margin, min(reg.ell_T, 1.0) * np.log(1.0 / eps))
        if margin >= 0.5:
            raise ConfigError(
                f"bulk window is empty: layer margin {margin:.3f} >= 0.5; "
                "decrease epsilon or move the regime away from thick layers"
            )
        return margin


def _parse_kernel(section) -> object:
    name = section.get("kernel", "isotropic")
    if name == "isotropic":
        return isotropic_kernel()
    if name == "henyey_greenstein":
        return henyey_greenstein_kernel(float(section.get("g", 0.5)))
    if name == "cutoff_forward":
        return cutoff_forward_kernel(float(section.get("c0", 0.5)))
    raise ConfigError(f"unknown kernel {name!r}")


def _parse_material(cfg) -> MaterialModel:
    mat = cfg["material"] if cfg.has_section("material") else {}
    grids = cfg["grids"] if cfg.has_section("grids") else {}
    kernel = _parse_kernel(mat)
    preset = mat.get("preset", "grey")
    if preset == "grey":
        return grey_constant(
            float(mat.get("alpha_a", 1.0)), float(mat.get("alpha_s", 0.5)), kernel
        )
    freq = build_frequency_grid(
        grids.get("freq_mode", "multigroup"),
        float(grids.get("nu_min", 0.05)),
        float(grids.get("nu_max", 30.0)),
        int(grids.get("groups", 32)),
    )
    if preset == "power_window":
        return power_window(
            freq,
            a_amplitude=float(mat.get("a_amplitude", 1.0)),
            a_exponent=float(mat.get("a_exponent", 0.0)),
            s_amplitude=float(mat.get("s_amplitude", 0.5)),
            s_exponent=float(mat.get("s_exponent", 0.0)),
            kernel=kernel,
        )
    if preset == "two_group":
        a_groups = [float(v) for v in mat.get("a_groups", "2.0, 0.4").split(",")]
        s_groups = [float(v) for v in mat.get("s_groups", "1.0, 1.0").split(",")]
        freq2 = build_frequency_grid(
            "multigroup",
            float(grids.get("nu_min", 0.5)),
            float(grids.get("nu_max", 10.0)),
            len(a_groups),
        )
        return from_group_values(freq2, a_groups, s_groups, kernel)
    if preset == "csv":
        from .planck import from_csv

        if "path" not in mat:
            raise ConfigError("csv material preset needs a path key")
        return from_csv(mat["path"], freq, kernel)
    raise ConfigError(f"unknown material preset {preset!r}")


def _parse_boundary(text: str) -> BoundarySource:
    text = text.strip()
    if ":" in text:
        kind, rest = text.split(":", 1)
        params = {}
        for item in rest.split(","):
            key, value = item.split("=")
            params[key.strip()] = float(value)
    else:
        kind, params = text, {}
    kind = kind.strip()
    if kind == "planckian":
        return planckian_source(params["T"], params.get("ramp", 0.0))
    if kind in ("beam", "anisotropic_beam"):
        return beam_source(
            params.get("mu0", 1.0), params.get("width", 0.25), params["amplitude"]
        )
    if kind == "vacuum":
        return vacuum_source()
    if kind == "reflecting":
        return reflecting_source()
    raise ConfigError(f"unknown boundary source {text!r}")


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read an experiment configuration; CLI overrides win over file values."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    cfg = configparser.ConfigParser()
    try:
        cfg.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    if not cfg.has_section("experiment") or "kind" not in cfg["experiment"]:
        raise ConfigError("config needs [experiment] kind = ...")
    kind = cfg["experiment"]["kind"]
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")

    reg = cfg["regime"] if cfg.has_section("regime") else {}
    try:
        epsilons = [float(v) for v in reg.get("epsilons", "0.1").split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad epsilon list: {exc}") from exc
    beta = float(reg.get("beta", -1.0))
    gamma = float(reg.get("gamma", 0.0))
    light_mode = reg.get("light_mode", "stationary")
    kappa = float(reg.get("kappa", 0.0))

    grids = cfg["grids"] if cfg.has_section("grids") else {}
    bnd = cfg["boundary"] if cfg.has_section("boundary") else {}
    time_s = cfg["time"] if cfg.has_section("time") else {}
    out_s = cfg["output"] if cfg.has_section("output") else {}
    study = cfg["study"] if cfg.has_section("study") else {}

    overrides = overrides or {}
    config = ExperimentConfig(
        kind=kind,
        epsilons=epsilons,
        beta=beta,
        gamma=gamma,
        light_mode=light_mode,
        kappa=kappa,
        material=_parse_material(cfg),
        order=int(grids.get("order", 16)),
        cells=int(grids.get("cells", 160)),
        l_max=int(grids.get("l_max", 16)),
        left=_parse_boundary(bnd.get("left", "planckian:T=1.0")),
        right=_parse_boundary(bnd.get("right", "planckian:T=2.0")),
        dt=float(time_s.get("dt", 0.02)),
        t_end=float(time_s.get("t_end", 0.4)),
        T0=float(time_s.get("t0", 1.0)),
        out_dir=Path(overrides.get("out", out_s.get("directory", "out"))),
        workers=int(overrides.get("workers", study.get("workers", 1))),
        seed=int(overrides.get("seed", study.get("seed", 0))),
        raw={s: dict(cfg[s]) for s in cfg.sections()},
    )
    # validate the scaling exponents now: bad pairs must fail at load
    for eps in config.epsilons:
        config.regime(eps)
    if kind == "convergence_study":
        if len(config.epsilons) < 3:
            raise ConfigError("convergence studies need at least 3 epsilon values")
        if any(a <= b for a, b in zip(config.epsilons, config.epsilons[1:])):
            raise ConfigError("epsilon list must be strictly decreasing")
        config.bulk_margin()
    return config
