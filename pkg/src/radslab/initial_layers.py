"""Initial Milne/thermalization layers, initial-boundary layers, transitions.

Bulk initial layers are ODE systems in the fast time tau at a frozen point:

* ``absorption``            d phi/dtau = a (B(T) - phi)
* ``absorption_scattering`` adds s (H[phi] - phi)
* ``scattering``            d phi/dtau = s (H[phi] - phi), dT/dtau = 0
* ``thermalization``        isotropic phi0(tau, nu) relaxing to B(T)

With unit light speed the temperature evolves through
dT/dtau = -int dnu sum_w a (B - phi) (which makes T + int int phi an exact
invariant of the combined system); with power-law light speed the energy
balance forces dT/dtau = 0, so T is held at its initial value and the
invariant is asserted rather than integrated.  The instant-light model has no
bulk initial layer at all.

Initial-boundary layers re-solve the half-line transport in (tau, y) with the
boundary data frozen at t = 0; their long-time limits are the stationary
layer problems, which the tests use as oracles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad as quad_integrate
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.sparse.linalg import spsolve

from .diffusion import NONEQ_CRITICAL, NONEQ_SUPERCRITICAL, _phi_laplacian_matrix
from .errors import DispatchError, IntegrationError
from .grids import AngularQuadrature, SlabMesh, build_half_line_mesh
from .kinetic import (
    INSTANT,
    POWER_LAW,
    UNIT,
    ScalingRegime,
    _solve_capacity_temperature,
    exponential_sweep,
)
from .planck import (
    FOUR_PI,
    MaterialModel,
    freeze_model_at,
    group_emission,
)
from .scattering import DEFAULT_L_MAX, discretize_scattering, spectral_diagnostics

ABSORPTION = "absorption"
ABSORPTION_SCATTERING = "absorption_scattering"
SCATTERING = "scattering"
THERMALIZATION = "thermalization"
LAYER_KINDS = (ABSORPTION, ABSORPTION_SCATTERING, SCATTERING, THERMALIZATION)

_ADMISSIBLE = {
    "eq_absorption": (ABSORPTION,),
    "eq_combined": (ABSORPTION_SCATTERING,),
    "eq_scattering": (SCATTERING, THERMALIZATION),
    "noneq_critical": (SCATTERING,),
    "noneq_supercritical": (SCATTERING,),
}


@dataclass(frozen=True)
class InitialLayerVariant:
    kind: str
    light_mode: str
    position: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise DispatchError(f"unknown initial-layer kind {self.kind!r}")
        if self.light_mode == INSTANT:
            raise DispatchError(
                "instant light admits no bulk initial layer: the temperature "
                "has no fast transient when c is infinite"
            )
        if self.light_mode not in (UNIT, POWER_LAW):
            raise DispatchError(f"light mode {self.light_mode!r} has no initial layer")

    @property
    def frozen_temperature(self) -> bool:
        return self.light_mode == POWER_LAW

    @classmethod
    def for_regime(cls, regime: ScalingRegime, kind: str | None = None, position: float = 0.0):
        allowed = _ADMISSIBLE[regime.classification()]
        if kind is None:
            kind = allowed[0]
        if kind not in allowed:
            raise DispatchError(
                f"initial layer {kind!r} is not admissible for regime "
                f"{regime.classification()!r} (allowed: {allowed})"
            )
        return cls(kind, regime.light_mode, position)


@dataclass
class LayerTrajectory:
    variant: InitialLayerVariant
    tau: np.ndarray
    phi: np.ndarray  # (times, directions, groups) or (times, groups) if isotropic
    T: np.ndarray  # (times,)
    settled: bool
    phi_inf: np.ndarray | None
    T_inf: float | None
    invariants: dict = field(default_factory=dict)
    dense: object = None  # integrator's continuous extension, when available

    @property
    def isotropic(self) -> bool:
        return self.phi.ndim == 2

    def temperature_history(self):
        """Continuous T(tau) suitable for the Duhamel-formula oracles."""
        if self.invariants.get("T_frozen"):
            return lambda t, c=float(self.T[0]): c
        if self.dense is None:
            raise ValueError("trajectory carries no continuous extension")
        size = self.phi[0].size

        def T_of(t, dense=self.dense, size=size):
            return float(dense(t)[size])

        return T_of


def _tau_nodes(tau_max: float, count: int = 81) -> np.ndarray:
    inner = np.geomspace(tau_max * 1e-4, tau_max, count - 1)
    return np.concatenate([[0.0], inner])


def default_tau_max(variant: InitialLayerVariant, model: MaterialModel, quad, l_max=DEFAULT_L_MAX) -> float:
    """50 / (rate * gap): the only rate scale the analysis provides."""
    model_p = freeze_model_at(model, variant.position)
    a, s = model_p.sample(0.0)
    if variant.kind == SCATTERING:
        op = discretize_scattering(model_p.kernel, quad, l_max)
        gap = spectral_diagnostics(op)["gap"]
        return 50.0 / (float(s.min()) * gap)
    return 50.0 / float(a.min())


def solve_initial_layer(
    variant: InitialLayerVariant,
    I0: np.ndarray,
    T0: float,
    model: MaterialModel,
    quad: AngularQuadrature,
    tau_max: float | None = None,
    rtol: float = 1e-11,
    l_max: int = DEFAULT_L_MAX,
) -> LayerTrajectory:
    """Integrate the layer ODE system (Radau with step control; semigroup for
    the pure-scattering variant)."""
    model_p = freeze_model_at(model, variant.position)
    grid = model_p.freq_grid
    a, s = model_p.sample(0.0)
    a, s = a[:, 0], s[:, 0]
    w = quad.weights
    if tau_max is None:
        tau_max = default_tau_max(variant, model, quad, l_max)
    tau = _tau_nodes(tau_max)

    if variant.kind == THERMALIZATION:
        phi0 = np.asarray(I0, float)
        if phi0.ndim == 2:
            phi0 = np.tensordot(w, phi0, axes=([0], [0])) / FOUR_PI
        return _integrate_relaxation(variant, model_p, phi0, T0, tau, a, w, rtol, isotropic=True)

    I0 = np.asarray(I0, float)
    if I0.shape != (quad.size, grid.size):
        raise ValueError("I0 must be shaped (directions, groups)")

    if variant.kind == SCATTERING:
        op = discretize_scattering(model_p.kernel, quad, l_max)
        gen = np.eye(quad.size) - op.matrix
        phi = np.empty((tau.size, quad.size, grid.size))
        for k in range(grid.size):
            # scaling-and-squaring exponential of the dense generator
            step_exp = [expm(-s[k] * t * gen) for t in tau]
            for j, E in enumerate(step_exp):
                phi[j, :, k] = E @ I0[:, k]
        T = np.full(tau.size, T0)
        mean0 = np.tensordot(w, I0, axes=([0], [0])) / FOUR_PI
        settled = float(np.abs(phi[-1] - mean0[None, :]).max()) <= 1e-6 * max(float(np.abs(mean0).max()), 1e-300)
        return LayerTrajectory(
            variant, tau, phi, T, settled, phi[-1].copy(), T0,
            invariants={"T_frozen": True, "mean_preserved": True},
        )

    return _integrate_relaxation(variant, model_p, I0, T0, tau, a, w, rtol, isotropic=False,
                                 s=s, quad=quad, l_max=l_max)


def _integrate_relaxation(variant, model_p, phi0, T0, tau, a, w, rtol, isotropic, s=None, quad=None, l_max=16):
    grid = model_p.freq_grid
    K = grid.size
    frozen = variant.frozen_temperature
    if isotropic:
        shape = (K,)
        angular_weight = FOUR_PI
    else:
        shape = phi0.shape
        angular_weight = None
    size = int(np.prod(shape))
    op = None
    if not isotropic and variant.kind == ABSORPTION_SCATTERING:
        op = discretize_scattering(model_p.kernel, quad, l_max)

    def rhs(t, y):
        phi = y[:size].reshape(shape)
        T = max(y[size], 0.0)
        B = group_emission(T0 if frozen else T, grid)
        dphi = a * (B - phi) if isotropic else a[None, :] * (B[None, :] - phi)
        if op is not None:
            dphi = dphi + s[None, :] * ((op.matrix @ phi) - phi)
        if frozen:
            dT = 0.0
        elif isotropic:
            dT = -angular_weight * float(grid.integrate(a * (B - phi)))
        else:
            mean = np.tensordot(w, phi, axes=([0], [0])) / FOUR_PI
            dT = -FOUR_PI * float(grid.integrate(a * (B - mean)))
        return np.concatenate([dphi.ravel(), [dT]])

    y0 = np.concatenate([np.asarray(phi0, float).ravel(), [T0]])
    # max_step keeps the dense output accurate along the settled stretch,
    # where unrestricted Radau strides would degrade the interpolant that the
    # Duhamel-formula oracles consume.
    sol = solve_ivp(rhs, (0.0, tau[-1]), y0, method="Radau", t_eval=tau,
                    rtol=rtol, atol=rtol * max(1.0, float(np.abs(y0).max())),
                    dense_output=True, max_step=max(tau[-1] / 100.0, 1e-3))
    if not sol.success:
        raise IntegrationError(f"initial-layer integration failed: {sol.message}")
    phi = sol.y[:size].T.reshape((tau.size,) + shape)
    T = sol.y[size]
    tail = tau >= 0.8 * tau[-1]
    phi_spread = float(np.abs(phi[tail] - phi[-1]).max())
    T_spread = float(np.abs(T[tail] - T[-1]).max())
    scale = max(float(np.abs(phi[-1]).max()), 1e-300)
    settled = phi_spread <= 1e-6 * scale and T_spread <= 1e-6 * max(abs(T[-1]), 1e-300)
    return LayerTrajectory(
        variant, tau, phi, T, settled,
        phi[-1].copy() if settled else None,
        float(T[-1]) if settled else None,
        invariants={"T_frozen": frozen},
        dense=sol.sol,
    )


def closed_form_initial_layer(
    variant: InitialLayerVariant,
    I0: np.ndarray,
    T_history,
    model: MaterialModel,
    quad: AngularQuadrature,
    l_max: int = DEFAULT_L_MAX,
    series_tol: float = 1e-14,
    max_terms: int = 200,
):
    """Evaluator tau -> phi(tau) from the explicit solution formulas.

    ``T_history`` is a callable s -> T(s) (use the numerically computed
    temperature for the Duhamel integrals) or a constant for frozen-T modes.
    """
    model_p = freeze_model_at(model, variant.position)
    grid = model_p.freq_grid
    a, s = model_p.sample(0.0)
    a, s = a[:, 0], s[:, 0]
    I0 = np.asarray(I0, float)
    T_of = T_history if callable(T_history) else (lambda t, c=float(T_history): c)

    def duhamel(tau_val):
        # int_0^tau a e^{-a (tau - s)} B(T(s)) ds per group.  Panels by decade
        # near s = 0: the temperature's fast transient lives below the
        # resolution of a single global adaptive pass.
        edges = [0.0] + [10.0**j for j in range(-4, 3) if 10.0**j < tau_val] + [tau_val]
        out = np.empty(grid.size)
        for k in range(grid.size):
            total = 0.0
            for lo, hi in zip(edges, edges[1:]):
                val, _ = quad_integrate(
                    lambda u: a[k] * np.exp(-a[k] * (tau_val - u)) * group_emission(T_of(u), grid)[k],
                    lo, hi, limit=200, epsabs=1e-14, epsrel=1e-12,
                )
                total += val
            out[k] = total
        return out

    if variant.kind == ABSORPTION:

        def evaluate(tau_val):
            if tau_val == 0.0:
                return I0.copy()
            return I0 * np.exp(-a * tau_val)[None, :] + duhamel(tau_val)[None, :]

        return evaluate

    if variant.kind == SCATTERING:
        op = discretize_scattering(model_p.kernel, quad, l_max)
        gen = np.eye(quad.size) - op.matrix

        def evaluate(tau_val):
            out = np.empty_like(I0)
            for k in range(grid.size):
                out[:, k] = expm(-s[k] * tau_val * gen) @ I0[:, k]
            return out

        return evaluate

    if variant.kind == ABSORPTION_SCATTERING:
        op = discretize_scattering(model_p.kernel, quad, l_max)

        def evaluate(tau_val):
            if tau_val == 0.0:
                return I0.copy()
            total = np.zeros_like(I0)
            term = I0.copy()
            factor = np.ones(grid.size)
            for n in range(max_terms):
                contrib = factor[None, :] * term
                total += contrib
                if float(np.abs(contrib).max()) < series_tol * max(float(np.abs(total).max()), 1e-300):
                    break
                term = op.matrix @ term
                factor = factor * (s * tau_val) / (n + 1.0)
            else:
                warnings.warn("H-series did not terminate within the 200-term guard")
            total *= np.exp(-(a + s) * tau_val)[None, :]
            return total + duhamel(tau_val)[None, :]

        return evaluate

    raise DispatchError(f"no closed form for variant {variant.kind!r}")


# ---------------------------------------------------------------------------
# Initial-boundary layers (half-line, fast time)
# ---------------------------------------------------------------------------


def _half_line_linear_solve(mesh, quad, grid, sigma, scat, op, fixed_source, g_table, I_guess):
    """GMRES solve of the half-line transport, affine in I.

    The scattering source (if any) and the isotropic mean-return closure at
    the far face both enter the affine sweep map.
    """
    from scipy.sparse.linalg import LinearOperator, gmres

    w, mu = quad.weights, quad.mu
    shape = (mesh.size, quad.size, grid.size)

    def sweep_of(I):
        q = fixed_source
        if scat is not None:
            HI = np.swapaxes(np.swapaxes(I, 1, 2) @ op.matrix.T, 1, 2)
            q = q + scat[None, None, :] * HI
        far = (np.tensordot(I[-1], w, axes=([0], [0])) / FOUR_PI)[None, :]
        out, _ = exponential_sweep(
            mesh.widths, mu, sigma, q, g_table, np.broadcast_to(far, (quad.size, grid.size))
        )
        return out

    base = sweep_of(np.zeros(shape))

    def matvec(u):
        out = sweep_of(u.reshape(shape))
        return u - (out - base).ravel()

    n_tot = int(np.prod(shape))
    A = LinearOperator((n_tot, n_tot), matvec=matvec)
    b = base.ravel()
    sol, info = gmres(A, b, x0=I_guess.ravel(), rtol=1e-13,
                      atol=1e-13 * max(1.0, float(np.abs(b).max())), maxiter=300, restart=80)
    if info != 0:
        raise IntegrationError(f"half-line transport GMRES failed (info={info})")
    return np.clip(sol.reshape(shape), 0.0, None)


@dataclass
class BoundaryLayerTrajectory:
    regime: ScalingRegime
    layer: str
    mesh: SlabMesh
    quad: AngularQuadrature
    model: MaterialModel
    tau: np.ndarray
    I: np.ndarray  # final profile (cells, directions, groups)
    T: np.ndarray  # final temperature profile (cells,)
    T_history: np.ndarray  # (times, cells)
    invariants: dict = field(default_factory=dict)


def _ibl_system(regime: ScalingRegime, layer: str):
    """Which terms the (tau, y) system carries for this regime/light pair."""
    cls = regime.classification()
    light = regime.light_mode
    if light == INSTANT and cls in ("eq_absorption", "eq_combined"):
        # quasi-static transport, temperature driven by the absorption balance
        return {"dtau_I": False, "absorption": True,
                "scattering": cls == "eq_combined", "T": "relax"}
    if light == INSTANT:
        if layer == THERMALIZATION:
            return {"dtau_I": False, "absorption": True, "scattering": False, "T": "relax"}
        return {"dtau_I": False, "absorption": False, "scattering": True, "T": "relax"}
    frozen = light == POWER_LAW
    if cls in ("eq_absorption", "eq_combined"):
        return {"dtau_I": True, "absorption": True,
                "scattering": cls == "eq_combined", "T": "frozen" if frozen else "conserve"}
    if layer == THERMALIZATION:
        if cls != "eq_scattering":
            raise DispatchError("the thermalization initial-boundary layer exists only when "
                                "the thermalization length is intermediate")
        return {"dtau_I": True, "absorption": True, "scattering": False,
                "T": "frozen" if frozen else "relax", "diffusive": True}
    return {"dtau_I": True, "absorption": False, "scattering": True, "T": "frozen"}


def solve_initial_boundary_layer(
    regime: ScalingRegime,
    I0,
    T0: float,
    g,
    model: MaterialModel,
    quad: AngularQuadrature,
    p: float = 0.0,
    layer: str = "milne",
    tau_end: float | None = None,
    n_steps: int = 60,
    domain: float = 20.0,
    cells: int = 160,
    l_max: int = DEFAULT_L_MAX,
) -> BoundaryLayerTrajectory:
    """Implicit (tau-implicit, y-swept) integration of the initial-boundary
    layer transport with the boundary datum frozen at t = 0.

    ``layer`` selects between the Milne-type and thermalization-type systems
    where both exist.  Where the light scaling forces dT/dtau = 0 the
    temperature is held at T0 and recorded as an asserted invariant.
    """
    if regime.light_mode == "stationary":
        raise DispatchError("stationary regimes have no initial-boundary layer")
    spec = _ibl_system(regime, THERMALIZATION if layer == "thermalization" else "milne")
    model_p = freeze_model_at(model, p)
    grid = model_p.freq_grid
    if spec.get("diffusive"):
        return _solve_thermal_ibl(regime, spec, I0, T0, g, model_p, quad, tau_end, n_steps, l_max)

    a, s = model_p.sample(0.0)
    a, s = a[:, 0], s[:, 0]
    mesh = build_half_line_mesh(domain / max(float((a + s).max()), 1e-300), cells)
    op = discretize_scattering(model_p.kernel, quad, l_max)
    w, mu = quad.weights, quad.mu
    g_table = g if isinstance(g, np.ndarray) else g.sample(0.0, quad, grid)

    I = np.broadcast_to(np.asarray(I0, float)[None, :, :], (mesh.size, quad.size, grid.size)).copy()
    T = np.full(mesh.size, float(T0))
    if tau_end is None:
        tau_end = 50.0 / max(float(a.min()), float(s.min()) if s.max() > 0 else np.inf) if spec["absorption"] else 4.0 * (domain / max(float(s.min()), 1e-300)) ** 2
    # geometric step schedule: resolves the fast transient, then strides out
    ratios = np.geomspace(1.0, 40.0, n_steps)
    dts = ratios / ratios.sum() * tau_end

    sigma_base = (a if spec["absorption"] else 0.0) + (s if spec["scattering"] else 0.0)
    sigma_base = np.broadcast_to(sigma_base, (mesh.size, grid.size))
    scat = s if spec["scattering"] else None
    taus = [0.0]
    T_hist = [T.copy()]
    x_frozen = np.zeros(mesh.size)

    for dt in dts:
        lam = (1.0 / dt) if spec["dtau_I"] else 0.0
        I_old = I.copy()
        T_old = T.copy()
        for inner in range(60):
            fixed = lam * I_old
            if spec["absorption"]:
                fixed = fixed + a[None, None, :] * group_emission(T, grid)[:, None, :]
            I_new = _half_line_linear_solve(
                mesh, quad, grid, sigma_base + lam, scat, op, fixed, g_table, I
            )
            if spec["T"] == "frozen":
                T_new = T
            else:
                absorbed = grid.integrate(a[None, :] * np.tensordot(I_new, w, axes=([1], [0])))
                rhs = T_old + dt * absorbed
                T_new = _solve_capacity_temperature(rhs, dt, model_p, x_frozen, T)
            res = float(np.abs(I_new - I).max()) / max(float(np.abs(I_new).max()), 1e-300)
            res += float(np.abs(T_new - T).max()) / max(float(np.abs(T_new).max()), 1e-300)
            I, T = I_new, T_new
            if res <= 1e-12:
                break
        taus.append(taus[-1] + dt)
        T_hist.append(T.copy())

    invariants = {"T_frozen": spec["T"] == "frozen"}
    return BoundaryLayerTrajectory(
        regime, layer, mesh, quad, model_p, np.array(taus), I, T, np.array(T_hist), invariants
    )


def _solve_thermal_ibl(regime, spec, I0, T0, g, model_p, quad, tau_end, n_steps, l_max):
    """Thermalization-type initial-boundary layer: parabolic phi0 in eta."""
    from .boundary_layers import thermalization_coefficient

    grid = model_p.freq_grid
    a, s = model_p.sample(0.0)
    a, s = a[:, 0], s[:, 0]
    op = discretize_scattering(model_p.kernel, quad, l_max)
    kappa = thermalization_coefficient(op)
    c = kappa / s  # (K,) diffusivity of the (tau, eta) system: see the layer analysis
    Y = 10.0 * float(np.sqrt(kappa / (a * s)).max())
    mesh = build_half_line_mesh(Y, 200, 1.0)
    K = grid.size
    n = mesh.size

    phi0 = np.asarray(I0, float)
    if phi0.ndim == 2:
        phi0 = np.tensordot(quad.weights, phi0, axes=([0], [0])) / FOUR_PI
    datum = g if isinstance(g, np.ndarray) else np.tensordot(
        quad.weights, g.sample(0.0, quad, grid), axes=([0], [0])
    ) / FOUR_PI

    phi = np.broadcast_to(phi0[None, :], (n, K)).copy()
    T = np.full(n, float(T0))
    frozen = spec["T"] == "frozen"
    if tau_end is None:
        tau_end = 50.0 / float(a.min())
    ratios = np.geomspace(1.0, 20.0, n_steps)
    dts = ratios / ratios.sum() * tau_end
    ops = []
    for k in range(K):
        L, bw = _phi_laplacian_matrix(mesh, np.full(n, c[k]))
        # zero-flux far end: drop the right-face Dirichlet coupling
        L = L.tolil()
        L[n - 1, n - 1] += bw[n - 1, 1]
        bw = bw.copy()
        bw[n - 1, 1] = 0.0
        ops.append((L.tocsr(), bw))
    x_frozen = np.zeros(n)
    has_dtau_phi = spec["dtau_I"]

    taus, T_hist = [0.0], [T.copy()]
    for dt in dts:
        inv_dt = (1.0 / dt) if has_dtau_phi else 0.0
        phi_old, T_old = phi.copy(), T.copy()
        for inner in range(200):
            B = group_emission(T0 if frozen else T, grid)
            phi_new = np.empty_like(phi)
            for k in range(K):
                L, bw = ops[k]
                A = sp.identity(n) * (inv_dt + a[k]) - L
                rhs = inv_dt * phi_old[:, k] + a[k] * B[:, k] + bw[:, 0] * datum[k]
                # far end: natural zero-flux from the discretization
                phi_new[:, k] = spsolve(A.tocsc(), rhs)
            if frozen:
                T_new = T
            else:
                absorbed = FOUR_PI * grid.integrate(a[None, :] * phi_new)
                rhs_T = T_old + dt * absorbed
                T_new = _solve_capacity_temperature(rhs_T, dt, model_p, x_frozen, T)
            res = float(np.abs(phi_new - phi).max()) / max(float(np.abs(phi_new).max()), 1e-300)
            res += float(np.abs(T_new - T).max()) / max(float(np.abs(T_new).max()), 1e-300)
            phi, T = phi_new, T_new
            if res <= 1e-12:
                break
        taus.append(taus[-1] + dt)
        T_hist.append(T.copy())

    I = phi[:, None, :].repeat(quad.size, axis=1)
    return BoundaryLayerTrajectory(
        regime, "thermalization", mesh, quad, model_p, np.array(taus), I, T,
        np.array(T_hist), {"T_frozen": frozen},
    )


def write_trajectory_csv(traj: LayerTrajectory, quad: AngularQuadrature, path) -> None:
    """Trajectory export: tau, per-group angular mean of phi0, T."""
    if traj.isotropic:
        mean = traj.phi
    else:
        mean = np.tensordot(traj.phi, quad.weights, axes=([1], [0])) / FOUR_PI
    groups = ",".join(f"mean_g{k}" for k in range(mean.shape[1]))
    with open(path, "w", newline="") as fh:
        fh.write("# columns: tau (layer time), per-group angular mean of phi0, T\n")
        fh.write(f"tau,{groups},T\n")
        for j in range(traj.tau.size):
            vals = ",".join(f"{v:.17g}" for v in mean[j])
            fh.write(f"{traj.tau[j]:.17g},{vals},{traj.T[j]:.17g}\n")


def transition_to_stationary(
    regime_kind: str,
    model: MaterialModel,
    mesh: SlabMesh,
    op,
    phi_init: np.ndarray,
    I_left: np.ndarray,
    I_right: np.ndarray,
    T_frozen: np.ndarray,
    dt: float,
    n_steps: int,
):
    """Transition equations: parabolic phi0 relaxation with T frozen.

    ``noneq_supercritical``: plain heat flow of phi0 toward the regime-4
    elliptic solution.  ``noneq_critical``: reaction-diffusion step of the
    critical system with the emission frozen at B(T_frozen).
    Returns the list of phi0 snapshots (including the initial one).
    """
    from .diffusion import DiffusionState, step_diffusion_time

    grid = model.freq_grid
    a, s = model.sample(mesh.centers)
    s = s.T
    if regime_kind == NONEQ_SUPERCRITICAL:
        from .scattering import diffusion_tensor

        dxx = float(diffusion_tensor(op)) if op.mode == "slab_polar" else float(diffusion_tensor(op)[0, 0])
        coeff = (dxx / FOUR_PI) / s
        ops = [_phi_laplacian_matrix(mesh, coeff[:, k]) for k in range(grid.size)]
        phi = phi_init.copy()
        snaps = [phi.copy()]
        for _ in range(n_steps):
            for k in range(grid.size):
                L, bw = ops[k]
                A = sp.identity(mesh.size) / dt - L
                rhs = phi[:, k] / dt + bw[:, 0] * I_left[k] + bw[:, 1] * I_right[k]
                phi[:, k] = spsolve(A.tocsc(), rhs)
            snaps.append(phi.copy())
        return snaps
    if regime_kind == NONEQ_CRITICAL:
        state = DiffusionState(mesh, T_frozen.copy(), d_eff=s, phi0=phi_init.copy())
        snaps = [phi_init.copy()]
        for _ in range(n_steps):
            state = step_diffusion_time(
                state, dt, NONEQ_CRITICAL, "finite_light", model, op,
                (I_left, I_right), freeze_T=True,
            )
            snaps.append(state.phi0.copy())
        return snaps
    raise DispatchError(f"no transition equation for regime {regime_kind!r}")
