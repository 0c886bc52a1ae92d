"""Full transport solver for the coupled transfer + energy balance system.

The slab is [0, 1] with azimuthal symmetry, so phase space is
(x, mu, nu) = (cells, polar cosines, frequency groups) and intensity arrays
are shaped (cells, directions, groups).

Scaled equations (epsilon = Milne length, ell_A = eps^-beta, ell_S =
eps^-gamma, heat time tau_h = ell_A / min(ell_T^2, 1)):

* stationary:    mu dI/dx = eps^beta a (B(T) - I) + eps^gamma s (H[I] - I),
                 with x-independent total flux.
* instant light: the same transport at each instant, plus
                 dT/dt = -tau_h eps^beta [4 pi F(T) - int dnu sum w a I].
* finite light:  (1/c) dI/dt added to the transport (c = 1 or eps^-kappa),
                 energy balance d(T + E/c)/dt + tau_h d(flux)/dx = 0 with
                 E = int dnu sum w I.

Sweeps integrate exactly along characteristics for per-cell-constant
coefficients (exponential upwinding), which makes global Planckian data an
exact fixed point and gives per-cell balance identities the implicit time
steppers use to conserve energy discretely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import NoConvergence, newton_krylov

from .errors import ConfigError, ConvergenceError, DispatchError
from .grids import AngularQuadrature, FrequencyGrid, SlabMesh
from .planck import FOUR_PI, MaterialModel, _dF_dT, group_emission, invert_F, opacity_F
from .scattering import DEFAULT_L_MAX, ScatteringOperator, apply_H, discretize_scattering

STATIONARY = "stationary"
INSTANT = "instant"
UNIT = "unit"
POWER_LAW = "power_law"
LIGHT_MODES = (STATIONARY, INSTANT, UNIT, POWER_LAW)

SNAPSHOT_MAGIC = b"RSLB\x01\x00\x00\x00"


@dataclass(frozen=True)
class ScalingRegime:
    """Scaling exponents: ell_A = eps^-beta, ell_S = eps^-gamma, min = eps."""

    epsilon: float
    beta: float
    gamma: float
    light_mode: str = STATIONARY
    kappa: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if min(self.beta, self.gamma) != -1.0:
            raise ConfigError(
                f"min(beta, gamma) must equal -1 exactly, got ({self.beta}, {self.gamma})"
            )
        if self.light_mode not in LIGHT_MODES:
            raise ConfigError(f"unknown light mode {self.light_mode!r}")
        if self.light_mode == POWER_LAW and self.kappa <= 0.0:
            raise ConfigError("power-law light mode needs kappa > 0")

    @property
    def ell_M(self) -> float:
        return self.epsilon

    @property
    def ell_A(self) -> float:
        return self.epsilon ** (-self.beta)

    @property
    def ell_S(self) -> float:
        return self.epsilon ** (-self.gamma)

    @property
    def ell_T(self) -> float:
        return float(np.sqrt(self.ell_A * self.epsilon))

    @property
    def tau_h(self) -> float:
        return self.ell_A / min(self.ell_T**2, 1.0)

    @property
    def light_speed(self) -> float:
        if self.light_mode == UNIT:
            return 1.0
        if self.light_mode == POWER_LAW:
            return self.epsilon ** (-self.kappa)
        return np.inf

    def classification(self) -> str:
        """Table-1 column of this scaling (diffusion-regime name)."""
        if self.beta == -1.0:
            return "eq_combined" if self.gamma == -1.0 else "eq_absorption"
        if self.beta < 1.0:
            return "eq_scattering"
        if self.beta == 1.0:
            return "noneq_critical"
        return "noneq_supercritical"


@dataclass(frozen=True)
class BoundarySource:
    """Incoming radiation g(t, mu, nu) at a slab face.

    Presets: ``planckian`` (optionally ramped in time), ``beam`` (Gaussian in
    mu with unit spectral mass), ``vacuum``, and the ``reflecting`` test
    fixture (specular closure handled inside the solvers).
    """

    kind: str
    params: dict = field(default_factory=dict)

    # boundary data may vary only on heat-scale times of order one
    MAX_RAMP = 10.0

    def __post_init__(self):
        if self.kind not in ("planckian", "beam", "vacuum", "reflecting"):
            raise ConfigError(f"unknown boundary source {self.kind!r}")
        rate = abs(self.params.get("ramp", 0.0))
        if rate > self.MAX_RAMP:
            raise ConfigError(
                f"boundary time variation rate {rate} exceeds the heat-scale bound "
                f"{self.MAX_RAMP}; faster sources are out of contract"
            )

    @property
    def reflecting(self) -> bool:
        return self.kind == "reflecting"

    def sample(self, t: float, quad: AngularQuadrature, grid: FrequencyGrid) -> np.ndarray:
        """Incoming intensity table (directions, groups) at time t."""
        if self.kind == "vacuum":
            return np.zeros((quad.size, grid.size))
        if self.kind == "planckian":
            T_b = self.params["T"] * (1.0 + self.params.get("ramp", 0.0) * t)
            if T_b <= 0.0:
                raise ValueError("planckian boundary temperature must stay positive")
            return np.broadcast_to(group_emission(T_b, grid), (quad.size, grid.size)).copy()
        if self.kind == "beam":
            mu0 = self.params.get("mu0", 1.0)
            width = self.params.get("width", 0.25)
            amp = self.params["amplitude"] * (1.0 + self.params.get("ramp", 0.0) * t)
            shape = np.exp(-0.5 * ((quad.mu - mu0) / width) ** 2)
            if grid.grey:
                spectrum = np.array([1.0])
            else:
                B1 = group_emission(1.0, grid)
                spectrum = B1 / grid.integrate(B1)
            return amp * shape[:, None] * spectrum[None, :]
        raise DispatchError("reflecting boundaries have no prescribed incoming data")


def planckian_source(T: float, ramp: float = 0.0) -> BoundarySource:
    return BoundarySource("planckian", {"T": T, "ramp": ramp})


def beam_source(mu0: float, width: float, amplitude: float) -> BoundarySource:
    if amplitude < 0.0 or width <= 0.0:
        raise ConfigError("beam sources need amplitude >= 0 and width > 0")
    return BoundarySource("beam", {"mu0": mu0, "width": width, "amplitude": amplitude})


# the beam preset is anisotropic by construction
anisotropic_beam = beam_source


def vacuum_source() -> BoundarySource:
    return BoundarySource("vacuum")


def reflecting_source() -> BoundarySource:
    return BoundarySource("reflecting")


@dataclass
class KineticState:
    mesh: SlabMesh
    quad: AngularQuadrature
    freq_grid: FrequencyGrid
    I: np.ndarray  # (cells, directions, groups)
    T: np.ndarray  # (cells,)
    time: float = 0.0
    face_flux: np.ndarray | None = None  # total radiative flux at the cell faces

    def total_energy(self, light_speed: float) -> float:
        """Closed-box invariant sum_i dx_i (T_i + E_i / c)."""
        E = self.freq_grid.integrate(np.tensordot(self.I, self.quad.weights, axes=([1], [0])))
        return float(np.dot(self.mesh.widths, self.T + E / light_speed))


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-9
    max_outer: int = 500
    relax: float = 0.5
    l_max: int = DEFAULT_L_MAX
    accel: str = "auto"  # "auto" (Picard warmup + Newton-Krylov) or "picard"
    picard_warmup: int = 20


def _expm1_ratio(tau: np.ndarray) -> np.ndarray:
    """(1 - exp(-tau)) / tau, series-safe near zero."""
    out = np.empty_like(tau)
    small = tau < 1e-6
    out[~small] = -np.expm1(-tau[~small]) / tau[~small]
    ts = tau[small]
    out[small] = 1.0 - ts / 2.0 + ts * ts / 6.0
    return out


def exponential_sweep(
    widths: np.ndarray,
    mu: np.ndarray,
    sigma: np.ndarray,
    q: np.ndarray,
    inflow_left: np.ndarray,
    inflow_right: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrating-factor upwind sweep of mu dI/dx + sigma I = q.

    sigma has shape (cells, groups); q has shape (cells, directions, groups).
    inflow_left/right are (directions, groups) tables sampled on the full
    direction set (only the incoming half of each is used).  Returns cell
    averages (cells, directions, groups) and face values
    (cells + 1, directions, groups).
    """
    n, m, k = q.shape
    I_bar = np.empty((n, m, k))
    I_face = np.empty((n + 1, m, k))
    pos = mu > 0.0
    neg = ~pos
    mu_pos = mu[pos][:, None]
    mu_neg = -mu[neg][:, None]

    cur = inflow_left[pos, :].copy()
    I_face[0, pos, :] = cur
    for i in range(n):
        sig = sigma[i][None, :]
        tau = sig * widths[i] / mu_pos
        ratio = _expm1_ratio(tau)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(sig > 0.0, q[i, pos, :] / np.where(sig > 0.0, sig, 1.0), 0.0)
        E = np.exp(-tau)
        streaming = sig == 0.0
        out = cur * E + s * (1.0 - E)
        bar = s + (cur - s) * ratio
        if np.any(streaming):
            add = q[i, pos, :] * widths[i] / mu_pos
            out = np.where(streaming, cur + add, out)
            bar = np.where(streaming, cur + 0.5 * add, bar)
        I_bar[i, pos, :] = bar
        cur = out
        I_face[i + 1, pos, :] = cur

    cur = inflow_right[neg, :].copy()
    I_face[n, neg, :] = cur
    for i in range(n - 1, -1, -1):
        sig = sigma[i][None, :]
        tau = sig * widths[i] / mu_neg
        ratio = _expm1_ratio(tau)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(sig > 0.0, q[i, neg, :] / np.where(sig > 0.0, sig, 1.0), 0.0)
        E = np.exp(-tau)
        streaming = sig == 0.0
        out = cur * E + s * (1.0 - E)
        bar = s + (cur - s) * ratio
        if np.any(streaming):
            add = q[i, neg, :] * widths[i] / mu_neg
            out = np.where(streaming, cur + add, out)
            bar = np.where(streaming, cur + 0.5 * add, bar)
        I_bar[i, neg, :] = bar
        cur = out
        I_face[i, neg, :] = cur
    return I_bar, I_face


@dataclass(frozen=True)
class _Discretization:
    """Cached per-solve arrays shared by the sweeps and updates."""

    regime: ScalingRegime
    model: MaterialModel
    mesh: SlabMesh
    quad: AngularQuadrature
    op: ScatteringOperator
    ka: np.ndarray  # eps^beta * alpha_a, (cells, groups)
    ks: np.ndarray  # eps^gamma * alpha_s, (cells, groups)
    a: np.ndarray  # alpha_a, (cells, groups)

    @property
    def sigma_t(self) -> np.ndarray:
        return self.ka + self.ks


def _discretize(regime, model, mesh, quad, options) -> _Discretization:
    if quad.mode != "slab_polar":
        raise ConfigError("the kinetic solver uses slab_polar quadratures")
    a, s = model.sample(mesh.centers)
    a, s = a.T, s.T
    op = discretize_scattering(model.kernel, quad, options.l_max)
    eps = regime.epsilon
    return _Discretization(
        regime, model, mesh, quad, op,
        ka=eps**regime.beta * a, ks=eps**regime.gamma * s, a=a,
    )


def _emission(T: np.ndarray, disc: _Discretization) -> np.ndarray:
    # (cells, 1, groups) source table; weights the isotropic Planck term
    return group_emission(T, disc.model.freq_grid)[:, None, :]


def _slaved_temperature(I: np.ndarray, disc: _Discretization) -> np.ndarray:
    mean_I = np.tensordot(I, disc.quad.weights, axes=([1], [0])) / FOUR_PI
    xi = disc.model.freq_grid.integrate(disc.a * mean_I)
    return invert_F(xi, disc.mesh.centers, disc.model)

def _scattering_source(I: np.ndarray, disc: _Discretization) -> np.ndarray:
    HI = apply_H(disc.op, np.swapaxes(I, 1, 2))  # acts along the direction axis
    return np.swapaxes(HI, 1, 2)


def _inflows(disc, g_left, g_right, t, I_face_prev):
    quad, grid = disc.quad, disc.model.freq_grid
    mirror = slice(None, None, -1)  # Gauss nodes are symmetric in mu
    if g_left.reflecting:
        inflow_l = I_face_prev[0][mirror, :] if I_face_prev is not None else np.zeros((quad.size, grid.size))
    else:
        inflow_l = g_left.sample(t, quad, grid)
    if g_right.reflecting:
        inflow_r = I_face_prev[-1][mirror, :] if I_face_prev is not None else np.zeros((quad.size, grid.size))
    else:
        inflow_r = g_right.sample(t, quad, grid)
    return inflow_l, inflow_r


def transport_sweep(
    state: KineticState,
    regime: ScalingRegime,
    model: MaterialModel,
    g_left: BoundarySource,
    g_right: BoundarySource,
    frozen_T: np.ndarray | None = None,
    options: SolverOptions = SolverOptions(),
) -> KineticState:
    """One upwind sweep at the frozen temperature (and lagged scattering)."""
    disc = _discretize(regime, model, state.mesh, state.quad, options)
    T = state.T if frozen_T is None else frozen_T
    q = disc.ka[:, None, :] * _emission(T, disc) + disc.ks[:, None, :] * _scattering_source(state.I, disc)
    inflow_l, inflow_r = _inflows(disc, g_left, g_right, state.time, None)
    I_bar, I_face = exponential_sweep(state.mesh.widths, state.quad.mu, disc.sigma_t, q, inflow_l, inflow_r)
    flux = _face_total_flux(I_face, disc)
    return replace(state, I=I_bar, T=T.copy(), face_flux=flux)


def _face_total_flux(I_face, disc):
    w_mu = disc.quad.weights * disc.quad.mu
    per_group = np.tensordot(I_face, w_mu, axes=([1], [0]))  # (faces, groups)
    return disc.model.freq_grid.integrate(per_group)


def solve_stationary(
    regime: ScalingRegime,
    model: MaterialModel,
    mesh: SlabMesh,
    quad: AngularQuadrature,
    g_left: BoundarySource,
    g_right: BoundarySource,
    options: SolverOptions = SolverOptions(),
    T_init: np.ndarray | None = None,
) -> KineticState:
    """Damped-Picard (optionally Newton-Krylov accelerated) stationary solve.

    The temperature is slaved to the intensity through the opacity-weighted
    balance int dnu alpha_a (B(T) - <I>) = 0, which is the divergence-free
    condition combined with the transport equation; the returned state
    therefore has x-independent total flux up to the iteration tolerance.
    """
    if regime.light_mode != STATIONARY:
        raise DispatchError("solve_stationary requires a stationary-light regime")
    disc = _discretize(regime, model, mesh, quad, options)
    if g_left.reflecting or g_right.reflecting:
        raise ConfigError("reflecting boundaries are a time-stepping test fixture")
    inflow_l, inflow_r = _inflows(disc, g_left, g_right, 0.0, None)
    grid = model.freq_grid

    if T_init is None:
        # Mean of the incoming radiation temperatures as a starting point.
        xi0 = float(grid.integrate(disc.a[0] * (inflow_l.mean(axis=0) + inflow_r.mean(axis=0)) / 2.0))
        T0 = invert_F(max(xi0, 1e-12), 0.0, model) if xi0 > 0 else 1e-3
        T = np.full(mesh.size, max(T0, 1e-6))
    else:
        T = T_init.copy()
    I = np.broadcast_to(group_emission(T, grid)[:, None, :], (mesh.size, quad.size, grid.size)).copy()

    scale = max(float(np.abs(inflow_l).max()), float(np.abs(inflow_r).max()), float(I.max()), 1e-30)

    def picard(I, T):
        q = disc.ka[:, None, :] * _emission(T, disc) + disc.ks[:, None, :] * _scattering_source(I, disc)
        I_new, I_face = exponential_sweep(mesh.widths, quad.mu, disc.sigma_t, q, inflow_l, inflow_r)
        T_star = _slaved_temperature(I_new, disc)
        return I_new, T_star, I_face

    history = []
    omega = options.relax
    I_face = None
    for it in range(options.max_outer):
        I_new, T_star, I_face = picard(I, T)
        res = float(np.abs(I_new - I).max()) / scale
        res_T = float(np.abs(opacity_F(T, mesh.centers, model) - opacity_F(T_star, mesh.centers, model)).max())
        res_T /= max(float(opacity_F(T_star, mesh.centers, model).max()), 1e-30)
        history.append(max(res, res_T))
        I = I_new
        T = T + omega * (T_star - T)
        if history[-1] <= options.tol:
            break
        if options.accel == "auto" and it + 1 == options.picard_warmup:
            accel = _newton_krylov_stationary(picard, I, T, scale, options, disc)
            if accel is not None:
                I, T = accel
                I_new, T_star, I_face = picard(I, T)
                res = float(np.abs(I_new - I).max()) / scale
                I, T = I_new, T_star
                history.append(res)
                if res <= options.tol:
                    break
    else:
        raise ConvergenceError(
            f"stationary kinetic solve stalled at residual {history[-1]:.3e}", history
        )
    # Final consistency sweep so I, T, and the flux share one iterate.
    I, T, I_face = picard(I, _slaved_temperature(I, disc))
    flux = _face_total_flux(I_face, disc)
    return KineticState(mesh, quad, grid, I, T, 0.0, flux)


def _newton_krylov_stationary(picard, I, T, scale, options, disc):
    shape = I.shape

    def residual(u):
        I_u = np.clip(u.reshape(shape) * scale, 0.0, None)
        T_u = _slaved_temperature(I_u, disc)
        I_new, _, _ = picard(I_u, T_u)
        return (I_new - I_u).ravel() / scale

    try:
        sol = newton_krylov(residual, (I / scale).ravel(), f_tol=0.2 * options.tol, maxiter=60, verbose=False)
    except (NoConvergence, ValueError):
        return None
    I_acc = np.clip(sol.reshape(shape) * scale, 0.0, None)
    return I_acc, _slaved_temperature(I_acc, disc)


def _solve_capacity_temperature(rhs, coef, model, x, T_guess):
    """Vectorized solve of T + coef * 4 pi F(T) = rhs (monotone per cell)."""
    T = np.clip(T_guess, 1e-12, None)
    lo = np.zeros_like(T)
    hi = np.maximum(rhs, T) + 1.0
    for _ in range(200):
        f = T + coef * FOUR_PI * opacity_F(T, x, model) - rhs
        if np.all(np.abs(f) <= 1e-13 * np.maximum(np.abs(rhs), 1.0)):
            return T
        hi = np.where(f > 0.0, T, hi)
        lo = np.where(f <= 0.0, T, lo)
        df = 1.0 + coef * FOUR_PI * _dF_dT(np.maximum(T, 1e-300), x, model)
        T_new = T - f / df
        bad = ~np.isfinite(T_new) | (T_new <= lo) | (T_new >= hi)
        T = np.where(bad, 0.5 * (lo + hi), T_new)
    raise ConvergenceError("capacity temperature solve did not converge")


def step_time_instant(
    state: KineticState,
    dt: float,
    regime: ScalingRegime,
    model: MaterialModel,
    g_left: BoundarySource,
    g_right: BoundarySource,
    options: SolverOptions = SolverOptions(),
) -> KineticState:
    """Quasi-static step: stationary transport at the current T, implicit T advance.

    The flux divergence is eliminated with the transport equation, so the
    temperature update is the pointwise monotone problem
    T' + dt tau_h eps^beta 4 pi F(T') = T + dt tau_h eps^beta int dnu sum w a I.
    """
    if regime.light_mode != INSTANT:
        raise DispatchError("step_time_instant requires the instant light mode")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    disc = _discretize(regime, model, state.mesh, state.quad, options)
    I, I_face = _linear_transport_solve(disc, state, g_left, g_right, state.T, lam=0.0,
                                        I_old=None, options=options)
    absorbed = model.freq_grid.integrate(
        disc.a * np.tensordot(I, state.quad.weights, axes=([1], [0]))
    )
    coef = dt * regime.tau_h * regime.epsilon**regime.beta
    rhs = state.T + coef * absorbed
    T_new = _solve_capacity_temperature(rhs, coef, model, state.mesh.centers, state.T)
    flux = _face_total_flux(I_face, disc)
    return replace(state, I=I, T=T_new, time=state.time + dt, face_flux=flux)


def _linear_transport_solve(disc, state, g_left, g_right, T, lam, I_old, options,
                            tol_factor=1e-12):
    """Solve the transport equation at frozen temperature (linear in I).

    lam > 0 adds the backward-Euler relaxation 1/(c dt tau_h) with data I_old.
    Reflecting faces keep the lagged-closure Picard path; Dirichlet data go
    through a GMRES solve on the affine sweep map.
    """
    from scipy.sparse.linalg import LinearOperator, gmres

    mesh, quad, grid = disc.mesh, disc.quad, disc.model.freq_grid
    emission = disc.ka[:, None, :] * _emission(T, disc)
    if lam > 0.0:
        emission = emission + lam * I_old
    sigma = disc.sigma_t + lam
    reflecting = g_left.reflecting or g_right.reflecting

    def sweep_once(I, I_face_prev):
        q = emission + disc.ks[:, None, :] * _scattering_source(I, disc)
        inflow_l, inflow_r = _inflows(disc, g_left, g_right, state.time, I_face_prev)
        return exponential_sweep(mesh.widths, quad.mu, sigma, q, inflow_l, inflow_r)

    shape = (mesh.size, quad.size, grid.size)
    if reflecting:
        I = state.I.copy()
        I_face = None
        scale = max(float(np.abs(I).max()), float(emission.max()), 1e-30)
        for _ in range(options.max_outer * 4):
            I_new, I_face = sweep_once(I, I_face)
            res = float(np.abs(I_new - I).max()) / scale
            I = I_new
            if res <= tol_factor:
                return I, I_face
        raise ConvergenceError("reflecting transport iteration stalled")

    zero = np.zeros(shape)
    base, base_face = sweep_once(zero, None)

    def matvec(u):
        I_u = u.reshape(shape)
        out, _ = sweep_once(I_u, None)
        return u - (out - base).ravel()

    n_tot = int(np.prod(shape))
    A = LinearOperator((n_tot, n_tot), matvec=matvec)
    b = base.ravel()
    x0 = state.I.ravel()
    sol, info = gmres(A, b, x0=x0, rtol=1e-13, atol=1e-13 * max(1.0, float(np.abs(b).max())), maxiter=400, restart=60)
    if info != 0:
        raise ConvergenceError(f"transport GMRES did not converge (info={info})")
    I = np.clip(sol.reshape(shape), 0.0, None)
    I_new, I_face = sweep_once(I, None)
    return I_new, I_face


def step_time_finite(
    state: KineticState,
    dt: float,
    regime: ScalingRegime,
    model: MaterialModel,
    g_left: BoundarySource,
    g_right: BoundarySource,
    options: SolverOptions = SolverOptions(),
) -> KineticState:
    """Fully implicit backward-Euler step of the coupled (I, T) system.

    At the converged inner fixed point the per-cell sweep balance makes the
    discrete energy law exact: the change of sum_i dx_i (T_i + E_i / c)
    equals -dt tau_h (boundary flux difference), so closed boxes conserve
    total energy to the inner tolerance.
    """
    if regime.light_mode not in (UNIT, POWER_LAW):
        raise DispatchError("step_time_finite requires a finite light mode")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    disc = _discretize(regime, model, state.mesh, state.quad, options)
    c = regime.light_speed
    lam = 1.0 / (c * dt * regime.tau_h)
    coef = dt * regime.tau_h * regime.epsilon**regime.beta
    x = state.mesh.centers
    T = state.T.copy()
    I = state.I
    I_face = None
    new_time = state.time + dt

    scale_T = max(float(np.abs(T).max()), 1.0)
    stepped = replace(state, time=new_time)
    history = []
    for _ in range(options.max_outer):
        I_new, I_face = _linear_transport_solve(
            disc, stepped, g_left, g_right, T, lam=lam, I_old=state.I, options=options
        )
        absorbed = model.freq_grid.integrate(
            disc.a * np.tensordot(I_new, state.quad.weights, axes=([1], [0]))
        )
        rhs = state.T + coef * absorbed
        T_new = _solve_capacity_temperature(rhs, coef, model, x, T)
        res = float(np.abs(T_new - T).max()) / scale_T + (
            float(np.abs(I_new - I).max()) / max(float(np.abs(I_new).max()), 1e-30)
        )
        history.append(res)
        I, T = I_new, T_new
        if res <= 1e-12:
            break
    else:
        raise ConvergenceError("finite-light step did not reach its inner tolerance", history)
    flux = _face_total_flux(I_face, disc)
    return replace(state, I=I, T=T, time=new_time, face_flux=flux)


def equilibrium_departure(state: KineticState, model: MaterialModel):
    """Per-cell Planck departure and anisotropy (weighted relative L1 norms)."""
    grid, quad = state.freq_grid, state.quad
    if np.any(state.T < 0.0):
        raise ValueError("temperatures must be nonnegative")
    B = group_emission(state.T, grid)[:, None, :]
    w = quad.weights
    num_dep = grid.integrate(np.tensordot(np.abs(state.I - B), w, axes=([1], [0])))
    den = np.maximum(grid.integrate(np.tensordot(np.broadcast_to(B, state.I.shape), w, axes=([1], [0]))), 1e-300)
    mean_I = np.tensordot(state.I, w, axes=([1], [0]))[:, None, :] / FOUR_PI
    num_ani = grid.integrate(np.tensordot(np.abs(state.I - mean_I), w, axes=([1], [0])))
    den_ani = np.maximum(grid.integrate(np.tensordot(np.broadcast_to(mean_I, state.I.shape), w, axes=([1], [0]))), 1e-300)
    return num_dep / den, num_ani / den_ani


def write_state_csv(state: KineticState, model: MaterialModel, path) -> None:
    """Per-run CSV export: x, T, flux, departure, anisotropy."""
    dep, ani = equilibrium_departure(state, model)
    if state.face_flux is not None:
        flux = 0.5 * (state.face_flux[:-1] + state.face_flux[1:])
    else:
        flux = np.zeros(state.mesh.size)
    with open(path, "w", newline="") as fh:
        fh.write("# columns: x (cell center), T, flux (total radiative), departure, anisotropy\n")
        fh.write("x,T,flux,departure,anisotropy\n")
        for i in range(state.mesh.size):
            fh.write(
                f"{state.mesh.centers[i]:.17g},{state.T[i]:.17g},{flux[i]:.17g},"
                f"{dep[i]:.17g},{ani[i]:.17g}\n"
            )


def write_snapshot(path, state: KineticState) -> None:
    """Binary snapshot: magic, int64 (cells, dirs, groups) LE, I row-major, T."""
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        np.array(state.I.shape, dtype="<i8").tofile(fh)
        np.ascontiguousarray(state.I, dtype="<f8").tofile(fh)
        np.ascontiguousarray(state.T, dtype="<f8").tofile(fh)


def read_snapshot(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(SNAPSHOT_MAGIC))
        if magic != SNAPSHOT_MAGIC:
            raise ValueError("not a radslab snapshot file")
        shape = tuple(np.fromfile(fh, dtype="<i8", count=3))
        I = np.fromfile(fh, dtype="<f8", count=int(np.prod(shape))).reshape(shape)
        T = np.fromfile(fh, dtype="<f8", count=shape[0])
    return I, T
