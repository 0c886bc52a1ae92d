"""Half-space Milne solvers and the thermalization-layer solver.

Orientation: the layer coordinate y runs from the wall (y = 0) into the
medium, and mu = -(n . n_p) so incoming directions have mu > 0 at y = 0.
Coefficients are frozen at the boundary point.

The three Milne variants:

* ``absorption``            -- mu dI/dy = a (B(T) - I), T slaved to the
                               divergence-free condition
* ``absorption_scattering`` -- adds s (H[I] - I)
* ``scattering``            -- mu dI/dy = s (H[I] - I) alone; the temperature
                               is recovered afterwards from the same balance

The half-line is truncated at Y with the isotropic mean-return closure
I(Y, mu < 0) = <I>(Y); a solve is accepted only when re-solving at 2Y moves
the extracted far field by less than the doubling tolerance (the far-field
convergence rates are not quantified, so self-consistency substitutes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import NoConvergence, newton_krylov
from scipy.sparse.linalg import spsolve

from .errors import ConvergenceError, DispatchError, ExtractionError, TruncationError
from .grids import AngularQuadrature, SlabMesh, build_half_line_mesh
from .kinetic import ScalingRegime, exponential_sweep
from .planck import (
    FOUR_PI,
    MaterialModel,
    freeze_model_at,
    group_demission,
    group_emission,
    invert_F,
)
from .scattering import DEFAULT_L_MAX, diffusion_tensor, discretize_scattering

ABSORPTION = "absorption"
ABSORPTION_SCATTERING = "absorption_scattering"
SCATTERING = "scattering"
MILNE_VARIANTS = (ABSORPTION, ABSORPTION_SCATTERING, SCATTERING)


@dataclass(frozen=True)
class MilneVariant:
    kind: str

    def __post_init__(self):
        if self.kind not in MILNE_VARIANTS:
            raise DispatchError(f"unknown Milne variant {self.kind!r}")


def variant_for_regime(regime: ScalingRegime) -> MilneVariant:
    """Layer equation selection: which process dominates at the wall."""
    if regime.beta == -1.0 and regime.gamma > -1.0:
        return MilneVariant(ABSORPTION)
    if regime.beta == -1.0 and regime.gamma == -1.0:
        return MilneVariant(ABSORPTION_SCATTERING)
    return MilneVariant(SCATTERING)


@dataclass(frozen=True)
class LayerOptions:
    domain: float = 20.0  # in boundary mean free paths
    cells: int = 200
    ratio: float = 1.05
    tol: float = 1e-11
    max_outer: int = 6000
    picard_warmup: int = 15
    accel: str = "auto"
    doubling_tol: float = 1e-5
    max_doublings: int = 3
    l_max: int = DEFAULT_L_MAX


@dataclass
class LayerSolution:
    variant: str
    mesh: SlabMesh
    quad: AngularQuadrature
    model: MaterialModel  # frozen at the boundary point
    I: np.ndarray  # (cells, directions, groups)
    T: np.ndarray  # (cells,)
    certificate: dict = field(default_factory=dict)

    @property
    def y(self) -> np.ndarray:
        return self.mesh.centers

    def angular_mean(self) -> np.ndarray:
        return np.tensordot(self.I, self.quad.weights, axes=([1], [0])) / FOUR_PI

    def anisotropy(self) -> np.ndarray:
        """Per-cell relative deviation from the angular mean (summed over nu)."""
        w = self.quad.weights
        mean = self.angular_mean()[:, None, :]
        num = self.model.freq_grid.integrate(
            np.tensordot(np.abs(self.I - mean), w, axes=([1], [0]))
        )
        den = np.maximum(
            self.model.freq_grid.integrate(np.tensordot(np.broadcast_to(mean, self.I.shape), w, axes=([1], [0]))),
            1e-300,
        )
        return num / den


def _mean_free_path_scale(variant, model_p):
    a, s = model_p.sample(0.0)
    if variant.kind == ABSORPTION:
        return float(a.max())
    if variant.kind == SCATTERING:
        return float(s.max())
    return float((a + s).max())


def _solve_milne_fixed_domain(variant, model_p, quad, g_table, options, Y, cells, I_init=None):
    mesh = build_half_line_mesh(Y, cells, options.ratio)
    grid = model_p.freq_grid
    a, s = model_p.sample(mesh.centers)
    a, s = a.T, s.T
    op = discretize_scattering(model_p.kernel, quad, options.l_max)
    mu, w = quad.mu, quad.weights
    neg = mu < 0.0
    with_T = variant.kind in (ABSORPTION, ABSORPTION_SCATTERING)
    with_scat = variant.kind in (ABSORPTION_SCATTERING, SCATTERING)
    sigma = (a if with_T else 0.0) + (s if with_scat else 0.0)
    x_frozen = np.zeros(mesh.size)

    def slaved_T(I):
        mean_I = np.tensordot(I, w, axes=([1], [0])) / FOUR_PI
        return invert_F(grid.integrate(a * mean_I), x_frozen, model_p)

    def picard(I):
        far = (np.tensordot(I[-1], w, axes=([0], [0])) / FOUR_PI)[None, :]
        inflow_far = np.broadcast_to(far, (quad.size, grid.size))
        q = np.zeros_like(I)
        if with_T:
            T = slaved_T(I)
            q = q + a[:, None, :] * group_emission(T, grid)[:, None, :]
        else:
            T = None
        if with_scat:
            HI = np.swapaxes(I, 1, 2) @ op.matrix.T
            q = q + s[:, None, :] * np.swapaxes(HI, 1, 2)
        I_new, I_face = exponential_sweep(mesh.widths, mu, sigma, q, g_table, inflow_far)
        return I_new, I_face

    # alpha_a must not influence the pure-scattering iteration (bit-exact
    # independence), so seed from the incoming data alone.
    if I_init is not None:
        I = I_init
    else:
        incoming_mean = np.tensordot(np.clip(mu, 0, None) * w, g_table, axes=([0], [0]))
        incoming_mean /= np.dot(np.clip(mu, 0, None), w)
        I = np.broadcast_to(incoming_mean[None, None, :], (mesh.size, quad.size, grid.size)).copy()

    scale = max(float(np.abs(g_table).max()), float(np.abs(I).max()), 1e-30)
    history = []
    for it in range(options.max_outer):
        I_new, I_face = picard(I)
        res = float(np.abs(I_new - I).max()) / scale
        history.append(res)
        I = I_new
        if res <= options.tol:
            break
        if options.accel == "auto" and it + 1 == options.picard_warmup:
            accel = _newton_krylov_layer(picard, I, scale, options)
            if accel is not None:
                I = accel
    else:
        raise ConvergenceError(
            f"Milne iteration ({variant.kind}) stalled at residual {history[-1]:.3e}", history
        )
    I, I_face = picard(I)
    T = slaved_T(I) if with_T else invert_F(
        grid.integrate(a * (np.tensordot(I, w, axes=([1], [0])) / FOUR_PI)), x_frozen, model_p
    )
    return LayerSolution(variant.kind, mesh, quad, model_p, I, T)


def _newton_krylov_layer(picard, I, scale, options):
    shape = I.shape

    def residual(u):
        I_u = np.clip(u.reshape(shape) * scale, 0.0, None)
        I_new, _ = picard(I_u)
        return (I_new - I_u).ravel() / scale

    try:
        sol = newton_krylov(residual, (I / scale).ravel(), f_tol=0.1 * options.tol, maxiter=60)
    except (NoConvergence, ValueError):
        return None
    return np.clip(sol.reshape(shape) * scale, 0.0, None)


def _tail_mean(layer: LayerSolution) -> np.ndarray:
    """Width-weighted tail average of the angular mean over the last quarter."""
    y = layer.mesh.centers
    Y = layer.mesh.faces[-1]
    tail = y >= 0.75 * Y
    wts = layer.mesh.widths[tail]
    return np.tensordot(wts, layer.angular_mean()[tail], axes=([0], [0])) / wts.sum()


def solve_milne_fixed_domain(
    variant: MilneVariant,
    model: MaterialModel,
    p: float,
    quad: AngularQuadrature,
    g,
    Y: float,
    cells: int,
    options: LayerOptions = LayerOptions(),
    t: float = 0.0,
) -> LayerSolution:
    """Milne solve on a prescribed truncated domain (no doubling acceptance).

    Used as a same-mesh oracle by the time-layer comparisons; production
    callers want :func:`solve_milne`.
    """
    model_p = freeze_model_at(model, p)
    g_table = g if isinstance(g, np.ndarray) else g.sample(t, quad, model_p.freq_grid)
    layer = _solve_milne_fixed_domain(variant, model_p, quad, g_table, options, Y, cells)
    layer.certificate = {"Y": Y, "accepted": True, "doubling_delta": np.nan,
                         "tail_anisotropy": float(layer.anisotropy()[-1])}
    return layer


def solve_milne(
    variant: MilneVariant,
    model: MaterialModel,
    p: float,
    quad: AngularQuadrature,
    g,
    options: LayerOptions = LayerOptions(),
    t: float = 0.0,
) -> LayerSolution:
    """Half-space layer solve with Y-doubling acceptance.

    ``g`` is a BoundarySource (sampled at time t) or a prebuilt
    (directions, groups) incoming table.  The returned solution carries the
    doubling pair in its certificate for the far-field extraction.
    """
    model_p = freeze_model_at(model, p)
    grid = model_p.freq_grid
    g_table = g if isinstance(g, np.ndarray) else g.sample(t, quad, grid)
    if g_table.shape != (quad.size, grid.size):
        raise ValueError("incoming table must be shaped (directions, groups)")
    alpha_scale = _mean_free_path_scale(variant, model_p)
    Y = options.domain / alpha_scale
    cells = options.cells

    layer = _solve_milne_fixed_domain(variant, model_p, quad, g_table, options, Y, cells)
    tail_prev = _tail_mean(layer)
    accepted = False
    deltas = []
    for _ in range(options.max_doublings):
        Y *= 2.0
        cells = int(cells * 1.5)
        layer2 = _solve_milne_fixed_domain(variant, model_p, quad, g_table, options, Y, cells)
        tail_new = _tail_mean(layer2)
        denom = max(float(np.abs(tail_new).max()), 1e-300)
        delta = float(np.abs(tail_new - tail_prev).max()) / denom
        deltas.append(delta)
        layer, tail_prev = layer2, tail_new
        if delta <= options.doubling_tol:
            accepted = True
            break
    if not accepted:
        raise TruncationError(
            f"far field moved {deltas[-1]:.2e} under Y-doubling (tol {options.doubling_tol:.1e})",
            certificate={"deltas": deltas, "Y": Y},
        )
    ani = layer.anisotropy()
    layer.certificate = {
        "Y": Y,
        "doubling_deltas": deltas,
        "doubling_delta": deltas[-1],
        "tail_anisotropy": float(ani[-1]),
        "accepted": True,
    }
    return layer


def extract_far_field(layer: LayerSolution, model: MaterialModel | None = None) -> dict:
    """Far-field limits {I_inf(nu), T_inf} from a certified layer solution.

    I_inf is the tail average of the angular mean over the last quarter of
    the domain, refined by a geometric (Aitken-style) extrapolation using the
    measured tail decay of the anisotropy; T_inf = F^{-1}(int a I_inf).
    """
    if not layer.certificate.get("accepted", False):
        raise ExtractionError("layer solution has no acceptance certificate")
    model_p = layer.model  # already frozen at the boundary point
    grid = model_p.freq_grid
    mean = layer.angular_mean()
    y, Y = layer.mesh.centers, layer.mesh.faces[-1]
    tail = y >= 0.75 * Y
    wts = layer.mesh.widths[tail]
    v2 = np.tensordot(wts, mean[tail], axes=([0], [0])) / wts.sum()
    # flat-tail check on the per-group mean over the averaging window
    spread = np.abs(mean[tail] - v2[None, :]).max(axis=0)
    flat = float((spread / np.maximum(np.abs(v2), 1e-300)).max())
    if flat > 5e-3:
        raise ExtractionError(f"tail of the layer profile is not flat (spread {flat:.2e})")
    # geometric refinement from the half-tail average
    half = y >= 0.5 * Y
    v1 = np.tensordot(layer.mesh.widths[half], mean[half], axes=([0], [0])) / layer.mesh.widths[half].sum()
    ratio = layer.certificate.get("doubling_delta", 0.0)
    I_inf = v2 + (v2 - v1) * min(ratio, 0.5)
    a, _ = model_p.sample(0.0)
    T_inf = float(invert_F(float(grid.integrate(a[:, 0] * I_inf)), 0.0, model_p))
    return {"I_inf": I_inf, "T_inf": T_inf, "flatness": flat}


def thermalization_coefficient(op) -> float:
    """kappa_d = (1/4pi) sum w (n.n_p) (Id-H)^{-1}(n).n_p = Dxx / (4 pi)."""
    d = diffusion_tensor(op)
    return float(d if np.ndim(d) == 0 else d[0, 0]) / FOUR_PI


def solve_thermalization(
    datum: np.ndarray,
    model: MaterialModel,
    p: float,
    quad: AngularQuadrature,
    options: LayerOptions = LayerOptions(),
    nodes: int = 240,
) -> LayerSolution:
    """Thermalization layer: phi0 - (kappa_d/(a s)) phi0'' = B(T) with the
    pointwise constraint int dnu a B(T) = int dnu a phi0.

    ``datum`` is the isotropic Milne far field phi0(0, nu).  Global Newton on
    (phi0, T); far-field closure phi0'(Y_eta) = 0.
    """
    model_p = freeze_model_at(model, p)
    grid = model_p.freq_grid
    datum = np.asarray(datum, float)
    if datum.ndim == 2:
        if float(np.abs(datum - datum.mean(axis=0)).max()) > 1e-6 * max(float(np.abs(datum).max()), 1e-300):
            raise ValueError("thermalization datum must be isotropic")
        datum = datum.mean(axis=0)
    if datum.shape != (grid.size,):
        raise ValueError("datum must have one value per frequency group")

    a, s = model_p.sample(0.0)
    a, s = a[:, 0], s[:, 0]
    if np.any(s <= 0.0):
        raise ValueError("thermalization layer needs positive scattering")
    op = discretize_scattering(model_p.kernel, quad, options.l_max)
    kappa_d = thermalization_coefficient(op)
    lengths = np.sqrt(kappa_d / (a * s))
    Y = 10.0 * float(lengths.max())
    # Node grid, mildly graded: the profile is smooth on the layer scale, and
    # strong grading would wreck the conditioning of the second difference.
    mesh = build_half_line_mesh(Y, nodes, min(options.ratio, 1.01))
    eta = mesh.faces
    n = eta.size - 1  # unknowns phi(eta_1..eta_n) per group
    K = grid.size
    h = np.diff(eta)

    c = kappa_d / (a * s)  # (K,) diffusivity per group

    def second_difference_rows():
        rows = []
        for j in range(1, n):  # interior nodes 1..n-1
            hl, hr = h[j - 1], h[j]
            rows.append((j, 2.0 / (hl * (hl + hr)), -2.0 / (hl * hr), 2.0 / (hr * (hl + hr))))
        return rows

    sd = second_difference_rows()

    phi = np.broadcast_to(datum, (n + 1, K)).copy()
    T = invert_F(np.full(n + 1, float(grid.integrate(a * datum))), np.zeros(n + 1), model_p)

    scale = max(float(np.abs(datum).max()), 1e-30)
    n_unknown = n * K + (n + 1)

    def pack_residual(phi, T, want_jac):
        B = group_emission(T, grid)
        R1 = np.zeros((n, K))
        rows, cols, vals = [], [], []

        def phi_index(node, k):
            return (node - 1) * K + k

        for (j, cl, cm, cr) in sd:
            # conservative flux-difference form: exact on constants
            hl, hr = h[j - 1], h[j]
            lap = ((phi[j + 1] - phi[j]) / hr - (phi[j] - phi[j - 1]) / hl) * (2.0 / (hl + hr))
            R1[j - 1] = phi[j] - c * lap - B[j]
            if want_jac:
                for k in range(K):
                    row = phi_index(j, k)
                    if j - 1 >= 1:
                        rows.append(row); cols.append(phi_index(j - 1, k)); vals.append(-c[k] * cl)
                    rows.append(row); cols.append(phi_index(j, k)); vals.append(1.0 - c[k] * cm)
                    rows.append(row); cols.append(phi_index(j + 1, k)); vals.append(-c[k] * cr)
                    rows.append(row); cols.append(n * K + j); vals.append(-dB[j, k])
        # far-field closure: phi_n - phi_{n-1} = 0
        R1[n - 1] = phi[n] - phi[n - 1]
        if want_jac:
            for k in range(K):
                row = phi_index(n, k)
                rows.append(row); cols.append(phi_index(n, k)); vals.append(1.0)
                if n - 1 >= 1:
                    rows.append(row); cols.append(phi_index(n - 1, k)); vals.append(-1.0)
        R2 = grid.integrate(a * (B - phi))
        if want_jac:
            dF = grid.integrate(a * dB)
            for j in range(n + 1):
                row = n * K + j
                rows.append(row); cols.append(row); vals.append(dF[j])
                if j >= 1:
                    for k in range(K):
                        rows.append(row); cols.append(phi_index(j, k)); vals.append(-grid.weights[k] * a[k])
            J = sp.coo_matrix((vals, (rows, cols)), shape=(n_unknown, n_unknown)).tocsc()
        else:
            J = None
        return np.concatenate([R1.ravel(), R2]), J

    history = []
    for _ in range(80):
        dB = group_demission(np.maximum(T, 1e-12), grid)
        R, J = pack_residual(phi, T, want_jac=True)
        history.append(float(np.abs(R).max()))
        if history[-1] <= 1e-11 * scale:
            break
        step = spsolve(J, -R)
        lam, base = 1.0, history[-1]
        while lam > 1e-10:
            phi_new = phi.copy()
            phi_new[1:] = phi[1:] + lam * step[: n * K].reshape(n, K)
            T_new = np.clip(T + lam * step[n * K :], 1e-12, None)
            dB = group_demission(np.maximum(T_new, 1e-12), grid)
            R_new, _ = pack_residual(phi_new, T_new, want_jac=False)
            if float(np.abs(R_new).max()) <= (1.0 - 0.25 * lam) * base:
                break
            lam *= 0.5
        phi[1:] = phi[1:] + lam * step[: n * K].reshape(n, K)
        T = np.clip(T + lam * step[n * K :], 1e-12, None)
    else:
        raise ConvergenceError("thermalization Newton did not converge", history)

    # package on a cell-style mesh view (node values reported at nodes)
    node_mesh = SlabMesh(eta, np.concatenate([h, [h[-1]]]), {"left": 0.0, "right": float(Y)})
    sol = LayerSolution(
        "thermalization", node_mesh, quad, model_p,
        phi[:, None, :].repeat(quad.size, axis=1), T,
        certificate={
            "Y": float(Y), "accepted": True, "kappa_d": kappa_d,
            "constraint_residual": float(np.abs(grid.integrate(a * (group_emission(T, grid) - phi))).max()),
        },
    )
    return sol


def write_layer_csv(layer: LayerSolution, path) -> None:
    """Layer profile export: coordinate, per-group mean intensity, T, anisotropy."""
    mean = layer.angular_mean()
    ani = layer.anisotropy()
    coord = "eta" if layer.variant == "thermalization" else "y"
    groups = ",".join(f"mean_g{k}" for k in range(mean.shape[1]))
    with open(path, "w", newline="") as fh:
        fh.write(f"# columns: {coord} (distance from wall), per-group angular mean, T, anisotropy\n")
        fh.write(f"{coord},{groups},T,anisotropy\n")
        for i in range(layer.mesh.size):
            vals = ",".join(f"{v:.17g}" for v in mean[i])
            fh.write(f"{layer.mesh.centers[i]:.17g},{vals},{layer.T[i]:.17g},{ani[i]:.17g}\n")


def thermal_far_field(layer: LayerSolution) -> dict:
    """Far-field of a thermalization solve: T_inf and phi0(infinity)."""
    grid = layer.model.freq_grid
    phi_inf = layer.I[-1, 0, :]
    a, _ = layer.model.sample(0.0)
    T_inf = float(invert_F(float(grid.integrate(a[:, 0] * phi_inf)), 0.0, layer.model))
    return {"phi_inf": phi_inf, "T_inf": T_inf}


def boundary_temperature(
    regime: ScalingRegime,
    model: MaterialModel,
    p: float,
    quad: AngularQuadrature,
    g,
    options: LayerOptions = LayerOptions(),
    t: float = 0.0,
):
    """Dirichlet datum for the bulk problem at boundary point p.

    Equilibrium regimes return the matched temperature T_inf; the
    non-equilibrium regimes return the isotropic far-field intensity profile
    I_inf(nu) that the bulk phi0 must take at the wall.
    """
    classification = regime.classification()
    variant = variant_for_regime(regime)
    layer = solve_milne(variant, model, p, quad, g, options, t)
    far = extract_far_field(layer)
    if classification in ("eq_absorption", "eq_combined"):
        return far["T_inf"]
    if classification == "eq_scattering":
        therm = solve_thermalization(far["I_inf"], model, p, quad, options)
        return thermal_far_field(therm)["T_inf"]
    return far["I_inf"]
