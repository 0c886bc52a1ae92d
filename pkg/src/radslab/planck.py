"""Planck distribution, opacity models, and the temperature-intensity map.

Nondimensional convention: units with 2h/c^2 = 1 and h/k = 1, so the Planck
function is B(nu, T) = nu^3 / (exp(nu/T) - 1) and its frequency integral is
sigma * T^4 with sigma = pi^4 / 15.

Grey convention: a grey frequency grid carries a single synthetic bin whose
group value is the frequency-integrated quantity; the group emission is then
sigma * T^4 and group opacities are constants.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConvergenceError
from .grids import GREY, FrequencyGrid, SlabMesh, build_frequency_grid
from .scattering import ScatteringKernel, isotropic_kernel

SIGMA = np.pi**4 / 15.0
FOUR_PI = 4.0 * np.pi

# exp overflow / linearization thresholds for nu/T
_Z_BIG = 700.0
_Z_SMALL = 1e-6


def planck_B(nu, T):
    """Planck distribution nu^3 / (exp(nu/T) - 1), safe at extreme nu/T.

    T = 0 returns 0.  Negative arguments are domain errors.
    """
    nu = np.asarray(nu, float)
    T = np.asarray(T, float)
    if np.any(nu <= 0.0):
        raise ValueError("planck_B requires nu > 0")
    if np.any(T < 0.0):
        raise ValueError("planck_B requires T >= 0")
    with np.errstate(divide="ignore", over="ignore"):
        z = np.where(T > 0.0, nu / np.where(T > 0.0, T, 1.0), np.inf)
    out = np.zeros(np.broadcast_shapes(nu.shape, T.shape))
    nu_b, z_b = np.broadcast_arrays(np.broadcast_to(nu, out.shape), np.broadcast_to(z, out.shape))
    big = z_b > _Z_BIG
    small = z_b < _Z_SMALL
    mid = ~(big | small) & np.isfinite(z_b)
    out[mid] = nu_b[mid] ** 3 / np.expm1(z_b[mid])
    out[big & np.isfinite(z_b)] = nu_b[big & np.isfinite(z_b)] ** 3 * np.exp(
        -z_b[big & np.isfinite(z_b)]
    )
    if np.any(small):
        Tb = np.broadcast_to(T, out.shape)
        out[small] = nu_b[small] ** 2 * Tb[small]
    return out if out.ndim else float(out)


def dplanck_dT(nu, T):
    """Temperature derivative of planck_B; positive for T > 0."""
    nu = np.asarray(nu, float)
    T = np.asarray(T, float)
    if np.any(nu <= 0.0):
        raise ValueError("dplanck_dT requires nu > 0")
    if np.any(T <= 0.0):
        raise ValueError("dplanck_dT requires T > 0")
    z = nu / T
    out = np.zeros(np.broadcast_shapes(nu.shape, T.shape))
    nu_b, z_b, T_b = np.broadcast_arrays(
        np.broadcast_to(nu, out.shape), np.broadcast_to(z, out.shape), np.broadcast_to(T, out.shape)
    )
    big = z_b > _Z_BIG
    small = z_b < _Z_SMALL
    mid = ~(big | small)
    # e^z / (e^z - 1)^2 = 1 / (expm1(z) * (-expm1(-z)))
    out[mid] = nu_b[mid] ** 4 / (T_b[mid] ** 2 * np.expm1(z_b[mid]) * (-np.expm1(-z_b[mid])))
    out[big] = nu_b[big] ** 4 / T_b[big] ** 2 * np.exp(-z_b[big])
    out[small] = nu_b[small] ** 2
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MaterialModel:
    """Absorption/scattering coefficients, kernel, and frequency grid.

    ``alpha_a(nu, x)`` and ``alpha_s(nu, x)`` are vectorized over both
    arguments and must stay bounded, with alpha_a strictly positive.  In grey
    mode the single group's coefficients are the frequency-independent values.
    """

    freq_grid: FrequencyGrid
    kernel: ScatteringKernel
    alpha_a: Callable[[np.ndarray, np.ndarray], np.ndarray]
    alpha_s: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "custom"

    def sample(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Coefficient arrays of shape (n_groups, n_points) at positions x."""
        x = np.atleast_1d(np.asarray(x, float))
        nu = self.freq_grid.nodes[:, None]
        a = np.broadcast_to(self.alpha_a(nu, x[None, :]), (self.freq_grid.size, x.size)).astype(float)
        s = np.broadcast_to(self.alpha_s(nu, x[None, :]), (self.freq_grid.size, x.size)).astype(float)
        if np.any(a <= 0.0):
            raise ValueError("absorption coefficient must be strictly positive")
        if np.any(s < 0.0):
            raise ValueError("scattering coefficient must be nonnegative")
        return a, s

    def validate_continuity(self, mesh: SlabMesh, lipschitz_bound: float = 50.0) -> float:
        """Largest sampled |d alpha / dx|; raises if it exceeds the bound."""
        a, s = self.sample(mesh.centers)
        dx = np.diff(mesh.centers)
        slope = 0.0
        for arr in (a, s):
            if arr.shape[1] > 1:
                slope = max(slope, float(np.abs(np.diff(arr, axis=1) / dx).max()))
        if slope > lipschitz_bound:
            raise ValueError(
                f"sampled coefficient slope {slope:.3g} exceeds Lipschitz bound {lipschitz_bound}"
            )
        return slope


def grey_constant(alpha_a: float, alpha_s: float, kernel: ScatteringKernel | None = None) -> MaterialModel:
    """Grey material: constant coefficients, single synthetic frequency bin."""
    if alpha_a <= 0.0:
        raise ValueError("grey absorption coefficient must be positive")
    if alpha_s < 0.0:
        raise ValueError("grey scattering coefficient must be nonnegative")
    return MaterialModel(
        build_frequency_grid(GREY),
        kernel if kernel is not None else isotropic_kernel(),
        lambda nu, x: np.broadcast_to(alpha_a, np.broadcast_shapes(np.shape(nu), np.shape(x))),
        lambda nu, x: np.broadcast_to(alpha_s, np.broadcast_shapes(np.shape(nu), np.shape(x))),
        name=f"grey(a={alpha_a},s={alpha_s})",
    )


def power_window(
    freq_grid: FrequencyGrid,
    a_amplitude: float = 1.0,
    a_exponent: float = 0.0,
    s_amplitude: float = 0.5,
    s_exponent: float = 0.0,
    window: tuple[float, float] = (0.1, 20.0),
    kernel: ScatteringKernel | None = None,
) -> MaterialModel:
    """Power-law opacities alpha(nu) = amp * nu^p, frozen outside the window.

    Clamping nu to the window keeps the coefficients bounded and positive
    whatever the exponents, which also keeps the opacity-weighted integrals
    finite without symbolic decay conditions.
    """
    lo, hi = window

    def make(amp, p):
        def alpha(nu, x, amp=amp, p=p):
            nu_c = np.clip(np.asarray(nu, float), lo, hi)
            val = amp * nu_c**p
            return np.broadcast_to(val, np.broadcast_shapes(np.shape(val), np.shape(x)))

        return alpha

    return MaterialModel(
        freq_grid,
        kernel if kernel is not None else isotropic_kernel(),
        make(a_amplitude, a_exponent),
        make(s_amplitude, s_exponent),
        name="power_window",
    )


def from_group_values(
    freq_grid: FrequencyGrid,
    alpha_a_groups,
    alpha_s_groups,
    kernel: ScatteringKernel | None = None,
) -> MaterialModel:
    """x-independent per-group coefficients (used by multigroup fixtures)."""
    a = np.asarray(alpha_a_groups, float)
    s = np.asarray(alpha_s_groups, float)
    if a.size != freq_grid.size or s.size != freq_grid.size:
        raise ValueError("group coefficient arrays must match the frequency grid")
    nodes = freq_grid.nodes

    def lookup(values):
        def alpha(nu, x, values=values):
            nu_arr = np.asarray(nu, float)
            idx = np.searchsorted(nodes, np.clip(nu_arr, nodes[0], nodes[-1]))
            idx = np.clip(idx, 0, nodes.size - 1)
            val = values[idx]
            return np.broadcast_to(val, np.broadcast_shapes(np.shape(val), np.shape(x)))

        return alpha

    return MaterialModel(
        freq_grid, kernel if kernel is not None else isotropic_kernel(), lookup(a), lookup(s),
        name="group_values",
    )


def from_csv(path, freq_grid: FrequencyGrid, kernel: ScatteringKernel | None = None) -> MaterialModel:
    """Tabulated coefficients from CSV columns (x, nu, alpha_a, alpha_s).

    Bilinear interpolation on the tabulated rectangle, constant extension
    outside it.
    """
    xs, nus, rows = set(), set(), {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            x, nu = float(rec["x"]), float(rec["nu"])
            xs.add(x)
            nus.add(nu)
            rows[(x, nu)] = (float(rec["alpha_a"]), float(rec["alpha_s"]))
    xs, nus = sorted(xs), sorted(nus)
    a_tab = np.array([[rows[(x, nu)][0] for x in xs] for nu in nus])
    s_tab = np.array([[rows[(x, nu)][1] for x in xs] for nu in nus])

    def interp(tab):
        def alpha(nu, x, tab=tab):
            nu_q = np.clip(np.asarray(nu, float), nus[0], nus[-1])
            x_q = np.clip(np.asarray(x, float), xs[0], xs[-1])
            nu_b, x_b = np.broadcast_arrays(nu_q, x_q)
            out = np.empty(nu_b.shape)
            flat_nu, flat_x = nu_b.ravel(), x_b.ravel()
            for i, (f, g) in enumerate(zip(flat_nu, flat_x)):
                j = min(np.searchsorted(nus, f), len(nus) - 1)
                j0 = max(j - 1, 0) if nus[j] > f or j == len(nus) - 1 else j
                j1 = min(j0 + 1, len(nus) - 1)
                i_ = min(np.searchsorted(xs, g), len(xs) - 1)
                i0 = max(i_ - 1, 0) if xs[i_] > g or i_ == len(xs) - 1 else i_
                i1 = min(i0 + 1, len(xs) - 1)
                tf = 0.0 if j1 == j0 else (f - nus[j0]) / (nus[j1] - nus[j0])
                tx = 0.0 if i1 == i0 else (g - xs[i0]) / (xs[i1] - xs[i0])
                out.ravel()[i] = (
                    tab[j0, i0] * (1 - tf) * (1 - tx)
                    + tab[j1, i0] * tf * (1 - tx)
                    + tab[j0, i1] * (1 - tf) * tx
                    + tab[j1, i1] * tf * tx
                )
            return out

        return alpha

    return MaterialModel(
        freq_grid, kernel if kernel is not None else isotropic_kernel(),
        interp(a_tab), interp(s_tab), name="csv",
    )


def freeze_model_at(model: MaterialModel, p: float) -> MaterialModel:
    """Material with coefficients frozen at the boundary point p.

    Layer equations use alpha(nu, p): the coefficients converge to their
    boundary values on the layer scale.
    """
    a_p, s_p = model.sample(p)
    a_vals, s_vals = a_p[:, 0].copy(), s_p[:, 0].copy()
    nodes = model.freq_grid.nodes

    def lookup(values):
        def alpha(nu, x, values=values):
            nu_arr = np.asarray(nu, float)
            idx = np.clip(np.searchsorted(nodes, np.clip(nu_arr, nodes[0], nodes[-1])), 0, nodes.size - 1)
            val = values[idx]
            return np.broadcast_to(val, np.broadcast_shapes(np.shape(val), np.shape(x)))

        return alpha

    return MaterialModel(
        model.freq_grid, model.kernel, lookup(a_vals), lookup(s_vals),
        name=f"{model.name}@p={p}",
    )


def group_emission(T, grid: FrequencyGrid) -> np.ndarray:
    """Planck emission per group: B(nu_k, T), or sigma*T^4 for the grey bin.

    T may be scalar or an array; the group axis is appended last.
    """
    T = np.asarray(T, float)
    if grid.grey:
        return (SIGMA * T**4)[..., None] if T.ndim else np.array([SIGMA * float(T) ** 4])
    return planck_B(grid.nodes, T[..., None] if T.ndim else T)


def group_demission(T, grid: FrequencyGrid) -> np.ndarray:
    """dB/dT per group (4*sigma*T^3 for the grey bin)."""
    T = np.asarray(T, float)
    if grid.grey:
        return (4.0 * SIGMA * T**3)[..., None] if T.ndim else np.array([4.0 * SIGMA * float(T) ** 3])
    return dplanck_dT(grid.nodes, T[..., None] if T.ndim else T)


def planck_total(T, grid: FrequencyGrid):
    """Frequency-integrated Planck emission on the grid (sigma*T^4 analytically)."""
    return grid.integrate(group_emission(T, grid))


def opacity_F(T, x, model: MaterialModel):
    """F(T, x) = int alpha_a(nu, x) B(nu, T) dnu on the model's grid."""
    T_arr = np.asarray(T, float)
    if np.any(T_arr < 0.0):
        raise ValueError("opacity_F requires T >= 0")
    a, _ = model.sample(x)
    em = group_emission(T_arr, model.freq_grid)  # (..., K)
    if em.ndim == 1:
        vals = model.freq_grid.integrate(a.T * em[None, :])
    else:
        vals = model.freq_grid.integrate(a.T * em)
    return vals if np.ndim(T) or np.ndim(x) else float(vals[0])


def _dF_dT(T, x, model: MaterialModel):
    a, _ = model.sample(x)
    dem = group_demission(np.asarray(T, float), model.freq_grid)
    if dem.ndim == 1:
        return model.freq_grid.integrate(a.T * dem[None, :])
    return model.freq_grid.integrate(a.T * dem)


def invert_F(xi, x, model: MaterialModel, rel_tol: float = 1e-12, max_iter: int = 200):
    """Temperature with F(T, x) = xi; bracketing plus safeguarded Newton.

    F is smooth and strictly increasing, so brackets found by doubling
    guarantee global convergence.  Vectorized over xi (and x); the grey case
    inverts alpha_a * sigma * T^4 in closed form.
    """
    xi_arr = np.atleast_1d(np.asarray(xi, float))
    if np.any(xi_arr < 0.0):
        raise ValueError("invert_F requires xi >= 0")
    x_arr = np.atleast_1d(np.asarray(x, float))
    if x_arr.size == 1 and xi_arr.size > 1:
        x_arr = np.broadcast_to(x_arr, xi_arr.shape)

    if model.freq_grid.grey:
        a, _ = model.sample(x_arr)
        out = (xi_arr / (a[0] * SIGMA)) ** 0.25
    else:
        out = _invert_F_newton(xi_arr, x_arr, model, rel_tol, max_iter)
    if np.ndim(xi) == 0 and np.ndim(x) == 0:
        return float(out.ravel()[0])
    return out


def _invert_F_newton(xi, x, model, rel_tol, max_iter):
    pos = xi > 0.0
    out = np.zeros_like(xi)
    if not np.any(pos):
        return out
    xi_p, x_p = xi[pos], x[pos]
    hi = np.ones_like(xi_p)
    for _ in range(300):
        short = opacity_F(hi, x_p, model) < xi_p
        if not np.any(short):
            break
        hi[short] *= 2.0
    else:
        raise ConvergenceError("invert_F bracket expansion failed")
    lo = np.zeros_like(xi_p)
    T = np.clip((xi_p / np.maximum(opacity_F(np.ones_like(xi_p), x_p, model), 1e-300)) ** 0.25, 1e-12, hi)
    tol = rel_tol * xi_p
    for _ in range(max_iter):
        f = opacity_F(T, x_p, model) - xi_p
        if np.all(np.abs(f) <= tol):
            out[pos] = T
            return out
        hi = np.where(f > 0.0, T, hi)
        lo = np.where(f <= 0.0, T, lo)
        df = _dF_dT(np.maximum(T, 1e-300), x_p, model)
        with np.errstate(divide="ignore", invalid="ignore"):
            T_new = T - f / df
        bad = ~np.isfinite(T_new) | (T_new <= lo) | (T_new >= hi)
        T_new = np.where(bad, 0.5 * (lo + hi), T_new)
        T = T_new
    raise ConvergenceError(
        f"invert_F did not reach {rel_tol:.1e} relative tolerance (worst residual "
        f"{float(np.abs(opacity_F(T, x_p, model) - xi_p).max()):.3e})"
    )


def temperature_from_intensity(I, model: MaterialModel, x, weights=None):
    """T = F^{-1}(int dnu alpha_a <I>) for a (directions, groups) field at x.

    ``weights`` are the angular quadrature weights; ``I`` must be shaped
    (n_directions, n_groups).
    """
    I = np.asarray(I, float)
    if np.any(I < 0.0):
        raise ValueError("intensity must be nonnegative")
    if weights is None:
        raise ValueError("angular weights are required")
    mean_I = np.tensordot(weights, I, axes=([0], [0])) / FOUR_PI
    a, _ = model.sample(x)
    xi = float(model.freq_grid.integrate(a[:, 0] * mean_I))
    return invert_F(xi, x, model)
