"""Rotation-invariant scattering kernels and the discretized scattering operator.

The kernel is a function of c = n . n' alone, normalized so that its integral
over the sphere in the first argument is one.  Discretizations come in two
flavors:

* ``full_sphere``: dense action matrix K(n_i . n_j) w_j on the direction
  nodes, row-renormalized once to restore exact stochasticity.
* ``slab_polar``: azimuthally averaged kernel in Legendre-moment form,
  h(mu, mu') = sum_l ((2l+1)/2) k_l P_l(mu) P_l(mu'), truncated at l_max.
  With Gauss nodes this realizes the moment eigenstructure exactly: P_l is
  an eigenvector with eigenvalue k_l for l + l' within quadrature exactness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import legval
from scipy.integrate import quad

from .errors import (
    ConditioningError,
    ConnectivityError,
    ConvergenceError,
    KernelNormalizationError,
    RangeConditionError,
)
from .grids import FULL_SPHERE, SLAB_POLAR, AngularQuadrature

FOUR_PI = 4.0 * np.pi

DEFAULT_L_MAX = 16


@dataclass(frozen=True)
class ScatteringKernel:
    """Phase function of the deflection cosine, normalized over the sphere.

    ``phase(c)`` is the density with respect to dn', so normalization reads
    2*pi * int_{-1}^{1} phase(c) dc = 1.
    """

    name: str
    phase: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def legendre_moments(self, l_max: int) -> np.ndarray:
        """Moments k_l = 2*pi int phase(c) P_l(c) dc, so k_0 = 1."""
        if self.name == "isotropic":
            k = np.zeros(l_max + 1)
            k[0] = 1.0
            return k
        if self.name == "henyey_greenstein":
            return self.params["g"] ** np.arange(l_max + 1)
        if self.name == "cutoff_forward":
            return _cutoff_moments(self.params["c0"], l_max)
        k = np.empty(l_max + 1)
        for l in range(l_max + 1):
            coeffs = np.zeros(l + 1)
            coeffs[l] = 1.0
            val, _ = quad(lambda c: self.phase(c) * legval(c, coeffs), -1.0, 1.0, limit=200)
            k[l] = 2.0 * np.pi * val
        return k

    def normalization(self) -> float:
        """2*pi int phase dc; one for a properly normalized kernel.

        The named presets are normalized analytically (adaptive quadrature
        cannot resolve the forward peak of extreme HG kernels).
        """
        if self.name in ("isotropic", "henyey_greenstein", "cutoff_forward"):
            return 1.0
        val, _ = quad(self.phase, -1.0, 1.0, limit=200)
        return 2.0 * np.pi * val


def _cutoff_moments(c0: float, l_max: int) -> np.ndarray:
    # int_{c0}^{1} P_l dc = (P_{l+1} - P_{l-1})/(2l+1) evaluated at the ends;
    # all P_l are one at c = 1.
    k = np.empty(l_max + 1)
    k[0] = 1.0
    for l in range(1, l_max + 1):
        pl = [np.polynomial.legendre.Legendre.basis(m)(c0) for m in (l - 1, l + 1)]
        k[l] = -(pl[1] - pl[0]) / ((2 * l + 1) * (1.0 - c0))
    return k


def isotropic_kernel() -> ScatteringKernel:
    return ScatteringKernel("isotropic", lambda c: np.full_like(np.asarray(c, float), 1.0 / FOUR_PI))


def henyey_greenstein_kernel(g: float) -> ScatteringKernel:
    if not -1.0 < g < 1.0:
        raise ValueError(f"HG asymmetry must lie in (-1, 1), got {g}")

    def phase(c, g=g):
        c = np.asarray(c, float)
        return (1.0 - g * g) / (FOUR_PI * (1.0 + g * g - 2.0 * g * c) ** 1.5)

    return ScatteringKernel("henyey_greenstein", phase, {"g": g})


def cutoff_forward_kernel(c0: float) -> ScatteringKernel:
    """Normalized indicator of deflection cosines above c0 (forward cone)."""
    if not -1.0 < c0 < 1.0:
        raise ValueError(f"cutoff cosine must lie in (-1, 1), got {c0}")
    amp = 1.0 / (2.0 * np.pi * (1.0 - c0))

    def phase(c, c0=c0, amp=amp):
        return np.where(np.asarray(c, float) > c0, amp, 0.0)

    return ScatteringKernel("cutoff_forward", phase, {"c0": c0})


def tabulated_kernel(c_values: np.ndarray, phase_values: np.ndarray) -> ScatteringKernel:
    """User kernel from tabulated phase samples, trapezoid-normalized."""
    c_values = np.asarray(c_values, float)
    phase_values = np.asarray(phase_values, float)
    if np.any(phase_values < 0.0):
        raise ValueError("tabulated phase function must be nonnegative")
    norm = 2.0 * np.pi * np.trapezoid(phase_values, c_values)
    if norm <= 0.0:
        raise ValueError("tabulated phase function integrates to zero")
    vals = phase_values / norm

    def phase(c, c_values=c_values, vals=vals):
        return np.interp(np.asarray(c, float), c_values, vals)

    return ScatteringKernel("tabulated", phase)


KERNEL_PRESETS = {
    "isotropic": lambda **kw: isotropic_kernel(),
    "henyey_greenstein": lambda **kw: henyey_greenstein_kernel(kw["g"]),
    "cutoff_forward": lambda **kw: cutoff_forward_kernel(kw["c0"]),
}


@dataclass(frozen=True)
class ScatteringOperator:
    """Discrete action of H on fields sampled at the quadrature nodes."""

    kernel: ScatteringKernel
    quad: AngularQuadrature
    matrix: np.ndarray
    legendre_coeffs: np.ndarray
    diagnostics: dict

    @property
    def mode(self) -> str:
        return self.quad.mode

    @property
    def k1(self) -> float:
        return float(self.legendre_coeffs[1]) if self.legendre_coeffs.size > 1 else 0.0


@dataclass(frozen=True)
class CombinedOperator:
    """A = theta * H with theta = alpha_s / (alpha_a + alpha_s) < 1."""

    theta: float
    op: ScatteringOperator

    def __post_init__(self):
        if not 0.0 <= self.theta < 1.0:
            raise ConvergenceError(
                f"combined operator requires theta in [0, 1), got {self.theta}"
            )


def discretize_scattering(
    kernel: ScatteringKernel, quad: AngularQuadrature, l_max: int = DEFAULT_L_MAX
) -> ScatteringOperator:
    """Build the action matrix of H on the quadrature nodes.

    Raises a normalization error when the kernel integral over the sphere is
    off by more than 1e-6 before discretization.  Row sums are forced to one
    by a single multiplicative renormalization, recorded in the diagnostics.
    """
    norm = kernel.normalization()
    if abs(norm - 1.0) > 1e-6:
        raise KernelNormalizationError(
            f"kernel {kernel.name!r} integrates to {norm:.8f} over the sphere, expected 1"
        )
    if quad.mode == SLAB_POLAR:
        if l_max < 1:
            raise ValueError("slab mode needs l_max >= 1")
        k = kernel.legendre_moments(l_max)
        mu = quad.nodes
        # P matrix: P[l, i] = P_l(mu_i)
        P = np.stack([np.polynomial.legendre.Legendre.basis(l)(mu) for l in range(l_max + 1)])
        h = np.einsum("l,li,lj->ij", (2.0 * np.arange(l_max + 1) + 1.0) / 2.0 * k, P, P)
        matrix = h * (quad.weights[None, :] / (2.0 * np.pi))
    else:
        k = kernel.legendre_moments(l_max)
        n = quad.nodes
        cosines = np.clip(n @ n.T, -1.0, 1.0)
        matrix = kernel.phase(cosines) * quad.weights[None, :]

    row_sums = matrix.sum(axis=1)
    matrix = matrix / row_sums[:, None]
    diagnostics = {
        "row_sum_min": float(row_sums.min()),
        "row_sum_max": float(row_sums.max()),
        "row_renormalization_max": float(np.abs(row_sums - 1.0).max()),
        "kernel_normalization": float(norm),
    }
    return ScatteringOperator(kernel, quad, matrix, k, diagnostics)


def apply_H(op: ScatteringOperator, field: np.ndarray) -> np.ndarray:
    """Apply H along the last axis of a direction-indexed field."""
    field = np.asarray(field, float)
    if field.shape[-1] != op.quad.size:
        raise ValueError(
            f"field has {field.shape[-1]} direction entries, quadrature has {op.quad.size}"
        )
    return field @ op.matrix.T


def solve_deflection(op: ScatteringOperator, rhs: np.ndarray, gap_floor: float = 1e-8) -> np.ndarray:
    """Solve (Id - H) phi = rhs for mean-zero rhs, returning the mean-zero phi.

    The inverse is defined only up to constants; the undetermined isotropic
    gauge is fixed to zero.  A bordered system pins the weighted mean.
    """
    rhs = np.asarray(rhs, float)
    w = op.quad.weights
    mean = float(np.dot(w, rhs)) / FOUR_PI
    scale = max(1.0, float(np.abs(rhs).max()))
    if abs(mean) > 1e-8 * scale:
        raise RangeConditionError(
            f"rhs has angular mean {mean:.3e}; (Id - H) is only invertible on mean-zero data"
        )
    gap = spectral_diagnostics(op)["gap"]
    if gap < gap_floor:
        raise ConditioningError(f"spectral gap {gap:.3e} below floor {gap_floor:.1e}")
    n = op.quad.size
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = np.eye(n) - op.matrix
    A[:n, n] = 1.0
    A[n, :n] = w
    b = np.zeros(n + 1)
    b[:n] = rhs - mean  # project off the numerically tiny mean component
    sol = np.linalg.solve(A, b)
    return sol[:n]


def diffusion_tensor(op: ScatteringOperator, gap_floor: float = 1e-8):
    """sum_i w_i n_i (x) (Id - H)^{-1}(n)_i.

    Full-sphere mode returns the 3x3 tensor; slab mode returns the scalar xx
    component (the only one resolvable under azimuthal symmetry).
    """
    w = op.quad.weights
    if op.mode == SLAB_POLAR:
        mu = op.quad.nodes
        psi = solve_deflection(op, mu, gap_floor)
        return float(np.dot(w, mu * psi))
    n = op.quad.nodes
    cols = [solve_deflection(op, n[:, j], gap_floor) for j in range(3)]
    D = np.empty((3, 3))
    for j in range(3):
        for i in range(3):
            D[i, j] = np.dot(w, n[:, i] * cols[j])
    return 0.5 * (D + D.T)


def spectral_diagnostics(op: ScatteringOperator) -> dict:
    """Leading eigenvalue, spectral gap, and flatness of the leading eigenvector."""
    vals, vecs = np.linalg.eig(op.matrix)
    order = np.argsort(-np.abs(vals))
    vals, vecs = vals[order], vecs[:, order]
    lead = vecs[:, 0].real
    mean = lead.mean()
    flat = float(np.abs(lead - mean).max() / max(abs(mean), 1e-300))
    second = np.abs(vals[1]) if vals.size > 1 else 0.0
    return {
        "leading_eigenvalue": float(vals[0].real),
        "second_eigenvalue": float(second),
        "gap": float(1.0 - second),
        "leading_eigenvector_flatness": flat,
    }


def positivity_chain(op: ScatteringOperator, i: int, j: int, tol: float = 1e-12) -> list[int]:
    """Minimal chain of intermediate nodes with positive kernel links from i to j.

    Breadth-first search on the positivity graph.  In slab mode a link exists
    when the phase function is positive somewhere on the azimuthal circle of
    attainable deflection cosines of the two polar nodes.
    """
    size = op.quad.size
    if not (0 <= i < size and 0 <= j < size):
        raise IndexError("node index out of range")
    adj = _positivity_adjacency(op, tol)
    if not adj.any():
        raise ConnectivityError("kernel is identically zero at this discretization")
    prev = np.full(size, -1, dtype=int)
    seen = np.zeros(size, dtype=bool)
    seen[i] = True
    frontier = [i]
    while frontier:
        nxt = []
        for a in frontier:
            if a == j:
                break
            for b in np.nonzero(adj[a])[0]:
                if not seen[b]:
                    seen[b] = True
                    prev[b] = a
                    nxt.append(int(b))
        if seen[j]:
            break
        frontier = nxt
    if not seen[j]:
        raise ConnectivityError(
            f"no positive-kernel chain between nodes {i} and {j}; "
            "kernel violates the connectivity hypothesis at this discretization"
        )
    path = [j]
    while path[-1] != i and prev[path[-1]] >= 0:
        path.append(int(prev[path[-1]]))
    path.reverse()
    return path[1:-1]  # intermediate nodes only


def _positivity_adjacency(op: ScatteringOperator, tol: float) -> np.ndarray:
    if op.mode == FULL_SPHERE:
        c = np.clip(op.quad.nodes @ op.quad.nodes.T, -1.0, 1.0)
        return op.kernel.phase(c) > tol
    mu = op.quad.nodes
    lo = np.clip(np.multiply.outer(mu, mu) - np.sqrt(np.multiply.outer(1 - mu**2, 1 - mu**2)), -1, 1)
    hi = np.clip(np.multiply.outer(mu, mu) + np.sqrt(np.multiply.outer(1 - mu**2, 1 - mu**2)), -1, 1)
    adj = np.zeros(lo.shape, dtype=bool)
    samples = np.linspace(0.0, 1.0, 65)
    for a in range(lo.shape[0]):
        for b in range(lo.shape[1]):
            c = lo[a, b] + (hi[a, b] - lo[a, b]) * samples
            adj[a, b] = bool(np.any(op.kernel.phase(c) > tol))
    return adj


def solve_combined(
    combined: CombinedOperator,
    source: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> np.ndarray:
    """Fixed point of phi = theta H[phi] + source by contraction iteration."""
    theta, op = combined.theta, combined.op
    source = np.asarray(source, float)
    phi = source.copy()
    scale = max(1.0, float(np.abs(source).max()))
    history = []
    for _ in range(max_iter):
        nxt = theta * apply_H(op, phi) + source
        res = float(np.abs(nxt - phi).max())
        history.append(res)
        phi = nxt
        if res <= tol * scale:
            return phi
    raise ConvergenceError(
        f"contraction iteration stalled at residual {history[-1]:.3e}", history
    )
