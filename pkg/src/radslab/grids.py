"""Angular quadratures, frequency grids, and slab meshes shared by all solvers.

Conventions
-----------
* Directions live on the unit sphere.  The slab axis is e1, so the polar
  cosine of a direction n is mu = n . e1 and boundary normals are -e1 (left
  face) and +e1 (right face).
* Angular weights are solid angles: they sum to 4*pi in both modes.  In slab
  (azimuthally symmetric) mode the nodes are the polar cosines and each
  weight carries the 2*pi azimuthal factor.
* Frequencies are nondimensional (units with 2h/c^2 = 1 and h/k = 1), so the
  Planck function is nu^3 / (exp(nu/T) - 1) and its frequency integral at
  T = 1 is pi^4 / 15.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError

FULL_SPHERE = "full_sphere"
SLAB_POLAR = "slab_polar"

GREY = "grey"
MULTIGROUP = "multigroup"

FOUR_PI = 4.0 * np.pi

# Nodes of the panel covering (0, nu_min]; captures the nu^2-like low tail so
# the composite rule is not limited by the lower truncation.
_LOW_PANEL_NODES = 4
# Maximum Gauss nodes per log-spaced panel of the bulk window.
_PANEL_NODES = 8


@dataclass(frozen=True)
class AngularQuadrature:
    """Direction nodes and solid-angle weights.

    In ``full_sphere`` mode ``nodes`` has shape (n, 3) holding unit vectors;
    in ``slab_polar`` mode it has shape (n,) holding polar cosines in [-1, 1].
    ``mu`` is always the polar cosine (n . e1) of each node.
    """

    mode: str
    nodes: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def mu(self) -> np.ndarray:
        if self.mode == SLAB_POLAR:
            return self.nodes
        return self.nodes[:, 0]

    @property
    def size(self) -> int:
        return self.weights.size

    def mean(self, values: np.ndarray) -> np.ndarray:
        """Angular average (1/4pi) * sum_i w_i f_i along the direction axis."""
        return np.tensordot(values, self.weights, axes=([values.ndim - 1], [0])) / FOUR_PI

    def direction_vectors(self) -> np.ndarray:
        """Nodes as (n, 3) unit vectors; slab nodes are lifted to phi = 0."""
        if self.mode == FULL_SPHERE:
            return self.nodes
        mu = self.nodes
        s = np.sqrt(np.clip(1.0 - mu**2, 0.0, None))
        return np.column_stack([mu, s, np.zeros_like(mu)])


@dataclass(frozen=True)
class FrequencyGrid:
    """Quadrature for integrals over nu in (0, infinity).

    Grey mode has a single synthetic bin of weight one: group values are then
    frequency-integrated quantities, and the Planck emission for the bin is
    sigma * T^4 directly.
    """

    mode: str
    nodes: np.ndarray
    weights: np.ndarray
    nu_min: float = 0.0
    nu_max: float = 0.0
    # Relative weight of the truncated high tail of the Planck function at the
    # reference temperature T = 1; zero for grey mode.
    tail_truncation_error: float = 0.0

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def grey(self) -> bool:
        return self.mode == GREY

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """sum_k w_k f_k along the frequency axis (the last axis)."""
        return np.tensordot(values, self.weights, axes=([values.ndim - 1], [0]))


@dataclass(frozen=True)
class SlabMesh:
    """Uniform partition of the unit slab [0, 1]."""

    centers: np.ndarray
    widths: np.ndarray
    boundary_labels: dict = field(default_factory=lambda: {"left": 0.0, "right": 1.0})

    @property
    def size(self) -> int:
        return self.centers.size

    @property
    def faces(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.widths)])


def build_angular_quadrature(mode: str, order: int) -> AngularQuadrature:
    """Gauss-Legendre polar quadrature, optionally tensored with uniform azimuth.

    ``order`` is the number of Gauss-Legendre nodes in mu, so polynomials in
    mu up to degree 2*order - 1 are integrated exactly.  The full-sphere mode
    uses 2*order uniform azimuthal nodes, which integrates azimuthal
    harmonics up to order 2*order - 1 exactly.
    """
    if mode not in (FULL_SPHERE, SLAB_POLAR):
        raise ConfigError(f"unknown quadrature mode {mode!r}")
    if int(order) < 2:
        raise ConfigError(f"angular quadrature order must be >= 2, got {order}")
    order = int(order)
    mu, w_gl = leggauss(order)
    if mode == SLAB_POLAR:
        return AngularQuadrature(mode, mu, 2.0 * np.pi * w_gl, order)

    n_phi = 2 * order
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    s = np.sqrt(1.0 - mu**2)
    nodes = np.empty((order * n_phi, 3))
    weights = np.empty(order * n_phi)
    idx = 0
    for i in range(order):
        for j in range(n_phi):
            nodes[idx] = (mu[i], s[i] * np.cos(phi[j]), s[i] * np.sin(phi[j]))
            weights[idx] = w_gl[i] * (2.0 * np.pi / n_phi)
            idx += 1
    return AngularQuadrature(FULL_SPHERE, nodes, weights, order)


def _gauss_panel(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def _planck_tail_fraction(nu_max: float) -> float:
    # int_{nu_max}^inf nu^3 e^-nu dnu upper-bounds the truncated Planck mass at T=1.
    tail = np.exp(-nu_max) * (nu_max**3 + 3 * nu_max**2 + 6 * nu_max + 6)
    return float(tail / (np.pi**4 / 15.0))


def build_frequency_grid(
    mode: str, nu_min: float = 0.05, nu_max: float = 30.0, count: int = 64
) -> FrequencyGrid:
    """Composite Gauss rule: one panel on (0, nu_min], sqrt-mapped panels above.

    The low panel removes the lower truncation error (the integrands here
    behave like nu^2 near zero), so the only truncation is the exponential
    high tail, whose relative Planck mass at T = 1 is reported on the grid.
    Panels in the window are equispaced in sqrt(nu), which keeps nodes near
    the Planck peak at coarse counts without starving the decades below it.
    """
    if mode == GREY:
        return FrequencyGrid(GREY, np.array([1.0]), np.array([1.0]))
    if mode != MULTIGROUP:
        raise ConfigError(f"unknown frequency grid mode {mode!r}")
    if not (0.0 < nu_min < nu_max):
        raise ConfigError(f"need 0 < nu_min < nu_max, got ({nu_min}, {nu_max})")
    if count < 1:
        raise ConfigError(f"frequency count must be >= 1, got {count}")

    if count <= _LOW_PANEL_NODES + 1:
        nodes, weights = _gauss_panel(0.0, nu_max, count)
    else:
        n_low = min(_LOW_PANEL_NODES, count // 4)
        lo_nodes, lo_w = _gauss_panel(0.0, nu_min, n_low)
        n_win = count - n_low
        n_panels = max(1, int(np.ceil(n_win / _PANEL_NODES)))
        edges = np.linspace(np.sqrt(nu_min), np.sqrt(nu_max), n_panels + 1)
        per_panel = np.full(n_panels, n_win // n_panels)
        per_panel[: n_win % n_panels] += 1
        parts = [(lo_nodes, lo_w)]
        for p in range(n_panels):
            u, w = _gauss_panel(edges[p], edges[p + 1], int(per_panel[p]))
            parts.append((u**2, 2.0 * u * w))
        nodes = np.concatenate([p[0] for p in parts])
        weights = np.concatenate([p[1] for p in parts])

    if not np.all(np.diff(nodes) > 0.0):
        raise ConfigError("frequency nodes are not strictly increasing")
    return FrequencyGrid(
        MULTIGROUP,
        nodes,
        weights,
        nu_min=float(nu_min),
        nu_max=float(nu_max),
        tail_truncation_error=_planck_tail_fraction(float(nu_max)),
    )


def build_slab_mesh(cell_count: int) -> SlabMesh:
    """Uniform partition of [0, 1] into ``cell_count`` cells."""
    if int(cell_count) < 2:
        raise ConfigError(f"slab mesh needs at least 2 cells, got {cell_count}")
    n = int(cell_count)
    widths = np.full(n, 1.0 / n)
    centers = (np.arange(n) + 0.5) / n
    return SlabMesh(centers, widths)


def build_half_line_mesh(length: float, cell_count: int, ratio: float = 1.05) -> SlabMesh:
    """Geometrically graded mesh on [0, length], finest at 0.

    Used by the layer solvers: incoming anisotropic data relaxes within a few
    mean free paths of the wall, so cells grow by ``ratio`` away from it.
    """
    if cell_count < 2:
        raise ConfigError("half-line mesh needs at least 2 cells")
    if length <= 0:
        raise ConfigError("half-line mesh length must be positive")
    if ratio <= 1.0:
        widths = np.full(cell_count, length / cell_count)
    else:
        h0 = length * (ratio - 1.0) / (ratio**cell_count - 1.0)
        widths = h0 * ratio ** np.arange(cell_count)
        widths *= length / widths.sum()
    faces = np.concatenate([[0.0], np.cumsum(widths)])
    centers = 0.5 * (faces[:-1] + faces[1:])
    return SlabMesh(centers, widths, {"left": 0.0, "right": float(length)})
