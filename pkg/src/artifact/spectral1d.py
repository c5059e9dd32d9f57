"""One-dimensional weighted eigensolves, functional calculus and dual norms.

The weighted Laplacian ``grad^* grad`` of a Gibbs density ``exp(-p)/Z`` is
discretized as ``D^T W D`` (first differences ``D``, Gibbs weights ``W`` at
cell midpoints) against a lumped mass matrix.  On a truncated line the
boundary is no-flux (Neumann); on a torus the differences are periodic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.fft import dst
from scipy.linalg import eigh, eigh_tridiagonal

from .errors import MeanNotZero, NoSpectralGap, WeightBelowOne
from .model import Profile, profile_log_partition
from .quadrature import integrate_interval

__all__ = [
    "SpectralOperator",
    "WeightedPoincare",
    "SpaceTimeDual",
    "truncation_radius",
    "build_operator",
    "poincare_constant",
    "weighted_poincare_constant",
    "operator_sqrt",
    "dual_h1_norm",
    "sigma_max",
    "edge_difference",
]

GAP_TOL = 1e-8
TAIL_MASS = 1e-10
SIGMA_MARGIN = 1e-3


def truncation_radius(profile: Profile, tail_mass: float = TAIL_MASS) -> float:
    """Smallest symmetric radius (to 1%) whose exterior Gibbs mass is below ``tail_mass``."""
    if profile.support is not None:
        return max(abs(profile.support[0]), abs(profile.support[1]))
    log_z = profile_log_partition(profile)

    def density(s):
        return np.exp(-profile.derivative(s, 0) - log_z)

    def exterior(r):
        inside, _ = integrate_interval(density, -r, r, tol=1e-14, panels=8)
        return 1.0 - float(inside)

    hi = 1.0
    while exterior(hi) > 0.5 * tail_mass:
        hi *= 2.0
        if hi > 1e6:
            break
    lo = 0.5 * hi if hi > 1.0 else 0.0
    while hi - lo > 0.01 * hi:
        mid = 0.5 * (lo + hi)
        if exterior(mid) > 0.5 * tail_mass:
            lo = mid
        else:
            hi = mid
    return hi


@dataclass(frozen=True)
class SpectralOperator:
    """Discrete ``grad^* grad`` for a one-dimensional Gibbs density.

    Attributes
    ----------
    x : ndarray
        Nodes.
    h : float
        Spacing.
    torus : bool
        Periodic domain flag.
    mass : ndarray
        Lumped Gibbs mass at nodes; sums to one.
    edge_mass : ndarray
        Gibbs mass attached to the cell midpoints (edges).
    diff : ndarray
        Difference matrix from nodes to edges, ``(g[i+1] - g[i]) / h``.
    stiffness : ndarray
        ``diff.T @ diag(edge_mass) @ diff``.
    eigenvalues : ndarray
        Ascending; the first is the (numerically) zero constant mode.
    eigenvectors : ndarray
        Columns orthonormal in the ``mass`` inner product.
    """

    x: np.ndarray
    h: float
    torus: bool
    mass: np.ndarray
    edge_mass: np.ndarray
    diff: np.ndarray
    stiffness: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def gap(self) -> float:
        return float(self.eigenvalues[1])

    def apply(self, g: np.ndarray) -> np.ndarray:
        """``grad^* grad g`` in the mass inner product."""
        return (self.stiffness @ g) / self.mass if g.ndim == 1 else (self.stiffness @ g) / self.mass[:, None]

    def gradient(self, g: np.ndarray) -> np.ndarray:
        """Differences of nodal values along the first axis (edge values)."""
        return self.diff @ g

    def adjoint_gradient(self, z: np.ndarray) -> np.ndarray:
        """``grad^*`` of an edge field, returned at nodes."""
        out = self.diff.T @ (self.edge_mass[:, None] * z if z.ndim > 1 else self.edge_mass * z)
        return out / (self.mass[:, None] if z.ndim > 1 else self.mass)

    def mean(self, g: np.ndarray):
        return self.mass @ g

    def coefficients(self, g: np.ndarray) -> np.ndarray:
        """Coordinates of ``g`` in the weighted-orthonormal eigenbasis."""
        return self.eigenvectors.T @ (self.mass[:, None] * g if g.ndim > 1 else self.mass * g)


def _grid(profile: Profile, n: int, radius: Optional[float]):
    if profile.period is not None:
        h = profile.period / n
        x = h * np.arange(n)
        edges = x + 0.5 * h
        node_w = np.full(n, h)
        return x, edges, node_w, h, True
    r = truncation_radius(profile) if radius is None else float(radius)
    if profile.support is not None:
        a, b = profile.support
    else:
        a, b = -r, r
    x = np.linspace(a, b, n)
    h = x[1] - x[0]
    edges = 0.5 * (x[:-1] + x[1:])
    node_w = np.full(n, h)
    node_w[[0, -1]] *= 0.5
    return x, edges, node_w, h, False


def build_operator(profile: Profile, n: int = 512, radius: Optional[float] = None) -> SpectralOperator:
    """Assemble and diagonalize the weighted Laplacian of ``exp(-profile)``.

    Parameters
    ----------
    profile : Profile
        Energy of the density; torus when ``profile.period`` is set.
    n : int
        Number of nodes.
    radius : float, optional
        Truncation radius on the line; defaults to the radius where the
        exterior mass falls below 1e-10.
    """
    x, edges, node_w, h, torus = _grid(profile, n, radius)
    shift = float(np.min(profile.derivative(x, 0)))
    node_d = np.exp(-(profile.derivative(x, 0) - shift))
    z = node_w @ node_d
    mass = node_w * node_d / z
    edge_mass = h * np.exp(-(profile.derivative(edges, 0) - shift)) / z
    ne = edges.size
    diff = np.zeros((ne, n))
    idx = np.arange(ne)
    diff[idx, idx] = -1.0 / h
    diff[idx, (idx + 1) % n] += 1.0 / h
    stiffness = diff.T @ (edge_mass[:, None] * diff)
    isq = 1.0 / np.sqrt(mass)
    if torus:
        sym = isq[:, None] * stiffness * isq[None, :]
        vals, vecs = eigh(sym)
    else:
        diag = np.diag(stiffness) * isq**2
        off = np.diag(stiffness, 1) * isq[:-1] * isq[1:]
        vals, vecs = eigh_tridiagonal(diag, off)
    vecs = isq[:, None] * vecs
    # fix signs so results are reproducible across platforms
    signs = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(n)])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    return SpectralOperator(x, float(h), torus, mass, edge_mass, diff, stiffness, vals, vecs)


def _smallest_gap(profile: Profile, n: int, radius: Optional[float] = None) -> float:
    x, edges, node_w, h, torus = _grid(profile, n, radius)
    if torus:
        return build_operator(profile, n, radius).gap
    shift = float(np.min(profile.derivative(x, 0)))
    node_d = np.exp(-(profile.derivative(x, 0) - shift))
    z = node_w @ node_d
    mass = node_w * node_d / z
    edge_mass = h * np.exp(-(profile.derivative(edges, 0) - shift)) / z
    k = edge_mass / h**2
    diag = np.zeros(n)
    diag[:-1] += k
    diag[1:] += k
    diag /= mass
    off = -k / np.sqrt(mass[:-1] * mass[1:])
    vals = eigh_tridiagonal(diag, off, select="i", select_range=(0, 1), eigvals_only=True)
    return float(vals[1])


def poincare_constant(
    profile: Profile,
    n: int = 512,
    extrapolate: bool = True,
    radius: Optional[float] = None,
    domain_check: bool = True,
) -> float:
    """Spectral gap ``c`` with ``||g||^2 <= ||g'||^2 / c`` for mean-zero ``g``.

    With ``extrapolate`` the grids ``n`` and ``2n`` are combined by
    Richardson extrapolation of the second-order error.

    Raises
    ------
    NoSpectralGap
        If the gap is below 1e-8, or (on the line) if it keeps shrinking as
        the truncation radius doubles, which signals a density without gap.
    """
    if profile.period is None and profile.support is None:
        r = truncation_radius(profile) if radius is None else radius
    else:
        r = radius
    coarse = _smallest_gap(profile, n, r)
    if extrapolate:
        fine = _smallest_gap(profile, 2 * n, r)
        value = (4.0 * fine - coarse) / 3.0
    else:
        value = coarse
    if value < GAP_TOL:
        raise NoSpectralGap(f"spectral gap {value:.3e} below {GAP_TOL:g}")
    if domain_check and profile.period is None and profile.support is None:
        # keep the spacing fixed while the domain grows
        g2 = _smallest_gap(profile, 2 * n - 1, 2 * r)
        g4 = _smallest_gap(profile, 4 * n - 3, 4 * r)
        if g2 < 0.75 * coarse and g4 < 0.75 * g2:
            raise NoSpectralGap(
                f"gap decays under domain growth: {coarse:.3e}, {g2:.3e}, {g4:.3e} "
                f"at radii {r:g}, {2 * r:g}, {4 * r:g}"
            )
    return float(value)


def sigma_max(profile: Profile, weight: Callable, probe: float = 1e4) -> float:
    """Largest exponent with ``weight**sigma`` integrable, minus a margin.

    Estimated from the logarithmic slopes of the weight and of the density
    at ``probe``; densities decaying faster than any power give ``inf``.
    """
    if profile.period is not None or profile.support is not None:
        return math.inf
    s = np.array([probe])
    decay = float(probe * profile.derivative(s, 1)[0])  # -dlog density / dlog s
    eps = 1e-6
    growth = float(
        (np.log(weight(np.array([probe * (1 + eps)]))[0]) - np.log(weight(s)[0])) / math.log1p(eps)
    )
    decay, growth = round(decay, 6), round(growth, 6)
    if decay > 50.0 or growth <= 0.0:
        return math.inf
    return (decay - 1.0) / growth - SIGMA_MARGIN


@dataclass(frozen=True)
class WeightedPoincare:
    """Constant of the weighted inequality ``int g^2 / G dgamma <= P int g'^2 dgamma``.

    ``g`` is centered against ``gamma`` itself.
    """

    weight: Callable
    constant: float
    sigma_max: float
    coarse: float
    fine: float


def _weighted_top(profile: Profile, weight: Callable, n: int, radius: Optional[float]) -> float:
    op = build_operator(profile, n, radius)
    gw = weight(op.x)
    if np.min(gw) < 1.0 - 1e-12:
        raise WeightBelowOne(f"weight falls to {np.min(gw):.6g} < 1 on the grid")
    # basis of gamma-mean-zero functions: the nonconstant eigenvectors
    basis = op.eigenvectors[:, 1:]
    lam = op.eigenvalues[1:]
    b = basis.T @ ((op.mass / gw)[:, None] * basis)
    scale = 1.0 / np.sqrt(lam)
    top = eigh(scale[:, None] * b * scale[None, :], eigvals_only=True)[-1]
    return float(top)


def weighted_poincare_constant(
    profile: Profile,
    weight: Callable,
    n: int = 512,
    radius: Optional[float] = None,
    rtol: float = 2e-3,
    n_max: int = 4096,
) -> WeightedPoincare:
    """Best constant ``P`` of the weighted Poincare inequality on the grid.

    ``P`` is the largest value of ``int g^2 / weight dgamma`` over
    ``int g'^2 dgamma = 1`` with ``int g dgamma = 0``.  The grid is doubled
    from ``n`` until two successive values agree to ``rtol`` (at most
    ``n_max`` nodes), and the last pair is Richardson-extrapolated.

    Raises
    ------
    WeightBelowOne
        If ``weight < 1`` at some node.
    """
    if profile.period is None and profile.support is None and radius is None:
        radius = truncation_radius(profile)
    coarse = _weighted_top(profile, weight, n, radius)
    fine = _weighted_top(profile, weight, 2 * n, radius)
    while abs(fine - coarse) > rtol * abs(fine) and 4 * n <= n_max:
        n *= 2
        coarse, fine = fine, _weighted_top(profile, weight, 2 * n, radius)
    value = (4.0 * fine - coarse) / 3.0
    return WeightedPoincare(weight, float(value), sigma_max(profile, weight), coarse, fine)


def operator_sqrt(op: SpectralOperator, f: Callable[[np.ndarray], np.ndarray], mean_tol: float = 1e-10):
    """Return ``u -> f(L) u`` with ``L`` the square root of ``op`` on mean-zero vectors.

    The constant mode is excluded, so ``f`` is only evaluated on positive
    square roots of eigenvalues.
    """
    roots = np.sqrt(np.maximum(op.eigenvalues[1:], 0.0))
    factors = np.asarray(f(roots), dtype=float)
    vecs = op.eigenvectors[:, 1:]

    def apply(u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        mean = op.mass @ u
        norm = math.sqrt(float(np.sum(op.mass * np.atleast_2d(u.T) ** 2)))
        if np.max(np.abs(mean)) > mean_tol * max(1.0, norm):
            raise MeanNotZero(f"weighted mean {np.max(np.abs(mean)):.3e} is not zero")
        coef = vecs.T @ (op.mass[:, None] * u if u.ndim > 1 else op.mass * u)
        coef = factors[:, None] * coef if u.ndim > 1 else factors * coef
        return vecs @ coef

    return apply


def edge_difference(op: SpectralOperator):
    """Derivative of edge fields evaluated at nodes, with the matching node weights.

    On the line only interior nodes carry a derivative.
    """
    if op.torus:
        return -op.diff.T, op.mass  # (z[e] - z[e-1]) / h at each node
    return -op.diff.T[1:-1], op.mass[1:-1]


class SpaceTimeDual:
    """Dual norms of ``H^1`` on ``[0, tau] x X`` with Dirichlet conditions in time.

    Time is normalized (``dt / tau``) and split into ``m`` cells.  Test
    functions come in two flavours: node fields (interior time nodes times
    spatial nodes) and edge fields (time cells times spatial edges), each
    vanishing at ``t = 0`` and ``t = tau``.  The ``H^1`` norm is
    ``||z||^2 + ||d_t z||^2 + ||d_x z||^2``.
    """

    def __init__(self, op: SpectralOperator, tau: float, m: int = 64):
        self.op = op
        self.tau = float(tau)
        self.m = int(m)
        dt = self.tau / self.m
        self.dt = dt
        self.t_cells = dt * (np.arange(m) + 0.5)
        self.t_nodes = dt * np.arange(1, m)
        k_nodes = np.arange(1, m)
        k_cells = np.arange(1, m + 1)
        self.theta_nodes = (4.0 / dt**2) * np.sin(0.5 * np.pi * k_nodes / m) ** 2
        self.theta_cells = (4.0 / dt**2) * np.sin(0.5 * np.pi * k_cells / m) ** 2
        d_edge, node_w = edge_difference(op)
        self.edge_diff = d_edge
        self.edge_diff_weights = node_w
        k_edge = d_edge.T @ (node_w[:, None] * d_edge)
        isq = 1.0 / np.sqrt(op.edge_mass)
        vals, vecs = eigh(isq[:, None] * k_edge * isq[None, :])
        self.edge_eigenvalues = np.maximum(vals, 0.0)
        self.edge_eigenvectors = isq[:, None] * vecs

    # time transforms: orthonormal in the normalized measure dt / tau
    def _dst_nodes(self, a: np.ndarray) -> np.ndarray:
        return dst(a, type=1, axis=0, norm="ortho")

    def _dst_cells(self, a: np.ndarray) -> np.ndarray:
        return dst(a, type=2, axis=0, norm="ortho")

    def node_dual_vector(self, w: np.ndarray) -> np.ndarray:
        """Coordinates whose squared norm is the dual norm of ``z -> <w, z>`` on node fields."""
        w = np.asarray(w, dtype=float)
        coef = w @ (self.op.mass[:, None] * self.op.eigenvectors)
        coef = self._dst_nodes(coef) * math.sqrt(self.dt / self.tau)
        denom = 1.0 + self.theta_nodes[:, None] + self.op.eigenvalues[None, :]
        return (coef / np.sqrt(denom)).ravel()

    def edge_dual_vector(self, w: np.ndarray) -> np.ndarray:
        """Same as :meth:`node_dual_vector` for edge fields (``w`` on cells x edges)."""
        w = np.asarray(w, dtype=float)
        coef = w @ (self.op.edge_mass[:, None] * self.edge_eigenvectors)
        coef = self._dst_cells(coef) * math.sqrt(self.dt / self.tau)
        denom = 1.0 + self.theta_cells[:, None] + self.edge_eigenvalues[None, :]
        return (coef / np.sqrt(denom)).ravel()

    def node_dual_sq(self, w: np.ndarray) -> float:
        """Squared dual norm of the functional ``z -> <w, z>`` on node fields."""
        return float(np.sum(self.node_dual_vector(w) ** 2))

    def edge_dual_sq(self, w: np.ndarray) -> float:
        """Squared dual norm of ``z -> <w, z>`` on edge fields (``w`` on cells x edges)."""
        return float(np.sum(self.edge_dual_vector(w) ** 2))

    def gradient_dual_vector(self, g: np.ndarray) -> np.ndarray:
        """Linear map ``g -> v`` with ``|v|^2`` the squared dual norm of ``grad_(t,x) g``.

        Pairs ``d_t g`` with node fields and ``d_x g`` with edge fields via
        the discrete summation-by-parts identities.
        """
        g = np.asarray(g, dtype=float)
        dtg = (g[1:] - g[:-1]) / self.dt
        dxg = g @ self.op.diff.T
        return np.concatenate([self.node_dual_vector(dtg), self.edge_dual_vector(dxg)])

    def gradient_dual_sq(self, g: np.ndarray) -> float:
        """Squared dual norm of the space-time gradient of ``g`` (cells x nodes)."""
        return float(np.sum(self.gradient_dual_vector(g) ** 2))

    def l2_sq(self, g: np.ndarray) -> float:
        """Squared ``L^2(dt/tau x mu)`` norm of a cell field."""
        return float(np.sum((np.asarray(g) ** 2) @ self.op.mass) * self.dt / self.tau)

    def remove_mean(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        return g - np.mean(g @ self.op.mass)

    def node_eigenmode(self, k: int, i: int) -> np.ndarray:
        """Node field ``sin(k pi t / tau) e_i(x)`` normalized in ``L^2``."""
        s = np.sin(np.pi * k * self.t_nodes / self.tau)
        field = s[:, None] * self.op.eigenvectors[:, i][None, :]
        return field / math.sqrt(np.sum(field**2 @ self.op.mass) * self.dt / self.tau)

    def node_eigenvalue(self, k: int, i: int) -> float:
        return float(self.theta_nodes[k - 1] + self.op.eigenvalues[i])


def dual_h1_norm(w: np.ndarray, tau: float, op: SpectralOperator) -> float:
    """Dual ``H^1`` norm of a node field ``w`` (interior time nodes x spatial nodes).

    Equals ``sqrt(<w, u>)`` with ``(I + grad^* grad) u = w`` under Dirichlet
    conditions in time; ``w`` has ``m - 1`` rows for ``m`` time cells.
    """
    w = np.asarray(w, dtype=float)
    dual = SpaceTimeDual(op, tau, w.shape[0] + 1)
    return math.sqrt(dual.node_dual_sq(w))
