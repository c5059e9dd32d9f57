"""Grid solver for the kinetic Fokker-Planck equation in one space and one velocity dimension.

Solves ``d_t h + psi'(v) d_x h - phi'(x) d_v h = -xi d_v^* d_v h`` in the
Gibbs-weighted space ``L^2(Theta)``, ``Theta = mu(dx) gamma(dv)``.

Transport is written as ``T = d_v^* d_x - d_x^* d_v`` with centered
differences and weighted adjoints, which makes it exactly skew-adjoint in
the discrete ``Theta`` inner product and annihilates constants, so mass is
conserved and transport does not change the norm.  Velocity diffusion uses
the staggered weighted Laplacian of :mod:`artifact.spectral1d` and is
stepped implicitly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded

from .errors import CFLViolation
from .spectral1d import SpaceTimeDual, SpectralOperator, build_operator

__all__ = [
    "PhaseGrid",
    "PhaseField",
    "DecaySeries",
    "Trajectory",
    "DecayReport",
    "build_grid",
    "step",
    "run",
    "fit_rate",
    "dissipation_budget",
    "check_decay_bound",
    "averaging_lemma_check",
    "modified_poincare_check",
    "random_trajectory",
    "write_series_csv",
    "SERIES_FIELDS",
]

CFL_SAFETY = 0.9
SERIES_FIELDS = ("t", "norm_sq", "grad_v_sq", "H_tau", "bound_value", "dissip_residual", "violated")


def _central_difference(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    """Centered first derivative; one-sided rows at the ends of a line grid."""
    rows, cols, vals = [], [], []
    for i in range(n):
        if periodic:
            rows += [i, i]
            cols += [(i + 1) % n, (i - 1) % n]
            vals += [0.5 / h, -0.5 / h]
        elif i == 0:
            rows += [0, 0]
            cols += [1, 0]
            vals += [1.0 / h, -1.0 / h]
        elif i == n - 1:
            rows += [i, i]
            cols += [i, i - 1]
            vals += [1.0 / h, -1.0 / h]
        else:
            rows += [i, i]
            cols += [i + 1, i - 1]
            vals += [0.5 / h, -0.5 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass
class PhaseGrid:
    """Tensor grid in ``(x, v)`` with Gibbs weights and discrete operators.

    Arrays on the grid have shape ``(n_x, n_v)``.
    """

    x_op: SpectralOperator
    v_op: SpectralOperator
    grad_phi: np.ndarray
    grad_psi: np.ndarray
    dx: sp.csr_matrix
    dv: sp.csr_matrix

    @property
    def x(self) -> np.ndarray:
        return self.x_op.x

    @property
    def v(self) -> np.ndarray:
        return self.v_op.x

    @property
    def mx(self) -> np.ndarray:
        return self.x_op.mass

    @property
    def mv(self) -> np.ndarray:
        return self.v_op.mass

    @property
    def shape(self):
        return (self.x.size, self.v.size)

    def cfl_limit(self) -> float:
        sx = np.max(np.abs(self.grad_psi))
        sv = np.max(np.abs(self.grad_phi))
        lim_x = self.x_op.h / sx if sx > 0 else math.inf
        lim_v = self.v_op.h / sv if sv > 0 else math.inf
        return CFL_SAFETY * min(lim_x, lim_v)

    def mass(self, h: np.ndarray) -> float:
        return float(self.mx @ h @ self.mv)

    def remove_mean(self, h: np.ndarray) -> np.ndarray:
        return h - self.mass(h)

    def norm_sq(self, h: np.ndarray) -> float:
        return float(self.mx @ (h**2) @ self.mv)

    def grad_v(self, h: np.ndarray) -> np.ndarray:
        """Staggered velocity derivative, shape ``(n_x, n_v - 1)``."""
        return h @ self.v_op.diff.T

    def grad_v_sq(self, h: np.ndarray) -> float:
        return float(self.mx @ (self.grad_v(h) ** 2) @ self.v_op.edge_mass)

    def velocity_average(self, h: np.ndarray) -> np.ndarray:
        return h @ self.mv

    def transport(self, h: np.ndarray) -> np.ndarray:
        """``psi' d_x h - phi' d_v h`` in the skew form ``d_v^* d_x h - d_x^* d_v h``."""
        mx = self.mx[:, None]
        mv = self.mv[None, :]
        dxh = self.dx @ h
        a = (self.dv.T @ (dxh * mv).T).T / mv
        dvh = (self.dv @ h.T).T
        b = (self.dx.T @ (mx * dvh)) / mx
        return a - b

    def diffusion(self, h: np.ndarray) -> np.ndarray:
        """``d_v^* d_v h`` (nonnegative operator)."""
        return (self.v_op.stiffness @ h.T).T / self.mv[None, :]


def build_grid(spec, n_x: int = 128, n_v: int = 128, radius_x: Optional[float] = None, radius_v: Optional[float] = None) -> PhaseGrid:
    """Grid for a one-dimensional :class:`~artifact.model.HamiltonianSpec`."""
    if spec.dim != 1:
        raise ValueError("the grid solver is one-dimensional in x and v")
    px = spec.potential.profile
    pv = spec.kinetic.profile_1d()
    x_op = build_operator(px, n_x, radius_x)
    v_op = build_operator(pv, n_v, radius_v)
    dx = _central_difference(n_x, x_op.h, x_op.torus)
    dv = _central_difference(n_v, v_op.h, v_op.torus)
    return PhaseGrid(x_op, v_op, px.derivative(x_op.x, 1), pv.derivative(v_op.x, 1), dx, dv)


@dataclass
class PhaseField:
    """Values of ``h`` on a :class:`PhaseGrid`."""

    values: np.ndarray
    grid: PhaseGrid

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite entries")

    @property
    def mass(self) -> float:
        return self.grid.mass(self.values)

    def centered(self) -> "PhaseField":
        return PhaseField(self.grid.remove_mean(self.values), self.grid)


class _Stepper:
    """Strang splitting: half transport (RK4), implicit diffusion, half transport."""

    def __init__(self, grid: PhaseGrid, dt: float, xi: float, theta: float = 0.5):
        if dt > grid.cfl_limit() * (1 + 1e-12):
            raise CFLViolation(f"dt={dt:.3e} exceeds the transport limit {grid.cfl_limit():.3e}")
        self.grid = grid
        self.dt = dt
        self.xi = xi
        k = grid.v_op.stiffness
        m = grid.mv
        n = m.size
        a = theta * dt * xi
        b = (1.0 - theta) * dt * xi
        ab = np.zeros((3, n))
        ab[0, 1:] = a * np.diag(k, 1)
        ab[1] = m + a * np.diag(k)
        ab[2, :-1] = a * np.diag(k, -1)
        self.banded = ab
        self.explicit = b
        self.k = k

    def _transport(self, h: np.ndarray, dt: float) -> np.ndarray:
        op = self.grid.transport
        k1 = -op(h)
        k2 = -op(h + 0.5 * dt * k1)
        k3 = -op(h + 0.5 * dt * k2)
        k4 = -op(h + dt * k3)
        return h + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def _diffuse(self, h: np.ndarray) -> np.ndarray:
        rhs = (h * self.grid.mv[None, :]).T
        if self.explicit:
            rhs = rhs - self.explicit * (self.k @ h.T)
        return solve_banded((1, 1), self.banded, rhs).T

    def __call__(self, h: np.ndarray) -> np.ndarray:
        h = self._transport(h, 0.5 * self.dt)
        h = self._diffuse(h)
        return self._transport(h, 0.5 * self.dt)


def step(fld: PhaseField, dt: float, xi: float) -> PhaseField:
    """Advance one Strang step.

    Raises
    ------
    CFLViolation
        If ``dt`` exceeds ``0.9 min(h_x / max|psi'|, h_v / max|phi'|)``.
    """
    return PhaseField(_Stepper(fld.grid, dt, xi)(fld.values), fld.grid)


@dataclass
class Trajectory:
    """Snapshots on the cell centers of one averaging window ``[t0, t0 + tau]``."""

    t0: float
    tau: float
    t: np.ndarray
    fields: np.ndarray
    grid: PhaseGrid
    transport_residual_sq: Optional[float] = None


@dataclass
class DecaySeries:
    """Norm history of one run.

    ``h_tau[n]`` is the trapezoidal integral of ``norm_sq`` over
    ``[t[n], t[n] + tau]`` and is defined for ``t[n] <= t_end - tau``.
    ``residual[n]`` is the dissipation residual of step ``n -> n + 1``.
    """

    t: np.ndarray
    norm_sq: np.ndarray
    grad_v_sq: np.ndarray
    mass: np.ndarray
    sup: np.ndarray
    h_tau: np.ndarray
    residual: np.ndarray
    xi: float
    tau: float
    dt: float
    h0_sup: float
    h0_norm_sq: float
    windows: Dict[float, Trajectory] = field(default_factory=dict)

    @property
    def t_tau(self) -> np.ndarray:
        return self.t[: self.h_tau.size]


def _evaluate_initial(grid: PhaseGrid, h0) -> np.ndarray:
    if callable(h0):
        xx, vv = np.meshgrid(grid.x, grid.v, indexing="ij")
        return np.asarray(h0(xx, vv), dtype=float) * np.ones(grid.shape)
    h0 = np.asarray(h0, dtype=float)
    if h0.shape != grid.shape:
        raise ValueError(f"initial field shape {h0.shape} does not match grid {grid.shape}")
    return h0.copy()


def run(
    spec,
    h0: Union[Callable, np.ndarray],
    xi: float,
    tau: float = 1.0,
    t_end: float = 20.0,
    n_x: int = 128,
    n_v: int = 128,
    grid: Optional[PhaseGrid] = None,
    windows: Sequence[float] = (),
    window_cells: int = 32,
    theta: float = 0.5,
    dt_max: Optional[float] = None,
) -> DecaySeries:
    """Evolve the mean-removed initial datum and record the norm history.

    The time step is the largest value below the transport limit that
    divides ``tau / (2 window_cells)``, so window cell centers fall on steps.

    Parameters
    ----------
    windows : sequence of float
        Start times of averaging windows whose snapshots are stored.
    theta : float
        Implicitness of the diffusion step (0.5 Crank-Nicolson, 1 backward Euler).
    dt_max : float, optional
        Accuracy cap on the time step, applied on top of the transport limit.
    """
    if xi <= 0 or tau <= 0 or t_end <= tau:
        raise ValueError("need xi > 0, tau > 0 and t_end > tau")
    grid = build_grid(spec, n_x, n_v) if grid is None else grid
    h = grid.remove_mean(_evaluate_initial(grid, h0))
    half_cell = tau / (2 * window_cells)
    limit = grid.cfl_limit() if dt_max is None else min(grid.cfl_limit(), dt_max)
    sub = max(1, math.ceil(half_cell / limit))
    dt = half_cell / sub
    stepper = _Stepper(grid, dt, xi, theta)
    steps = int(round(t_end / dt))
    per_tau = int(round(tau / dt))
    want = {}
    for t0 in windows:
        start = int(round(t0 / dt))
        for j in range(window_cells):
            want.setdefault(start + (2 * j + 1) * sub, []).append((t0, j))
    snaps = {t0: np.empty((window_cells,) + grid.shape) for t0 in windows}
    norm = np.empty(steps + 1)
    grad = np.empty(steps + 1)
    mass = np.empty(steps + 1)
    sup = np.empty(steps + 1)
    for n in range(steps + 1):
        if n:
            h = stepper(h)
        norm[n] = grid.norm_sq(h)
        grad[n] = grid.grad_v_sq(h)
        mass[n] = grid.mass(h)
        sup[n] = np.max(np.abs(h))
        for t0, j in want.get(n, ()):
            snaps[t0][j] = h
    t = dt * np.arange(steps + 1)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (norm[1:] + norm[:-1]))])
    h_tau = cum[per_tau:] - cum[: cum.size - per_tau]
    residual = (norm[1:] - norm[:-1]) / dt + xi * (grad[1:] + grad[:-1])
    trajectories = {
        t0: Trajectory(t0, tau, t0 + (np.arange(window_cells) + 0.5) * tau / window_cells, snaps[t0], grid)
        for t0 in windows
    }
    return DecaySeries(t, norm, grad, mass, sup, h_tau, residual, xi, tau, dt, sup[0], norm[0], trajectories)


def fit_rate(series: DecaySeries, t_min: float = 0.0, t_max: Optional[float] = None) -> float:
    """Least-squares decay rate of ``H_tau`` (slope of ``-log H_tau``)."""
    t = series.t_tau
    y = series.h_tau
    keep = (t >= t_min) & (y > 0)
    if t_max is not None:
        keep &= t <= t_max
    if keep.sum() < 2:
        raise ValueError("not enough positive samples to fit a rate")
    slope = np.polyfit(t[keep], np.log(y[keep]), 1)[0]
    return float(-slope)


def dissipation_budget(series: DecaySeries, window: float = 1.0) -> float:
    """Largest integral of ``|residual|`` over a time window of length ``window``.

    This is the energy-balance error accumulated per unit time; the
    pointwise residual rate can be much larger on the first step, when
    stiff tail modes decay within a single step.
    """
    acc = np.concatenate([[0.0], np.cumsum(np.abs(series.residual) * series.dt)])
    k = max(1, min(int(round(window / series.dt)), acc.size - 1))
    return float(np.max(acc[k:] - acc[:-k]))


@dataclass
class DecayReport:
    """Outcome of a bound check; ratios are value / bound."""

    max_ratio: float
    ok: bool
    slack: float
    pointwise_max_ratio: Optional[float] = None
    pointwise_ok: Optional[bool] = None
    bound_values: Optional[np.ndarray] = None

    @property
    def passed(self) -> bool:
        return self.ok and (self.pointwise_ok is None or self.pointwise_ok)


def check_decay_bound(
    series: DecaySeries,
    bound: Callable[[np.ndarray], np.ndarray],
    slack: float = 0.05,
    pointwise: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    pointwise_from: float = 0.0,
) -> DecayReport:
    """Compare ``H_tau`` with ``bound`` and optionally ``||h(t)||^2`` with ``pointwise``.

    ``pointwise`` is checked on ``t >= pointwise_from`` (``tau`` for the
    shifted algebraic variant).
    """
    t = series.t_tau
    b = np.asarray(bound(t), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(b > 0, series.h_tau / b, np.where(series.h_tau > 0, np.inf, 0.0))
    max_ratio = float(np.max(ratio)) if ratio.size else 0.0
    report = DecayReport(max_ratio, max_ratio <= 1.0 + slack, slack, bound_values=b)
    if pointwise is not None:
        keep = series.t >= pointwise_from
        pb = np.asarray(pointwise(series.t[keep]), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            pr = np.where(pb > 0, series.norm_sq[keep] / pb, np.where(series.norm_sq[keep] > 0, np.inf, 0.0))
        report.pointwise_max_ratio = float(np.max(pr)) if pr.size else 0.0
        report.pointwise_ok = report.pointwise_max_ratio <= 1.0 + slack
    return report


def _window_averages(traj: Trajectory):
    grid = traj.grid
    avg = np.array([grid.velocity_average(f) for f in traj.fields])
    micro = np.mean([grid.norm_sq(f - a[:, None]) for f, a in zip(traj.fields, avg)])
    norm = np.mean([grid.norm_sq(f) for f in traj.fields])
    grad = np.mean([grid.grad_v_sq(f) for f in traj.fields])
    return avg, float(micro), float(norm), float(grad)


def averaging_lemma_check(traj: Trajectory, xi: float, k_avg: float):
    """Dual norm of ``grad_(t,x)`` of the velocity average against ``K_avg`` times the right side.

    The transport residual in ``L^2(mu; H^-1(gamma))`` is
    ``traj.transport_residual_sq`` when available (constructed fields) and
    otherwise bounded by ``xi^2 ||grad_v h||^2`` (solutions).

    Returns
    -------
    (lhs, rhs, ok)
    """
    avg, micro, _, grad = _window_averages(traj)
    dual = SpaceTimeDual(traj.grid.x_op, traj.tau, len(traj.t))
    lhs = dual.gradient_dual_sq(avg)
    res = traj.transport_residual_sq if traj.transport_residual_sq is not None else xi**2 * grad
    rhs = k_avg * (micro + res)
    return lhs, rhs, bool(lhs <= rhs)


def modified_poincare_check(traj: Trajectory, lambda_p: float, xi: float):
    """``lambda_P ||h||^2`` against the transport residual plus ``||(Id - Pi) h||^2`` over a window.

    Returns
    -------
    (lhs, rhs, ok)
    """
    _, micro, norm, grad = _window_averages(traj)
    res = traj.transport_residual_sq if traj.transport_residual_sq is not None else xi**2 * grad
    lhs = lambda_p * norm
    rhs = res + micro
    return lhs, rhs, bool(lhs <= rhs)


def random_trajectory(
    grid: PhaseGrid,
    tau: float,
    rng: np.random.Generator,
    cells: int = 32,
    modes: int = 4,
) -> Trajectory:
    """Random smooth mean-zero field ``sum a cos(l pi t / tau) e_k(x) g_j(v)`` on one window.

    The transport residual ``||(d_t + T) h||^2`` in ``L^2(mu; H^-1(gamma))``
    is evaluated directly in the velocity eigenbasis with the
    ``||z||^2 + ||d_v z||^2`` convention.
    """
    ex = grid.x_op.eigenvectors[:, :modes]
    gv = grid.v_op.eigenvectors[:, :modes]
    lam_v = np.maximum(grid.v_op.eigenvalues, 0.0)
    coef = rng.standard_normal((modes, modes, modes))
    coef /= (1.0 + np.arange(modes))[:, None, None] * (1.0 + np.arange(modes))[None, :, None] * (1.0 + np.arange(modes))[None, None, :]
    coef[0, 0, 0] = 0.0
    s = (np.arange(cells) + 0.5) / cells
    w = np.pi * np.arange(modes)
    ct = np.cos(np.outer(s, w))
    dct_ = -np.sin(np.outer(s, w)) * w / tau
    fields = np.einsum("tl,lkj,xk,vj->txv", ct, coef, ex, gv)
    dfields = np.einsum("tl,lkj,xk,vj->txv", dct_, coef, ex, gv)
    res = 0.0
    for f, df in zip(fields, dfields):
        r = df + grid.transport(f)
        c = (r * grid.mv[None, :]) @ grid.v_op.eigenvectors  # (n_x, n_v) coefficients
        res += float(grid.mx @ (c**2 / (1.0 + lam_v[None, :])).sum(axis=1))
    res /= cells
    return Trajectory(0.0, tau, s * tau, fields, grid, res)


def write_series_csv(path, series: DecaySeries, bound: Optional[Callable] = None, slack: float = 0.05, every: int = 1):
    """Write the series as CSV with the columns in :data:`SERIES_FIELDS`."""
    n_tau = series.h_tau.size
    b = np.asarray(bound(series.t_tau), dtype=float) if bound is not None else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_FIELDS)
        for n in range(0, series.t.size, every):
            ht = series.h_tau[n] if n < n_tau else ""
            bv = b[n] if (b is not None and n < n_tau) else ""
            res = series.residual[n] if n < series.residual.size else ""
            viol = int(bv != "" and ht > bv * (1 + slack))
            w.writerow([_fmt(series.t[n]), _fmt(series.norm_sq[n]), _fmt(series.grad_v_sq[n]), _fmt(ht), _fmt(bv), _fmt(res), viol])


def _fmt(x) -> str:
    return "" if x == "" else repr(float(x))
