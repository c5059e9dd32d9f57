"""Hamiltonians, Gibbs measures, moments and structural checks.

The potential energy is always separable, ``phi(x) = sum_i p(x_i)``, on either
a torus of given period or the real line.  The kinetic energy is separable
(``psi(v) = sum_i q(v_i)``), radial (``psi(v) = F(|v|^2)``), or supplied as
callables for desk-scale dimensions (d <= 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gammaln

from .errors import Degenerate, DivergentMoment, InvalidSpec, NonIntegrable
from .quadrature import (
    QuadratureDiverged,
    integrate_interval,
    integrate_line,
    tensor_rule,
)

__all__ = [
    "Profile",
    "QuadraticProfile",
    "CosineProfile",
    "DoubleWellProfile",
    "SubexpProfile",
    "LogProfile",
    "TabulatedProfile",
    "Potential",
    "Kinetic",
    "HamiltonianSpec",
    "MomentTable",
    "MatrixM",
    "HessianReport",
    "quadratic_potential",
    "cosine_potential",
    "double_well_potential",
    "tabulated_potential",
    "quadratic_kinetic",
    "subexp_kinetic",
    "heavytail_kinetic",
    "tensorised_kinetic",
    "tabulated_kinetic",
    "custom_kinetic",
    "load_tabulated",
    "normalize_gibbs",
    "moments",
    "matrix_m",
    "hessian_rank_check",
    "fit_potential_constants",
    "with_potential_constants",
    "velocity_expectation",
    "position_expectation",
]

DEGENERACY_TOL = 1e-10


# ---------------------------------------------------------------------------
# one-dimensional profiles


class Profile:
    """Scalar function of one variable with derivatives up to order four.

    Subclasses implement :meth:`derivative`.  ``period`` is set for functions
    living on a torus and ``support`` restricts tabulated profiles to the
    range of their table.
    """

    name = "profile"
    period: Optional[float] = None
    support: Optional[Tuple[float, float]] = None
    core: float = 8.0  # half-width of the quadrature core on the line

    def derivative(self, s, k: int = 0) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, s) -> np.ndarray:
        return self.derivative(s, 0)

    def describe(self) -> str:
        return self.name


class QuadraticProfile(Profile):
    """``stiffness * s**2 / 2``."""

    name = "quadratic"

    def __init__(self, stiffness: float = 1.0):
        if stiffness <= 0:
            raise InvalidSpec("quadratic stiffness must be positive")
        self.stiffness = float(stiffness)
        self.core = 10.0 / math.sqrt(self.stiffness)

    def derivative(self, s, k=0):
        s = np.asarray(s, dtype=float)
        a = self.stiffness
        if k == 0:
            return 0.5 * a * s**2
        if k == 1:
            return a * s
        if k == 2:
            return np.full_like(s, a)
        return np.zeros_like(s)

    def describe(self):
        return f"quadratic(stiffness={self.stiffness:g})"


class CosineProfile(Profile):
    """``amplitude * cos(2 pi s / period)`` on the torus of length ``period``."""

    name = "cosine"

    def __init__(self, amplitude: float = 1.0, period: float = 1.0):
        if period <= 0:
            raise InvalidSpec("torus period must be positive")
        self.amplitude = float(amplitude)
        self.period = float(period)

    def derivative(self, s, k=0):
        s = np.asarray(s, dtype=float)
        w = 2.0 * np.pi / self.period
        a = self.amplitude * w**k
        # d^k/ds^k cos(ws) = w^k cos(ws + k pi/2)
        return a * np.cos(w * s + 0.5 * np.pi * k)

    def describe(self):
        return f"cosine(amplitude={self.amplitude:g}, period={self.period:g})"


class DoubleWellProfile(Profile):
    """``depth * (s**2 - 1)**2``."""

    name = "double-well"

    def __init__(self, depth: float = 1.0):
        if depth <= 0:
            raise InvalidSpec("double-well depth must be positive")
        self.depth = float(depth)
        self.core = 4.0

    def derivative(self, s, k=0):
        s = np.asarray(s, dtype=float)
        a = self.depth
        if k == 0:
            return a * (s**2 - 1.0) ** 2
        if k == 1:
            return 4.0 * a * s * (s**2 - 1.0)
        if k == 2:
            return 4.0 * a * (3.0 * s**2 - 1.0)
        if k == 3:
            return 24.0 * a * s
        if k == 4:
            return np.full_like(s, 24.0 * a)
        return np.zeros_like(s)

    def describe(self):
        return f"double-well(depth={self.depth:g})"


class SubexpProfile(Profile):
    """``(1 + s**2)**(alpha/2)``, sub-linear growth for alpha in (0, 1)."""

    name = "subexp"

    def __init__(self, alpha: float):
        self.alpha = float(alpha)
        self.core = 16.0

    def derivative(self, s, k=0):
        s = np.asarray(s, dtype=float)
        a = 0.5 * self.alpha
        u = 1.0 + s**2
        if k == 0:
            return u**a
        if k == 1:
            return 2 * a * s * u ** (a - 1)
        if k == 2:
            return 2 * a * u ** (a - 1) + 4 * a * (a - 1) * s**2 * u ** (a - 2)
        if k == 3:
            return 12 * a * (a - 1) * s * u ** (a - 2) + 8 * a * (a - 1) * (a - 2) * s**3 * u ** (a - 3)
        if k == 4:
            return (
                12 * a * (a - 1) * u ** (a - 2)
                + 48 * a * (a - 1) * (a - 2) * s**2 * u ** (a - 3)
                + 16 * a * (a - 1) * (a - 2) * (a - 3) * s**4 * u ** (a - 4)
            )
        raise ValueError("derivatives above order four are not provided")

    def describe(self):
        return f"subexp(alpha={self.alpha:g})"


class LogProfile(Profile):
    """``(beta/2) * log(1 + s**2)``, giving a heavy-tailed Gibbs density."""

    name = "heavytail"

    def __init__(self, beta: float):
        self.beta = float(beta)
        self.core = 8.0

    def derivative(self, s, k=0):
        s = np.asarray(s, dtype=float)
        b = self.beta
        u = 1.0 + s**2
        if k == 0:
            return 0.5 * b * np.log1p(s**2)
        if k == 1:
            return b * s / u
        if k == 2:
            return b * (1.0 - s**2) / u**2
        if k == 3:
            return 2.0 * b * s * (s**2 - 3.0) / u**3
        if k == 4:
            return -6.0 * b * (s**4 - 6.0 * s**2 + 1.0) / u**4
        raise ValueError("derivatives above order four are not provided")

    def describe(self):
        return f"heavytail(beta={self.beta:g})"


class TabulatedProfile(Profile):
    """Cubic-spline interpolant of uniformly spaced samples.

    On a torus the spline is periodic with period ``x[-1] - x[0]`` and the
    last sample must repeat the first.  On the line the profile is supported
    on ``[x[0], x[-1]]`` only; quadrature never leaves that interval.
    """

    name = "tabulated"

    def __init__(self, x: Sequence[float], values: Sequence[float], periodic: bool = False):
        x = np.asarray(x, dtype=float)
        values = np.asarray(values, dtype=float)
        if x.ndim != 1 or x.shape != values.shape or x.size < 4:
            raise InvalidSpec("tabulated profile needs at least 4 matching samples")
        steps = np.diff(x)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-8 * max(abs(steps[0]), 1.0):
            raise InvalidSpec("tabulated abscissae must be uniformly spaced and increasing")
        if periodic:
            if abs(values[-1] - values[0]) > 1e-12 * max(1.0, np.max(np.abs(values))):
                raise InvalidSpec("periodic table must repeat its first value at the end")
            values = values.copy()
            values[-1] = values[0]
            self.period = float(x[-1] - x[0])
            self._spline = CubicSpline(x, values, bc_type="periodic")
        else:
            self.support = (float(x[0]), float(x[-1]))
            self._spline = CubicSpline(x, values, bc_type="natural")
        self._origin = float(x[0])
        self.x = x
        self.values = values

    def derivative(self, s, k=0):
        s = np.asarray(s, dtype=float)
        if self.period is not None:
            s = self._origin + np.mod(s - self._origin, self.period)
        if k > 3:
            return np.zeros_like(s)
        return self._spline(s, k)

    def describe(self):
        kind = "periodic" if self.period is not None else "line"
        return f"tabulated({kind}, n={self.x.size})"


class RadialProfile:
    """``F(r2)`` with ``psi(v) = F(|v|^2)``; derivatives in ``r2`` up to order 2."""

    def __init__(self, name: str, func: Callable[[np.ndarray, int], np.ndarray], core: float):
        self.name = name
        self._func = func
        self.core = core

    def derivative(self, r2, k=0):
        return self._func(np.asarray(r2, dtype=float), k)


def _subexp_radial(alpha):
    a = 0.5 * alpha

    def f(r2, k):
        u = 1.0 + r2
        return [u**a, a * u ** (a - 1), a * (a - 1) * u ** (a - 2)][k]

    return f


def _log_radial(beta):
    def f(r2, k):
        u = 1.0 + r2
        return [0.5 * beta * np.log1p(r2), 0.5 * beta / u, -0.5 * beta / u**2][k]

    return f


# ---------------------------------------------------------------------------
# energies


@dataclass(frozen=True)
class Potential:
    """Separable potential ``phi(x) = sum_i p(x_i)``.

    Attributes
    ----------
    family : str
        One of ``quadratic``, ``cosine``, ``double-well``, ``tabulated``.
    profile : Profile
        The one-dimensional factor ``p``.
    """

    family: str
    profile: Profile

    @property
    def period(self) -> Optional[float]:
        return self.profile.period

    @property
    def on_torus(self) -> bool:
        return self.profile.period is not None

    def value(self, x: np.ndarray) -> np.ndarray:
        return np.sum(self.profile.derivative(x, 0), axis=-1)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.profile.derivative(x, 1)

    def hessian_diag(self, x: np.ndarray) -> np.ndarray:
        return self.profile.derivative(x, 2)

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        return np.sum(self.profile.derivative(x, 2), axis=-1)


@dataclass(frozen=True)
class Kinetic:
    """Kinetic energy ``psi``.

    Exactly one of ``profile`` (separable), ``radial`` or ``callables`` is set.
    ``callables`` holds ``(value, grad, hessian)`` acting on arrays of shape
    ``(n, d)`` and is restricted to ``d <= 3`` with the box ``[-radius, radius]^d``.
    """

    family: str
    profile: Optional[Profile] = None
    radial: Optional[RadialProfile] = None
    callables: Optional[Tuple[Callable, Callable, Callable]] = None
    params: Dict[str, float] = field(default_factory=dict)
    radius: float = 10.0

    @property
    def separable(self) -> bool:
        return self.profile is not None

    def profile_1d(self) -> Profile:
        """One-dimensional factor used for d = 1 solvers and tensorisation."""
        if self.profile is not None:
            return self.profile
        if self.family == "subexp":
            return SubexpProfile(self.params["alpha"])
        if self.family == "heavytail":
            return LogProfile(self.params["beta"])
        raise InvalidSpec(f"kinetic family {self.family!r} has no one-dimensional profile")

    def value(self, v: np.ndarray) -> np.ndarray:
        v = np.atleast_2d(v)
        if self.profile is not None:
            return np.sum(self.profile.derivative(v, 0), axis=-1)
        if self.radial is not None:
            return self.radial.derivative(np.sum(v**2, axis=-1), 0)
        return self.callables[0](v)

    def grad(self, v: np.ndarray) -> np.ndarray:
        v = np.atleast_2d(v)
        if self.profile is not None:
            return self.profile.derivative(v, 1)
        if self.radial is not None:
            r2 = np.sum(v**2, axis=-1)
            return 2.0 * self.radial.derivative(r2, 1)[:, None] * v
        return self.callables[1](v)

    def hessian(self, v: np.ndarray) -> np.ndarray:
        """Hessians, shape ``(n, d, d)``."""
        v = np.atleast_2d(v)
        n, d = v.shape
        if self.profile is not None:
            out = np.zeros((n, d, d))
            idx = np.arange(d)
            out[:, idx, idx] = self.profile.derivative(v, 2)
            return out
        if self.radial is not None:
            r2 = np.sum(v**2, axis=-1)
            f1 = self.radial.derivative(r2, 1)
            f2 = self.radial.derivative(r2, 2)
            return 2.0 * f1[:, None, None] * np.eye(d) + 4.0 * f2[:, None, None] * (
                v[:, :, None] * v[:, None, :]
            )
        return self.callables[2](v)

    def describe(self) -> str:
        if self.profile is not None and self.family in ("tensorised", "tabulated"):
            return f"{self.family}[{self.profile.describe()}]"
        if self.params:
            inner = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
            return f"{self.family}({inner})"
        return self.family


def quadratic_potential(stiffness: float = 1.0) -> Potential:
    return Potential("quadratic", QuadraticProfile(stiffness))


def cosine_potential(amplitude: float = 1.0, period: float = 1.0) -> Potential:
    return Potential("cosine", CosineProfile(amplitude, period))


def double_well_potential(depth: float = 1.0) -> Potential:
    return Potential("double-well", DoubleWellProfile(depth))


def tabulated_potential(x, values, periodic: bool = False) -> Potential:
    return Potential("tabulated", TabulatedProfile(x, values, periodic=periodic))


def quadratic_kinetic() -> Kinetic:
    return Kinetic("quadratic", profile=QuadraticProfile(1.0))


def subexp_kinetic(alpha: float) -> Kinetic:
    return Kinetic(
        "subexp",
        radial=RadialProfile("subexp", _subexp_radial(alpha), core=16.0),
        params={"alpha": float(alpha)},
    )


def heavytail_kinetic(beta: float) -> Kinetic:
    return Kinetic(
        "heavytail",
        radial=RadialProfile("heavytail", _log_radial(beta), core=8.0),
        params={"beta": float(beta)},
    )


def tensorised_kinetic(profile: Profile) -> Kinetic:
    if profile.period is not None or profile.support is not None:
        raise InvalidSpec("tensorised kinetic energies live on the whole line")
    return Kinetic("tensorised", profile=profile)


def tabulated_kinetic(x, values) -> Kinetic:
    return Kinetic("tabulated", profile=TabulatedProfile(x, values, periodic=False))


def custom_kinetic(value: Callable, grad: Callable, hessian: Callable, radius: float = 10.0) -> Kinetic:
    """Kinetic energy given by callables on arrays of shape (n, d); d <= 3 only."""
    return Kinetic("custom", callables=(value, grad, hessian), radius=float(radius))


def load_tabulated(path) -> Tuple[np.ndarray, np.ndarray]:
    """Read a two-column (abscissa, value) text table with uniform spacing."""
    data = np.loadtxt(path, dtype=float, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise InvalidSpec(f"{path}: expected two columns, found {data.shape[1]}")
    x, y = data[:, 0], data[:, 1]
    steps = np.diff(x)
    if x.size < 4 or np.any(steps <= 0) or np.ptp(steps) > 1e-8 * max(abs(steps[0]), 1.0):
        raise InvalidSpec(f"{path}: abscissae must be increasing and uniformly spaced")
    return x, y


# ---------------------------------------------------------------------------
# specification


@dataclass(frozen=True)
class HamiltonianSpec:
    """Separable Hamiltonian ``phi(x) + psi(v)`` in dimension ``dim``.

    Attributes
    ----------
    potential_poincare : float, optional
        Poincare constant of the position marginal (``c_phi``).
    hessian_bound : float, optional
        Constant bounding ``|D^2 phi|^2`` by ``hessian_bound**2 (d + |grad phi|^2)``.
    laplacian_bound : float, optional
        Constant bounding ``Lap phi`` by ``laplacian_bound (d + |grad phi|^2)``.
    phi_shift, psi_shift : float
        Additive constants (log partition functions) set by :func:`normalize_gibbs`.
    strict : bool
        Enforce the family ranges (subexp alpha in (0, 1), heavytail
        beta > d + 4).  Disable only to explore failure modes.
    constant_sources : dict
        Provenance of each regularity constant: ``declared`` or ``empirical``.
    """

    potential: Potential
    kinetic: Kinetic
    dim: int = 1
    potential_poincare: Optional[float] = None
    hessian_bound: Optional[float] = None
    laplacian_bound: Optional[float] = None
    quad_tol: float = 1e-8
    phi_shift: float = 0.0
    psi_shift: float = 0.0
    strict: bool = True
    constant_sources: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidSpec("dimension must be a positive integer")
        if self.quad_tol <= 0:
            raise InvalidSpec("quad_tol must be positive")
        for name in ("potential_poincare", "hessian_bound", "laplacian_bound"):
            value = getattr(self, name)
            if value is not None and (not np.isfinite(value) or value < 0):
                raise InvalidSpec(f"{name} must be a nonnegative finite number")
        kin = self.kinetic
        if kin.callables is not None and self.dim > 3:
            raise InvalidSpec("non-separable kinetic energies are supported for d <= 3 only")
        if kin.family == "tabulated" and self.dim != 1:
            raise InvalidSpec("tabulated kinetic energy is one-dimensional")
        if self.potential.family == "tabulated" and self.dim != 1:
            raise InvalidSpec("tabulated potential is one-dimensional")
        if not self.strict:
            return
        if kin.family == "subexp":
            alpha = kin.params["alpha"]
            if not 0.0 < alpha < 1.0:
                raise InvalidSpec(f"subexp requires alpha in (0, 1), got {alpha:g}")
        if kin.family == "heavytail":
            beta = kin.params["beta"]
            if beta <= self.dim + 4:
                raise InvalidSpec(
                    f"heavytail requires beta > d + 4 = {self.dim + 4}, got {beta:g}"
                )

    def phi(self, x):
        return self.potential.value(np.atleast_2d(x)) + self.phi_shift

    def psi(self, v):
        return self.kinetic.value(np.atleast_2d(v)) + self.psi_shift


# ---------------------------------------------------------------------------
# integration over the marginals


def _quad_tol(spec) -> float:
    # panel refinement stops two orders below the user tolerance
    return 1e-2 * spec.quad_tol


def _profile_integral(profile: Profile, g: Callable, tol: float, weight_shift: float = 0.0):
    """Integrate ``g(s) exp(-(p(s) - shift))`` over the natural domain of ``profile``."""

    def integrand(s):
        return g(s) * np.exp(weight_shift - profile.derivative(s, 0))

    if profile.period is not None:
        val, err = integrate_interval(integrand, 0.0, profile.period, tol=tol)
        return float(val), float(err)
    if profile.support is not None:
        a, b = profile.support
        val, err = integrate_interval(integrand, a, b, tol=tol, panels=max(4, len(getattr(profile, "x", [])) // 4))
        return float(val), float(err)
    val, err, _ = integrate_line(integrand, tol=tol, core=profile.core)
    return val, err


def _profile_shift(profile: Profile) -> float:
    """Minimum of the profile on a coarse grid; keeps exponentials in range."""
    if profile.period is not None:
        s = np.linspace(0.0, profile.period, 257)
    elif profile.support is not None:
        s = np.linspace(*profile.support, 257)
    else:
        s = np.linspace(-profile.core, profile.core, 257)
    return float(np.min(profile.derivative(s, 0)))


def profile_log_partition(profile: Profile, tol: float = 1e-12) -> float:
    """``log int exp(-p)`` over the natural domain of ``profile``."""
    shift = _profile_shift(profile)
    try:
        z, _ = _profile_integral(profile, lambda s: np.ones_like(s), tol, weight_shift=shift)
    except QuadratureDiverged as exc:
        raise NonIntegrable(f"exp(-{profile.describe()}) is not integrable: {exc}") from exc
    if not np.isfinite(z) or z <= 0:
        raise NonIntegrable(f"exp(-{profile.describe()}) has invalid mass {z}")
    return math.log(z) - shift


def profile_expectation(profile: Profile, g: Callable, tol: float = 1e-12):
    """Expectation of ``g`` under the normalized density ``exp(-p)/Z``.

    Returns ``(value, error_estimate)``.
    """
    log_z = profile_log_partition(profile, tol)
    shift = _profile_shift(profile)
    val, err = _profile_integral(profile, g, tol, weight_shift=shift)
    scale = math.exp(shift - log_z)
    return val * scale, err * scale


def _radial_log_norm(radial: RadialProfile, d: int, tol: float) -> float:
    def integrand(r):
        return r ** (d - 1) * np.exp(-radial.derivative(r**2, 0))

    mass, _, _ = integrate_line(integrand, tol=tol, core=radial.core, half=True)
    log_sphere = math.log(2.0) + 0.5 * d * math.log(math.pi) - gammaln(0.5 * d)
    return log_sphere + math.log(mass)


def _radial_expectation(radial: RadialProfile, d: int, g: Callable, tol: float):
    """Expectation of ``g(r)`` for ``r = |v|`` under ``exp(-F(|v|^2))``."""

    def weight(r):
        return r ** (d - 1) * np.exp(-radial.derivative(r**2, 0))

    mass, _, _ = integrate_line(weight, tol=tol, core=radial.core, half=True)
    val, err, _ = integrate_line(lambda r: g(r) * weight(r), tol=tol, core=radial.core, half=True)
    return val / mass, err / mass


def _custom_rule(kinetic: Kinetic, d: int, tol: float):
    """Tensor rule on the truncation box with normalized Gibbs weights."""
    panels = 8
    previous = None
    while True:
        nodes, weights = tensor_rule(-kinetic.radius, kinetic.radius, panels, d, order=8)
        psi = kinetic.value(nodes)
        dens = np.exp(-(psi - np.min(psi)))
        mass = weights @ dens
        if previous is not None and abs(mass - previous) <= tol * abs(mass):
            break
        if panels >= 64 // max(1, d - 1):
            break
        previous = mass
        panels *= 2
    return nodes, weights * dens / mass


def velocity_expectation(spec: HamiltonianSpec, integrand: Callable) -> float:
    """Expectation under the kinetic Gibbs measure by tensor quadrature (d <= 3).

    ``integrand(v, grad, hess)`` receives nodes of shape (n, d), gradients
    (n, d) and Hessians (n, d, d) and returns values of shape (n,) or (..., n).
    """
    d = spec.dim
    if d > 3:
        raise InvalidSpec("tensor quadrature over velocities is limited to d <= 3")
    kin = spec.kinetic
    if kin.callables is not None:
        nodes, w = _custom_rule(kin, d, _quad_tol(spec))
    else:
        profile = kin.profile_1d() if d == 1 or kin.separable else None
        if profile is None:
            box = Kinetic(kin.family, callables=(kin.value, kin.grad, kin.hessian), radius=_radial_box(kin))
            nodes, w = _custom_rule(box, d, _quad_tol(spec))
        else:
            nodes, w = _separable_rule(profile, d, _quad_tol(spec))
    values = integrand(nodes, kin.grad(nodes), kin.hessian(nodes))
    return np.asarray(values) @ w


def _radial_box(kin: Kinetic) -> float:
    if kin.family == "heavytail":
        return 60.0
    return 40.0


def _separable_rule(profile: Profile, d: int, tol: float):
    """Product rule for a separable density, truncated where tail mass < 1e-14."""
    log_z = profile_log_partition(profile, tol)
    r = profile.core
    while True:
        tail = np.exp(-profile.derivative(np.array([r, -r]), 0) - log_z)
        if np.all(tail * r < 1e-14) or r > 1e4:
            break
        r *= 1.5
    from .quadrature import composite_rule

    x, w = composite_rule(-r, r, 16 if d < 3 else 8, order=16)
    w1 = w * np.exp(-profile.derivative(x, 0) - log_z)
    grids = np.meshgrid(*([x] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([w1] * d), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes, weights


def position_expectation(spec: HamiltonianSpec, g: Callable, tol: Optional[float] = None):
    """Expectation of ``g(x)`` under one coordinate of the position marginal."""
    return profile_expectation(spec.potential.profile, g, tol or _quad_tol(spec))


# ---------------------------------------------------------------------------
# operations


def normalize_gibbs(spec: HamiltonianSpec) -> HamiltonianSpec:
    """Return ``spec`` with shifts making both Gibbs densities probability densities.

    Raises
    ------
    NonIntegrable
        If either density has infinite mass on its domain.
    """
    tol = _quad_tol(spec)
    d = spec.dim
    phi_shift = d * profile_log_partition(spec.potential.profile, tol)
    kin = spec.kinetic
    if kin.family == "heavytail" and kin.params["beta"] <= d:
        raise NonIntegrable(
            f"(1+|v|^2)^(-beta/2) is not integrable in dimension {d} for beta={kin.params['beta']:g}"
        )
    if kin.profile is not None:
        psi_shift = d * profile_log_partition(kin.profile, tol)
    elif kin.radial is not None:
        try:
            psi_shift = _radial_log_norm(kin.radial, d, tol)
        except QuadratureDiverged as exc:
            raise NonIntegrable(f"exp(-psi) is not integrable: {exc}") from exc
    else:
        nodes, weights = tensor_rule(-kin.radius, kin.radius, 32, d, order=8)
        psi = kin.value(nodes)
        m = np.min(psi)
        psi_shift = math.log(weights @ np.exp(-(psi - m))) - m
    return replace(spec, phi_shift=phi_shift, psi_shift=psi_shift)


@dataclass(frozen=True)
class MomentTable:
    """Named scalar moments with quadrature-error estimates.

    Keys (when applicable)
    ----------------------
    grad_psi_sq        ``int |grad psi|^2 dgamma``
    grad_psi_fourth    ``int |grad psi|^4 dgamma``
    hess_psi_sq        ``int |D^2 psi|_F^2 dgamma``
    grad_phi_norm      ``||grad phi||`` in L2 of the position marginal
    mean_grad_psi      ``max_i |int d_i psi dgamma|``
    qp_l2, qpp_l2      L2 norms of ``q'`` and ``q''`` for the 1-D factor
    qp_h1              ``sqrt(qp_l2**2 + qpp_l2**2)``
    Q_l2               L2 norm of ``Q = q'**2 - q''``
    q4_mean            ``int q'''' exp(-q)``
    Q_qpp_mean         ``int Q q'' exp(-q)``
    """

    values: Dict[str, float]
    errors: Dict[str, float]
    tail_radii: Tuple[float, ...] = ()
    tail_values: Tuple[float, ...] = ()

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def __contains__(self, key: str) -> bool:
        return key in self.values


def _profile_moments(profile: Profile, tol: float, values: dict, errors: dict):
    def add(name, g):
        v, e = profile_expectation(profile, g, tol)
        values[name] = v
        errors[name] = abs(e)
        return v

    d1 = lambda s: profile.derivative(s, 1)
    d2 = lambda s: profile.derivative(s, 2)
    qp2 = add("qp_sq", lambda s: d1(s) ** 2)
    qpp2 = add("qpp_sq", lambda s: d2(s) ** 2)
    qq2 = add("Q_sq", lambda s: (d1(s) ** 2 - d2(s)) ** 2)
    add("qp_fourth", lambda s: d1(s) ** 4)
    add("q4_mean", lambda s: profile.derivative(s, 4))
    add("Q_qpp_mean", lambda s: (d1(s) ** 2 - d2(s)) * d2(s))
    add("Q_mean", lambda s: d1(s) ** 2 - d2(s))
    values["qp_l2"] = math.sqrt(qp2)
    values["qpp_l2"] = math.sqrt(qpp2)
    values["Q_l2"] = math.sqrt(qq2)
    values["qp_h1"] = math.sqrt(qp2 + qpp2)
    for name, base in (("qp_l2", "qp_sq"), ("qpp_l2", "qpp_sq"), ("Q_l2", "Q_sq"), ("qp_h1", "qp_sq")):
        errors[name] = errors[base] / max(2.0 * values[name], 1e-300)


def _tail_sequence(spec: HamiltonianSpec, tol: float):
    """``int_{|v|>R} |grad psi|^-2 dgamma`` at three radii."""
    kin = spec.kinetic
    d = spec.dim
    if kin.radial is not None and d > 1:
        radial = kin.radial
        base = 4.0

        def weight(r):
            return r ** (d - 1) * np.exp(-radial.derivative(r**2, 0))

        mass, _, _ = integrate_line(weight, tol=tol, core=radial.core, half=True)
        radii = (base, 2 * base, 4 * base)
        out = []
        for radius in radii:

            def g(r, radius=radius):
                gpsi2 = 4.0 * radial.derivative(r**2, 1) ** 2 * r**2
                return np.where(r > radius, weight(r) / np.maximum(gpsi2, 1e-300), 0.0)

            # integrate from the radius outwards
            val, _, _ = integrate_line(lambda s: g(radius + s), tol=tol, core=radius, half=True)
            out.append(val / mass)
        return radii, tuple(out)
    if kin.callables is not None:
        nodes, w = _custom_rule(kin, d, tol)
        gpsi2 = np.sum(kin.grad(nodes) ** 2, axis=-1)
        r = np.linalg.norm(nodes, axis=-1)
        radii = tuple(kin.radius * f for f in (0.25, 0.5, 0.75))
        out = tuple(
            float(w @ np.where(r > radius, 1.0 / np.maximum(gpsi2, 1e-300), 0.0)) for radius in radii
        )
        return radii, out
    profile = kin.profile_1d()
    base = 4.0 if profile.support is None else 0.5 * max(abs(profile.support[0]), abs(profile.support[1]))
    radii = (base, 2 * base, 4 * base) if profile.support is None else (base, 1.25 * base, 1.5 * base)
    log_z = profile_log_partition(profile, tol)
    out = []
    for radius in radii:
        # per-axis union bound: {|v| > R} lies in the union of {|v_i| > R / sqrt(d)}
        rr = radius / math.sqrt(d)

        def g(s, rr=rr):
            return np.exp(-profile.derivative(s, 0) - log_z) / np.maximum(profile.derivative(s, 1) ** 2, 1e-300)

        if profile.support is not None:
            a, b = profile.support
            val = 0.0
            if b > rr:
                val += float(integrate_interval(g, rr, b, tol=tol)[0])
            if a < -rr:
                val += float(integrate_interval(g, a, -rr, tol=tol)[0])
        else:
            right, _, _ = integrate_line(lambda s: g(rr + s), tol=tol, core=rr, half=True)
            left, _, _ = integrate_line(lambda s: g(-rr - s), tol=tol, core=rr, half=True)
            val = right + left
        out.append(d * val)
    return radii, tuple(out)


def moments(spec: HamiltonianSpec) -> MomentTable:
    """Compute every moment consumed by the certificates.

    Raises
    ------
    DivergentMoment
        When a needed integral is infinite.  For the heavytail family this
        happens exactly when ``beta <= d + 4``.
    """
    tol = _quad_tol(spec)
    d = spec.dim
    kin = spec.kinetic
    values: Dict[str, float] = {}
    errors: Dict[str, float] = {}

    if kin.family == "heavytail" and kin.params["beta"] <= d + 4:
        raise DivergentMoment(
            "int_{|v|>R} |grad psi|^-2 dgamma does not vanish as R grows "
            f"(heavytail beta={kin.params['beta']:g} <= d + 4 = {d + 4})"
        )

    try:
        if kin.separable or d == 1:
            _profile_moments(kin.profile_1d(), tol, values, errors)
            qp2, qpp2, qp4 = values["qp_sq"], values["qpp_sq"], values["qp_fourth"]
            values["grad_psi_sq"] = d * qp2
            errors["grad_psi_sq"] = d * errors["qp_sq"]
            # E(sum_i a_i)^2 with independent identically distributed a_i = q'(v_i)^2
            values["grad_psi_fourth"] = d * qp4 + d * (d - 1) * qp2**2
            errors["grad_psi_fourth"] = d * errors["qp_fourth"] + 2 * d * (d - 1) * qp2 * errors["qp_sq"]
            values["hess_psi_sq"] = d * qpp2
            errors["hess_psi_sq"] = d * errors["qpp_sq"]
            mean, err = profile_expectation(kin.profile_1d(), lambda s: kin.profile_1d().derivative(s, 1), tol)
            values["mean_grad_psi"] = abs(mean)
            errors["mean_grad_psi"] = err
        elif kin.radial is not None:
            radial = kin.radial
            f1 = lambda r: radial.derivative(r**2, 1)
            f2 = lambda r: radial.derivative(r**2, 2)
            specs = {
                "grad_psi_sq": lambda r: 4 * f1(r) ** 2 * r**2,
                "grad_psi_fourth": lambda r: 16 * f1(r) ** 4 * r**4,
                # eigenvalues 2F' (d-1 times) and 2F' + 4F'' r^2
                "hess_psi_sq": lambda r: (d - 1) * (2 * f1(r)) ** 2 + (2 * f1(r) + 4 * f2(r) * r**2) ** 2,
            }
            for name, g in specs.items():
                values[name], errors[name] = _radial_expectation(radial, d, g, tol)
                errors[name] = abs(errors[name])
            values["mean_grad_psi"] = 0.0
            errors["mean_grad_psi"] = 0.0
        else:
            vals = velocity_expectation(
                spec,
                lambda v, g, h: np.stack(
                    [
                        np.sum(g**2, axis=-1),
                        np.sum(g**2, axis=-1) ** 2,
                        np.sum(h**2, axis=(-2, -1)),
                    ]
                    + [g[:, i] for i in range(d)]
                ),
            )
            values["grad_psi_sq"], values["grad_psi_fourth"], values["hess_psi_sq"] = map(float, vals[:3])
            values["mean_grad_psi"] = float(np.max(np.abs(vals[3:])))
            for name in ("grad_psi_sq", "grad_psi_fourth", "hess_psi_sq", "mean_grad_psi"):
                errors[name] = spec.quad_tol * max(1.0, abs(values[name]))

        pot = spec.potential.profile
        gphi, gerr = profile_expectation(pot, lambda s: pot.derivative(s, 1) ** 2, tol)
        values["grad_phi_norm"] = math.sqrt(d * gphi)
        errors["grad_phi_norm"] = d * gerr / max(2 * values["grad_phi_norm"], 1e-300)

        radii, tails = _tail_sequence(spec, tol)
    except QuadratureDiverged as exc:
        raise DivergentMoment(f"moment integral diverges: {exc}") from exc

    for name, v in values.items():
        if not np.isfinite(v):
            raise DivergentMoment(f"moment {name} is not finite")
    if not all(np.isfinite(tails)) or not (tails[0] >= tails[1] >= tails[2]):
        raise DivergentMoment(
            "int_{|v|>R} |grad psi|^-2 dgamma is not decreasing over radii "
            + ", ".join(f"{r:g}" for r in radii)
        )
    return MomentTable(values, errors, tuple(radii), tuple(tails))


@dataclass(frozen=True)
class MatrixM:
    """Second-moment matrix of ``grad psi`` and its rescaled inverse.

    Attributes
    ----------
    moment : ndarray
        ``int grad psi (x) grad psi dgamma``.
    rho_moment : float
        Spectral radius of ``moment``.
    scaled_inverse : ndarray
        ``||grad psi||^2 * inv(moment)``.
    rho_scaled_inverse : float
        Spectral radius of ``scaled_inverse``.
    """

    moment: np.ndarray
    rho_moment: float
    scaled_inverse: np.ndarray
    rho_scaled_inverse: float
    smallest_eigenvalue: float

    @property
    def isotropic(self) -> bool:
        m = self.moment
        return bool(np.allclose(m, m[0, 0] * np.eye(m.shape[0]), rtol=0, atol=1e-12 * max(1.0, abs(m[0, 0]))))


def matrix_m(spec: HamiltonianSpec, table: Optional[MomentTable] = None) -> MatrixM:
    """Assemble the gradient second-moment matrix and check definiteness.

    Separable and radial energies use the closed isotropic form; callables
    are integrated on a tensor grid.

    Raises
    ------
    Degenerate
        If the smallest eigenvalue is at most ``1e-10``.
    """
    d = spec.dim
    kin = spec.kinetic
    if table is None:
        table = moments(spec)
    if kin.separable or kin.radial is not None or d == 1 and kin.callables is None:
        moment = (table["grad_psi_sq"] / d) * np.eye(d)
    else:
        moment = velocity_expectation(spec, lambda v, g, h: np.stack(
            [g[:, i] * g[:, j] for i in range(d) for j in range(d)]
        )).reshape(d, d)
        moment = 0.5 * (moment + moment.T)
    eig = np.linalg.eigvalsh(moment)
    if eig[0] <= DEGENERACY_TOL:
        raise Degenerate(f"smallest eigenvalue of the gradient moment matrix is {eig[0]:.3e}")
    trace = float(np.trace(moment))
    scaled = trace * np.linalg.inv(moment)
    scaled = 0.5 * (scaled + scaled.T)
    return MatrixM(moment, float(eig[-1]), scaled, float(trace / eig[0]), float(eig[0]))


@dataclass(frozen=True)
class HessianReport:
    """Result of the Hessian-rank sufficient condition.

    ``passed`` means the condition holds at every sample point; a failure
    leaves the bracket condition unverified rather than refuted.
    """

    min_singular_value: float
    passed: bool
    failing_points: np.ndarray
    tolerance: float


def hessian_rank_check(spec: HamiltonianSpec, sample_points, tol: float = 1e-8) -> HessianReport:
    """Smallest singular value of the kinetic Hessian over ``sample_points``."""
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    if pts.shape[-1] != spec.dim:
        pts = pts.reshape(-1, spec.dim)
    sv = np.linalg.svd(spec.kinetic.hessian(pts), compute_uv=False)[:, -1]
    bad = sv <= tol
    return HessianReport(float(np.min(sv)), bool(not np.any(bad)), pts[bad], tol)


def fit_potential_constants(spec: HamiltonianSpec, n: int = 4001) -> Dict[str, float]:
    """Empirical regularity constants of the separable potential.

    For ``phi = sum_i p(x_i)`` the worst ratio is attained on the diagonal,
    so the one-dimensional grid maxima of ``p''^2/(1 + p'^2)`` and
    ``p''/(1 + p'^2)`` are dimension free.  The Poincare constant comes from
    the one-dimensional eigensolve (it tensorises).
    """
    from .spectral1d import poincare_constant

    profile = spec.potential.profile
    if profile.period is not None:
        s = np.linspace(0.0, profile.period, n)
    elif profile.support is not None:
        s = np.linspace(*profile.support, n)
    else:
        s = np.linspace(-4 * profile.core, 4 * profile.core, n)
    p1 = profile.derivative(s, 1)
    p2 = profile.derivative(s, 2)
    denom = 1.0 + p1**2
    return {
        "potential_poincare": float(poincare_constant(profile)),
        "hessian_bound": float(np.sqrt(np.max(p2**2 / denom))),
        "laplacian_bound": float(max(0.0, np.max(p2 / denom))),
    }


def with_potential_constants(spec: HamiltonianSpec) -> HamiltonianSpec:
    """Fill missing regularity constants by fitting; label their provenance."""
    sources = dict(spec.constant_sources)
    missing = [
        k for k in ("potential_poincare", "hessian_bound", "laplacian_bound") if getattr(spec, k) is None
    ]
    for k in ("potential_poincare", "hessian_bound", "laplacian_bound"):
        sources.setdefault(k, "declared")
    if not missing:
        return replace(spec, constant_sources=sources)
    fitted = fit_potential_constants(spec)
    updates = {k: fitted[k] for k in missing}
    for k in missing:
        sources[k] = "empirical"
    return replace(spec, constant_sources=sources, **updates)
