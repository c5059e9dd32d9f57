"""Explicit decay-rate constants assembled into auditable certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import NoSpectralGap, ZeroInitial, ZeroPoincare
from .model import MatrixM, MomentTable

__all__ = [
    "RateCertificate",
    "AlgebraicEnvelope",
    "LionsConstants",
    "TensorisedAveraging",
    "l_phi",
    "k_avg_general",
    "k_avg_tensorised",
    "lions_constant",
    "exponential_rate",
    "optimal_friction",
    "m0_constant",
    "y0_root",
    "theta_map",
    "algebraic_envelope",
    "algebraic_certificate",
    "build_certificate",
    "format_report",
]

H1_CONVENTION = "||z||_H1^2 = ||z||^2 + ||grad_(t,x) z||^2"


def l_phi(laplacian_bound: float, d: int) -> float:
    """Multiplier constant bounding ``||z grad phi||`` by ``L ||z||_H1``."""
    return 2.0 * max(2.0, math.sqrt(d * laplacian_bound))


def k_avg_general(mat: MatrixM, table: MomentTable, lphi: float, weighted: Optional[Dict[str, float]] = None):
    """Averaging constant from the gradient moments of a general kinetic energy.

    Parameters
    ----------
    mat : MatrixM
    table : MomentTable
        Needs ``grad_psi_sq``, ``grad_psi_fourth`` and ``hess_psi_sq``.
    lphi : float
        Output of :func:`l_phi`.
    weighted : dict, optional
        Precomputed ``sum_i ||G^M_i grad psi||^2`` (``gm_grad_sq``) and
        ``sum_i ||grad G^M_i||^2`` (``grad_gm_sq``) for anisotropic matrices.
        When omitted the matrix must be a multiple of the identity.

    Returns
    -------
    (K_avg, C1, C2)
    """
    norm_sq = table["grad_psi_sq"]
    norm = math.sqrt(norm_sq)
    rho_m = mat.rho_scaled_inverse
    g_h1 = math.sqrt(1.0 + table["hess_psi_sq"] / norm_sq)
    if weighted is None:
        if not mat.isotropic:
            raise ValueError("anisotropic moment matrix: pass the weighted moments explicitly")
        c = mat.scaled_inverse[0, 0]
        gm_grad_sq = c**2 * table["grad_psi_fourth"] / norm_sq
        grad_gm_sq = c**2 * table["hess_psi_sq"] / norm_sq
    else:
        gm_grad_sq = weighted["gm_grad_sq"]
        grad_gm_sq = weighted["grad_gm_sq"]
    c1 = 1.0 + rho_m * g_h1 / norm
    c2 = 1.0 + math.sqrt(mat.rho_moment) + (rho_m + math.sqrt(gm_grad_sq) + lphi * math.sqrt(grad_gm_sq)) / norm
    return 2.0 * max(c1, c2) ** 2, c1, c2


def weighted_gradient_moments(spec, mat: MatrixM) -> Dict[str, float]:
    """``sum_i ||G^M_i grad psi||^2`` and ``sum_i ||grad G^M_i||^2`` by quadrature (d <= 3)."""
    from .model import velocity_expectation

    m = mat.scaled_inverse
    norm_sq = float(np.trace(mat.moment))

    def integrand(v, g, h):
        mg = g @ m.T
        mh = np.einsum("ij,njk->nik", m, h)
        return np.stack(
            [np.sum(mg**2, axis=-1) * np.sum(g**2, axis=-1), np.sum(mh**2, axis=(-2, -1))]
        )

    a, b = velocity_expectation(spec, integrand)
    return {"gm_grad_sq": float(a) / norm_sq, "grad_gm_sq": float(b) / norm_sq}


@dataclass(frozen=True)
class TensorisedAveraging:
    """Dimension-free averaging constant for separable kinetic energies.

    ``correction`` is ``None`` when ``int q'''' exp(-q)`` vanishes; otherwise
    it holds the extra term folded into ``c2`` and ``dimension_dependent``
    is set.  ``sqrt_d_entry`` records ``||grad phi||`` (which grows like
    ``sqrt(d)`` for separable potentials) when the correction is present.
    """

    k_avg: float
    c1: float
    c2: float
    correction: Optional[float]
    dimension_dependent: bool
    sqrt_d_entry: Optional[float]


def k_avg_tensorised(table: MomentTable, d: int, grad_phi_norm: Optional[float] = None, tol: float = 1e-8):
    """Averaging constant for ``psi(v) = sum_i q(v_i)``.

    When ``|int q'''' exp(-q)| > tol`` the cross term
    ``2 |int Q q'' exp(-q)| (1 + ||grad phi||)`` is added under the square
    root of the transport bound before forming ``c2``.
    """
    qp = table["qp_l2"]
    qp_h1 = table["qp_h1"]
    qq = table["Q_l2"]
    qpp = table["qpp_l2"]
    c1 = 1.0 + qp_h1 / qp**2
    transport = qq + qpp
    correction = None
    sqrt_d = None
    if abs(table["q4_mean"]) > tol:
        gphi = table["grad_phi_norm"] if grad_phi_norm is None else grad_phi_norm
        correction = 2.0 * abs(table["Q_qpp_mean"]) * (1.0 + gphi)
        transport = math.sqrt(transport**2 + correction)
        sqrt_d = gphi
    c2 = 1.0 + qp + 1.0 / qp + transport / qp**2
    k = 2.0 * max(c1, c2) ** 2
    return TensorisedAveraging(k, c1, c2, correction, correction is not None, sqrt_d)


@dataclass(frozen=True)
class LionsConstants:
    poincare_spacetime: float
    lax_milgram: float
    wave: float
    div_sq: float
    lions: float

    @property
    def div(self) -> float:
        return math.sqrt(self.div_sq)


def lions_constant(potential_poincare: float, hessian_bound: float, laplacian_bound: float, d: int, tau: float):
    """Constants of the constructive divergence-equation route.

    Returns
    -------
    LionsConstants
        Space-time Poincare constant, Lax-Milgram constant, wave-part
        constant, squared divergence constant, and the Lions constant (set
        equal to the squared divergence constant).
    """
    if potential_poincare <= 0:
        raise ZeroPoincare("the position Poincare constant must be positive")
    if tau <= 0:
        raise ValueError("tau must be positive")
    c, c1, c2 = potential_poincare, hessian_bound, laplacian_bound
    cp = min(c, math.pi**2 / tau**2)
    bochner = 2.0 * c1 * (math.sqrt(d) + 2.0 * max(8.0 * c1, math.sqrt(c2 * d)))
    lm = 2.0 + (1.0 + bochner) / cp
    boundary = 1.0 + 2.0 / (-math.expm1(-tau * math.sqrt(c)))
    wave = 37.0 / c + 65.0 + 36.0 * (2.0 + bochner + boundary**2)
    div_sq = 3.0 * (lm + 2.0 * wave)
    return LionsConstants(cp, lm, wave, div_sq, div_sq)


def exponential_rate(lions: float, k_avg: float, c_psi: float, xi: float) -> Tuple[float, float]:
    """Modified-Poincare constant and exponential rate for friction ``xi``."""
    lam_p = 1.0 / (1.0 + lions * k_avg)
    return lam_p, lam_p / (1.0 / (xi * c_psi) + xi)


def optimal_friction(c_psi: float) -> float:
    """Friction maximizing ``(1/(xi c) + xi)^-1``."""
    if c_psi <= 0:
        raise ValueError("c_psi must be positive")
    return 1.0 / math.sqrt(c_psi)


def m0_constant(tau: float, lam_p: float, p_psi: float, g_sigma_l1: float, h0_sup: float, sigma: float) -> float:
    """Prefactor of the fractional term in the Bihari-LaSalle inequality."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    p = (sigma + 1.0) / sigma
    q = sigma + 1.0
    return (
        2.0 ** ((2.0 - sigma) / (1.0 + sigma))
        * tau ** (1.0 / q)
        / lam_p
        * p_psi ** (1.0 / p)
        * g_sigma_l1 ** (1.0 / q)
        * h0_sup ** (2.0 / q)
    )


def theta_map(y, m0: float, xi: float, lam_p: float, sigma: float):
    """``(xi / (2 lam_p)) y + m0 (y / xi)^(1/p)`` with ``p = (sigma+1)/sigma``."""
    p = (sigma + 1.0) / sigma
    y = np.asarray(y, dtype=float)
    return xi / (2.0 * lam_p) * y + m0 * (y / xi) ** (1.0 / p)


def y0_root(m0: float, xi: float, lam_p: float, h0: float, sigma: float, method: str = "newton") -> float:
    """Solve ``theta(y) = h0`` for the increasing map :func:`theta_map`.

    ``method`` is ``newton`` (bracket by bisection, then Newton) or
    ``bisection`` (pure bisection, used as an independent check).
    """
    if h0 < 0:
        raise ValueError("h0 must be nonnegative")
    if h0 == 0:
        return 0.0
    slope = xi / (2.0 * lam_p)
    if m0 == 0:
        return h0 / slope
    p = (sigma + 1.0) / sigma
    f = lambda y: float(theta_map(y, m0, xi, lam_p, sigma)) - h0
    lo, hi = 0.0, h0 / slope  # theta(hi) >= h0
    tol = 1e-10 * max(1.0, h0)
    iters = 0
    if method == "bisection":
        while iters < 200:
            mid = 0.5 * (lo + hi)
            if f(mid) > 0:
                hi = mid
            else:
                lo = mid
            iters += 1
            if hi - lo <= 1e-16 * max(hi, 1e-300):
                break
        return 0.5 * (lo + hi)
    # coarse bracket
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        iters += 1
        if hi - lo <= 1e-3 * hi:
            break
    y = 0.5 * (lo + hi)
    while iters < 200:
        val = f(y)
        if val == 0.0:
            break
        deriv = slope + m0 / p * xi ** (-1.0 / p) * y ** (1.0 / p - 1.0)
        step = y - val / deriv
        if abs(val) <= tol and abs(step - y) <= 1e-14 * y:
            y = step
            break
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        if f(step) > 0:
            hi = step
        else:
            lo = step
        y = step
        iters += 1
    return y


@dataclass(frozen=True)
class AlgebraicEnvelope:
    """Algebraic decay envelope ``H0 / (1 + k t)^sigma``.

    ``k = (xi^(-sigma/(sigma+1)) c1 + xi c2)^(-(sigma+1)/sigma)``.
    """

    sigma: float
    p: float
    q: float
    p_psi: float
    g_sigma_l1: float
    h0_sup: float
    m0: float
    y0: float
    c1: float
    c2: float
    h0: float
    xi: float

    @property
    def rate(self) -> float:
        if self.h0 == 0:
            return 0.0
        s = self.sigma
        return (self.xi ** (-s / (s + 1.0)) * self.c1 + self.xi * self.c2) ** (-(s + 1.0) / s)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.h0 == 0:
            return np.zeros_like(t)
        return self.h0 / (1.0 + self.rate * t) ** self.sigma


def algebraic_envelope(
    h0: float,
    xi: float,
    sigma: float,
    m0: float,
    y0: float,
    lam_p: float,
    p_psi: float = float("nan"),
    g_sigma_l1: float = float("nan"),
    h0_sup: float = float("nan"),
) -> AlgebraicEnvelope:
    """Assemble the algebraic envelope from its ingredients.

    Raises
    ------
    ZeroInitial
        If ``h0 == 0``; the caller can catch it and use the zero envelope.
    """
    p = (sigma + 1.0) / sigma
    q = sigma + 1.0
    if h0 == 0:
        raise ZeroInitial("initial time-averaged norm is zero; the envelope is identically zero")
    pre = sigma ** (sigma / (1.0 + sigma))
    c1 = pre * m0 * h0 ** (-1.0 / (sigma + 1.0))
    c2 = pre * (xi / (2.0 * lam_p)) * y0 ** (1.0 / (1.0 + sigma)) * h0 ** (-1.0 / (1.0 + sigma))
    return AlgebraicEnvelope(sigma, p, q, p_psi, g_sigma_l1, h0_sup, m0, y0, c1, c2, h0, xi)


@dataclass
class RateCertificate:
    """Full breakdown of the exponential rate with provenance notes."""

    xi: float
    tau: float
    dim: int
    entries: Dict[str, float] = field(default_factory=dict)
    provenance: Dict[str, str] = field(default_factory=dict)
    flags: Dict[str, str] = field(default_factory=dict)

    def add(self, key: str, value: float, note: str):
        self.entries[key] = float(value)
        self.provenance[key] = note

    def __getitem__(self, key: str) -> float:
        return self.entries[key]

    @property
    def lambda_p(self) -> float:
        return self.entries["lambda_P"]

    @property
    def lambda_bar(self) -> float:
        return self.entries["lambda_bar"]

    def audit(self, rtol: float = 1e-12) -> List[str]:
        """Re-derive the certificate identities; returns failure descriptions."""
        e = self.entries
        out = []
        lam_p = 1.0 / (1.0 + e["C_Lions"] * e["K_avg"])
        if not math.isclose(lam_p, e["lambda_P"], rel_tol=rtol):
            out.append(f"lambda_P identity: {lam_p!r} != {e['lambda_P']!r}")
        if "lambda_bar" in e:
            lam = e["lambda_P"] / (1.0 / (self.xi * e["c_psi"]) + self.xi)
            if not math.isclose(lam, e["lambda_bar"], rel_tol=rtol):
                out.append(f"lambda_bar identity: {lam!r} != {e['lambda_bar']!r}")
        if e["C_div_sq"] > 3.0 * (e["C_LM"] + 2.0 * e["C_N"]) * (1 + rtol):
            out.append("C_div_sq exceeds 3 (C_LM + 2 C_N)")
        for k, v in e.items():
            if not v > 0:
                out.append(f"{k} is not positive")
        return out


def build_certificate(spec, xi: float, tau: float, route: str = "auto", c_psi: Optional[float] = None) -> RateCertificate:
    """Compute every constant of the exponential-rate certificate for ``spec``.

    Missing potential constants are fitted (labelled ``empirical``); ``c_psi``
    comes from the one-dimensional eigensolve unless supplied.  ``route``
    selects ``tensorised``, ``general`` or ``auto`` (tensorised for
    separable kinetic energies).
    """
    from .model import matrix_m, moments, normalize_gibbs, with_potential_constants
    from .spectral1d import poincare_constant

    spec = with_potential_constants(normalize_gibbs(spec))
    d = spec.dim
    cert = RateCertificate(xi=float(xi), tau=float(tau), dim=d)
    src = spec.constant_sources
    cert.add("xi", xi, "input friction")
    cert.add("tau", tau, "input averaging window")
    cert.add("c_phi", spec.potential_poincare, f"{src['potential_poincare']}: position Poincare constant")
    cert.add("c_phi_prime", max(spec.hessian_bound, 1e-300), f"{src['hessian_bound']}: Hessian bound of phi")
    cert.entries["c_phi_prime"] = float(spec.hessian_bound)
    cert.add("c_phi_second", max(spec.laplacian_bound, 1e-300), f"{src['laplacian_bound']}: Laplacian bound of phi")
    cert.entries["c_phi_second"] = float(spec.laplacian_bound)
    if c_psi is None:
        try:
            c_psi = poincare_constant(spec.kinetic.profile_1d())
        except NoSpectralGap as exc:
            cert.flags["c_psi"] = f"no spectral gap ({exc}); only the algebraic route applies"
        else:
            cert.add("c_psi", c_psi, "eigensolve: velocity Poincare constant (tensorises over axes)")
    else:
        cert.add("c_psi", c_psi, "declared: velocity Poincare constant")

    table = moments(spec)
    mat = matrix_m(spec, table)
    lphi = l_phi(spec.laplacian_bound, d)
    cert.add("L_phi", lphi, "2 max(2, sqrt(d c_phi_second))")
    cert.add("rho_moment_matrix", mat.rho_moment, "spectral radius of int grad psi (x) grad psi dgamma")
    cert.add("rho_M", mat.rho_scaled_inverse, "spectral radius of ||grad psi||^2 times inverse moment matrix")
    use_tensor = route == "tensorised" or (route == "auto" and spec.kinetic.separable)
    if use_tensor:
        res = k_avg_tensorised(table, d, tol=spec.quad_tol)
        cert.add("C1", res.c1, "tensorised: 1 + ||q'||_H1 / ||q'||^2")
        cert.add("C2", res.c2, "tensorised: 1 + ||q'|| + 1/||q'|| + (||Q|| + ||q''||)/||q'||^2")
        cert.add("K_avg", res.k_avg, "tensorised: 2 max(C1, C2)^2")
        if res.dimension_dependent:
            cert.add("K_avg_correction", res.correction, "2 |int Q q'' e^-q| (1 + ||grad phi||), folded into C2")
            cert.add("sqrt_d_scaling", res.sqrt_d_entry, "||grad phi||_L2(mu), grows like sqrt(d)")
            cert.flags["K_avg"] = "dimension-dependent"
        else:
            cert.flags["K_avg"] = "dimension-free"
    else:
        weighted = None if mat.isotropic else weighted_gradient_moments(spec, mat)
        k, c1, c2 = k_avg_general(mat, table, lphi, weighted)
        cert.add("C1", c1, "general: 1 + rho(M) ||G||_H1 / ||grad psi||")
        cert.add("C2", c2, "general: 1 + sqrt(rho(moment)) + (rho(M) + ... + L_phi ...)/||grad psi||")
        cert.add("K_avg", k, "general: 2 max(C1, C2)^2")
        cert.flags["K_avg"] = "general route"

    lc = lions_constant(spec.potential_poincare, spec.hessian_bound, spec.laplacian_bound, d, tau)
    cert.add("C_P", lc.poincare_spacetime, "min(c_phi, pi^2 / tau^2)")
    cert.add("C_LM", lc.lax_milgram, "Lax-Milgram constant")
    cert.add("C_N", lc.wave, "wave-part constant")
    cert.add("C_div_sq", lc.div_sq, "3 (C_LM + 2 C_N)")
    cert.add("C_Lions", lc.lions, "set equal to C_div_sq (upper bound)")
    if c_psi is None:
        if lc.lions <= 0:
            raise ZeroPoincare("C_Lions must be positive")
        cert.add("lambda_P", 1.0 / (1.0 + lc.lions * cert["K_avg"]), "1 / (1 + C_Lions K_avg)")
    else:
        lam_p, lam = exponential_rate(lc.lions, cert["K_avg"], c_psi, xi)
        cert.add("lambda_P", lam_p, "1 / (1 + C_Lions K_avg)")
        cert.add("lambda_bar", lam, "lambda_P / (1/(xi c_psi) + xi)")
        cert.add("xi_star", optimal_friction(c_psi), "c_psi^(-1/2)")
    cert.flags["h1_convention"] = H1_CONVENTION
    return cert


def algebraic_certificate(
    spec,
    cert: RateCertificate,
    h0: float,
    h0_sup: float,
    sigma: Optional[float] = None,
    weight: Optional[Callable] = None,
) -> AlgebraicEnvelope:
    """Algebraic envelope for a one-dimensional velocity profile.

    Parameters
    ----------
    cert : RateCertificate
        Supplies ``tau``, ``xi`` and ``lambda_P``.
    h0 : float
        Time-averaged initial norm ``H_tau(0)``.
    h0_sup : float
        Sup norm of the initial datum.
    sigma : float, optional
        Moment exponent; defaults to half the largest admissible one.
    weight : callable, optional
        Weight ``G >= 1`` of the weighted Poincare inequality; defaults to ``1 + v^2``.
    """
    from .model import profile_expectation
    from .spectral1d import weighted_poincare_constant

    weight = (lambda v: 1.0 + np.asarray(v) ** 2) if weight is None else weight
    profile = spec.kinetic.profile_1d()
    wp = weighted_poincare_constant(profile, weight)
    if sigma is None:
        sigma = 0.5 * wp.sigma_max if math.isfinite(wp.sigma_max) else 1.0
    if not 0.0 < sigma < wp.sigma_max:
        raise ValueError(f"sigma must lie in (0, {wp.sigma_max:g}), got {sigma:g}")
    g_l1, _ = profile_expectation(profile, lambda s: weight(s) ** sigma)
    lam_p = cert.lambda_p
    m0 = m0_constant(cert.tau, lam_p, wp.constant, g_l1, h0_sup, sigma)
    y0 = y0_root(m0, cert.xi, lam_p, h0, sigma)
    return algebraic_envelope(h0, cert.xi, sigma, m0, y0, lam_p, wp.constant, g_l1, h0_sup)


def format_report(cert: RateCertificate, envelope: Optional[AlgebraicEnvelope] = None) -> str:
    """Flat ``key = value`` report with a provenance comment per line."""
    lines = [f"# dimension = {cert.dim}"]
    for k, v in cert.entries.items():
        lines.append(f"{k} = {v!r}  # provenance: {cert.provenance.get(k, '')}")
    for k, v in cert.flags.items():
        lines.append(f"flag.{k} = {v}  # provenance: certificate metadata")
    if envelope is not None:
        for k in ("sigma", "p", "q", "p_psi", "g_sigma_l1", "h0_sup", "m0", "y0", "c1", "c2", "h0"):
            lines.append(f"envelope.{k} = {float(getattr(envelope, k))!r}  # provenance: algebraic envelope")
        lines.append(f"envelope.rate = {float(envelope.rate)!r}  # provenance: (xi^(-s/(s+1)) c1 + xi c2)^(-(s+1)/s)")
    return "\n".join(lines) + "\n"
