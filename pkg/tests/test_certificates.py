import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from artifact import certificates as C
from artifact import model as M
from artifact.errors import ZeroInitial, ZeroPoincare

SQRT2 = math.sqrt(2.0)


def gaussian(d=1, kinetic=None):
    return M.HamiltonianSpec(
        M.quadratic_potential(), kinetic or M.quadratic_kinetic(), dim=d,
        potential_poincare=1.0, hessian_bound=1.0, laplacian_bound=1.0,
    )


@pytest.mark.parametrize("c2,d,expected", [(0.0, 1, 4.0), (16.0, 4, 16.0), (4.0, 1, 4.0)])
def test_l_phi(c2, d, expected):
    assert C.l_phi(c2, d) == expected


def test_gaussian_tensorised_closed_form():
    table = M.moments(M.normalize_gibbs(gaussian()))
    res = C.k_avg_tensorised(table, 1)
    assert res.c1 == pytest.approx(1 + SQRT2, abs=1e-9)
    assert res.c2 == pytest.approx(4 + SQRT2, abs=1e-9)
    assert res.k_avg == pytest.approx(36 + 16 * SQRT2, abs=1e-9)
    assert res.correction is None and not res.dimension_dependent


def test_general_route_gaussian_closed_forms():
    # one dimension: ||G||_H1 = sqrt 2, E v^4 = 3, L_phi = 4, rho(M) = 1
    cert = C.build_certificate(gaussian(1), 1.0, 1.0, route="general")
    assert cert["C1"] == pytest.approx(1 + SQRT2, abs=1e-9)
    assert cert["C2"] == pytest.approx(7 + math.sqrt(3), abs=1e-9)
    assert cert["K_avg"] == pytest.approx(2 * (7 + math.sqrt(3)) ** 2, abs=1e-8)
    # two dimensions: rho(M) = 2, sum ||G^M_i grad psi|| = 4, sum ||grad G^M_i|| = 2
    cert2 = C.build_certificate(gaussian(2), 1.0, 1.0, route="general")
    assert cert2["C1"] == pytest.approx(3.0, abs=1e-9)
    assert cert2["K_avg"] == pytest.approx(2 * (2 + 7 * SQRT2) ** 2, abs=1e-8)


def test_general_route_dominates_tensorised():
    # the two routes are different upper bounds; the general one is looser here
    for d in (1, 2):
        general = C.build_certificate(gaussian(d), 1.0, 1.0, route="general")["K_avg"]
        tensor = C.build_certificate(gaussian(d), 1.0, 1.0, route="tensorised")["K_avg"]
        assert general >= tensor


def test_k_avg_at_least_two():
    for spec in (gaussian(), gaussian(kinetic=M.subexp_kinetic(0.5))):
        assert C.build_certificate(spec, 1.0, 1.0)["K_avg"] >= 2.0


def test_dimension_independence_bitwise():
    values = [C.build_certificate(gaussian(d), 1.0, 1.0)["K_avg"] for d in (1, 10, 100)]
    assert values[0] == values[1] == values[2]


def test_subexp_correction_follows_quadrature():
    spec = gaussian(kinetic=M.tensorised_kinetic(M.SubexpProfile(0.5)))
    table = M.moments(M.normalize_gibbs(spec))
    cert = C.build_certificate(spec, 1.0, 1.0)
    flagged = abs(table["q4_mean"]) > spec.quad_tol
    assert (cert.flags["K_avg"] == "dimension-dependent") == flagged
    assert ("sqrt_d_scaling" in cert.entries) == flagged


def test_lions_constant_large_window_limit():
    lc = C.lions_constant(1.0, 0.0, 0.0, 1, 1e6)
    assert lc.wave == pytest.approx(498.0, abs=1e-9)
    assert lc.poincare_spacetime == pytest.approx(math.pi**2 / 1e12)
    assert lc.lax_milgram == pytest.approx(2.0 + 1e12 / math.pi**2)
    assert C.lions_constant(1.0, 0.0, 0.0, 1, math.pi).poincare_spacetime == pytest.approx(1.0)


def test_lions_constant_zero_poincare():
    with pytest.raises(ZeroPoincare):
        C.lions_constant(0.0, 1.0, 1.0, 1, 1.0)


def test_lions_constant_window_scaling():
    c = lambda tau: C.lions_constant(1.0, 1.0, 1.0, 1, tau).lions
    assert c(2e3) / c(1e3) == pytest.approx(4.0, rel=0.1)
    assert c(0.5e-3) / c(1e-3) == pytest.approx(4.0, rel=0.1)


def test_lions_constant_scales_inversely_with_poincare():
    # with tau = c^(-1/2) the product C_Lions * c stays bounded and settles as c -> 0
    ratios = [C.lions_constant(c, 0.0, 0.0, 1, c**-0.5).lions * c for c in (1.0, 1e-2, 1e-4, 1e-6)]
    assert all(0 < r < 1e4 for r in ratios)
    assert ratios[3] == pytest.approx(ratios[2], rel=0.01)


def test_lions_identities():
    lc = C.lions_constant(1.0, 1.0, 1.0, 1, 1.0)
    assert lc.div_sq == pytest.approx(3 * (lc.lax_milgram + 2 * lc.wave))
    assert lc.lions == lc.div_sq


def test_exponential_rate_arithmetic():
    lam_p, lam = C.exponential_rate(99.0, 1.0, 1.0, 1.0)
    assert lam_p == pytest.approx(0.01) and lam == pytest.approx(0.005)
    lam_p, small = C.exponential_rate(99.0, 1.0, 2.0, 1e-4)
    assert small / 1e-4 == pytest.approx(lam_p * 2.0, rel=1e-6)
    _, big = C.exponential_rate(99.0, 1.0, 2.0, 1e4)
    assert big * 1e4 == pytest.approx(lam_p, rel=1e-6)


def test_optimal_friction_examples():
    assert C.optimal_friction(1.0) == 1.0
    assert C.optimal_friction(4.0) == 0.5


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_optimal_friction_is_argmax(c_psi, lions):
    xs = C.optimal_friction(c_psi)
    rate = lambda xi: C.exponential_rate(lions, 2.0, c_psi, xi)[1]
    assert rate(xs) >= rate(xs / 2) and rate(xs) >= rate(2 * xs)


def test_m0_examples():
    assert C.m0_constant(1, 1, 1, 1, 1, 1) == pytest.approx(SQRT2)
    base = C.m0_constant(1.0, 0.1, 2.0, 3.0, 1.0, 2.0)
    assert C.m0_constant(1.0, 0.1, 2.0, 3.0, 2.0, 2.0) / base == pytest.approx(2 ** (2 / 3))
    seq = [C.m0_constant(1.0, 0.5, 2.0, 3.0, 1.5, s) for s in (1, 10, 100)]
    assert all(math.isfinite(v) for v in seq)
    assert (seq[0] - seq[1]) * (seq[1] - seq[2]) > 0  # monotone trend toward a finite limit


def test_y0_examples():
    assert C.y0_root(2.0, 1.0, 0.1, 0.0, 1.0) == 0.0
    assert C.y0_root(0.0, 2.0, 0.1, 3.0, 1.0) == pytest.approx(2 * 0.1 * 3.0 / 2.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0.05, 20), st.floats(1e-6, 1), st.floats(1e-3, 1e3), st.floats(0.2, 5))
def test_y0_root_solves_theta(m0, xi, lam_p, h0, sigma):
    y = C.y0_root(m0, xi, lam_p, h0, sigma)
    assert abs(float(C.theta_map(y, m0, xi, lam_p, sigma)) - h0) <= 1e-10 * max(1.0, h0)
    yb = C.y0_root(m0, xi, lam_p, h0, sigma, method="bisection")
    assert y == pytest.approx(yb, rel=1e-9, abs=1e-300)


def test_envelope_shape():
    m0 = C.m0_constant(1.0, 0.5, 1.0, 1.5, 1.0, 1.0)
    y0 = C.y0_root(m0, 1.0, 0.5, 2.0, 1.0)
    env = C.algebraic_envelope(2.0, 1.0, 1.0, m0, y0, 0.5)
    assert env(0.0) == 2.0
    assert env.p == 2.0 and env.q == 2.0 and 1 / env.p + 1 / env.q == 1.0
    k = (env.c1 + env.c2) ** -2
    assert env(3.0) == pytest.approx(2.0 / (1 + k * 3.0))
    t = np.logspace(-2, 6, 50)
    assert np.all(np.diff(env(t)) < 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.2, 1.5))
def test_envelope_tail_slope(sigma, xi):
    # moderate constants so the power law already shows on [1e2, 1e4]
    y0 = C.y0_root(0.1, xi, 5.0, 1.0, sigma)
    env = C.algebraic_envelope(1.0, xi, sigma, 0.1, y0, 5.0)
    assume(env.rate >= 1.0)
    slope = (math.log(env(1e4)) - math.log(env(1e2))) / math.log(100.0)
    assert slope == pytest.approx(-sigma, abs=0.05)


def test_envelope_tail_slope_is_reached_only_when_rate_times_t_is_large():
    env = C.algebraic_envelope(1.0, 1.0, 1.0, 1e3, C.y0_root(1e3, 1.0, 1e-3, 1.0, 1.0), 1e-3)
    assert env.rate < 1e-6
    flat = math.log(env(1e4) / env(1e2)) / math.log(100.0)
    tail = math.log(env(1e5 / env.rate) / env(1e3 / env.rate)) / math.log(100.0)
    assert flat > -0.05 and tail == pytest.approx(-1.0, abs=0.05)


def test_envelope_zero_initial():
    with pytest.raises(ZeroInitial):
        C.algebraic_envelope(0.0, 1.0, 1.0, 1.0, 0.0, 0.5)


def test_certificate_identities_and_report():
    cert = C.build_certificate(gaussian(), 1.0, 1.0)
    assert cert.audit() == []
    e = cert.entries
    assert e["lambda_P"] == 1.0 / (1.0 + e["C_Lions"] * e["K_avg"])
    assert e["lambda_bar"] == pytest.approx(e["lambda_P"] / (1 / (e["c_psi"]) + 1.0), rel=1e-15)
    assert e["C_Lions"] == e["C_div_sq"]
    assert all(v > 0 for v in e.values())
    report = C.format_report(cert)
    for line in report.splitlines()[1:]:
        assert " = " in line and "# provenance:" in line
    assert f"K_avg = {e['K_avg']!r}" in report


def test_audit_detects_tampering():
    cert = C.build_certificate(gaussian(), 1.0, 1.0)
    cert.entries["lambda_bar"] *= 1.01
    assert any("lambda_bar" in msg for msg in cert.audit())


def test_heavytail_certificate_uses_algebraic_route():
    spec = M.HamiltonianSpec(M.quadratic_potential(), M.heavytail_kinetic(8.0),
                             potential_poincare=1.0, hessian_bound=1.0, laplacian_bound=1.0)
    cert = C.build_certificate(spec, 1.0, 1.0)
    assert "lambda_bar" not in cert.entries and "c_psi" in cert.flags
    assert cert.audit() == []
    env = C.algebraic_certificate(spec, cert, 0.5, 2.0, sigma=1.0)
    assert env.g_sigma_l1 == pytest.approx(1.2, abs=1e-10)  # E[1 + v^2] with E v^2 = 1 / (beta - 3)
    assert env(0.0) == 0.5
    with pytest.raises(ValueError):
        C.algebraic_certificate(spec, cert, 0.5, 2.0, sigma=4.0)
