import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact import certificates as C
from artifact import lions_solver as L
from artifact import model as M
from artifact.errors import IllConditioned, SourceNotOrthogonal
from artifact.spectral1d import build_operator


@pytest.fixture(scope="module")
def gauss_op():
    return build_operator(M.QuadraticProfile(1.0), 48)


@pytest.fixture(scope="module")
def torus_op():
    return build_operator(M.CosineProfile(1.0, 1.0), 48)


def c_div_gaussian(tau):
    return math.sqrt(C.lions_constant(1.0, 1.0, 1.0, 1, tau).div_sq)


def wave_only(problem, k, forward=True):
    n = problem.op.n
    cf = L.ChannelField.zeros(1, n)
    (cf.forward if forward else cf.backward)[k] = 1.0
    return cf


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 50.0))
def test_projector_margin_positive(x):
    assert L.projector_margin(x) > 0


def test_projector_margin_small_argument():
    # (1 - e^-x)^2 - x^2 e^-x = x^4 / 12 + O(x^5)
    x = 1e-2
    assert L.projector_margin(x) == pytest.approx(x**4 / 12, rel=1e-2)


def test_projection_splits_source(gauss_op):
    prob = L.random_source(gauss_op, 1.0, np.random.default_rng(0))
    plus, minus, perp = L.project_n(prob)
    assert prob.norm(plus + minus + perp - prob.source) == pytest.approx(0.0, abs=1e-12)
    scale = prob.norm(prob.source)
    for k in (1, 2, 5):
        for fwd in (True, False):
            assert abs(prob.channel_inner(perp, wave_only(prob, k, fwd))[k]) <= 1e-10 * scale
    p2, m2, _ = L.project_n(prob, perp)
    assert prob.norm(p2 + m2) <= 1e-10 * scale


def test_projection_ill_conditioned_window(gauss_op):
    prob = L.random_source(gauss_op, 1e-8, np.random.default_rng(0))
    with pytest.raises(IllConditioned):
        L.project_n(prob)


def test_inner_product_matches_quadrature(gauss_op):
    prob = L.random_source(gauss_op, 0.8, np.random.default_rng(1))
    # independent check: fine trapezoid in time of the physical field
    t = np.linspace(0.0, prob.tau, 20001)
    vals = prob.physical(prob.channel_values(prob.source, t))
    sq = (vals**2) @ gauss_op.mass
    quad = np.trapezoid(sq, t) / prob.tau
    assert prob.inner(prob.source, prob.source) == pytest.approx(quad, rel=1e-7)


def test_elliptic_solve_equation_and_boundary(gauss_op):
    prob = L.random_source(gauss_op, 1.0, np.random.default_rng(2))
    _, _, perp = L.project_n(prob)
    u = L.solve_lax_milgram(prob, perp)
    t = np.linspace(0.0, 1.0, 41)
    z2 = prob.zeta**2
    lhs = -u.values(t, 2) + z2 * u.values(t, 0)
    rhs = prob.channel_values(perp, t)
    lhs[:, 0] -= lhs[:, 0].mean()
    rhs[:, 0] -= rhs[:, 0].mean()
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
    ends = u.values(np.array([0.0, 1.0]), 1)
    assert np.max(np.abs(ends)) < 1e-10
    # orthogonality to the wave-like functions makes u vanish at both ends
    assert np.max(np.abs(u.values(np.array([0.0, 1.0]), 0)[:, 1:])) < 1e-9


def test_elliptic_solve_rejects_wave_like_source(gauss_op):
    prob = L.random_source(gauss_op, 1.0, np.random.default_rng(3))
    with pytest.raises(SourceNotOrthogonal):
        L.solve_lax_milgram(prob, prob.source)
    L.solve_lax_milgram(prob, prob.source, check=False)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.1, 10.0))
def test_wave_multipliers_invert_wave(z, tau):
    t = np.linspace(0.0, tau, 201)[1:-1]
    h = 1e-5 * tau
    f0, f1 = L.wave_multipliers(t, z, tau)
    fp, _ = L.wave_multipliers(t + h, z, tau)
    fm, _ = L.wave_multipliers(t - h, z, tau)
    theta = lambda s: np.exp(-s * z)
    d_z0 = (fp * theta(t + h) - fm * theta(t - h)) / (2 * h)
    # -d_t (F0 e^{-tz}) + z^2 F1 e^{-tz} reproduces e^{-tz}
    np.testing.assert_allclose(-d_z0 + z**2 * f1 * theta(t), theta(t), atol=1e-6)
    ends = L.wave_multipliers(np.array([0.0, tau]), z, tau)
    assert np.max(np.abs(ends)) < 1e-12


@pytest.mark.parametrize("tau", [0.5, 1.0, 3.0])
def test_divergence_solution_audits(gauss_op, tau):
    bound = c_div_gaussian(tau)
    for seed in range(3):
        sol = L.solve_divergence(L.random_source(gauss_op, tau, np.random.default_rng(seed)))
        assert sol.residual <= 1e-6
        assert sol.boundary_trace <= 1e-8
        assert sol.h1_norm <= bound * sol.f_norm


def test_divergence_on_torus(torus_op):
    sol = L.solve_divergence(L.random_source(torus_op, 1.0, np.random.default_rng(5)))
    assert sol.residual <= 1e-6 and sol.boundary_trace <= 1e-8


def test_from_callable_source(gauss_op):
    prob = L.DivergenceProblem.from_callable(gauss_op, 1.0, lambda t, x: np.sin(2 * np.pi * t) * x + np.cos(np.pi * t) * np.tanh(x), m=65)
    sol = L.solve_divergence(prob)
    assert sol.residual <= 1e-6 and sol.boundary_trace <= 1e-8
    assert sol.h1_norm <= c_div_gaussian(1.0) * sol.f_norm


def test_from_grid_interpolates_nodes(gauss_op):
    m = 33
    t = np.linspace(0.0, 1.0, m)
    vals = np.cos(np.pi * t)[:, None] * np.tanh(gauss_op.x)[None, :]
    prob = L.DivergenceProblem.from_grid(gauss_op, 1.0, vals)
    back = prob.physical(prob.channel_values(prob.source, t))
    np.testing.assert_allclose(back, vals, atol=1e-10)


def test_audit_rows_fields(gauss_op):
    probs = [L.random_source(gauss_op, 1.0, np.random.default_rng(s)) for s in range(2)]
    rows = L.audit_rows(probs, c_div_gaussian(1.0))
    assert [tuple(r) for r in rows] == [L.AUDIT_FIELDS] * 2
    assert all(r["ok"] == 1 for r in rows)


def test_empirical_lions_constant_below_certificate():
    est = L.empirical_lions_constant(M.QuadraticProfile(1.0), 1.0, n_samples=20, n=32, m=32, detail=True)
    assert est.subspace >= est.sampled > 0
    assert est.value <= C.lions_constant(1.0, 1.0, 1.0, 1, 1.0).lions
    again = L.empirical_lions_constant(M.QuadraticProfile(1.0), 1.0, n_samples=20, n=32, m=32)
    assert again == est.value
