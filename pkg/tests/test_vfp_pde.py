import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact import certificates as C
from artifact import model as M
from artifact import vfp_pde as P
from artifact.errors import CFLViolation


def gaussian_spec():
    return M.HamiltonianSpec(M.quadratic_potential(), M.quadratic_kinetic(),
                             potential_poincare=1.0, hessian_bound=1.0, laplacian_bound=1.0)


def torus_spec():
    return M.HamiltonianSpec(M.cosine_potential(1.0, 1.0), M.quadratic_kinetic())


def initial(x, v):
    return np.tanh(x) + np.tanh(v)


@pytest.fixture(scope="module")
def line_grid():
    return P.build_grid(gaussian_spec(), 32, 32)


@pytest.fixture(scope="module")
def torus_grid():
    return P.build_grid(torus_spec(), 32, 32)


@pytest.fixture(scope="module")
def line_series(line_grid):
    return P.run(gaussian_spec(), initial, 1.0, t_end=8.0, grid=line_grid, windows=(0.0, 3.0), window_cells=8, dt_max=1e-2)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_transport_is_skew(seed, torus):
    grid = P.build_grid(torus_spec() if torus else gaussian_spec(), 24, 20)
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2,) + grid.shape)
    ip = lambda f, g: float(grid.mx @ (f * g) @ grid.mv)
    assert abs(ip(a, grid.transport(b)) + ip(grid.transport(a), b)) <= 1e-9 * (1 + abs(ip(a, a)) + abs(ip(b, b)))
    assert abs(grid.mass(grid.transport(a))) <= 1e-10 * math.sqrt(ip(a, a))


def test_diffusion_symmetric_nonnegative(line_grid):
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2,) + line_grid.shape)
    ip = lambda f, g: float(line_grid.mx @ (f * g) @ line_grid.mv)
    assert ip(a, line_grid.diffusion(b)) == pytest.approx(ip(line_grid.diffusion(a), b), rel=1e-10)
    assert ip(a, line_grid.diffusion(a)) == pytest.approx(line_grid.grad_v_sq(a), rel=1e-10)


def test_energy_identity_and_monotonicity(line_series):
    s = line_series
    assert np.all(np.diff(s.norm_sq) <= 0)
    assert P.dissipation_budget(s) <= 1e-4 * s.norm_sq[0]
    assert np.max(np.abs(s.mass)) <= 1e-12


def test_time_average_definition(line_series):
    s = line_series
    k = int(round(s.tau / s.dt))
    direct = np.trapezoid(s.norm_sq[3 : 3 + k + 1], dx=s.dt)
    assert s.h_tau[3] == pytest.approx(direct, rel=1e-12)
    assert s.h_tau.size == s.t.size - k


def test_rate_matches_friction_one(line_series):
    # the squared norm of the Gaussian line problem decays like exp(-t) at xi = 1
    assert P.fit_rate(line_series, 2.0) == pytest.approx(1.0, rel=0.1)


def test_decay_bound_checks(line_series):
    h0 = line_series.h_tau[0]
    loose = P.check_decay_bound(line_series, lambda t: h0 * np.exp(-0.2 * t))
    assert loose.passed and loose.max_ratio <= 1.0
    tight = P.check_decay_bound(line_series, lambda t: h0 * np.exp(-3.0 * t))
    assert not tight.passed
    pw = P.check_decay_bound(line_series, lambda t: h0 * np.ones_like(t),
                             pointwise=lambda t: line_series.norm_sq[0] * np.ones_like(t))
    assert pw.pointwise_ok and pw.passed


def test_dissipation_budget_synthetic(line_series):
    s = line_series
    fake = P.DecaySeries(s.t, s.norm_sq, s.grad_v_sq, s.mass, s.sup, s.h_tau,
                         np.full(s.residual.size, 2e-3), s.xi, s.tau, s.dt, s.h0_sup, s.h0_norm_sq)
    assert P.dissipation_budget(fake, 1.0) == pytest.approx(2e-3, rel=1e-9)


def test_cfl_violation(line_grid):
    fld = P.PhaseField(np.zeros(line_grid.shape), line_grid)
    with pytest.raises(CFLViolation):
        P.step(fld, 10 * line_grid.cfl_limit(), 1.0)
    out = P.step(fld, 0.5 * line_grid.cfl_limit(), 1.0)
    assert np.all(out.values == 0)


def test_phase_field_validation(line_grid):
    with pytest.raises(ValueError):
        P.PhaseField(np.zeros((3, 3)), line_grid)
    bad = np.zeros(line_grid.shape)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        P.PhaseField(bad, line_grid)


def test_grid_is_one_dimensional():
    spec = M.HamiltonianSpec(M.quadratic_potential(), M.quadratic_kinetic(), dim=2)
    with pytest.raises(ValueError):
        P.build_grid(spec)


def test_run_rejects_short_horizon(line_grid):
    with pytest.raises(ValueError):
        P.run(gaussian_spec(), initial, 1.0, tau=1.0, t_end=1.0, grid=line_grid)


def test_window_snapshots(line_series):
    traj = line_series.windows[3.0]
    assert traj.fields.shape == (8,) + line_series.windows[0.0].grid.shape
    np.testing.assert_allclose(traj.t, 3.0 + (np.arange(8) + 0.5) / 8)
    k = int(round((traj.t[0]) / line_series.dt))
    assert traj.grid.norm_sq(traj.fields[0]) == pytest.approx(line_series.norm_sq[k], rel=1e-12)


def test_window_checks_on_solution_and_random_fields(line_series, line_grid):
    cert = C.build_certificate(gaussian_spec(), 1.0, 1.0)
    for t0 in (0.0, 3.0):
        traj = line_series.windows[t0]
        assert P.averaging_lemma_check(traj, 1.0, cert["K_avg"])[2]
        assert P.modified_poincare_check(traj, cert["lambda_P"], 1.0)[2]
    rng = np.random.default_rng(7)
    for _ in range(5):
        traj = P.random_trajectory(line_grid, 1.0, rng, cells=8, modes=3)
        assert traj.transport_residual_sq > 0
        assert P.averaging_lemma_check(traj, 1.0, cert["K_avg"])[2]
        assert P.modified_poincare_check(traj, cert["lambda_P"], 1.0)[2]


def test_torus_energy_identity(torus_grid):
    s = P.run(torus_spec(), lambda x, v: np.cos(2 * np.pi * x) + np.tanh(v), 1.0,
              t_end=3.0, grid=torus_grid, dt_max=1e-2)
    assert np.all(np.diff(s.norm_sq) <= 0)
    assert P.dissipation_budget(s) <= 1e-4 * s.norm_sq[0]


def test_series_csv(tmp_path, line_series):
    path = tmp_path / "series.csv"
    h0 = line_series.h_tau[0]
    P.write_series_csv(path, line_series, lambda t: h0 * np.exp(-0.2 * t), every=10)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == P.SERIES_FIELDS
    assert len(rows) - 1 == len(range(0, line_series.t.size, 10))
    assert float(rows[1][1]) == line_series.norm_sq[0]
    assert all(r[-1] == "0" for r in rows[1:])
    path2 = tmp_path / "again.csv"
    P.write_series_csv(path2, line_series, lambda t: h0 * np.exp(-0.2 * t), every=10)
    assert path.read_bytes() == path2.read_bytes()


@pytest.mark.parametrize("torus", [False, True])
def test_maximum_principle(torus, line_series, torus_grid):
    # invariant max |h(t)| <= max |h0| + 1e-6; the centered skew transport is not monotone
    # and overshoots where the Gibbs weight is negligible, so this currently fails
    if torus:
        s = P.run(torus_spec(), lambda x, v: np.cos(2 * np.pi * x) + np.tanh(v), 1.0,
                  t_end=3.0, grid=torus_grid, dt_max=1e-2)
    else:
        s = line_series
    assert np.max(s.sup) <= s.h0_sup + 1e-6
