import csv
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from artifact import langevin_sde as S
from artifact import model as M
from artifact.errors import Blowup, NoDecay


def gaussian_spec():
    return M.HamiltonianSpec(M.quadratic_potential(), M.quadratic_kinetic(),
                             potential_poincare=1.0, hessian_bound=1.0, laplacian_bound=1.0)


def ou_second_moment(xi, t):
    """Oracle: covariance ODE of the linear Langevin system started at the origin."""
    a = np.array([[0.0, 1.0], [-1.0, -xi]])
    q = np.diag([0.0, 2.0 * xi])

    def rhs(_, s):
        s = s.reshape(2, 2)
        return (a @ s + s @ a.T + q).ravel()

    sol = solve_ivp(rhs, (0.0, t[-1]), np.zeros(4), t_eval=t, rtol=1e-10, atol=1e-12)
    return sol.y[0]


def exact_rate(xi):
    return xi if xi < 2 else xi - math.sqrt(xi * xi - 4.0)


def test_ensemble_matches_covariance_oracle():
    cfg = S.SdeConfig(gaussian_spec(), 1.0, dt=1e-2, n_steps=300, n_paths=4096, seed=3, record_every=10)
    series = S.integrate(cfg)
    oracle = ou_second_moment(1.0, series.t)
    assert np.all(np.abs(series.mean - oracle) <= 4 * series.stderr + 5e-3)
    assert series.equilibrium == pytest.approx(1.0, abs=1e-8)


def test_gibbs_start_is_stationary():
    cfg = S.SdeConfig(gaussian_spec(), 1.0, dt=1e-2, n_steps=200, n_paths=4096, init="gibbs", observable="energy", record_every=20)
    series = S.integrate(cfg)
    assert series.equilibrium == pytest.approx(1.0, abs=1e-8)
    assert np.all(np.abs(series.mean - 1.0) <= 5 * series.stderr + 1e-2)


def test_frictionless_oscillator_is_deterministic():
    cfg = S.SdeConfig(gaussian_spec(), 0.0, dt=1e-3, n_steps=3000, n_paths=2, init="point", x0=1.0, record_every=100)
    series = S.integrate(cfg)
    np.testing.assert_allclose(series.mean, np.cos(series.t) ** 2, atol=1e-5)


def test_seed_reproducibility():
    make = lambda seed: S.integrate(S.SdeConfig(gaussian_spec(), 1.0, dt=1e-2, n_steps=50, n_paths=2048, seed=seed))
    a, b, c = make(7), make(7), make(8)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.stderr, b.stderr)
    assert not np.array_equal(a.mean, c.mean)


def test_blowup_detected():
    cfg = S.SdeConfig(gaussian_spec(), 0.0, dt=2.5, n_steps=200, n_paths=1, init="point", x0=1.0, record_every=1)
    with pytest.raises(Blowup):
        S.integrate(cfg)


@pytest.mark.parametrize("kwargs", [dict(dt=0.0), dict(n_paths=0), dict(xi=-1.0), dict(observable="nope"),
                                    dict(observable="tabulated"), dict(init="nowhere"), dict(seed=-1)])
def test_config_validation(kwargs):
    base = dict(spec=gaussian_spec(), xi=1.0)
    base.update(kwargs)
    with pytest.raises(ValueError):
        S.SdeConfig(**base)


def test_sample_marginal_gaussian():
    draws = S.sample_marginal(M.QuadraticProfile(1.0), 200000, np.random.default_rng(0))
    assert abs(draws.mean()) < 0.01 and draws.var() == pytest.approx(1.0, abs=0.02)


def test_tabulated_observable_equilibrium():
    x = np.linspace(-10, 10, 2001)
    cfg = S.SdeConfig(gaussian_spec(), 1.0, observable="tabulated", table=(x, x**2))
    assert S.equilibrium_value(cfg) == pytest.approx(1.0, abs=1e-4)


def test_empirical_decay_synthetic():
    t = np.linspace(0.0, 8.0, 161)
    rng = np.random.default_rng(0)
    values = 1.0 + np.exp(-0.7 * t) * (1 + 0.01 * rng.standard_normal(t.size))
    fit = S.empirical_decay(t, values, 1.0)
    assert fit.rate == pytest.approx(0.7, rel=0.01)
    assert fit.ci_lo <= 0.7 <= fit.ci_hi


def test_empirical_decay_rejects_noise():
    t = np.linspace(0.0, 8.0, 161)
    noise = 1e-3 * np.abs(np.random.default_rng(1).standard_normal(t.size))
    with pytest.raises(NoDecay):
        S.empirical_decay(t, noise, 0.0)


def test_friction_sweep_matches_exact_rates(tmp_path):
    res = S.friction_sweep(gaussian_spec(), [0.3, 1.0, 3.0], dt=1e-2, t_end=8.0, n_paths=4096)
    assert res.unimodal
    for row in res.rows:
        assert row.fit.rate == pytest.approx(exact_rate(row.xi), rel=0.2)
        assert row.certified_lambda_bar < row.fit.rate
    path = tmp_path / "sweep.csv"
    S.write_sweep_csv(path, res)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == S.SWEEP_FIELDS and len(rows) == 4


def test_series_csv_round_trip(tmp_path):
    series = S.integrate(S.SdeConfig(gaussian_spec(), 1.0, dt=1e-2, n_steps=20, n_paths=64, record_every=5))
    path = tmp_path / "sde.csv"
    S.write_series_csv(path, series)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "mean_observable", "stderr"]
    np.testing.assert_array_equal([float(r[1]) for r in rows[1:]], series.mean)
