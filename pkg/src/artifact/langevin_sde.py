"""Langevin dynamics as a stochastic cross-check of the decay rates.

``dX = grad psi(V) dt``, ``dV = -grad phi(X) dt - xi grad psi(V) dt + sqrt(2 xi) dW``,
integrated with a kick / free-flight / friction / free-flight / kick
splitting.  The friction step is the exact Ornstein-Uhlenbeck update for
quadratic kinetic energies and an Euler-Maruyama step otherwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import Blowup, NoDecay

__all__ = [
    "SdeConfig",
    "SdeSeries",
    "DecayFit",
    "integrate",
    "equilibrium_value",
    "empirical_decay",
    "friction_sweep",
    "sample_marginal",
    "write_series_csv",
    "write_sweep_csv",
    "OBSERVABLES",
    "BLOWUP",
    "SweepRow",
    "SweepResult",
]

OBSERVABLES = ("second_moment_x", "second_moment_v", "energy", "tabulated")
BLOWUP = 1e6
BLOCK_PATHS = 1024
SWEEP_FIELDS = ("xi", "empirical_rate", "rate_CI_lo", "rate_CI_hi", "certified_lambda_bar")


@dataclass(frozen=True)
class SdeConfig:
    """Langevin run description.

    Attributes
    ----------
    init : str
        ``origin`` (all paths at zero), ``point`` (``x0``, ``v0``) or
        ``gibbs`` (independent draws from both marginals).
    observable : str
        One of :data:`OBSERVABLES`; ``tabulated`` uses ``table`` as ``(x, g(x))``
        and averages ``g`` over the position coordinates.
    record_every : int
        Steps between recorded samples.
    """

    spec: object
    xi: float
    dt: float = 1e-3
    n_steps: int = 5000
    n_paths: int = 4096
    seed: int = 0
    observable: str = "second_moment_x"
    init: str = "origin"
    x0: float = 0.0
    v0: float = 0.0
    record_every: int = 10
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_paths < 1 or self.n_steps < 1:
            raise ValueError("n_paths and n_steps must be positive")
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")
        if self.observable not in OBSERVABLES:
            raise ValueError(f"unknown observable {self.observable!r}")
        if self.observable == "tabulated" and self.table is None:
            raise ValueError("tabulated observable needs a table")
        if self.init not in ("origin", "point", "gibbs"):
            raise ValueError(f"unknown init {self.init!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class SdeSeries:
    """Ensemble mean of the observable with jackknife standard errors."""

    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    equilibrium: float
    config: SdeConfig


def _block_rng(seed: int, block: int) -> np.random.Generator:
    """Counter-based stream for one block of paths; independent of how blocks are scheduled."""
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(block) << 64)))


def sample_marginal(profile, size, rng: np.random.Generator, n: int = 20001) -> np.ndarray:
    """Inverse-CDF draws from ``exp(-profile)`` tabulated on a fine grid."""
    from .spectral1d import truncation_radius

    if profile.period is not None:
        x = np.linspace(0.0, profile.period, n)
    elif profile.support is not None:
        x = np.linspace(*profile.support, n)
    else:
        r = truncation_radius(profile)
        x = np.linspace(-r, r, n)
    e = profile.derivative(x, 0)
    dens = np.exp(-(e - e.min()))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    return np.interp(rng.random(size), cdf, x)


def _observable(cfg: SdeConfig) -> Callable:
    spec = cfg.spec
    if cfg.observable == "second_moment_x":
        return lambda x, v: np.sum(x**2, axis=-1)
    if cfg.observable == "second_moment_v":
        return lambda x, v: np.sum(v**2, axis=-1)
    if cfg.observable == "energy":
        return lambda x, v: spec.potential.value(x) + spec.kinetic.value(v)
    tx, ty = (np.asarray(a, dtype=float) for a in cfg.table)
    return lambda x, v: np.mean(np.interp(x, tx, ty), axis=-1)


def equilibrium_value(cfg: SdeConfig) -> float:
    """Stationary mean of the observable by quadrature."""
    from .model import position_expectation, velocity_expectation

    spec = cfg.spec
    d = spec.dim
    px = spec.potential.profile
    if cfg.observable == "second_moment_x":
        return d * float(position_expectation(spec, lambda s: s**2)[0])
    if cfg.observable == "second_moment_v":
        return float(velocity_expectation(spec, lambda v, g, h: np.sum(v**2, axis=-1)))
    if cfg.observable == "energy":
        pot = d * float(position_expectation(spec, lambda s: px.derivative(s, 0))[0])
        kin = float(velocity_expectation(spec, lambda v, g, h: spec.kinetic.value(v)))
        return pot + kin
    tx, ty = (np.asarray(a, dtype=float) for a in cfg.table)
    return float(position_expectation(spec, lambda s: np.interp(s, tx, ty))[0])


def _initial(cfg: SdeConfig, n: int, rng: np.random.Generator):
    d = cfg.spec.dim
    if cfg.init == "origin":
        return np.zeros((n, d)), np.zeros((n, d))
    if cfg.init == "point":
        return np.full((n, d), float(cfg.x0)), np.full((n, d), float(cfg.v0))
    spec = cfg.spec
    x = sample_marginal(spec.potential.profile, (n, d), rng)
    kin = spec.kinetic
    if kin.separable or d == 1:
        v = sample_marginal(kin.profile_1d(), (n, d), rng)
    else:
        raise ValueError("Gibbs initialization needs a separable kinetic energy or d = 1")
    return x, v


def _run_block(cfg: SdeConfig, n: int, rng: np.random.Generator, obs: Callable):
    spec = cfg.spec
    dt, xi = cfg.dt, cfg.xi
    x, v = _initial(cfg, n, rng)
    quad_kin = spec.kinetic.family == "quadratic"
    decay = math.exp(-xi * dt)
    kick = math.sqrt(-math.expm1(-2.0 * xi * dt))
    period = spec.potential.period
    grad_phi = spec.potential.grad
    grad_psi = spec.kinetic.grad
    rec = [obs(x, v)]
    for k in range(1, cfg.n_steps + 1):
        v = v - 0.5 * dt * grad_phi(x)
        x = x + 0.5 * dt * grad_psi(v)
        if xi > 0:
            noise = rng.standard_normal(v.shape)
            if quad_kin:
                v = decay * v + kick * noise
            else:
                v = v - xi * dt * grad_psi(v) + math.sqrt(2.0 * xi * dt) * noise
        x = x + 0.5 * dt * grad_psi(v)
        v = v - 0.5 * dt * grad_phi(x)
        if period is not None:
            x = np.mod(x, period)
        if k % cfg.record_every == 0:
            if not np.all(np.abs(v) <= BLOWUP):
                raise Blowup(f"|V| exceeded {BLOWUP:g} at step {k}; reduce dt")
            rec.append(obs(x, v))
    return np.array(rec)  # (records, n)


def integrate(cfg: SdeConfig) -> SdeSeries:
    """Simulate all paths and return the ensemble mean with jackknife errors.

    Paths are processed in blocks of :data:`BLOCK_PATHS`, each with its own
    counter-based stream, so results do not depend on scheduling.  The
    jackknife deletes one block at a time (one path at a time when there is
    a single block).
    """
    obs = _observable(cfg)
    sums = []
    counts = []
    per_path = None
    blocks = math.ceil(cfg.n_paths / BLOCK_PATHS)
    for b in range(blocks):
        n = min(BLOCK_PATHS, cfg.n_paths - b * BLOCK_PATHS)
        vals = _run_block(cfg, n, _block_rng(cfg.seed, b), obs)
        sums.append(vals.sum(axis=1))
        counts.append(n)
        if blocks == 1:
            per_path = vals
    sums = np.array(sums)
    counts = np.array(counts, dtype=float)
    total = sums.sum(axis=0)
    mean = total / counts.sum()
    if blocks > 1:
        loo = (total[None, :] - sums) / (counts.sum() - counts)[:, None]
        g = blocks
        stderr = np.sqrt((g - 1) / g * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    elif cfg.n_paths > 1:
        stderr = per_path.std(axis=1, ddof=1) / math.sqrt(cfg.n_paths)
    else:
        stderr = np.full(mean.shape, np.nan)
    t = cfg.dt * cfg.record_every * np.arange(mean.size)
    return SdeSeries(t, mean, stderr, equilibrium_value(cfg), cfg)


@dataclass
class DecayFit:
    """Fitted exponential rate of ``|mean - equilibrium|`` with a bootstrap interval."""

    rate: float
    ci_lo: float
    ci_hi: float
    t_min: float
    t_max: float


def empirical_decay(
    t: np.ndarray,
    values: np.ndarray,
    equilibrium: float = 0.0,
    stderr: Optional[np.ndarray] = None,
    t_min: float = 0.0,
    t_max: Optional[float] = None,
    n_boot: int = 400,
    block: int = 8,
    seed: int = 0,
    level: float = 0.95,
) -> DecayFit:
    """Least-squares rate of ``log|values - equilibrium|`` with a moving-block bootstrap CI.

    The window ends where the deviation first drops below three standard
    errors (when ``stderr`` is given) or at ``t_max``.

    Raises
    ------
    NoDecay
        If the interval contains zero or no usable window exists.
    """
    t = np.asarray(t, dtype=float)
    dev = np.abs(np.asarray(values, dtype=float) - equilibrium)
    keep = t >= t_min
    if t_max is not None:
        keep &= t <= t_max
    if stderr is not None:
        small = np.nonzero(keep & (dev <= 3.0 * np.asarray(stderr)))[0]
        if small.size:
            keep &= np.arange(t.size) < small[0]
    keep &= dev > 0
    idx = np.nonzero(keep)[0]
    if idx.size < 3:
        raise NoDecay("fewer than three usable samples in the fit window")
    tt, yy = t[idx], np.log(dev[idx])
    slope, icpt = np.polyfit(tt, yy, 1)
    fitted = icpt + slope * tt
    resid = yy - fitted
    rng = np.random.default_rng(seed)
    n = tt.size
    block = max(1, min(block, n))
    starts = n - block + 1
    boot = np.empty(n_boot)
    for b in range(n_boot):
        picks = rng.integers(0, starts, size=math.ceil(n / block))
        sample = np.concatenate([resid[s : s + block] for s in picks])[:n]
        boot[b] = -np.polyfit(tt, fitted + sample, 1)[0]
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(boot, [alpha, 1.0 - alpha])
    rate = -float(slope)
    if not np.isfinite(rate) or rate <= 0.0 or lo <= 0.0:
        raise NoDecay(f"rate {rate:.3e} with interval [{lo:.3e}, {hi:.3e}] is compatible with zero")
    return DecayFit(rate, float(lo), float(hi), float(tt[0]), float(tt[-1]))


@dataclass
class SweepRow:
    xi: float
    fit: DecayFit
    certified_lambda_bar: float


@dataclass
class SweepResult:
    rows: List[SweepRow]
    increasing_small: bool
    decreasing_large: bool

    @property
    def unimodal(self) -> bool:
        return self.increasing_small and self.decreasing_large


def friction_sweep(
    spec,
    xis: Sequence[float],
    tau: float = 1.0,
    dt: float = 1e-2,
    t_end: float = 10.0,
    n_paths: int = 8192,
    seed: int = 0,
    observable: str = "second_moment_x",
    init: str = "origin",
    record_every: int = 5,
    certificate=None,
) -> SweepResult:
    """Empirical relaxation rate and certified ``lambda_bar`` for each friction.

    ``certificate`` may be a :class:`~artifact.certificates.RateCertificate`
    whose ``C_Lions``, ``K_avg`` and ``c_psi`` are reused for every friction.
    """
    from .certificates import build_certificate, exponential_rate

    xis = sorted(float(x) for x in xis)
    cert = certificate if certificate is not None else build_certificate(spec, xis[0], tau)
    rows = []
    for xi in xis:
        cfg = SdeConfig(
            spec, xi, dt=dt, n_steps=int(round(t_end / dt)), n_paths=n_paths, seed=seed,
            observable=observable, init=init, record_every=record_every,
        )
        series = integrate(cfg)
        fit = empirical_decay(series.t, series.mean, series.equilibrium, series.stderr, seed=seed)
        _, lam = exponential_rate(cert["C_Lions"], cert["K_avg"], cert["c_psi"], xi)
        rows.append(SweepRow(xi, fit, lam))
    rates = [r.fit.rate for r in rows]
    inc = len(rates) < 2 or rates[0] < rates[1]
    dec = len(rates) < 2 or rates[-1] < rates[-2]
    return SweepResult(rows, inc, dec)


def write_series_csv(path, series: SdeSeries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "mean_observable", "stderr"))
        for t, m, s in zip(series.t, series.mean, series.stderr):
            w.writerow((repr(float(t)), repr(float(m)), repr(float(s))))


def write_sweep_csv(path, result: SweepResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_FIELDS)
        for r in result.rows:
            w.writerow(tuple(repr(float(a)) for a in (r.xi, r.fit.rate, r.fit.ci_lo, r.fit.ci_hi, r.certified_lambda_bar)))
