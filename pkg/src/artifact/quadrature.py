"""Composite Gauss-Legendre quadrature with panel doubling and tail shells."""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

ORDER = 16


class QuadratureDiverged(ArithmeticError):
    """Tail contributions failed to shrink before the radius cap."""


@lru_cache(maxsize=32)
def _reference_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    return leggauss(order)


def composite_rule(a: float, b: float, panels: int, order: int = ORDER):
    """Nodes and weights of a composite Gauss-Legendre rule on [a, b]."""
    x, w = _reference_rule(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def integrate_interval(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-12,
    panels: int = 4,
    max_panels: int = 1 << 14,
):
    """Integrate ``f`` over [a, b], doubling panels until two passes agree.

    ``f`` maps an array of abscissae of shape (n,) to values of shape
    (..., n); the integral is taken along the last axis.

    Returns
    -------
    value : ndarray or float
    error : float
        Difference between the last two refinement levels.
    """
    previous = None
    while True:
        x, w = composite_rule(a, b, panels)
        value = np.asarray(f(x)) @ w
        if previous is not None:
            err = float(np.max(np.abs(value - previous)))
            scale = max(float(np.max(np.abs(value))), 1.0)
            if err <= tol * scale or panels >= max_panels:
                return value, err
        previous = value
        panels *= 2


def integrate_line(
    f: Callable[[np.ndarray], np.ndarray],
    tol: float = 1e-12,
    core: float = 8.0,
    half: bool = False,
    max_radius: float = 1e8,
):
    """Integrate over the real line (or [0, inf) when ``half``).

    The core [-core, core] is refined by panel doubling; shells
    [R, 2R] are then added until their contribution, measured against the
    integral of ``|f|``, drops below ``tol``.

    Returns
    -------
    value, error, radius
        ``radius`` is the truncation radius actually used.

    Raises
    ------
    QuadratureDiverged
        If the shells do not decay before ``max_radius``.
    """

    def both(x):
        y = np.asarray(f(x), dtype=float)
        return np.stack([y, np.abs(y)])

    lo = 0.0 if half else -core
    total, err = integrate_interval(both, lo, core, tol=tol)
    radius = core
    while True:
        shell, shell_err = integrate_interval(both, radius, 2 * radius, tol=tol)
        if not half:
            left, left_err = integrate_interval(both, -2 * radius, -radius, tol=tol)
            shell = shell + left
            shell_err += left_err
        total = total + shell
        err += shell_err
        radius *= 2
        if shell[1] <= tol * max(total[1], 1e-300):
            return float(total[0]), float(err + shell[1]), radius
        if radius > max_radius:
            raise QuadratureDiverged(
                f"tail shells still contribute {shell[1]:.3e} at radius {radius:.3e}"
            )


def tensor_rule(a: float, b: float, panels: int, dim: int, order: int = ORDER):
    """Tensor-product composite rule on the cube [a, b]^dim.

    Returns nodes of shape (n**dim, dim) and weights of shape (n**dim,).
    """
    x, w = composite_rule(a, b, panels, order)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes, weights
