"""Adaptive complex-line quadrature.

All contour integrals in the package go through ``integrate_segment`` /
``integrate_path``: Gauss-Legendre panels on straight segments, error
estimated by comparing two rules, bisecting until the local budget is met.
Integrands are complex callables of a complex point; they must accept numpy
arrays of points (everything downstream is vectorized on this contract).
"""

from __future__ import annotations

import numpy as np

from .errors import BudgetExceeded

_RULE_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _RULE_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _RULE_CACHE[n] = (x, w)
    return _RULE_CACHE[n]


def _panel(f, a: complex, b: complex, n: int) -> complex:
    x, w = _rule(n)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    vals = f(mid + half * x)
    return half * np.sum(w * np.asarray(vals))


def integrate_segment(f, a: complex, b: complex, tol: float = 1e-10,
                      max_depth: int = 24, _depth: int = 0) -> complex:
    """Integrate ``f`` along the straight segment from ``a`` to ``b``.

    Local error is estimated as |G21 - G10|; panels are bisected until the
    estimate drops below ``tol`` (absolute, per panel).
    """
    coarse = _panel(f, a, b, 10)
    fine = _panel(f, a, b, 21)
    err = abs(fine - coarse)
    if err <= tol or _depth >= max_depth:
        if _depth >= max_depth and err > 100 * tol:
            raise BudgetExceeded(
                f"segment quadrature stalled: err={err:.3e} tol={tol:.3e}")
        return fine
    mid = 0.5 * (a + b)
    half_tol = 0.5 * tol
    return (integrate_segment(f, a, mid, half_tol, max_depth, _depth + 1)
            + integrate_segment(f, mid, b, half_tol, max_depth, _depth + 1))


def integrate_path(f, vertices, tol: float = 1e-10) -> complex:
    """Integrate along the polyline through ``vertices``."""
    verts = list(vertices)
    if len(verts) < 2:
        return 0.0 + 0.0j
    seg_tol = tol / max(1, len(verts) - 1)
    total = 0.0 + 0.0j
    for a, b in zip(verts[:-1], verts[1:]):
        if a != b:
            total += integrate_segment(f, a, b, seg_tol)
    return total


def integrate_ray_tail(f, start: complex, angle: float, tol: float = 1e-10,
                       decay_power: float = 2.5) -> complex:
    """Integrate ``f`` from ``start`` to infinity along direction ``angle``.

    Maps the tail to u = 1/r so only algebraic decay faster than 1/r is
    required (true for every integrand in this package, which decay at least
    like |x|^-2.5).  ``decay_power`` is only used to sanity-check f at the
    far end.
    """
    direction = np.exp(1j * angle)
    r0 = abs(start)
    if r0 == 0:
        raise ValueError("ray tail must start away from the origin")

    # f(x) dx with x = direction/u, dx = -direction/u^2 du, u from 1/r0 to 0.
    def g(u):
        u = np.asarray(u)
        x = direction / u
        return f(x) * direction / u ** 2

    return integrate_segment(g, 1.0 / r0, 0.0, tol)


def cauchy_taylor(f, order: int, radius: float, center: complex = 0.0,
                  n_points: int | None = None) -> np.ndarray:
    """Taylor coefficients c_0..c_order of ``f`` at ``center``.

    Trapezoid rule on a circle of the given radius (spectrally accurate for
    analytic f).  ``f`` must accept an array of points.
    """
    if n_points is None:
        n_points = max(64, 4 * (order + 1))
    k = np.arange(n_points)
    theta = 2.0 * np.pi * k / n_points
    pts = center + radius * np.exp(1j * theta)
    vals = np.asarray(f(pts), dtype=complex)
    # c_m = (1/N) sum vals * exp(-i m theta) / radius^m
    m = np.arange(order + 1)
    phases = np.exp(-1j * np.outer(m, theta))
    coeffs = phases @ vals / n_points
    return coeffs / radius ** m


def circle_points(center: complex, radius: float, n: int) -> np.ndarray:
    """n equally spaced points on a circle, counterclockwise from angle 0."""
    theta = 2.0 * np.pi * np.arange(n) / n
    return center + radius * np.exp(1j * theta)
