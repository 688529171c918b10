"""Seed embedding from the center curve's speed and geodesic curvature."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .bspline import BSplineManifold2D, BSplineSpace, fit_least_squares
from .geometry import StripDomain, geodesic_curvature_of_metric, metric

SPEED_DRIFT_TOL = 1e-6
MIN_G11 = 1e-8


class InitialStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class CenterCurveSample:
    u: np.ndarray       # (N,)
    c: np.ndarray       # (N, 2)
    cdot: np.ndarray    # (N, 2)
    cddot: np.ndarray   # (N, 2) from the ODE right-hand side
    speed: np.ndarray   # s_0 at u
    kappa: np.ndarray   # geodesic curvature at u

    def speed_drift(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.cdot, axis=1) - self.speed) / self.speed))


def _rhs_matrix(kappa, speed, dspeed):
    a = dspeed / speed
    b = kappa * speed
    return np.array([[a, -b], [b, a]])


def integrate_center_curve(
    kappa: np.ndarray, speed: np.ndarray, dspeed: np.ndarray,
    u_start: float, u_end: float, steps: int,
) -> CenterCurveSample:
    """Classical RK4 for ``c'' = [[s'/s, -k s], [k s, s'/s]] c'`` from ``c = 0, c' = (s, 0)``.

    ``kappa``, ``speed``, ``dspeed`` are sampled on the half-step grid
    ``linspace(u_start, u_end, 2*steps + 1)``.
    """
    if steps < 1:
        raise ValueError("need at least one step")
    h = (u_end - u_start) / steps
    u = np.linspace(u_start, u_end, steps + 1)
    A = [_rhs_matrix(kappa[i], speed[i], dspeed[i]) for i in range(2 * steps + 1)]
    c = np.zeros((steps + 1, 2))
    v = np.zeros((steps + 1, 2))
    v[0] = (speed[0], 0.0)
    for n in range(steps):
        A0, Am, A1 = A[2 * n], A[2 * n + 1], A[2 * n + 2]
        x, y = c[n], v[n]
        k1x, k1v = y, A0 @ y
        k2x, k2v = y + 0.5 * h * k1v, Am @ (y + 0.5 * h * k1v)
        k3x, k3v = y + 0.5 * h * k2v, Am @ (y + 0.5 * h * k2v)
        k4x, k4v = y + h * k3v, A1 @ (y + h * k3v)
        c[n + 1] = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v[n + 1] = y + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    acc = np.array([A[2 * n] @ v[n] for n in range(steps + 1)])
    return CenterCurveSample(u, c, v, acc, np.asarray(speed[::2], float), np.asarray(kappa[::2], float))


def center_data(strip: StripDomain, u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(kappa_0, s_0, ds_0/du1)`` along the strip's center line."""
    u = np.asarray(u, dtype=float)
    g = metric(strip.surface, u, np.full(u.shape, strip.center), partials=True)
    s = np.sqrt(g.g11)
    return geodesic_curvature_of_metric(g), s, g.dg[0] / (2 * s)


def solve_center_ode(strip: StripDomain, steps: int = 256) -> CenterCurveSample:
    if steps < 16:
        raise ValueError("steps must be at least 16")
    a, b = strip.u1_range
    kappa, s, ds = center_data(strip, np.linspace(a, b, 2 * steps + 1))
    sample = integrate_center_curve(kappa, s, ds, a, b, steps)
    drift = sample.speed_drift()
    if drift > SPEED_DRIFT_TOL:
        raise InitialStateError(f"center-curve speed drift {drift:.3e} exceeds {SPEED_DRIFT_TOL}; "
                                "increase the number of ODE steps")
    return sample


class InitialSurface:
    """``p_s(u1, u2) = c(u1) + R(u1) (u2 - c) c'(u1) / g11(u1, c)`` with straight rulings."""

    def __init__(self, strip: StripDomain, center: CenterCurveSample):
        self.strip = strip
        self.center = center
        self._c = CubicHermiteSpline(center.u, center.c, center.cdot, axis=0)
        self._cdot = CubicHermiteSpline(center.u, center.cdot, center.cddot, axis=0)

    def center_point(self, u1):
        return self._c(u1)

    def center_tangent(self, u1):
        return self._cdot(u1)

    def breadth_vector(self, u1) -> np.ndarray:
        """``dp_s/du2`` (independent of ``u2``)."""
        u1 = np.asarray(u1, dtype=float)
        lo, hi = self.center.u[0], self.center.u[-1]
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(u1 < lo - tol) or np.any(u1 > hi + tol):
            raise InitialStateError("evaluation outside the center-curve grid")
        g = metric(self.strip.surface, u1, np.full(u1.shape, self.strip.center))
        if np.any(g.g11 < MIN_G11):
            raise InitialStateError("g11 too small on the center line")
        root = np.sqrt(g.det)
        cd = self._cdot(u1)
        x = (g.g12 * cd[..., 0] - root * cd[..., 1]) / g.g11
        y = (root * cd[..., 0] + g.g12 * cd[..., 1]) / g.g11
        return np.stack([x, y], -1)

    def __call__(self, u1, u2) -> np.ndarray:
        u1, u2 = np.broadcast_arrays(np.asarray(u1, dtype=float), np.asarray(u2, dtype=float))
        flat1 = u1.ravel()
        out = self._c(flat1) + (u2.ravel() - self.strip.center)[:, None] * self.breadth_vector(flat1)
        return out.reshape(u1.shape + (2,))


def build_initial_surface(strip: StripDomain, center: CenterCurveSample) -> Callable:
    return InitialSurface(strip, center)


def fit_initial_manifold(strip: StripDomain, surface_fn: Callable, spans1: int = 8) -> BSplineManifold2D:
    """(3, 1) least-squares seed: cubic along the strip, one linear span across it."""
    if spans1 < 2:
        raise ValueError("spans1 must be at least 2")
    a, b = strip.u1_range
    space1 = BSplineSpace.uniform(3, a, b, spans1)
    space2 = BSplineSpace.uniform(1, strip.u2_lo, strip.u2_hi, 1)
    return fit_least_squares(space1, space2, surface_fn)


def initial_manifold(strip: StripDomain, spans1: int = 8, steps: int = 256) -> BSplineManifold2D:
    center = solve_center_ode(strip, steps)
    return fit_initial_manifold(strip, build_initial_surface(strip, center), spans1)
