"""Differential geometry of the reference (curved) state."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .surface import SurfaceDefinition


class GeometryError(ValueError):
    """Degenerate metric or Jacobian."""


@dataclass(frozen=True)
class Metric2:
    """Coordinate metric ``g_ij``; arrays broadcast together.

    ``dg`` holds ``(dg11_1, dg12_1, dg22_1, dg11_2, dg12_2, dg22_2)`` when requested.
    """

    g11: np.ndarray
    g12: np.ndarray
    g22: np.ndarray
    dg: tuple | None = None

    @property
    def det(self) -> np.ndarray:
        return self.g11 * self.g22 - self.g12 * self.g12

    def matrix(self) -> np.ndarray:
        g11, g12, g22 = np.broadcast_arrays(self.g11, self.g12, self.g22)
        return np.stack([np.stack([g11, g12], -1), np.stack([g12, g22], -1)], -2)

    def inverse(self) -> np.ndarray:
        det = self.det
        g11, g12, g22 = np.broadcast_arrays(self.g11, self.g12, self.g22)
        return np.stack([np.stack([g22, -g12], -1), np.stack([-g12, g11], -1)], -2) / det[..., None, None]

    def check(self) -> "Metric2":
        if np.any(~(np.asarray(self.g11) > 0)) or np.any(~(self.det > 0)):
            raise GeometryError("metric is not positive definite (rank-deficient Jacobian)")
        return self

    @classmethod
    def from_matrix(cls, g) -> "Metric2":
        g = np.asarray(g, dtype=float)
        return cls(g[..., 0, 0], 0.5 * (g[..., 0, 1] + g[..., 1, 0]), g[..., 1, 1])


@dataclass(frozen=True)
class StripDomain:
    """Parameter strip ``I x [c - half_breadth, c + half_breadth]`` of a surface."""

    surface: SurfaceDefinition
    u1_range: tuple[float, float]
    center: float
    half_breadth: float
    index: int = 0

    def __post_init__(self):
        if not self.half_breadth > 0:
            raise ValueError("half_breadth must be positive")
        a, b = self.u1_range
        if not a < b:
            raise ValueError("empty u1 interval")
        self.surface.check_domain(np.array([a, b]), np.array([self.u2_lo, self.u2_hi]))

    @classmethod
    def from_bounds(cls, surface, u1_range, u2_lo, u2_hi, index=0) -> "StripDomain":
        return cls(surface, (float(u1_range[0]), float(u1_range[1])),
                   0.5 * (u2_lo + u2_hi), 0.5 * (u2_hi - u2_lo), index)

    @property
    def u2_lo(self) -> float:
        return self.center - self.half_breadth

    @property
    def u2_hi(self) -> float:
        return self.center + self.half_breadth

    @property
    def length(self) -> float:
        return self.u1_range[1] - self.u1_range[0]

    def scaled(self, beta: float) -> "StripDomain":
        return StripDomain(self.surface, self.u1_range, self.center, self.half_breadth * beta, self.index)


def metric(surface: SurfaceDefinition, u1, u2, partials: bool = False) -> Metric2:
    """``g_ij = p_i . p_j``; with ``partials`` also ``dg_ij/du^k`` from exact second derivatives."""
    jet = surface.jet2(u1, u2)
    p1, p2 = jet.p1, jet.p2
    g = Metric2(np.sum(p1 * p1, -1), np.sum(p1 * p2, -1), np.sum(p2 * p2, -1))
    if partials:
        p11, p12, p22 = jet.p11, jet.p12, jet.p22
        dot = lambda a, b: np.sum(a * b, -1)  # noqa: E731
        dg = (
            2 * dot(p11, p1), dot(p11, p2) + dot(p1, p12), 2 * dot(p12, p2),
            2 * dot(p12, p1), dot(p12, p2) + dot(p1, p22), 2 * dot(p22, p2),
        )
        g = Metric2(g.g11, g.g12, g.g22, dg)
    return g.check()


def gaussian_curvature(surface: SurfaceDefinition, u1, u2) -> np.ndarray:
    """Extrinsic ``K = (LN - M^2) / (EG - F^2)``."""
    jet = surface.jet2(u1, u2)
    n = np.cross(jet.p1, jet.p2)
    norm = np.linalg.norm(n, axis=-1)
    if np.any(~(norm > 0)):
        raise GeometryError("rank-deficient Jacobian")
    n = n / norm[..., None]
    L = np.sum(jet.p11 * n, -1)
    M = np.sum(jet.p12 * n, -1)
    N = np.sum(jet.p22 * n, -1)
    E = np.sum(jet.p1 * jet.p1, -1)
    F = np.sum(jet.p1 * jet.p2, -1)
    G = np.sum(jet.p2 * jet.p2, -1)
    return (L * N - M * M) / (E * G - F * F)


def center_speed(strip: StripDomain, u1) -> np.ndarray:
    g = metric(strip.surface, u1, np.full(np.shape(u1), strip.center))
    return np.sqrt(g.g11)


def center_speed_derivative(strip: StripDomain, u1) -> np.ndarray:
    """``d s_0 / du^1`` along the center line."""
    g = metric(strip.surface, u1, np.full(np.shape(u1), strip.center), partials=True)
    return g.dg[0] / (2 * np.sqrt(g.g11))


def geodesic_curvature_of_metric(g: Metric2) -> np.ndarray:
    """Geodesic curvature of the ``u2 = const`` coordinate line (left turns positive)."""
    dg11_1, dg12_1, _, dg11_2, _, _ = g.dg
    return (g.g11 * (2 * dg12_1 - dg11_2) - g.g12 * dg11_1) / (2 * g.g11 ** 1.5 * np.sqrt(g.det))


def geodesic_curvature(strip: StripDomain, u1) -> np.ndarray:
    g = metric(strip.surface, u1, np.full(np.shape(u1), strip.center), partials=True)
    return geodesic_curvature_of_metric(g)


def orthonormal_frame(g: Metric2) -> np.ndarray:
    """Rows are ``e_k`` in coordinate components (``e[..., k, i] = e_k^i``); lower triangular."""
    g.check()
    s11 = np.sqrt(g.g11)
    sdet = np.sqrt(g.det)
    zero = np.zeros_like(s11 * sdet)
    row1 = np.stack([1 / s11 + zero, zero], -1)
    row2 = np.stack([-g.g12 / (s11 * sdet) + zero, s11 / sdet + zero], -1)
    return np.stack([row1, row2], -2)


def tensor_to_orthonormal(T, g: Metric2) -> np.ndarray:
    """Covariant ``(0,2)`` components in the orthonormal frame: ``e T e^T``."""
    e = orthonormal_frame(g)
    return e @ np.asarray(T, dtype=float) @ np.swapaxes(e, -1, -2)


def contravariant_to_orthonormal(T, g: Metric2) -> np.ndarray:
    """Contravariant ``(2,0)`` components in the orthonormal frame: ``e^-T T e^-1``."""
    e = orthonormal_frame(g)
    einv = np.linalg.inv(e)
    return np.swapaxes(einv, -1, -2) @ np.asarray(T, dtype=float) @ einv
