"""Isotropic St. Venant-Kirchhoff material on a Riemannian reference metric."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, Metric2, contravariant_to_orthonormal, tensor_to_orthonormal


@dataclass(frozen=True)
class ElasticityParams:
    young: float = 1.0
    poisson: float = 0.25
    dim: int = 2

    def __post_init__(self):
        if not self.young > 0:
            raise ValueError("Young's modulus must be positive")
        if not -1 < self.poisson < 1 / (self.dim - 1):
            raise ValueError(f"Poisson's ratio must lie in (-1, {1 / (self.dim - 1)})")

    @property
    def lam(self) -> float:
        nu, d = self.poisson, self.dim
        return nu * self.young / ((1 + nu) * (1 - (d - 1) * nu))

    @property
    def mu(self) -> float:
        return self.young / (2 * (1 + self.poisson))


def stiffness(params: ElasticityParams, g0: Metric2) -> np.ndarray:
    """``C^{ijkl} = lam g^ij g^kl + mu (g^ik g^jl + g^il g^jk)``; shape ``(..., 2, 2, 2, 2)``."""
    g0.check()
    h = g0.inverse()
    lam, mu = params.lam, params.mu
    return (lam * np.einsum("...ij,...kl->...ijkl", h, h)
            + mu * (np.einsum("...ik,...jl->...ijkl", h, h) + np.einsum("...il,...jk->...ijkl", h, h)))


# Voigt ordering (11, 22, 12) with engineering shear 2*E12
_VOIGT = ((0, 0), (1, 1), (0, 1))


def voigt(C: np.ndarray) -> np.ndarray:
    """Pack ``C^{ijkl}`` so that ``C(E, E) = e^T Cv e`` with ``e = (E11, E22, 2 E12)``."""
    rows = [[C[..., i, j, k, l] for (k, l) in _VOIGT] for (i, j) in _VOIGT]
    return np.stack([np.stack(r, -1) for r in rows], -2)


def stiffness_voigt(params: ElasticityParams, g0: Metric2) -> np.ndarray:
    """Closed form of ``voigt(stiffness(...))`` used by the assembler."""
    g0.check()
    det = g0.det
    h11, h12, h22 = g0.g22 / det, -g0.g12 / det, g0.g11 / det
    lam, mu = params.lam, params.mu

    def c(a, b, c_, d):
        h = {(0, 0): h11, (0, 1): h12, (1, 0): h12, (1, 1): h22}
        return lam * h[a, b] * h[c_, d] + mu * (h[a, c_] * h[b, d] + h[a, d] * h[b, c_])

    rows = [[c(i, j, k, l) for (k, l) in _VOIGT] for (i, j) in _VOIGT]
    return np.stack([np.stack(np.broadcast_arrays(*r), -1) for r in rows], -2)


def strain_voigt(E: np.ndarray) -> np.ndarray:
    return np.stack([E[..., 0, 0], E[..., 1, 1], 2 * E[..., 0, 1]], -1)


@dataclass(frozen=True)
class StrainState:
    g0: Metric2
    gt: np.ndarray
    E: np.ndarray
    E_ortho: np.ndarray
    S: np.ndarray
    S_ortho: np.ndarray
    density: np.ndarray


def strain_state(params: ElasticityParams, g0: Metric2, p1, p2) -> StrainState:
    """Green strain / 2nd Piola-Kirchhoff stress from embedding tangents ``p1, p2`` in R^2.

    ``density`` is ``1/2 C(E, E)`` without the volume factor.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    gt = np.stack([
        np.stack([np.sum(p1 * p1, -1), np.sum(p1 * p2, -1)], -1),
        np.stack([np.sum(p2 * p1, -1), np.sum(p2 * p2, -1)], -1),
    ], -2)
    E = 0.5 * (gt - g0.matrix())
    C = stiffness(params, g0)
    S = np.einsum("...ijkl,...ij->...kl", C, E)
    density = 0.5 * np.einsum("...kl,...kl->...", S, E)
    return StrainState(
        g0=g0, gt=gt, E=E,
        E_ortho=tensor_to_orthonormal(E, g0),
        S=S,
        S_ortho=contravariant_to_orthonormal(S, g0),
        density=density,
    )


def energy_density(params: ElasticityParams, g0: Metric2, E: np.ndarray) -> np.ndarray:
    """``1/2 C(E, E) sqrt(det g0)``: density with respect to ``du1 du2``."""
    C = stiffness(params, g0)
    return 0.5 * np.einsum("...ijkl,...ij,...kl->...", C, E, E) * np.sqrt(g0.det)


def swap_energy_check(params: ElasticityParams, g0: Metric2, Ebar, alphas) -> np.ndarray:
    """``|W(alpha) - W_swapped(alpha)|`` pointwise for each alpha; shape ``(len(alphas), ...)``.

    The current metric is ``g0 + 2 alpha Ebar``; the swapped problem uses it as the
    reference metric (stiffness and volume form) with strain ``-alpha Ebar``.
    """
    Ebar = np.asarray(Ebar, dtype=float)
    out = []
    for alpha in alphas:
        E = alpha * Ebar
        gt = Metric2.from_matrix(g0.matrix() + 2 * E)
        if np.any(~(gt.g11 > 0)) or np.any(~(gt.det > 0)):
            raise GeometryError(f"g0 + 2*alpha*Ebar leaves the positive cone at alpha={alpha}")
        W = energy_density(params, g0, E)
        W_hat = energy_density(params, gt, -E)
        out.append(np.abs(W - W_hat))
    return np.array(out)
