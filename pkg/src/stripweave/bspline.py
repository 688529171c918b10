"""Clamped tensor-product B-splines: basis evaluation, refinement and fitting.

Conventions: knot vectors are open (end multiplicity ``p + 1``); basis functions
are right-continuous inside the domain and the right end uses the right-limit
value so that the parameter interval is closed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve


class KnotError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BSplineSpace:
    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 0:
            raise KnotError("degree must be non-negative")
        if knots.ndim != 1 or len(knots) < 2 * (p + 1):
            raise KnotError(f"need at least {2 * (p + 1)} knots for degree {p}")
        if np.any(np.diff(knots) < 0):
            raise KnotError("knots must be non-decreasing")
        if not (np.all(knots[: p + 1] == knots[0]) and np.all(knots[-p - 1:] == knots[-1])):
            raise KnotError("knot vector must be clamped (end multiplicity p+1)")
        if knots[0] == knots[-1]:
            raise KnotError("degenerate parameter interval")
        if np.any(np.diff(knots) == 0) and _max_interior_multiplicity(knots, p) > p + 1:
            raise KnotError("interior knot multiplicity exceeds p+1")

    @classmethod
    def uniform(cls, degree: int, a: float, b: float, spans: int) -> "BSplineSpace":
        inner = np.linspace(a, b, spans + 1)[1:-1]
        knots = np.concatenate([np.full(degree + 1, a), inner, np.full(degree + 1, b)])
        return cls(degree, knots)

    @property
    def dim(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    def spans(self) -> list[tuple[int, float, float]]:
        """Non-empty knot spans as ``(i, t_i, t_{i+1})`` with ``t_i < t_{i+1}``."""
        t = self.knots
        return [(i, t[i], t[i + 1]) for i in range(self.degree, self.dim) if t[i] < t[i + 1]]

    def find_span(self, u) -> np.ndarray:
        """Index ``i`` with ``t_i <= u < t_{i+1}`` (last span for the right end)."""
        u = np.asarray(u, dtype=float)
        i = np.searchsorted(self.knots, u, side="right") - 1
        return np.clip(i, self.degree, self.dim - 1)

    def greville(self) -> np.ndarray:
        p, t = self.degree, self.knots
        if p == 0:
            return 0.5 * (t[:-1] + t[1:])
        return np.array([t[i + 1:i + p + 1].mean() for i in range(self.dim)])

    def to_json(self) -> dict:
        return {"degree": self.degree, "knots": [float(k) for k in self.knots]}

    def __eq__(self, other):
        return (isinstance(other, BSplineSpace) and self.degree == other.degree
                and np.array_equal(self.knots, other.knots))

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))


def _max_interior_multiplicity(knots, p) -> int:
    inner = knots[p + 1:len(knots) - p - 1]
    if len(inner) == 0:
        return 0
    _, counts = np.unique(inner, return_counts=True)
    return int(counts.max())


def _check_param(space: BSplineSpace, u: np.ndarray) -> None:
    a, b = space.domain
    tol = 1e-12 * max(1.0, abs(a), abs(b))
    if np.any(u < a - tol) or np.any(u > b + tol) or not np.all(np.isfinite(u)):
        raise ValueError(f"parameter outside [{a}, {b}]")


def _degree_tables(space: BSplineSpace, u: np.ndarray, upto: int) -> list[np.ndarray]:
    """Cox-de Boor tables ``N_{i,k}(u)`` for ``k = 0..upto``, shape ``(m, len(t)-k-1)``."""
    t = space.knots
    u = np.clip(u, t[0], t[-1])
    L = len(t)
    N0 = ((t[None, :-1] <= u[:, None]) & (u[:, None] < t[None, 1:])).astype(float)
    at_end = u >= t[-1]
    if np.any(at_end):
        last = space.dim - 1  # last non-empty span of a clamped vector
        N0[at_end] = 0.0
        N0[at_end, last] = 1.0
    tables = [N0]
    for k in range(1, upto + 1):
        prev = tables[-1]
        n = L - k - 1
        left_den = t[k:k + n] - t[:n]
        right_den = t[k + 1:k + 1 + n] - t[1:1 + n]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (u[:, None] - t[None, :n]) / left_den, 0.0)
            right = np.where(right_den > 0, (t[None, k + 1:k + 1 + n] - u[:, None]) / right_den, 0.0)
        tables.append(left * prev[:, :n] + right * prev[:, 1:n + 1])
    return tables


def basis_matrix(space: BSplineSpace, u, deriv: int = 0) -> np.ndarray:
    """All basis functions (or their ``deriv``-th derivative) at ``u``: shape ``(m, dim)``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    _check_param(space, u)
    p, t = space.degree, space.knots
    if deriv > p:
        return np.zeros((len(u), space.dim))
    tables = _degree_tables(space, u, p - deriv)
    # coefficient recursion: d/du N_{i,k} = k/(t_{i+k}-t_i) N_{i,k-1} - k/(t_{i+k+1}-t_{i+1}) N_{i+1,k-1}
    cur = tables[p - deriv]
    for k in range(p - deriv + 1, p + 1):
        n = len(t) - k - 1
        a_den = t[k:k + n] - t[:n]
        b_den = t[k + 1:k + 1 + n] - t[1:1 + n]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(a_den > 0, k / a_den, 0.0)
            b = np.where(b_den > 0, k / b_den, 0.0)
        cur = a * cur[:, :n] - b * cur[:, 1:n + 1]
    return cur


def basis(space: BSplineSpace, i: int, u: float, order: int = 0) -> float:
    if not 0 <= i < space.dim:
        raise IndexError(f"basis index {i} outside 0..{space.dim - 1}")
    return float(basis_matrix(space, [u], order)[0, i])


def gauss_points(space: BSplineSpace, npts: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on every non-empty span; returns ``(nodes, weights, span_index)``."""
    x, w = np.polynomial.legendre.leggauss(npts)
    nodes, weights, spans = [], [], []
    for i, a, b in space.spans():
        half = 0.5 * (b - a)
        nodes.append(a + half * (x + 1))
        weights.append(half * w)
        spans.append(np.full(npts, i))
    return np.concatenate(nodes), np.concatenate(weights), np.concatenate(spans)


# ---------------------------------------------------------------------------
# manifolds


@dataclass(frozen=True, eq=False)
class BSplineManifold2D:
    """Tensor-product map ``(u1, u2) -> R^2``; ``control`` has shape ``(n1, n2, 2)``."""

    space1: BSplineSpace
    space2: BSplineSpace
    control: np.ndarray

    def __post_init__(self):
        ctrl = np.array(self.control, dtype=float)
        ctrl.setflags(write=False)
        object.__setattr__(self, "control", ctrl)
        if ctrl.shape[:2] != (self.space1.dim, self.space2.dim) or ctrl.ndim != 3:
            raise ValueError(f"control grid {ctrl.shape} does not match spaces "
                             f"({self.space1.dim}, {self.space2.dim})")

    @property
    def degrees(self) -> tuple[int, int]:
        return self.space1.degree, self.space2.degree

    @property
    def shape(self) -> tuple[int, int]:
        return self.control.shape[0], self.control.shape[1]

    def with_control(self, control) -> "BSplineManifold2D":
        return BSplineManifold2D(self.space1, self.space2, control)

    def evaluate(self, u1, u2, d1: int = 0, d2: int = 0) -> np.ndarray:
        """Pointwise evaluation (broadcast ``u1``, ``u2``) of a partial derivative; shape ``(..., 2)``."""
        u1, u2 = np.broadcast_arrays(np.asarray(u1, dtype=float), np.asarray(u2, dtype=float))
        shape = u1.shape
        B1 = basis_matrix(self.space1, u1.ravel(), d1)
        B2 = basis_matrix(self.space2, u2.ravel(), d2)
        out = np.einsum("mi,mj,ijd->md", B1, B2, self.control)
        return out.reshape(shape + (self.control.shape[2],))

    def jet1(self, u1, u2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.evaluate(u1, u2), self.evaluate(u1, u2, 1, 0), self.evaluate(u1, u2, 0, 1)

    def evaluate_grid(self, u1, u2, d1: int = 0, d2: int = 0) -> np.ndarray:
        """Values on the tensor grid ``u1 x u2``; shape ``(len(u1), len(u2), 2)``."""
        B1 = basis_matrix(self.space1, u1, d1)
        B2 = basis_matrix(self.space2, u2, d2)
        return np.einsum("ai,ijd,bj->abd", B1, self.control, B2)

    def to_json(self) -> dict:
        n1, n2, dim = self.control.shape
        return {
            "degrees": [self.space1.degree, self.space2.degree],
            "knots": [[float(k) for k in self.space1.knots], [float(k) for k in self.space2.knots]],
            "shape": [n1, n2],
            "control": [[float(x) for x in row] for row in self.control.reshape(n1 * n2, dim)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "BSplineManifold2D":
        (p1, p2), (k1, k2) = data["degrees"], data["knots"]
        s1, s2 = BSplineSpace(int(p1), k1), BSplineSpace(int(p2), k2)
        ctrl = np.asarray(data["control"], dtype=float).reshape(s1.dim, s2.dim, -1)
        return cls(s1, s2, ctrl)


# ---------------------------------------------------------------------------
# refinement


def insert_knot(space: BSplineSpace, control: np.ndarray, ubar: float, axis: int = 0):
    """Boehm insertion of one knot; ``control`` is indexed by basis along ``axis``."""
    p, t = space.degree, space.knots
    a, b = space.domain
    if not a < ubar < b:
        raise KnotError(f"knot {ubar} must lie strictly inside ({a}, {b})")
    s = int(np.sum(t == ubar))
    if s + 1 > p + 1:
        raise KnotError(f"inserting {ubar} exceeds multiplicity p+1={p + 1}")
    k = int(np.searchsorted(t, ubar, side="right") - 1)
    P = np.moveaxis(np.asarray(control, dtype=float), axis, 0)
    n = P.shape[0]
    Q = np.empty((n + 1,) + P.shape[1:])
    Q[: k - p + 1] = P[: k - p + 1]
    Q[k - s + 1:] = P[k - s:]
    for i in range(k - p + 1, k - s + 1):
        alpha = (ubar - t[i]) / (t[i + p] - t[i])
        Q[i] = alpha * P[i] + (1 - alpha) * P[i - 1]
    new_space = BSplineSpace(p, np.insert(t, k + 1, ubar))
    return new_space, np.moveaxis(Q, 0, axis)


def h_refine(m: BSplineManifold2D, new_knots1=(), new_knots2=()) -> BSplineManifold2D:
    s1, s2, ctrl = m.space1, m.space2, np.array(m.control)
    for u in sorted(new_knots1):
        s1, ctrl = insert_knot(s1, ctrl, float(u), axis=0)
    for u in sorted(new_knots2):
        s2, ctrl = insert_knot(s2, ctrl, float(u), axis=1)
    return BSplineManifold2D(s1, s2, ctrl)


def elevated_space(space: BSplineSpace, raise_by: int) -> BSplineSpace:
    """Space of degree ``p + r`` with every distinct knot's multiplicity raised by ``r``."""
    if raise_by == 0:
        return space
    values, counts = np.unique(space.knots, return_counts=True)
    knots = np.repeat(values, counts + raise_by)
    return BSplineSpace(space.degree + raise_by, knots)


def _split_discontinuous(space: BSplineSpace) -> list[tuple[BSplineSpace, int]]:
    """Pieces between interior knots of multiplicity p+1, with each piece's first basis index.

    At such a knot the space is the direct sum of two clamped spaces, and Greville
    abscissae of the two pieces coincide there, so collocation must be done per piece.
    """
    p, t = space.degree, space.knots
    pieces, start = [], 0
    values, counts = np.unique(t, return_counts=True)
    for v, c in zip(values[1:-1], counts[1:-1]):
        if c == p + 1:
            j = int(np.searchsorted(t, v, side="left"))
            pieces.append((BSplineSpace(p, t[start:j + p + 1]), start))
            start = j
    pieces.append((BSplineSpace(p, t[start:]), start))
    return pieces


def elevate_degree(space: BSplineSpace, control: np.ndarray, raise_by: int, axis: int = 0):
    """Raise the degree along ``axis`` by collocation at the new Greville abscissae.

    The old space is nested in the new one, so the interpolant reproduces the geometry
    exactly (up to rounding).
    """
    P = np.moveaxis(np.asarray(control, dtype=float), axis, 0)
    if raise_by == 0:
        return space, np.moveaxis(P.copy(), 0, axis)
    out = []
    for piece, first in _split_discontinuous(space):
        new = elevated_space(piece, raise_by)
        x = new.greville()
        vals = basis_matrix(piece, x) @ P[first:first + piece.dim].reshape(piece.dim, -1)
        out.append(lu_solve(lu_factor(basis_matrix(new, x)), vals))
    Q = np.concatenate(out).reshape((-1,) + P.shape[1:])
    return elevated_space(space, raise_by), np.moveaxis(Q, 0, axis)


def p_refine(m: BSplineManifold2D, raise1: int = 0, raise2: int = 0) -> BSplineManifold2D:
    """Degree elevation along each parametric direction."""
    if raise1 < 0 or raise2 < 0:
        raise ValueError("degree raise must be non-negative")
    if raise1 == 0 and raise2 == 0:
        return m
    s1, ctrl = elevate_degree(m.space1, m.control, raise1, axis=0)
    s2, ctrl = elevate_degree(m.space2, ctrl, raise2, axis=1)
    return BSplineManifold2D(s1, s2, ctrl)


def fit_least_squares(
    space1: BSplineSpace,
    space2: BSplineSpace,
    target: Callable[[np.ndarray, np.ndarray], np.ndarray],
    quad_density: tuple[int, int] | int | None = None,
) -> BSplineManifold2D:
    """Continuous L2 projection of ``target`` onto ``space1 x space2``.

    ``target(U1, U2)`` receives broadcastable grids and returns ``(..., 2)`` values.
    The integral is discretised with Gauss-Legendre points per span (default ``p + 3``).
    """
    if quad_density is None:
        quad_density = (space1.degree + 3, space2.degree + 3)
    elif isinstance(quad_density, int):
        quad_density = (quad_density, quad_density)
    x1, w1, _ = gauss_points(space1, quad_density[0])
    x2, w2, _ = gauss_points(space2, quad_density[1])
    B1 = basis_matrix(space1, x1)
    B2 = basis_matrix(space2, x2)
    vals = np.asarray(target(x1[:, None], x2[None, :]), dtype=float)
    vals = np.broadcast_to(vals, (len(x1), len(x2), vals.shape[-1]))
    G1 = B1.T @ (w1[:, None] * B1)
    G2 = B2.T @ (w2[:, None] * B2)
    try:
        c1, c2 = cho_factor(G1), cho_factor(G2)
    except np.linalg.LinAlgError as exc:
        raise KnotError("singular Gram matrix (degenerate knot vector)") from exc
    rhs = np.einsum("ai,a,abd,b,bj->ijd", B1, w1, vals, w2, B2)
    n1, n2, d = rhs.shape
    tmp = cho_solve(c1, rhs.reshape(n1, -1)).reshape(n1, n2, d)
    ctrl = cho_solve(c2, np.swapaxes(tmp, 0, 1).reshape(n2, -1)).reshape(n2, n1, d)
    return BSplineManifold2D(space1, space2, np.swapaxes(ctrl, 0, 1))


# ---------------------------------------------------------------------------
# Bezier extraction (curves)


def bezier_segments(space: BSplineSpace, control: np.ndarray) -> list[np.ndarray]:
    """Split a clamped B-spline curve into Bezier segments of degree ``p``."""
    p = space.degree
    s, ctrl = space, np.asarray(control, dtype=float)
    for u in space.breakpoints[1:-1]:
        while int(np.sum(s.knots == u)) < p:
            s, ctrl = insert_knot(s, ctrl, float(u))
    nseg = len(space.breakpoints) - 1
    if p == 0:
        return [ctrl[i:i + 1] for i in range(nseg)]
    return [ctrl[i * p:i * p + p + 1] for i in range(nseg)]


def elevate_bezier(points: np.ndarray, degree: int) -> np.ndarray:
    """Raise a Bezier segment's degree to ``degree``."""
    P = np.asarray(points, dtype=float)
    while P.shape[0] - 1 < degree:
        n = P.shape[0] - 1
        Q = np.empty((n + 2,) + P.shape[1:])
        Q[0], Q[-1] = P[0], P[-1]
        for i in range(1, n + 1):
            a = i / (n + 1)
            Q[i] = a * P[i - 1] + (1 - a) * P[i]
        P = Q
    return P
