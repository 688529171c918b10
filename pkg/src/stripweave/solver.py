"""Galerkin strain-energy minimisation on a B-spline manifold by Newton-Raphson.

The unknowns are the control points ``a_I in R^2``, flattened as ``dof = 2 * I + m``
with ``I = i1 * n2 + i2``. The residual is the gradient of the total strain energy

    W(a) = sum_q w_q sqrt(det g0) 1/2 C(E, E),   E = 1/2 (p_i . p_j - g0_ij),

and the Jacobian is its Hessian. Both are assembled element by element from
Gauss-Legendre quadrature; stiffness and reference metric are cached per
discretisation because they do not depend on the unknowns.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from .bspline import BSplineManifold2D, basis_matrix, h_refine, p_refine
from .elasticity import ElasticityParams, stiffness_voigt, strain_state
from .geometry import Metric2, StripDomain, metric
from .initial import initial_manifold

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class DegenerateJacobianError(SolverError):
    pass


class ConvergenceError(SolverError):
    pass


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Tensor Gauss rule on every element (pair of non-empty knot spans)."""

    u1: np.ndarray      # (ne, nqe)
    u2: np.ndarray      # (ne, nqe)
    weight: np.ndarray  # (ne, nqe) parameter-space weights
    local: np.ndarray   # (ne, nloc) global basis indices
    N: np.ndarray       # (ne, nqe, nloc)
    dN1: np.ndarray
    dN2: np.ndarray
    points_per_span: tuple[int, int]

    @classmethod
    def build(cls, manifold: BSplineManifold2D, points_per_span: tuple[int, int] | None = None):
        s1, s2 = manifold.space1, manifold.space2
        p1, p2 = s1.degree, s2.degree
        if points_per_span is None:
            points_per_span = (p1 + 2, p2 + 2)
        n2 = s2.dim
        per_dir = []
        for space, npts in ((s1, points_per_span[0]), (s2, points_per_span[1])):
            x, w = np.polynomial.legendre.leggauss(npts)
            spans = []
            for i, a, b in space.spans():
                nodes = a + 0.5 * (b - a) * (x + 1)
                B = basis_matrix(space, nodes)[:, i - space.degree:i + 1]
                dB = basis_matrix(space, nodes, 1)[:, i - space.degree:i + 1]
                spans.append((i - space.degree, nodes, 0.5 * (b - a) * w, B, dB))
            per_dir.append(spans)
        u1s, u2s, ws, locs, Ns, d1s, d2s = [], [], [], [], [], [], []
        for f1, x1, w1, B1, dB1 in per_dir[0]:
            for f2, x2, w2, B2, dB2 in per_dir[1]:
                u1s.append(np.repeat(x1, len(x2)))
                u2s.append(np.tile(x2, len(x1)))
                ws.append(np.outer(w1, w2).ravel())
                i1 = f1 + np.arange(p1 + 1)
                i2 = f2 + np.arange(p2 + 1)
                locs.append((i1[:, None] * n2 + i2[None, :]).ravel())
                Ns.append(np.einsum("qa,rb->qrab", B1, B2).reshape(len(x1) * len(x2), -1))
                d1s.append(np.einsum("qa,rb->qrab", dB1, B2).reshape(len(x1) * len(x2), -1))
                d2s.append(np.einsum("qa,rb->qrab", B1, dB2).reshape(len(x1) * len(x2), -1))
        return cls(np.array(u1s), np.array(u2s), np.array(ws), np.array(locs),
                   np.array(Ns), np.array(d1s), np.array(d2s), tuple(points_per_span))


@dataclass(frozen=True, eq=False)
class Discretization:
    """Quadrature plus everything at the points that depends only on the reference state."""

    strip: StripDomain
    params: ElasticityParams
    space_key: tuple
    quad: QuadratureRule
    g0: Metric2          # (ne, nqe)
    wJ: np.ndarray       # weight * sqrt(det g0)
    Cv: np.ndarray       # (ne, nqe, 3, 3)
    ndof: int

    @classmethod
    def build(cls, strip: StripDomain, params: ElasticityParams, manifold: BSplineManifold2D,
              points_per_span=None) -> "Discretization":
        quad = QuadratureRule.build(manifold, points_per_span)
        g0 = metric(strip.surface, quad.u1, quad.u2)
        wJ = quad.weight * np.sqrt(g0.det)
        Cv = stiffness_voigt(params, g0)
        n1, n2 = manifold.shape
        return cls(strip, params, _space_key(manifold), quad, g0, wJ, Cv, 2 * n1 * n2)

    @property
    def area(self) -> float:
        return float(self.wJ.sum())

    def matches(self, manifold: BSplineManifold2D) -> bool:
        return self.space_key == _space_key(manifold)

    # -- kinematics ------------------------------------------------------

    def _tangents(self, control):
        a = np.asarray(control, dtype=float).reshape(-1, 2)[self.quad.local]  # (ne, nloc, 2)
        P1 = np.einsum("eqa,ead->eqd", self.quad.dN1, a)
        P2 = np.einsum("eqa,ead->eqd", self.quad.dN2, a)
        return P1, P2

    def _strain(self, P1, P2):
        g = self.g0
        E11 = 0.5 * (np.sum(P1 * P1, -1) - g.g11)
        E22 = 0.5 * (np.sum(P2 * P2, -1) - g.g22)
        E12 = 0.5 * (np.sum(P1 * P2, -1) - g.g12)
        return np.stack([E11, E22, 2 * E12], -1)

    def energy(self, control) -> float:
        e = self._strain(*self._tangents(control))
        S = np.einsum("eqvw,eqw->eqv", self.Cv, e)
        return float(0.5 * np.sum(self.wJ * np.sum(e * S, -1)))

    def _local_terms(self, control, hessian: bool):
        P1, P2 = self._tangents(control)
        e = self._strain(P1, P2)
        S = np.einsum("eqvw,eqw->eqv", self.Cv, e)
        dN1, dN2, wJ = self.quad.dN1, self.quad.dN2, self.wJ
        # strain variation B[e, q, v, a, m]
        B = np.stack([
            dN1[..., :, None] * P1[..., None, :],
            dN2[..., :, None] * P2[..., None, :],
            dN1[..., :, None] * P2[..., None, :] + dN2[..., :, None] * P1[..., None, :],
        ], axis=2)
        ne, nqe, _, nloc, _ = B.shape
        B = B.reshape(ne, nqe, 3, 2 * nloc)
        grad = np.einsum("eq,eqv,eqvk->ek", wJ, S, B)
        if not hessian:
            return e, S, grad, None
        WB = np.einsum("eq,eqvw,eqwk->eqvk", wJ, self.Cv, B)
        Hm = np.einsum("eqvk,eqvl->ekl", B, WB)
        G = (np.einsum("eq,eqa,eqb->eab", wJ * S[..., 0], dN1, dN1)
             + np.einsum("eq,eqa,eqb->eab", wJ * S[..., 1], dN2, dN2)
             + np.einsum("eq,eqa,eqb->eab", wJ * S[..., 2], dN1, dN2)
             + np.einsum("eq,eqa,eqb->eab", wJ * S[..., 2], dN2, dN1))
        Hg = np.einsum("eab,mn->eambn", G, np.eye(2)).reshape(ne, 2 * nloc, 2 * nloc)
        return e, S, grad, Hm + Hg

    def _local_dofs(self):
        loc = self.quad.local
        return (2 * loc[:, :, None] + np.arange(2)[None, None, :]).reshape(loc.shape[0], -1)

    def residual(self, control) -> np.ndarray:
        _, _, grad, _ = self._local_terms(control, hessian=False)
        F = np.zeros(self.ndof)
        np.add.at(F, self._local_dofs(), grad)
        return F

    def residual_and_jacobian(self, control) -> tuple[np.ndarray, np.ndarray]:
        _, _, grad, H = self._local_terms(control, hessian=True)
        dofs = self._local_dofs()
        F = np.zeros(self.ndof)
        np.add.at(F, dofs, grad)
        J = np.zeros((self.ndof, self.ndof))
        np.add.at(J, (dofs[:, :, None], dofs[:, None, :]), H)
        return F, J

    def jacobian(self, control) -> np.ndarray:
        return self.residual_and_jacobian(control)[1]


def _space_key(m: BSplineManifold2D) -> tuple:
    return (m.space1.degree, m.space1.knots.tobytes(), m.space2.degree, m.space2.knots.tobytes())


# ---------------------------------------------------------------------------
# pinning


@dataclass(frozen=True)
class PinConfig:
    mode: str
    dofs: tuple  # ((i1, i2), axis, value)

    @classmethod
    def make(cls, mode: str, manifold: BSplineManifold2D) -> "PinConfig":
        n1, n2 = manifold.shape
        ctrl = manifold.control
        if mode == "rigid3":
            # one edge control point fully fixed plus the transverse coordinate of its
            # neighbour along u1; pinning near the middle keeps the lever arm short
            i = (n1 - 1) // 2
            chord = ctrl[i + 1, 0] - ctrl[i, 0]
            axis = 1 if abs(chord[0]) >= abs(chord[1]) else 0
            pts = [((i, 0), 0), ((i, 0), 1), ((i + 1, 0), axis)]
        elif mode == "three_point":
            j = (n2 - 1) // 2
            pts = [((i, j), ax) for i in (0, n1 // 2, n1 - 1) for ax in (0, 1)]
        elif mode == "none":
            pts = []
        else:
            raise ValueError(f"unknown pin mode {mode!r}")
        return cls(mode, tuple((ij, ax, float(ctrl[ij][ax])) for ij, ax in pts))

    def pinned_indices(self, n2: int) -> np.ndarray:
        return np.array([2 * (ij[0] * n2 + ij[1]) + ax for ij, ax, _ in self.dofs], dtype=int)


# ---------------------------------------------------------------------------
# state


@dataclass
class SolverState:
    strip: StripDomain
    params: ElasticityParams
    manifold: BSplineManifold2D
    pins: PinConfig
    disc: Discretization = None
    history: list = field(default_factory=list)
    iterations: int = 0
    shift: float = 0.0  # Levenberg-Marquardt shift carried between steps (relative to mean |diag J|)

    def __post_init__(self):
        self.ensure_cache()

    @classmethod
    def create(cls, strip, params, manifold, pin_mode="rigid3") -> "SolverState":
        return cls(strip, params, manifold, PinConfig.make(pin_mode, manifold))

    def ensure_cache(self):
        if self.disc is None or not self.disc.matches(self.manifold) or self.disc.params != self.params:
            self.disc = Discretization.build(self.strip, self.params, self.manifold)

    def set_manifold(self, manifold: BSplineManifold2D, pin_mode: str | None = None):
        self.manifold = manifold
        self.pins = PinConfig.make(pin_mode or self.pins.mode, manifold)
        self.shift = 0.0
        self.ensure_cache()

    @property
    def control(self) -> np.ndarray:
        return self.manifold.control

    @property
    def scale(self) -> float:
        return self.params.young * self.disc.area

    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.disc.ndof, dtype=bool)
        mask[self.pins.pinned_indices(self.manifold.shape[1])] = False
        return np.flatnonzero(mask)


def assemble_residual(st: SolverState) -> np.ndarray:
    st.ensure_cache()
    return st.disc.residual(st.control)


def assemble_jacobian(st: SolverState) -> np.ndarray:
    st.ensure_cache()
    return st.disc.jacobian(st.control)


def strain_energy(st: SolverState) -> float:
    st.ensure_cache()
    return st.disc.energy(st.control)


def _residual_norm(F, free) -> float:
    return float(np.max(np.abs(F[free]))) if len(free) else 0.0


def _shifted_solve(Jr: np.ndarray, Fr: np.ndarray, mu: float):
    """Solve ``(J + mu I) d = -F`` by Cholesky; ``None`` if the shifted matrix is not positive definite."""
    try:
        c = cho_factor(Jr + mu * np.eye(Jr.shape[0]) if mu else Jr, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    d = -cho_solve(c, Fr)
    return d if np.all(np.isfinite(d)) else None


def newton_step(st: SolverState, max_halvings: int = 8, max_shifts: int = 40) -> dict:
    """One pinned Newton-Raphson update.

    The plain step (dense LU) is taken when it lowers both ``|F|`` and ``W``.
    Otherwise a Levenberg-Marquardt step ``-(J + mu I)^-1 F`` is used, with ``mu``
    adapted from the ratio of actual to predicted energy decrease; ``mu`` is kept
    for the next step and decays back to zero as the iteration settles.  When
    energy differences drop to round-off the plain step is halved at most
    ``max_halvings`` times while ``|F|`` grows.
    """
    disc = st.disc
    x = st.control.reshape(-1).copy()
    F, J = disc.residual_and_jacobian(x)
    free = st.free_dofs()
    Fr = F[free]
    Jr = J[np.ix_(free, free)]
    r0 = _residual_norm(F, free)
    W0 = disc.energy(x)
    lu, piv = lu_factor(Jr, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.size and d.min() <= 1e-13 * d.max():
        cond = np.inf if d.min() == 0 else d.max() / d.min()
        raise DegenerateJacobianError(f"degenerate Jacobian (pivot ratio condition estimate {cond:.3e}); "
                                      f"pin mode {st.pins.mode!r}")
    delta = -lu_solve((lu, piv), Fr)
    if not np.all(np.isfinite(delta)):
        raise SolverError("non-finite Newton update")

    def trial_at(step, t=1.0):
        trial = x.copy()
        trial[free] += t * step
        return trial

    W_noise = 1e-10 * abs(W0) + 1e-300
    diag_scale = float(np.mean(np.abs(np.diag(Jr)))) if Jr.size else 1.0
    t, mu = 1.0, 0.0
    trial = trial_at(delta)
    r1 = _residual_norm(disc.residual(trial), free)
    W1 = disc.energy(trial)
    plain_ok = r1 <= r0 and W1 <= W0 + W_noise
    if plain_ok and st.shift == 0.0:
        pass
    else:
        rel = st.shift
        accepted = False
        for _ in range(max_shifts):
            step = _shifted_solve(Jr, Fr, rel * diag_scale)
            if step is not None:
                predicted = float(Fr @ step + 0.5 * step @ (Jr @ step))
                cand = trial_at(step)
                W_c = disc.energy(cand)
                if -predicted <= W_noise:
                    break  # energy cannot resolve further progress
                rho = (W_c - W0) / predicted
                if rho > 0.25:
                    accepted = True
                    delta, trial, W1, mu = step, cand, W_c, rel * diag_scale
                    rel = 0.0 if rho > 0.75 and rel < 1e-8 else (rel / 3 if rho > 0.75 else rel)
                    break
            rel = max(4 * rel, 1e-8)
        if accepted:
            st.shift = rel
            r1 = _residual_norm(disc.residual(trial), free)
        else:
            st.shift = 0.0
            delta = -lu_solve((lu, piv), Fr)
            for k in range(max_halvings + 1):
                trial = trial_at(delta, t)
                r1 = _residual_norm(disc.residual(trial), free)
                if r1 <= r0 or k == max_halvings:
                    break
                t *= 0.5
            W1 = disc.energy(trial)
    st.manifold = st.manifold.with_control(trial.reshape(st.manifold.control.shape))
    st.iterations += 1
    info = {"residual_before": r0, "residual": r1, "W": W1, "dW": W1 - W0,
            "step": float(t * np.max(np.abs(delta))) if delta.size else 0.0, "damping": t, "shift": mu}
    st.history.append(info)
    return info


# ---------------------------------------------------------------------------
# refinement schedule


@dataclass(frozen=True)
class RefinementSchedule:
    spans1: int = 8
    ode_steps: int = 256
    p_raise2: int = 2
    h_bisections: int = 2
    tol_rel: float = 1e-8
    max_iter: int = 50
    min_iter: int = 1
    pin: str = "rigid3"
    release_rel: float = 1e-3
    adaptive_rounds: int = 0
    jump_ratio: float = 0.1


def _iterate(st: SolverState, tol: float, schedule: RefinementSchedule, name: str) -> dict:
    node = {"stage": name, "degrees": list(st.manifold.degrees), "shape": list(st.manifold.shape),
            "pin": st.pins.mode, "W_start": strain_energy(st), "iterations": []}
    free = st.free_dofs()
    r = _residual_norm(assemble_residual(st), free)
    stalled = 0
    it = 0
    while r >= tol or it < schedule.min_iter:
        if it >= schedule.max_iter:
            raise ConvergenceError(f"{name}: residual {r:.3e} above {tol:.3e} "
                                   f"after {schedule.max_iter} iterations")
        info = newton_step(st)
        node["iterations"].append(info)
        stalled = stalled + 1 if info["residual"] > 0.5 * r else 0
        r = info["residual"]
        it += 1
        # rounding floor: no progress on an already tiny residual
        if stalled >= 2 and r < 1e-9 * st.scale:
            node["stalled"] = True
            break
    node["residual"] = r
    node["W"] = strain_energy(st)
    pinned = st.pins.pinned_indices(st.manifold.shape[1])
    if pinned.size:
        # pin reactions vanish at a free equilibrium
        node["reaction"] = float(np.max(np.abs(assemble_residual(st)[pinned])))
    return node


def converge(st: SolverState, schedule: RefinementSchedule, name: str) -> dict:
    """Newton iterations on the current space until the reduced residual is below tolerance.

    With ``three_point`` pins the auxiliary constraint is dropped once the residual is
    below ``release_rel * Y * area``; a rigid3 stage then finishes the solve.
    """
    tol = schedule.tol_rel * st.scale
    node = {}
    if st.pins.mode == "three_point":
        node["three_point"] = _iterate(st, max(tol, schedule.release_rel * st.scale), schedule,
                                       name + " (three_point)")
        st.pins = PinConfig.make("rigid3", st.manifold)
    node.update(_iterate(st, tol, schedule, name))
    return node


def bisect_all(manifold: BSplineManifold2D) -> BSplineManifold2D:
    bp = manifold.space1.breakpoints
    return h_refine(manifold, 0.5 * (bp[:-1] + bp[1:]), ())


def unnatural_knots(st: SolverState, ratio: float = 0.1, samples: int = 9) -> list[float]:
    """Interior u1 knots across which ``E11`` (orthonormal frame) jumps by more than
    ``ratio * max|E11|`` between samples a quarter span on either side."""
    m = st.manifold
    bp = m.space1.breakpoints
    if len(bp) < 3:
        return []
    u2 = np.linspace(st.strip.u2_lo, st.strip.u2_hi, samples)[1:-1]
    widths = np.diff(bp)
    left = bp[1:-1] - 0.25 * np.minimum(widths[:-1], widths[1:])
    right = bp[1:-1] + 0.25 * np.minimum(widths[:-1], widths[1:])
    fl = strain_field_at(st, left, u2).E_ortho[..., 0, 0]
    fr = strain_field_at(st, right, u2).E_ortho[..., 0, 0]
    full = strain_field(st, 4 * len(bp) + 1, samples).E_ortho[..., 0, 0]
    peak = np.max(np.abs(full))
    if peak == 0:
        return []
    jumps = np.max(np.abs(fr - fl), axis=1)
    return [float(k) for k, j in zip(bp[1:-1], jumps) if j > ratio * peak]


def solve_embedding(strip: StripDomain, params: ElasticityParams | None = None,
                    schedule: RefinementSchedule | None = None,
                    seed: BSplineManifold2D | None = None) -> tuple[BSplineManifold2D, dict]:
    """Seed (3,1) -> converge -> p-refine across -> converge -> h-refine along -> converge."""
    params = params or ElasticityParams()
    schedule = schedule or RefinementSchedule()
    tree = {"strip": strip.index, "stages": []}
    if seed is not None:
        st = SolverState.create(strip, params, seed, "rigid3")
        tree["stages"].append(converge(st, schedule, "resume"))
    else:
        st = SolverState.create(strip, params, initial_manifold(strip, schedule.spans1, schedule.ode_steps),
                                schedule.pin)
        tree["stages"].append(converge(st, schedule, "seed"))
        if schedule.p_raise2:
            st.set_manifold(p_refine(st.manifold, 0, schedule.p_raise2), "rigid3")
            tree["stages"].append(converge(st, schedule, "p-refine"))
        for k in range(schedule.h_bisections):
            st.set_manifold(bisect_all(st.manifold), "rigid3")
            tree["stages"].append(converge(st, schedule, f"h-refine {k + 1}"))
        for k in range(schedule.adaptive_rounds):
            bad = unnatural_knots(st, schedule.jump_ratio)
            if not bad:
                break
            bp = st.manifold.space1.breakpoints
            new = sorted({0.5 * (bp[i] + bp[i + 1]) for b in bad
                          for i in (int(np.searchsorted(bp, b)) - 1, int(np.searchsorted(bp, b)))})
            st.set_manifold(h_refine(st.manifold, new, ()), "rigid3")
            tree["stages"].append(converge(st, schedule, f"adaptive {k + 1}"))
    W = strain_energy(st)
    tree["W"] = W
    tree["iterations"] = st.iterations
    log.info("strip %d: W=%.6e after %d Newton steps", strip.index, W, st.iterations)
    return st.manifold, tree


# ---------------------------------------------------------------------------
# strain sampling


@dataclass(frozen=True)
class StrainField:
    u1: np.ndarray        # (n,)
    u2: np.ndarray        # (m,)
    r: np.ndarray         # (m,) normalised breadth coordinate in [-1, 1]
    xy: np.ndarray        # (n, m, 2)
    E: np.ndarray         # (n, m, 2, 2) coordinate components
    E_ortho: np.ndarray
    S_ortho: np.ndarray
    density: np.ndarray   # (n, m), 1/2 C(E, E)


def strain_field_at(st: SolverState, u1, u2) -> StrainField:
    strip, m = st.strip, st.manifold
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    U1, U2 = np.meshgrid(u1, u2, indexing="ij")
    g0 = metric(strip.surface, U1, U2)
    xy = m.evaluate_grid(u1, u2)
    p1 = m.evaluate_grid(u1, u2, 1, 0)
    p2 = m.evaluate_grid(u1, u2, 0, 1)
    s = strain_state(st.params, g0, p1, p2)
    r = (u2 - strip.center) / strip.half_breadth
    return StrainField(u1, u2, r, xy, s.E, s.E_ortho, s.S_ortho, s.density)


def strain_field(st: SolverState, n: int = 33, m: int = 9) -> StrainField:
    a, b = st.strip.u1_range
    return strain_field_at(st, np.linspace(a, b, n), np.linspace(st.strip.u2_lo, st.strip.u2_hi, m))


def state_for(strip: StripDomain, params: ElasticityParams, manifold: BSplineManifold2D) -> SolverState:
    return SolverState.create(strip, params, manifold, "rigid3")
