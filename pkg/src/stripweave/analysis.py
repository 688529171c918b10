"""Leading-order strain prediction, strip planning and convergence-order statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .elasticity import ElasticityParams
from .geometry import StripDomain, gaussian_curvature, metric
from .surface import SurfaceDefinition

PEAK_SAMPLES = 33
STRESS_FLOOR = 1e-12  # relative to Y; below this the section is treated as unstressed


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class StrainPrediction:
    """Per-``u1`` data of ``E11 = a (r^2 - 1/3)`` with ``a = K B^2 / 2``."""

    u1: np.ndarray
    K: np.ndarray
    B: np.ndarray

    @property
    def coefficient(self) -> np.ndarray:
        return 0.5 * self.K * self.B ** 2

    @property
    def peak(self) -> np.ndarray:
        """``max_r |E11|``, reached at ``r = +-1``."""
        return np.abs(self.coefficient) * (2.0 / 3.0)

    def E11(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.coefficient[..., None] * (r ** 2 - 1.0 / 3.0)


def _center_curvature(surface: SurfaceDefinition, u1, u2) -> np.ndarray:
    K = gaussian_curvature(surface, u1, u2)
    if not np.all(np.isfinite(K)):
        raise AnalysisError("Gaussian curvature is not finite on the center line")
    return K


def estimate_breadth(strip: StripDomain, u1) -> np.ndarray:
    """``B = b * |p_2 - (p_2 . e_1) e_1|``, i.e. ``b * sqrt(det g / g11)`` on the center line."""
    u1 = np.asarray(u1, dtype=float)
    g = metric(strip.surface, u1, np.full(u1.shape, strip.center))
    return strip.half_breadth * np.sqrt(g.det / g.g11)


def strain_prediction(strip: StripDomain, u1) -> StrainPrediction:
    u1 = np.atleast_1d(np.asarray(u1, dtype=float))
    K = _center_curvature(strip.surface, u1, np.full(u1.shape, strip.center))
    return StrainPrediction(u1, K, estimate_breadth(strip, u1))


def predict_strain(strip: StripDomain, u1, r, poisson: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Predicted orthonormal-frame ``(E11, E22)`` at ``(u1, r)``; arrays broadcast."""
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) > 1):
        raise AnalysisError("normalised breadth coordinate must satisfy |r| <= 1")
    u1, r = np.broadcast_arrays(np.asarray(u1, dtype=float), r)
    K = _center_curvature(strip.surface, u1, np.full(u1.shape, strip.center))
    B = estimate_breadth(strip, u1)
    E11 = 0.5 * K * B ** 2 * (r ** 2 - 1.0 / 3.0)
    return E11, -poisson * E11


def predicted_peak(surface: SurfaceDefinition, u1_range, u2_lo: float, u2_hi: float,
                   samples: int = PEAK_SAMPLES) -> float:
    """Largest predicted ``|E11|`` over ``samples`` points of the strip's center line."""
    strip = StripDomain.from_bounds(surface, u1_range, u2_lo, u2_hi)
    return float(np.max(strain_prediction(strip, np.linspace(*strip.u1_range, samples)).peak))


@dataclass(frozen=True)
class Partition:
    boundaries: tuple[float, ...]
    peaks: tuple[float, ...]

    def strips(self) -> list[tuple[float, float]]:
        b = self.boundaries
        return [(b[i], b[i + 1]) for i in range(len(b) - 1)]


def suggest_partition(surface: SurfaceDefinition, u2_range=None, max_strain: float = 0.01,
                      u1_range=None, samples: int = PEAK_SAMPLES, rtol: float = 1e-10) -> Partition:
    """Greedy sweep in ``u2``: widen each strip until its predicted peak strain reaches ``max_strain``."""
    if not max_strain > 0:
        raise AnalysisError("max_strain must be positive")
    lo, hi = map(float, u2_range if u2_range is not None else surface.u2_range)
    u1_range = tuple(map(float, u1_range if u1_range is not None else surface.u1_range))
    if not lo < hi:
        raise AnalysisError("empty u2 range")
    tol = rtol * (hi - lo)
    bounds, peaks = [lo], []
    start = lo
    while True:
        peak = predicted_peak(surface, u1_range, start, hi, samples)
        if peak <= max_strain:
            bounds.append(hi)
            peaks.append(peak)
            break
        a, b = start, hi
        while b - a > tol:
            mid = 0.5 * (a + b)
            if predicted_peak(surface, u1_range, start, mid, samples) <= max_strain:
                a = mid
            else:
                b = mid
        if a - start <= tol:
            raise AnalysisError(f"curvature too large near u2={start:.6g}: no strip satisfies max_strain")
        bounds.append(a)
        peaks.append(predicted_peak(surface, u1_range, start, a, samples))
        start = a
    return Partition(tuple(bounds), tuple(peaks))


def energy_prediction(strip: StripDomain, params: ElasticityParams | None = None,
                      curvature_power: int = 2) -> float:
    """Leading-order energy ``Y/45 * int K^p B^5 ds`` along the center curve.

    ``curvature_power=2`` is the dimensionally consistent form obtained from
    integrating ``(1/2 Y E11^2)`` over the breadth; ``1`` gives the literal variant.
    """
    params = params or ElasticityParams()

    def integrand(u):
        uu = np.array([u])
        g = metric(strip.surface, uu, np.array([strip.center]))
        K = _center_curvature(strip.surface, uu, np.array([strip.center]))
        B = strip.half_breadth * np.sqrt(g.det / g.g11)
        return float(K[0] ** curvature_power * B[0] ** 5 * np.sqrt(g.g11[0]))

    value, _ = quad(integrand, *strip.u1_range, epsabs=0.0, epsrel=1e-11, limit=200)
    return params.young / 45.0 * value


# ---------------------------------------------------------------------------
# breadth-scaling study


@dataclass(frozen=True)
class ScalingRun:
    """One solved member of a breadth series."""

    beta: float
    strip: StripDomain
    manifold: object
    W: float


@dataclass
class ScalingReport:
    betas: list
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_json(self) -> dict:
        return {"betas": self.betas, "rows": self.rows, "slopes": self.slopes,
                "checks": self.checks, "passed": self.passed}

    def table(self) -> str:
        head = f"{'beta':>8} {'max|dE11|':>12} {'S22/S11':>12} {'W':>12} {'W_pred':>12}"
        lines = [head]
        for row in self.rows:
            lines.append(f"{row['beta']:>8.4g} {row['E11_error']:>12.4e} {row['stress_ratio']:>12.4e} "
                         f"{row['W']:>12.4e} {row['W_pred']:>12.4e}")
        for key, values in self.slopes.items():
            shown = ", ".join(v if isinstance(v, str) else f"{v:.3f}" for v in values)
            lines.append(f"slope {key}: {shown}")
        for key, ok in self.checks.items():
            lines.append(f"{'PASS' if ok else 'FAIL'} {key}")
        return "\n".join(lines)


EXACT_ZERO = "exact-zero"


def loglog_slopes(betas, values, zero: float = 0.0) -> list:
    """Slopes ``log(v_i / v_{i+1}) / log(beta_i / beta_{i+1})`` between consecutive betas.

    Pairs where both values are ``<= zero`` are reported as ``"exact-zero"``.
    """
    out = []
    for i in range(len(betas) - 1):
        a, b = abs(values[i]), abs(values[i + 1])
        if a <= zero and b <= zero:
            out.append(EXACT_ZERO)
        elif a <= zero or b <= zero:
            out.append(float("nan"))
        else:
            out.append(math.log(a / b) / math.log(betas[i] / betas[i + 1]))
    return out


def _interior_u1(strip: StripDomain, n: int, trim: float) -> np.ndarray:
    a, b = strip.u1_range
    pad = trim * (b - a)
    return np.linspace(a + pad, b - pad, n)


def scaling_row(run: ScalingRun, params: ElasticityParams, n1: int = 9, n2: int = 21,
                 trim: float = 0.25) -> dict:
    from .solver import state_for, strain_field_at

    strip = run.strip
    st = state_for(strip, params, run.manifold)
    u1 = _interior_u1(strip, n1, trim)
    f = strain_field_at(st, u1, np.linspace(strip.u2_lo, strip.u2_hi, n2))
    pred = strain_prediction(strip, u1).E11(f.r)
    S = f.S_ortho
    s11 = float(np.max(np.abs(S[..., 0, 0])))
    s22 = float(np.max(np.abs(S[..., 1, 1])))
    return {
        "beta": run.beta,
        "half_breadth": strip.half_breadth,
        "E11_error": float(np.max(np.abs(f.E_ortho[..., 0, 0] - pred))),
        "E11_peak_pred": float(np.max(np.abs(pred))),
        "stress_ratio": s22 / s11 if s11 > STRESS_FLOOR * params.young else 0.0,
        "W": run.W,
        "W_pred": energy_prediction(strip, params, 2),
        "W_pred_linear_K": energy_prediction(strip, params, 1),
    }


def validate_appendix(runs: list[ScalingRun], params: ElasticityParams | None = None,
                      e11_slope_min: float = 2.5, w_slope_band=(4.5, 5.5), **sample_kw) -> ScalingReport:
    """Order-of-convergence statistics over a breadth series of one strip."""
    params = params or ElasticityParams()
    if len(runs) < 2:
        raise AnalysisError("need at least two breadth scales")
    runs = sorted(runs, key=lambda r: -r.beta)
    if len({r.beta for r in runs}) != len(runs):
        raise AnalysisError("duplicate beta in series")
    report = ScalingReport(betas=[r.beta for r in runs])
    report.rows = [scaling_row(r, params, **sample_kw) for r in runs]
    area = runs[0].strip.length * 2 * runs[0].strip.half_breadth
    betas = report.betas
    e_err = [row["E11_error"] for row in report.rows]
    ratios = [row["stress_ratio"] for row in report.rows]
    Ws = [row["W"] for row in report.rows]
    report.slopes = {
        "E11_error": loglog_slopes(betas, e_err, zero=1e-13),
        "stress_ratio": loglog_slopes(betas, ratios, zero=1e-12),
        "W": loglog_slopes(betas, Ws, zero=1e-12 * params.young * area),
    }

    def band(values, lo, hi=math.inf):
        return all(v == EXACT_ZERO or (isinstance(v, float) and lo <= v <= hi) for v in values)

    report.checks = {
        "E11 error slope >= %g" % e11_slope_min: band(report.slopes["E11_error"], e11_slope_min),
        "W slope in [%g, %g]" % tuple(w_slope_band): band(report.slopes["W"], *w_slope_band),
        "stress ratio decreasing": all(ratios[i] == 0.0 or ratios[i + 1] < ratios[i]
                                       for i in range(len(ratios) - 1)),
    }
    return report


def run_scaling_series(strip: StripDomain, params: ElasticityParams | None = None,
                        betas=(1.0, 0.5, 0.25), schedule=None) -> list[ScalingRun]:
    from .solver import solve_embedding

    params = params or ElasticityParams()
    runs = []
    for beta in betas:
        member = strip.scaled(beta)
        manifold, tree = solve_embedding(member, params, schedule)
        runs.append(ScalingRun(beta, member, manifold, tree["W"]))
    return runs


# ---------------------------------------------------------------------------
# rigid-motion-invariant comparison


def rigid_align(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Proper rotation ``R`` and translation ``t`` minimising ``|a R^T + t - b|`` (Kabsch)."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    ca, cb = a.mean(0), b.mean(0)
    U, _, Vt = np.linalg.svd((a - ca).T @ (b - cb))
    D = np.diag([1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    R = (U @ D @ Vt).T
    return R, cb - ca @ R.T


def aligned_rms(a, b) -> float:
    """RMS distance between corresponding points after the best rigid motion (no reflection)."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    R, t = rigid_align(a, b)
    return float(np.sqrt(np.mean(np.sum((a @ R.T + t - b) ** 2, -1))))


def manifold_distance(m1, m2, u1_range, u2_range, n: int = 41, m: int = 11) -> float:
    """Aligned RMS of two embeddings sampled on the same parameter grid."""
    u1 = np.linspace(*u1_range, n)
    u2 = np.linspace(*u2_range, m)
    return aligned_rms(m1.evaluate_grid(u1, u2), m2.evaluate_grid(u1, u2))
