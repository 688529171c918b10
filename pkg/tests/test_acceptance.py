"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""
import json
import math
import time
from pathlib import Path

import numpy as np

from conftest import NARROW_BREADTHS, narrow_strip, record, solved, solved_narrow, surface
from test_initial import _endpoint_error, circle_strip, seed_center_errors
from test_solver import fd_gradient, fd_jacobian, small_state
from stripweave.analysis import aligned_rms, energy_prediction, manifold_distance, predict_strain
from stripweave.bspline import h_refine, p_refine
from stripweave.cli import main
from stripweave.elasticity import ElasticityParams, swap_energy_check
from stripweave.geometry import StripDomain, metric
from stripweave.solver import (SolverState, bisect_all, assemble_jacobian, assemble_residual,
                               solve_embedding, state_for, strain_field_at)

PARAMS = ElasticityParams()
CONFIGS = Path(__file__).resolve().parent.parent / "configs"
# fixed sample stations along the narrow strip, away from the free ends
STATIONS = np.array([-0.5, 0.0, 0.5])


def narrow_field(half_breadth):
    strip = narrow_strip(half_breadth)
    m, tree = solved_narrow(half_breadth)
    f = strain_field_at(state_for(strip, PARAMS, m), STATIONS, np.linspace(strip.u2_lo, strip.u2_hi, 21))
    return strip, f, tree


def test_criterion_01_plane_isometry(plane_strip):
    t0 = time.perf_counter()
    m, tree = solve_embedding(plane_strip)
    elapsed = time.perf_counter() - t0
    area = plane_strip.length * 2 * plane_strip.half_breadth
    u1, u2 = np.linspace(0, 1, 21), np.linspace(-0.1, 0.1, 7)
    ref = np.stack(np.meshgrid(u1, u2, indexing="ij"), -1)
    rms = aligned_rms(m.evaluate_grid(u1, u2), ref)
    ok = tree["W"] <= 1e-12 * PARAMS.young * area and rms < 1e-10 and elapsed < 1.0
    assert record(1, ok, f"W={tree['W']:.2e} rms={rms:.2e} time={elapsed:.2f}s")


def test_criterion_02_catenoid_helicoid():
    u1_range = (-math.pi, math.pi)
    bounds = np.linspace(-math.pi / 4, math.pi / 4, 10)
    t0 = time.perf_counter()
    worst = 0.0
    for i in (1, 5, 9):
        a, b = bounds[i - 1], bounds[i]
        cat = StripDomain.from_bounds(surface("catenoid"), u1_range, a, b, i)
        hel = StripDomain.from_bounds(surface("helicoid"), u1_range, a, b, i)
        m_cat, _ = solve_embedding(cat)
        m_hel, _ = solve_embedding(hel)
        worst = max(worst, manifold_distance(m_cat, m_hel, u1_range, (a, b)) / cat.length)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 60
    assert record(2, ok, f"max rms/length={worst:.2e} over strips 1,5,9 time={elapsed:.1f}s")


def test_criterion_03_narrow_strip_profile():
    errs = []
    for hb in NARROW_BREADTHS:
        strip, f, _ = narrow_field(hb)
        E11 = f.E_ortho[..., 0, 0]
        pred, _ = predict_strain(strip, STATIONS[:, None], np.clip(f.r, -1, 1)[None, :])
        errs.append(np.max(np.abs(E11 - pred)))
        if hb == NARROW_BREADTHS[0]:
            corr = min(np.corrcoef(row, f.r ** 2 - 1 / 3)[0, 1] for row in E11)
    order = math.log2(errs[0] / errs[1])
    ok = corr > 0.99 and order >= 2.5
    assert record(3, ok, f"corr={corr:.8f} err={errs[0]:.2e},{errs[1]:.2e} log2 ratio={order:.2f}")


def test_criterion_04_poisson_coupling():
    _, f, _ = narrow_field(NARROW_BREADTHS[0])
    interior = slice(1, -1)
    ratio = f.E_ortho[:, interior, 1, 1] / f.E_ortho[:, interior, 0, 0]
    med = float(np.median(ratio))
    assert record(4, -0.30 <= med <= -0.20, f"median E22/E11={med:.4f}")


def test_criterion_05_uniaxial_stress():
    ratios = []
    for hb in NARROW_BREADTHS:
        _, f, _ = narrow_field(hb)
        S = f.S_ortho
        ratios.append(np.max(np.abs(S[..., 1, 1])) / np.max(np.abs(S[..., 0, 0])))
    drop = ratios[0] / ratios[1]
    assert record(5, drop >= 1.5, f"S22/S11={ratios[0]:.3e} -> {ratios[1]:.3e} decrease x{drop:.2f}")


def test_criterion_06_energy_scaling():
    W = [solved_narrow(hb)[1]["W"] for hb in NARROW_BREADTHS]
    strip = narrow_strip(NARROW_BREADTHS[0])
    literal = energy_prediction(strip, PARAMS, curvature_power=1)
    squared = energy_prediction(strip, PARAMS, curvature_power=2)
    ratio = W[0] / W[1]
    factor = W[0] / literal
    ok = 24 <= ratio <= 40 and 0.5 <= factor <= 2.0
    assert record(6, ok, f"W ratio={ratio:.3f} W={W[0]:.4e} pred(K)={literal:.4e} x{factor:.3f} "
                         f"pred(K^2)={squared:.4e}")


def test_criterion_07_derivative_consistency():
    rng = np.random.default_rng(7)
    grad_err = 0.0
    for _ in range(20):
        st = small_state(rng, noise=0.01)
        g = fd_gradient(st, 1e-6 * st.control.std())
        grad_err = max(grad_err, np.linalg.norm(assemble_residual(st) - g) / np.linalg.norm(g))
    st = small_state(rng, degrees=(3, 1), noise=0.01)
    J = assemble_jacobian(st)
    Jfd = fd_jacobian(st, 1e-6 * st.control.std())
    jac_err = np.linalg.norm(J - Jfd) / np.linalg.norm(Jfd)
    sym = np.linalg.norm(J - J.T) / np.linalg.norm(J)
    ok = grad_err < 1e-5 and jac_err < 1e-5 and sym < 1e-10
    assert record(7, ok, f"gradient={grad_err:.2e} jacobian={jac_err:.2e} symmetry={sym:.2e}")


def test_criterion_08_rigid_modes(plane_strip):
    m, _ = solved(plane_strip)
    H = assemble_jacobian(SolverState.create(plane_strip, PARAMS, m, pin_mode="none"))
    lam = np.linalg.eigvalsh(H)
    small = np.abs(lam) < 1e-8 * np.linalg.norm(H, 2)
    zeros = int(np.sum(small))
    ok = zeros == 3 and np.all(lam[~small] > 0)
    assert record(8, ok, f"null eigenvalues={zeros} min other={np.min(lam[~small]):.3e}")


def test_criterion_09_refinement_monotone(paraboloid_strip):
    strips = [paraboloid_strip,
              StripDomain.from_bounds(surface("catenoid"), (-math.pi, math.pi), 0.0, math.pi / 18)]
    worst_rise = -math.inf
    for strip in strips:
        _, tree = solved(strip)
        tol = 1e-12 * PARAMS.young * strip.length * 2 * strip.half_breadth
        Ws = [node["W"] for node in tree["stages"]]
        worst_rise = max(worst_rise, max((b - a) / tol for a, b in zip(Ws, Ws[1:])))
    m, _ = solved(paraboloid_strip)
    u1 = np.random.default_rng(5).uniform(-1, 1, 200)
    u2 = np.random.default_rng(6).uniform(0.3, 0.4, 200)
    moved = max(np.max(np.abs(r.evaluate(u1, u2) - m.evaluate(u1, u2)))
                for r in (bisect_all(m), p_refine(m, 1, 1), h_refine(m, [0.123], [0.351])))
    ok = worst_rise <= 1 and moved < 1e-12
    assert record(9, ok, f"max stage rise/tol={worst_rise:.2e} refinement shift={moved:.2e}")


def test_criterion_10_state_swap(paraboloid_strip):
    g = metric(surface("paraboloid"), np.array(0.4), np.array(paraboloid_strip.center))
    Ebar = np.array([[0.7, -0.2], [-0.2, 0.4]])
    d = swap_energy_check(PARAMS, g, Ebar, [1e-2, 5e-3])
    ratio = float(d[0] / d[1])
    assert record(10, ratio >= 7, f"|W-W_swap| ratio={ratio:.3f}")


def test_criterion_11_initializer():
    metric_err, curv_err = seed_center_errors(circle_strip(1.0))
    e = [_endpoint_error(n) for n in (16, 32, 64)]
    rk = min(e[0] / e[1], e[1] / e[2])
    ok = metric_err < 1e-2 and curv_err < 0.05 and rk >= 12
    assert record(11, ok, f"metric={metric_err:.2e} curvature={curv_err:.2%} rk4 ratio={rk:.1f}")


def test_criterion_12_determinism(tmp_path):
    cfg = json.loads(CONFIGS.joinpath("paraboloid.json").read_text())
    outputs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        d.mkdir()
        path = d / "job.json"
        path.write_text(json.dumps({**cfg, "out": str(d / "out")}))
        codes = [main([cmd, "--config", str(path), "--threads", "1"]) for cmd in ("plan", "solve", "export")]
        assert codes == [0, 0, 0]
        outputs.append({p.name: p.read_bytes() for p in sorted((d / "out").iterdir())
                        if p.suffix in (".svg", ".json")})
    same = outputs[0] == outputs[1] and len(outputs[0]) > 0
    assert record(12, same, f"{len(outputs[0])} SVG/JSON files byte-identical={same}")


def test_criterion_13_young_invariance(paraboloid_strip):
    m1, t1 = solved(paraboloid_strip, 1.0)
    m7, t7 = solved(paraboloid_strip, 7.0)
    u1 = np.linspace(-1, 1, 41)
    u2 = np.linspace(paraboloid_strip.u2_lo, paraboloid_strip.u2_hi, 11)
    rms = aligned_rms(m1.evaluate_grid(u1, u2), m7.evaluate_grid(u1, u2))
    ratio = t7["W"] / t1["W"]
    ok = rms < 1e-8 and abs(ratio / 7 - 1) < 1e-6
    assert record(13, ok, f"rms={rms:.2e} W ratio={ratio:.8f}")
