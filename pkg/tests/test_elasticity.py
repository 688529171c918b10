import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stripweave.elasticity import (
    ElasticityParams,
    energy_density,
    stiffness,
    stiffness_voigt,
    strain_state,
    swap_energy_check,
    voigt,
)
from stripweave.geometry import GeometryError, Metric2

IDENTITY = Metric2(np.array(1.0), np.array(0.0), np.array(1.0))


def metric_from(g11, g22, rho):
    return Metric2(np.array(g11), np.array(rho * math.sqrt(g11 * g22)), np.array(g22))


metrics = st.builds(metric_from, st.floats(0.2, 5), st.floats(0.2, 5), st.floats(-0.9, 0.9))


def test_lame_parameters():
    p = ElasticityParams()
    assert p.lam == pytest.approx(0.26666666666666666, rel=1e-15)
    assert p.mu == pytest.approx(0.4, rel=1e-15)
    C = stiffness(p, IDENTITY)
    assert C[0, 0, 0, 0] == pytest.approx(1.0666666666666667, rel=1e-15)
    assert stiffness(ElasticityParams(poisson=0.0), IDENTITY)[0, 0, 1, 1] == 0.0


def test_anisotropic_metric_scaling():
    p = ElasticityParams()
    C = stiffness(p, Metric2(np.array(4.0), np.array(0.0), np.array(1.0)))
    assert C[0, 0, 0, 0] == pytest.approx((p.lam + 2 * p.mu) / 16, rel=1e-15)


@pytest.mark.parametrize("kw", [{"young": 0.0}, {"young": -1.0}, {"poisson": 1.0}, {"poisson": -1.0}])
def test_invalid_params(kw):
    with pytest.raises(ValueError):
        ElasticityParams(**kw)


def test_singular_metric():
    with pytest.raises(GeometryError):
        stiffness(ElasticityParams(), Metric2(np.array(1.0), np.array(1.0), np.array(1.0)))


@settings(max_examples=60, deadline=None)
@given(metrics, st.floats(-0.45, 0.45))
def test_stiffness_symmetries_and_voigt(g, nu):
    p = ElasticityParams(poisson=nu)
    C = stiffness(p, g)
    assert np.array_equal(C, np.transpose(C, (2, 3, 0, 1)))
    assert np.array_equal(C, np.transpose(C, (1, 0, 2, 3)))
    assert np.array_equal(C, np.transpose(C, (0, 1, 3, 2)))
    np.testing.assert_allclose(stiffness_voigt(p, g), voigt(C), rtol=1e-14, atol=1e-14)


def test_isometric_and_uniaxial():
    p = ElasticityParams()
    s = strain_state(p, IDENTITY, [1.0, 0.0], [0.0, 1.0])
    assert np.all(s.E == 0) and np.all(s.S == 0) and s.density == 0
    eps = 1e-3
    s = strain_state(p, IDENTITY, [1 + eps, 0.0], [0.0, 1.0])
    assert s.E[0, 0] == pytest.approx(eps + eps ** 2 / 2, rel=1e-12)
    assert s.E[1, 1] == 0.0 and s.E[0, 1] == 0.0


@settings(max_examples=100, deadline=None)
@given(metrics, st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(-0.9, 0.45))
def test_density_positive_definite(g, jet, nu):
    p = ElasticityParams(poisson=nu)
    s = strain_state(p, g, jet[:2], jet[2:])
    assert s.density >= -1e-14 * max(1.0, float(np.max(np.abs(s.E))) ** 2)
    Cv = stiffness_voigt(p, g)
    assert np.min(np.linalg.eigvalsh(Cv)) > 0


@settings(max_examples=100, deadline=None)
@given(metrics, st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(0, 2 * math.pi))
def test_density_rigid_invariance(g, jet, theta):
    p = ElasticityParams()
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    a, b = np.array(jet[:2]), np.array(jet[2:])
    d0 = strain_state(p, g, a, b).density
    d1 = strain_state(p, g, R @ a, R @ b).density
    assert abs(d1 - d0) < 1e-14 * max(1.0, abs(d0))


@settings(max_examples=50, deadline=None)
@given(metrics, st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(0.1, 100))
def test_density_homogeneous_in_young(g, jet, t):
    d1 = strain_state(ElasticityParams(young=1.0), g, jet[:2], jet[2:]).density
    dt = strain_state(ElasticityParams(young=t), g, jet[:2], jet[2:]).density
    assert dt == pytest.approx(t * d1, rel=1e-13, abs=1e-300)


def test_swap_check_examples():
    p = ElasticityParams()
    g = metric_from(1.3, 0.8, 0.3)
    Ebar = np.array([[0.7, -0.2], [-0.2, 0.4]])
    d = swap_energy_check(p, g, Ebar, [0.0, 1e-2, 5e-3])
    assert d[0] == 0.0
    assert d[1] / d[2] >= 7
    assert d[1] / d[2] == pytest.approx(8, rel=0.05)
    assert np.all(swap_energy_check(p, g, np.zeros((2, 2)), [0.1, 0.2]) == 0)
    with pytest.raises(GeometryError):
        swap_energy_check(p, g, -np.eye(2), [10.0])


def test_energy_density_includes_volume():
    p = ElasticityParams()
    g = metric_from(4.0, 1.0, 0.0)
    E = np.array([[0.1, 0.0], [0.0, 0.0]])
    s = strain_state(p, g, [math.sqrt(4.2), 0.0], [0.0, 1.0])
    assert energy_density(p, g, E) == pytest.approx(2 * float(s.density), rel=1e-13)
