import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kaclab.cloud import WeightedPointCloud, sq_norm
from kaclab.kinetic import (MaxwellianSpec, ParticleState, collide, collision_operator_apply,
                            collision_operator_integrate, maxwellian_density, maxwellian_sample,
                            pair_distance, project_to_boltzmann_sphere, sample_sigma)

vec3 = arrays(np.float64, 3, elements=st.floats(-10, 10, allow_nan=False))


def unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 1e-6 else np.array([0.0, 0.0, 1.0])


def test_head_on_collision():
    vp, wp = collide([1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0])
    assert vp.tolist() == [0.0, 1.0, 0.0]
    assert wp.tolist() == [0.0, -1.0, 0.0]


def test_orthogonal_collision():
    vp, wp = collide([1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0])
    h = math.sqrt(2) / 2
    assert np.allclose(vp, [0.5, 0.5, h], atol=1e-15)
    assert np.allclose(wp, [0.5, 0.5, -h], atol=1e-15)


def test_equal_velocities_do_not_move():
    w = np.array([0.3, -1.2, 2.0])
    vp, wp = collide(w, w, [0.6, 0.8, 0.0])
    assert np.array_equal(vp, w) and np.array_equal(wp, w)


@given(vec3, vec3, vec3)
def test_collision_conserves_momentum_and_energy(v, w, s):
    vp, wp = collide(v, w, unit(s))
    scale = 1.0 + np.abs(v).sum() + np.abs(w).sum()
    assert np.allclose(vp + wp, v + w, atol=1e-12 * scale)
    e0 = v @ v + w @ w
    assert abs(vp @ vp + wp @ wp - e0) <= 1e-12 * (1.0 + e0)
    # relative speed is preserved and sigma is the new relative direction
    assert math.isclose(pair_distance(vp, wp), pair_distance(v, w), rel_tol=1e-12, abs_tol=1e-12)


@given(vec3, vec3)
def test_sigma_along_relative_velocity_is_identity(v, w):
    g = pair_distance(v, w)
    if g < 1e-3:
        return
    vp, wp = collide(v, w, (v - w) / g)
    assert np.allclose(vp, v, atol=1e-12 * (1 + g)) and np.allclose(wp, w, atol=1e-12 * (1 + g))


def test_sample_sigma_moments(rng):
    s = sample_sigma(3, rng, size=10 ** 6)
    assert np.max(np.abs(np.linalg.norm(s, axis=1) - 1.0)) < 1e-12
    assert np.all(np.abs(s.mean(axis=0)) < 4 / math.sqrt(10 ** 6))
    x = s[:, 0] ** 2
    assert abs(x.mean() - 1 / 3) < 3 * x.std() / math.sqrt(len(x))


def test_maxwellian_density_and_symmetry():
    assert math.isclose(maxwellian_density(np.zeros(3))[0], (2 * math.pi / 3) ** -1.5, rel_tol=1e-14)
    v = np.array([[0.3, -0.2, 1.1]])
    assert maxwellian_density(v)[0] == maxwellian_density(-v)[0]


def test_maxwellian_sample_energy(rng):
    e = sq_norm(maxwellian_sample(10 ** 6, 3, rng))
    assert abs(e.mean() - 1.0) < 3 * e.std() / 1000


@pytest.mark.parametrize("d", [2, 3, 5])
def test_maxwellian_moments(d):
    spec = MaxwellianSpec(d)
    assert math.isclose(spec.lambda_k(0), 1.0, rel_tol=1e-10)
    assert math.isclose(spec.lambda_k(2), 2.0, rel_tol=1e-10)
    assert math.isclose(spec.lambda_k(4), 4.0 + 2.0 / d, rel_tol=1e-10)


def test_projection_examples():
    V = project_to_boltzmann_sphere(np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
    assert V.tolist() == [[1.0, 0, 0], [-1.0, 0, 0]]
    V = project_to_boltzmann_sphere(np.array([[2.0, 0, 0], [0.0, 0, 0]]))
    assert V.tolist() == [[1.0, 0, 0], [-1.0, 0, 0]]
    with pytest.raises(ValueError):
        project_to_boltzmann_sphere(np.ones((3, 2)))


@given(st.integers(2, 40), st.integers(0, 2 ** 32))
def test_projection_lands_on_sphere(N, seed):
    V = project_to_boltzmann_sphere(np.random.default_rng(seed).standard_normal((N, 3)))
    s = ParticleState(V, on_sphere=True)
    assert np.max(np.abs(s.momentum)) < 1e-12
    assert abs(s.energy - 1.0) < 1e-12


def test_particle_state_validation():
    with pytest.raises(ValueError):
        ParticleState(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        ParticleState(np.full((2, 3), np.inf))


def test_collision_operator_conserves(rng):
    mu = WeightedPointCloud(rng.standard_normal((7, 3)), rng.dirichlet(np.ones(7)))
    Q = collision_operator_apply(mu, 64, rng)
    assert abs(Q.total_mass) < 1e-13
    assert np.max(np.abs(Q.integrate(lambda x: x[:, 0]))) < 1e-12
    assert abs(Q.integrate(lambda x: sq_norm(x))) < 1e-12


def test_collision_operator_of_single_atom_vanishes(rng):
    Q = collision_operator_apply(WeightedPointCloud.dirac([1.0, 2.0, 3.0]), 16, rng)
    assert np.all(Q.weights == 0.0)
    assert collision_operator_integrate(WeightedPointCloud.dirac([1.0, 0, 0]), sq_norm, 16, rng) == (0.0, 0.0)


def test_collision_operator_routes_agree(rng):
    """Signed-cloud pairing and the direct estimator target the same number."""
    mu = WeightedPointCloud(rng.standard_normal((5, 3)), rng.dirichlet(np.ones(5)))
    f = lambda x: (1 + sq_norm(x)) * np.tanh(x[:, 0])
    est, se = collision_operator_integrate(mu, f, 20000, rng)
    via_cloud = collision_operator_apply(mu, 20000, np.random.default_rng(1)).integrate(f)
    # both estimates carry comparable Monte Carlo error: allow 4 combined SE
    assert abs(est - via_cloud) < 4 * math.sqrt(2) * se
