import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kaclab._backend import get_kernels
from kaclab.branching import (Environment, SignedParticleSystem, branch_step,
                              estimate_flow_derivative, estimate_fst, growth_bound_check,
                              lipschitz_profile, run_reference, simulate_trees)
from kaclab.cloud import WeightedPointCloud, sq_norm, weight_function
from kaclab.experiments import maxwellian_init, tanh_weight
from kaclab.seeding import stream

try:
    get_kernels("compiled")
    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False


@pytest.fixture(scope="module")
def env():
    V = maxwellian_init(512, 3, stream(0, 0, "environment"))
    V2 = maxwellian_init(512, 3, stream(1, 0, "environment"))
    return Environment([0.0, 0.2, 0.5], [WeightedPointCloud.empirical(V), WeightedPointCloud.empirical(V2)])


@pytest.fixture(scope="module")
def delta_env():
    return Environment.constant(WeightedPointCloud.dirac([0.0, 0.0, 0.0]), 1.0, check=False)


def test_environment_validation():
    cl = WeightedPointCloud.empirical(maxwellian_init(16, 3, stream(0, 0, "init")))
    with pytest.raises(ValueError):
        Environment([0.0, 1.0], [cl, cl])
    with pytest.raises(ValueError):
        Environment([1.0, 0.0], [cl])
    with pytest.raises(ValueError):
        Environment.constant(WeightedPointCloud.dirac([0.0, 0.0, 0.0]), 1.0)   # energy 0
    with pytest.raises(ValueError):
        Environment.constant(WeightedPointCloud(cl.points, 2 * cl.weights), 1.0)


def test_environment_piecewise_quantities(env, delta_env):
    assert env.piece(0.0) == 0 and env.piece(0.2) == 1 and env.piece(0.5) == 1
    l3 = env.lambda3
    assert math.isclose(env.integral_lambda3(0.1, 0.3), 0.1 * l3[0] + 0.1 * l3[1], rel_tol=1e-12)
    for t in (0.0, 0.3, 1.0):
        assert math.isclose(delta_env.z(t), 3 * math.exp(8 * t), rel_tol=1e-12)


def test_no_branching_in_point_environment(delta_env, rng):
    sys0 = SignedParticleSystem.single([0.0, 0.0, 0.0])
    out, n = run_reference(sys0, delta_env, 1.0, rng)
    assert n == 0 and np.array_equal(out.velocities, sys0.velocities)
    tb = simulate_trees(np.zeros((100, 3)), np.ones(100), 0.0, 1.0, delta_env, stream(0, 0, "branching"))
    assert tb.events.sum() == 0 and len(tb.leaf_v) == 100
    mean, se, bound, holds = growth_bound_check([0.0, 0.0, 0.0], 0.0, 0.7, delta_env, 100,
                                                stream(0, 0, "branching"))
    assert mean == 1.0 and se == 0.0 and holds
    assert math.isclose(bound, math.exp(8 * 0.7), rel_tol=1e-12)


def test_reference_step_conserves(env, rng):
    sys = SignedParticleSystem.single([1.0, -0.5, 0.2])
    m0, p0, e0 = sys.signed_mass, sys.momentum.copy(), sys.energy
    events = 0
    while sys.t < env.t_end and events < 200:
        before = len(sys)
        sys, ev = branch_step(sys, env, rng)
        if ev is not None:
            events += 1
            assert len(sys) == before + 2
            assert sys.signed_mass == m0
            assert np.allclose(sys.momentum, p0, atol=1e-10)
            assert math.isclose(sys.energy, e0, rel_tol=1e-10, abs_tol=1e-10)
    assert len(sys) == 1 + 2 * events


def test_kernel_tree_invariants(env):
    roots = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.5, -1.0, 1.5]] * 300)
    tb = simulate_trees(roots, np.ones(len(roots)), 0.0, 0.5, env, stream(2, 0, "branching"))
    keep = ~tb.truncated
    assert np.all(tb.population()[keep] == 1 + 2 * tb.events[keep])
    mass = np.bincount(tb.leaf_root, weights=tb.leaf_sign, minlength=tb.n_roots)
    assert np.all(mass[keep] == 1.0)
    assert tb.max_momentum_error < 1e-10 and tb.max_energy_error < 1e-10
    energy = np.bincount(tb.leaf_root, weights=tb.leaf_sign * sq_norm(tb.leaf_v), minlength=tb.n_roots)
    assert np.allclose(energy, sq_norm(roots), rtol=1e-10, atol=1e-10)


def test_population_cap_discards(env):
    roots = np.tile([[3.0, 0.0, 0.0]], (200, 1))
    tb = simulate_trees(roots, np.ones(200), 0.0, 0.5, env, stream(3, 0, "branching"), population_cap=3)
    assert tb.truncated.any()
    assert not np.any(np.isin(tb.leaf_root, np.flatnonzero(tb.truncated)))
    assert np.all(tb.population()[~tb.truncated] <= 3)


def test_estimate_weight_is_conserved(env):
    v0 = np.array([0.3, 1.2, -0.7])
    est = estimate_fst(weight_function, v0, 0.0, 0.5, env, 2000, stream(4, 0, "branching"))
    assert math.isclose(est.estimate, 1 + v0 @ v0, rel_tol=1e-12)
    assert est.se < 1e-12
    one = estimate_fst(lambda V: np.ones(len(V)), v0, 0.0, 0.5, env, 500, stream(4, 1, "branching"))
    assert one.estimate == 1.0 and one.se == 0.0


def test_zero_duration_returns_f(env):
    v0 = [0.4, 0.1, -2.0]
    est = estimate_fst(tanh_weight, v0, 0.3, 0.3, env, 50, stream(5, 0, "branching"))
    assert est.estimate == tanh_weight(np.array([v0]))[0] and est.events_per_tree == 0
    mean, se, bound, holds = growth_bound_check(v0, 0.3, 0.3, env, 50, stream(5, 0, "branching"))
    assert math.isclose(mean, bound) and holds


def test_linearity_on_common_trees(env):
    v0 = np.tile([[0.5, 0.5, 0.0]], (3000, 1))
    tb = simulate_trees(v0, np.ones(3000), 0.0, 0.5, env, stream(6, 0, "branching"))
    f, g = tanh_weight, lambda V: np.cos(V[:, 1]) * weight_function(V)
    lhs = tb.per_root(lambda V: 2.5 * f(V) - 0.7 * g(V))
    assert np.allclose(lhs, 2.5 * tb.per_root(f) - 0.7 * tb.per_root(g), atol=1e-10)


def test_kernel_matches_reference_in_law(env):
    """Thinned kernel and exact-summation reference target the same expectation."""
    v0 = np.array([1.0, 0.5, 0.0])
    t = 0.3
    ker = estimate_fst(tanh_weight, v0, 0.0, t, env, 20000, stream(7, 0, "branching"))
    rng = stream(7, 1, "branching")
    ref, ev = [], []
    for _ in range(1500):
        sys, n = run_reference(SignedParticleSystem.single(v0), env, t, rng)
        ref.append(sys.pairing(tanh_weight))
        ev.append(n)
    ref = np.asarray(ref)
    se = math.sqrt(ker.se ** 2 + ref.var(ddof=1) / len(ref))
    assert abs(ker.estimate - ref.mean()) < 4 * se
    ev = np.asarray(ev, float)
    assert abs(ker.events_per_tree - ev.mean()) < 4 * ev.std(ddof=1) / math.sqrt(len(ev)) + 0.05


def test_branching_rate_short_time(env):
    """Mean number of events over a short window equals rate times duration."""
    v0 = np.array([1.5, 0.0, 0.0])
    cl = env.clouds[0]
    rate = 2 * float(np.dot(cl.weights, np.linalg.norm(cl.points - v0, axis=1)))
    t = 0.01
    tb = simulate_trees(np.tile(v0, (200_000, 1)), np.ones(200_000), 0.0, t, env,
                        stream(8, 0, "branching"))
    ev = tb.events.astype(float)
    assert abs(ev.mean() - rate * t) < 4 * ev.std() / math.sqrt(len(ev)) + (rate * t) ** 2


def test_growth_bound_holds_in_kac_environment(env):
    for v0 in ([0.0, 0.0, 0.0], [2.0, 1.0, 0.0]):
        mean, se, bound, holds = growth_bound_check(v0, 0.0, 0.5, env, 5000, stream(9, 0, "branching"))
        assert holds and mean >= 1.0


def test_lipschitz_profile():
    assert lipschitz_profile([[0.0, 0.0, 0.0]], [0.5]) == (0.5, 0.0)
    mesh = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    sup, lip = lipschitz_profile(mesh, np.array([1.0, 0.0]) * weight_function(mesh))
    assert sup == 1.0 and lip == 1.0


def test_profile_in_point_environment_below_z(delta_env):
    """With rho = delta_0 the profile of f_0t stays below z_t = 3 exp(8t)."""
    mesh = np.array([[x, 0.0, 0.0] for x in np.linspace(-2, 2, 9)])
    vals = [estimate_fst(tanh_weight, v, 0.0, 0.2, delta_env, 2000, stream(10, i, "branching")).estimate
            for i, v in enumerate(mesh)]
    sup, lip = lipschitz_profile(mesh, vals)
    assert sup <= delta_env.z(0.2) and lip <= delta_env.z(0.2)


def test_flow_derivative(env):
    theta = WeightedPointCloud(np.array([[1.0, 0, 0], [0, -1.0, 0.5]]), [0.6, 0.4])
    xi = estimate_flow_derivative(theta, theta, env, 0.5, 2000, stream(11, 0, "branching"))
    # signed mass is conserved per tree, so it equals (#plus - #minus roots) / n_runs:
    # mean zero, variance 2 / n_runs from the Poisson counts
    assert abs(xi.total_mass) < 4 * math.sqrt(2.0 / 2000)
    assert np.all(np.abs(xi.weights * 2000 - np.round(xi.weights * 2000)) < 1e-9)
    other = WeightedPointCloud(np.array([[0.0, 0.0, 0.0]]), [1.0])
    n = 4000
    xi = estimate_flow_derivative(theta, other, env, 0.5, n, stream(11, 1, "branching"))
    target = theta.integrate(sq_norm) - other.integrate(sq_norm)
    # per-run signed energy is a Poisson sum; its variance is <|v|^4, theta+ + theta->
    se = math.sqrt((theta.integrate(lambda x: sq_norm(x) ** 2)) / n)
    assert abs(xi.integrate(sq_norm) - target) < 4 * se
    xi0 = estimate_flow_derivative(theta, other, Environment.constant(env.clouds[0], 0.5), 0.0,
                                   n, stream(11, 2, "branching"))
    assert abs(xi0.total_mass) < 4 * math.sqrt(2.0 / n)


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernels not built")
def test_backends_bit_identical(env):
    roots = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 0.0]] * 100)
    signs = np.tile([1.0, -1.0], 100)
    a = simulate_trees(roots, signs, 0.0, 0.5, env, stream(12, 0, "branching"), backend="compiled")
    b = simulate_trees(roots, signs, 0.0, 0.5, env, stream(12, 0, "branching"), backend="python")
    for field in ("leaf_v", "leaf_sign", "leaf_root", "events", "truncated"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
