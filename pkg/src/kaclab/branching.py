"""Signed branching particle system for the linearised Kac dynamics.

Given an environment ``rho_t`` (a probability measure for each time), a
particle ``(v, s)`` with sign ``s = +-1`` branches at rate
``2 int |v - v*| rho_t(dv*)``.  At a branching event ``v*`` is drawn with
density proportional to ``|v - v*| rho_t(dv*)`` and the particle is replaced
by ``(v', s)``, ``(v*', s)`` and ``(v*, -s)``.  Signed mass, momentum and
energy are conserved exactly by every event.

Environments are piecewise constant in time.  The compiled kernel samples
branching events by thinning against the rate ``2 (|v| + <|v*|, rho_t>)``;
:func:`branch_step` is a slower reference that uses exact rate sums.
"""
import math
from dataclasses import dataclass

import numpy as np

from ._backend import get_kernels
from .cloud import WeightedPointCloud, sq_norm, weight_function
from .kinetic import collide, pair_distance, sample_sigma

DEFAULT_POPULATION_CAP = 100_000
DISCARD_WARNING = 0.01


class Environment:
    """Piecewise-constant environment: ``clouds[k]`` holds on ``[times[k], times[k+1])``.

    Parameters
    ----------
    times : array of ``K + 1`` increasing boundaries
    clouds : list of ``K`` probability :class:`WeightedPointCloud`
    check : bool
        Require every cloud to be a probability measure with unit energy
        ``<|v|^2, rho> = 1`` (to ``tol``).
    """

    def __init__(self, times, clouds, check=True, tol=1e-6):
        times = np.asarray(times, dtype=np.float64)
        if len(times) != len(clouds) + 1 or len(clouds) == 0:
            raise ValueError("need len(times) == len(clouds) + 1 >= 2")
        if np.any(np.diff(times) <= 0):
            raise ValueError("environment times must be strictly increasing")
        d = clouds[0].dim
        for k, cl in enumerate(clouds):
            if cl.dim != d:
                raise ValueError("all environment clouds must share a dimension")
            if not cl.is_probability(tol):
                raise ValueError(f"environment cloud {k} is not a probability measure")
            if check:
                e = cl.integrate(sq_norm)
                if abs(e - 1.0) > tol:
                    raise ValueError(f"environment cloud {k} has energy {e}, expected 1")
        self.times = times
        self.clouds = list(clouds)
        self.d = d
        sizes = [cl.size for cl in clouds]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.intp)
        self.points = np.ascontiguousarray(np.vstack([cl.points for cl in clouds]))
        self.speed = np.sqrt(sq_norm(self.points))
        w = np.concatenate([np.clip(cl.weights, 0.0, None) for cl in clouds])
        self.cumw = np.empty(len(w))
        self.cumsw = np.empty(len(w))
        self.mass = np.empty(len(clouds))
        self.m1 = np.empty(len(clouds))
        for k in range(len(clouds)):
            lo, hi = self.offsets[k], self.offsets[k + 1]
            self.cumw[lo:hi] = np.cumsum(w[lo:hi])
            self.cumsw[lo:hi] = np.cumsum(w[lo:hi] * self.speed[lo:hi])
            self.mass[k] = self.cumw[hi - 1]
            self.m1[k] = self.cumsw[hi - 1]
        self.lambda3 = np.array([cl.integrate(lambda x: weight_function(x) ** 1.5) for cl in clouds])

    @classmethod
    def constant(cls, cloud, t_end, t_start=0.0, check=True):
        return cls([t_start, t_end], [cloud], check=check)

    @property
    def t_start(self):
        return float(self.times[0])

    @property
    def t_end(self):
        return float(self.times[-1])

    def piece(self, t):
        """Index ``k`` with ``times[k] <= t < times[k+1]``."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(k, 0), len(self.clouds) - 1)

    def integral_lambda3(self, t0, t1):
        """``int_{t0}^{t1} Lambda_3(rho_u) du``."""
        lo = np.clip(self.times[:-1], t0, t1)
        hi = np.clip(self.times[1:], t0, t1)
        return float(np.dot(self.lambda3, hi - lo))

    def z(self, t, s=None):
        """``3 exp(8 int_s^t Lambda_3)`` (``s`` defaults to the start of the environment)."""
        s = self.t_start if s is None else s
        return 3.0 * math.exp(8.0 * self.integral_lambda3(s, t))

    def growth_bound(self, v0, s, t):
        """``(1 + |v0|^2) exp(8 int_s^t Lambda_3)``."""
        v0 = np.asarray(v0, dtype=np.float64)
        return float((1.0 + v0 @ v0) * math.exp(8.0 * self.integral_lambda3(s, t)))

    def subsample(self, max_points, rng):
        """Environment with each cloud replaced by an equal-weight subsample of its atoms."""
        clouds = []
        for cl in self.clouds:
            if cl.size <= max_points:
                clouds.append(cl)
                continue
            idx = rng.choice(cl.size, size=max_points, replace=False, p=cl.weights / cl.weights.sum())
            clouds.append(WeightedPointCloud(cl.points[np.sort(idx)]))
        return Environment(self.times, clouds, check=False)

    def __repr__(self):
        return (f"Environment(d={self.d}, pieces={len(self.clouds)}, "
                f"t=[{self.t_start:g}, {self.t_end:g}], atoms={len(self.points)})")


@dataclass
class SignedParticleSystem:
    """Signed particles ``(v_i, s_i)`` at a common time ``t``."""

    velocities: np.ndarray
    signs: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=np.float64))
        self.signs = np.asarray(self.signs, dtype=np.float64).reshape(-1)
        if len(self.signs) != len(self.velocities):
            raise ValueError("one sign per particle")
        if not np.all(np.abs(self.signs) == 1.0):
            raise ValueError("signs must be +1 or -1")

    @classmethod
    def single(cls, v0, sign=1.0, t=0.0):
        return cls(np.asarray(v0, dtype=np.float64).reshape(1, -1), [sign], t)

    def __len__(self):
        return len(self.signs)

    def pairing(self, f):
        """``<f, Xi> = sum_i s_i f(v_i)``."""
        return float(np.dot(self.signs, f(self.velocities)))

    @property
    def signed_mass(self):
        return float(self.signs.sum())

    @property
    def momentum(self):
        return self.signs @ self.velocities

    @property
    def energy(self):
        return float(self.signs @ sq_norm(self.velocities))

    def to_cloud(self):
        return WeightedPointCloud(self.velocities, self.signs)


def branch_step(system, env, rng, t_end=None):
    """Advance ``system`` to its next branching event or piece boundary.

    Reference implementation: every particle's rate is summed exactly against
    the current environment cloud.  Returns ``(system, event)`` where ``event``
    is ``None`` if a piece boundary (or ``t_end``) was reached first, and
    otherwise ``(index, v_star, sigma)``.
    """
    t_end = env.t_end if t_end is None else min(t_end, env.t_end)
    if system.t >= t_end:
        return system, None
    k = env.piece(system.t)
    cl = env.clouds[k]
    boundary = min(env.times[k + 1], t_end)
    V = system.velocities
    dist = np.stack([pair_distance(V[i], cl.points) for i in range(len(V))])
    rates = 2.0 * dist @ cl.weights
    total = float(rates.sum())
    tau = rng.exponential(1.0 / total) if total > 0 else math.inf
    if system.t + tau >= boundary:
        return SignedParticleSystem(V, system.signs, float(boundary)), None
    i = int(rng.choice(len(V), p=rates / total))
    p = dist[i] * cl.weights
    a = int(rng.choice(cl.size, p=p / p.sum()))
    v_star = cl.points[a]
    sigma = sample_sigma(env.d, rng)
    vp, wp = collide(V[i], v_star, sigma)
    s = system.signs[i]
    newV = np.vstack([V[:i], vp[None], V[i + 1:], wp[None], v_star[None]])
    newS = np.concatenate([system.signs[:i], [s], system.signs[i + 1:], [s], [-s]])
    return SignedParticleSystem(newV, newS, system.t + tau), (i, v_star, sigma)


def run_reference(system, env, t_end, rng, max_events=10 ** 6):
    """Evolve with :func:`branch_step` up to ``t_end``; returns ``(system, n_events)``."""
    n = 0
    while system.t < t_end:
        system, ev = branch_step(system, env, rng, t_end)
        if ev is not None:
            n += 1
            if n > max_events:
                raise RuntimeError("event budget exceeded")
    return system, n


@dataclass
class TreeBatch:
    """Endpoint leaves of a batch of independent trees (one per root)."""

    leaf_v: np.ndarray
    leaf_sign: np.ndarray
    leaf_root: np.ndarray
    events: np.ndarray
    truncated: np.ndarray
    max_momentum_error: float
    max_energy_error: float

    @property
    def n_roots(self):
        return len(self.events)

    def per_root(self, f):
        """``<f, Xi_t>`` for each root's tree (zero for truncated trees)."""
        vals = self.leaf_sign * f(self.leaf_v) if len(self.leaf_v) else np.zeros(0)
        return np.bincount(self.leaf_root, weights=vals, minlength=self.n_roots)

    def population(self):
        return np.bincount(self.leaf_root, minlength=self.n_roots)


def simulate_trees(roots, signs, s, t, env, rng, population_cap=DEFAULT_POPULATION_CAP,
                   backend=None):
    """Run one independent tree per root from time ``s`` to ``t``.

    Trees whose population would exceed ``population_cap`` are discarded and
    flagged in ``truncated``; they contribute no leaves.
    """
    roots = np.ascontiguousarray(np.atleast_2d(roots), dtype=np.float64)
    signs = np.ascontiguousarray(signs, dtype=np.float64)
    if not (env.t_start <= s <= t <= env.t_end):
        raise ValueError(f"need {env.t_start} <= s <= t <= {env.t_end}, got s={s}, t={t}")
    if roots.shape[1] != env.d:
        raise ValueError("root dimension does not match the environment")
    k = get_kernels(backend)
    out = k.branch_trees(roots, signs, float(s), float(t), env.times, env.offsets, env.points,
                         env.speed, env.cumw, env.cumsw, env.mass, env.m1, rng,
                         int(population_cap))
    return TreeBatch(*out)


@dataclass(frozen=True)
class BranchEstimate:
    """Monte Carlo estimate of ``f_st(v0) = E <f, Xi_t>`` from ``n_trees`` trees."""

    estimate: float
    se: float
    n_trees: int
    discard_fraction: float
    events_per_tree: float

    @property
    def flagged(self):
        return self.discard_fraction > DISCARD_WARNING


def estimate_fst(f, v0, s, t, env, n_trees, rng, population_cap=DEFAULT_POPULATION_CAP,
                 chunk=20_000, backend=None):
    """Estimate ``f_st(v0)``; discarded (over-cap) trees are dropped and counted."""
    v0 = np.asarray(v0, dtype=np.float64).reshape(1, -1)
    vals, kept, events = [], 0, 0
    for start in range(0, n_trees, chunk):
        m = min(chunk, n_trees - start)
        tb = simulate_trees(np.repeat(v0, m, axis=0), np.ones(m), s, t, env, rng,
                            population_cap, backend)
        keep = ~tb.truncated
        vals.append(tb.per_root(f)[keep])
        kept += int(keep.sum())
        events += int(tb.events.sum())
    y = np.concatenate(vals)
    se = float(y.std(ddof=1) / math.sqrt(len(y))) if len(y) > 1 else 0.0
    return BranchEstimate(float(y.mean()) if len(y) else math.nan, se, n_trees,
                          1.0 - kept / n_trees, events / n_trees)


def growth_bound_check(v0, s, t, env, n_trees, rng, population_cap=DEFAULT_POPULATION_CAP):
    """Compare ``E <1 + |v|^2, |Xi_t|>`` with ``(1 + |v0|^2) exp(8 int Lambda_3)``.

    Returns ``(estimate, se, bound, holds)``; ``holds`` compares the estimate
    minus three standard errors against the bound.
    """
    v0 = np.asarray(v0, dtype=np.float64).reshape(1, -1)
    tb = simulate_trees(np.repeat(v0, n_trees, axis=0), np.ones(n_trees), s, t, env, rng,
                        population_cap)
    keep = ~tb.truncated
    absvals = np.bincount(tb.leaf_root, weights=weight_function(tb.leaf_v),
                          minlength=n_trees)[keep]
    mean = float(absvals.mean())
    se = float(absvals.std(ddof=1) / math.sqrt(len(absvals))) if len(absvals) > 1 else 0.0
    bound = env.growth_bound(v0[0], s, t)
    return mean, se, bound, bool(mean - 3.0 * se <= bound)


def lipschitz_profile(mesh, values):
    """Sup norm and largest difference quotient of ``fhat = values / (1 + |v|^2)`` on a mesh."""
    mesh = np.atleast_2d(np.asarray(mesh, dtype=np.float64))
    fhat = np.asarray(values, dtype=np.float64) / weight_function(mesh)
    sup = float(np.max(np.abs(fhat))) if len(fhat) else 0.0
    if len(fhat) < 2:
        return sup, 0.0
    from scipy.spatial.distance import pdist
    dq = pdist(fhat[:, None]) / np.maximum(pdist(mesh), 1e-300)
    return sup, float(np.max(dq))


def estimate_flow_derivative(theta_plus, theta_minus, env, t, n_runs, rng,
                             population_cap=DEFAULT_POPULATION_CAP, backend=None):
    """Estimate ``xi_t`` started from ``theta_plus - theta_minus`` as a signed cloud.

    Each run places a Poisson number of particles at every atom (mean equal to
    the atom's weight, sign ``+1`` for ``theta_plus`` and ``-1`` for
    ``theta_minus``) and evolves them from the start of the environment to
    ``t``.  The endpoint atoms of all runs are pooled with weight
    ``sign / n_runs``; the result is unbiased for ``xi_t``.
    """
    s = env.t_start
    atoms = np.vstack([theta_plus.points, theta_minus.points])
    means = np.concatenate([theta_plus.weights, theta_minus.weights])
    if np.any(means < 0):
        raise ValueError("theta_plus and theta_minus must be non-negative")
    sgn = np.concatenate([np.ones(theta_plus.size), -np.ones(theta_minus.size)])
    counts = rng.poisson(np.broadcast_to(means, (n_runs, len(means)))).sum(axis=0)
    roots = np.repeat(atoms, counts, axis=0)
    signs = np.repeat(sgn, counts)
    if len(roots) == 0:
        return WeightedPointCloud(np.zeros((0, env.d)), np.zeros(0), merge=False)
    tb = simulate_trees(roots, signs, s, t, env, rng, population_cap, backend)
    if np.any(tb.truncated):
        raise RuntimeError(f"{int(tb.truncated.sum())} trees exceeded the population cap")
    return WeightedPointCloud(tb.leaf_v, tb.leaf_sign / n_runs)
