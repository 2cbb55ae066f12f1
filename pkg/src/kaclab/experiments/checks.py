"""Validation runs: conservation, generator consistency, branching and representation checks.

Each function returns a plain dict of measured quantities; the pass/fail
thresholds live with the callers (tests and the CLI).
"""
import math

import numpy as np

from ..branching import Environment, growth_bound_check, simulate_trees
from ..cloud import WeightedPointCloud, weight_function
from ..kinetic import ParticleState, project_to_boltzmann_sphere
from ..metrics import correlation_check, lambda_k
from ..process import KacProcess, exact_generator, generator_drift
from ..seeding import stream
from .initial import maxwellian_init
from .studies import lemma_ratios, run_snapshots


def tanh_weight(V):
    """``f(v) = (1 + |v|^2) tanh(v_1)``."""
    V = np.atleast_2d(V)
    return weight_function(V) * np.tanh(V[:, 0])


def conservation_run(N=512, d=3, n_events=10 ** 6, seed=0, engine="gillespie",
                     lemma_orders=(2, 3, 4, 6), chunk=100_000, backend=None):
    """Per-event conservation, trajectory drift and collision-lemma ratios.

    Per-event errors are relative to the pair's momentum scale
    ``|v| + |v*|`` and energy ``|v|^2 + |v*|^2``.  Drift is measured at
    chunk boundaries against the initial mean velocity and energy.
    """
    rng = stream(seed, 0, "init")
    state = ParticleState(maxwellian_init(N, d, rng), on_sphere=True)
    proc = KacProcess(state, stream(seed, 0, "dynamics"), engine=engine, backend=backend)
    p0, e0 = state.momentum, state.energy
    worst_p = worst_e = drift_p = drift_e = 0.0
    lemma_worst = {k: 0.0 for k in lemma_orders}
    lemma_viol = 0
    done = 0
    while done < n_events:
        lam0 = {k: lambda_k(state.velocities, k) for k in lemma_orders}
        n, b = proc.advance(max_events=min(chunk, n_events - done), record_pairs=True, chunk=chunk)
        if n == 0:
            break
        done += n
        dp = np.abs(b.post.sum(axis=1) - b.pre.sum(axis=1)).max(axis=1)
        scale_p = np.linalg.norm(b.pre, axis=2).sum(axis=1)
        en_pre = np.einsum("eki,eki->e", b.pre, b.pre)
        en_post = np.einsum("eki,eki->e", b.post, b.post)
        worst_p = max(worst_p, float(np.max(dp / scale_p)))
        worst_e = max(worst_e, float(np.max(np.abs(en_post - en_pre) / en_pre)))
        drift_p = max(drift_p, float(np.max(np.abs(state.momentum - p0))))
        drift_e = max(drift_e, abs(state.energy - e0))
        for k in lemma_orders:
            ratio = lemma_ratios(lam0[k], b.pre, b.post, N, k)
            bound = 2.0 ** (k / 2.0 + 1.0)
            lemma_viol += int(np.sum(ratio > bound))
            lemma_worst[k] = max(lemma_worst[k], float(ratio.max() / bound))
    return {"events": done, "t": proc.t, "max_rel_momentum_error": worst_p,
            "max_rel_energy_error": worst_e, "momentum_drift": drift_p, "energy_drift": drift_e,
            "lemma_violations": lemma_viol,
            "lemma_worst_ratio_over_bound": {str(k): v for k, v in lemma_worst.items()},
            "max_refresh_discrepancy": proc.max_refresh_discrepancy}


def correlation_scan(n_measures=10 ** 4, d=3, seed=0, orders=(2, 3, 4, 6)):
    """Count violations of ``Lambda_k1 Lambda_k2 <= Lambda_{k1+k2}`` over random measures.

    Measures have 1 to 50 atoms with Dirichlet weights; atom locations are
    Gaussian with a random scale spanning three decades.
    """
    rng = stream(seed, 0, "measure")
    viol = checked = 0
    for _ in range(n_measures):
        m = int(rng.integers(1, 51))
        pts = rng.standard_normal((m, d)) * 10.0 ** rng.uniform(-1, 2)
        mu = WeightedPointCloud(pts, rng.dirichlet(np.ones(m)), merge=False)
        for i, k1 in enumerate(orders):
            for k2 in orders[i:]:
                checked += 1
                viol += int(not correlation_check(mu, k1, k2)[0])
    return {"measures": n_measures, "checks": checked, "violations": viol}


def generator_check(N=50, d=3, h=1e-3, replicas=10 ** 5, n_sigma=10 ** 4, seed=0,
                    engine="gillespie", backend=None):
    """Finite-difference drift of ``<f, mu^N>`` against the collision operator.

    ``f`` is :func:`tanh_weight`.  Returns both estimates, their standard
    errors and the standardised gap ``z``.
    """
    state = ParticleState(maxwellian_init(N, d, stream(seed, 0, "init")), on_sphere=True)
    drift, se_d = generator_drift(state, tanh_weight, h, replicas, stream(seed, 0, "dynamics"),
                                  engine, backend)
    exact, se_e = exact_generator(state, tanh_weight, n_sigma, stream(seed, 0, "sigma"))
    comb = math.sqrt(se_d ** 2 + se_e ** 2)
    return {"drift": drift, "drift_se": se_d, "operator": exact, "operator_se": se_e,
            "combined_se": comb, "z": abs(drift - exact) / comb}


def _subsample_cloud(V):
    """Empirical cloud of a velocity subsample, recentred and rescaled onto the sphere.

    A random subset of an on-sphere configuration is only on the sphere up to
    sampling error; environments must have exact zero momentum and unit energy.
    """
    return WeightedPointCloud.empirical(project_to_boltzmann_sphere(V))


def kac_environment(V0, t_end, step, rng, engine="gillespie", max_points=None):
    """Piecewise-constant environment from one Kac path, sampled at piece midpoints.

    With ``max_points`` smaller than the path size each piece is a random
    subsample, projected back onto the sphere.
    """
    n = int(round(t_end / step))
    times = np.linspace(0.0, t_end, n + 1)
    mids = 0.5 * (times[:-1] + times[1:])
    snaps = run_snapshots(V0, mids, rng, engine)
    clouds = []
    for V in snaps:
        if max_points is not None and len(V) > max_points:
            clouds.append(_subsample_cloud(V[rng.choice(len(V), size=max_points, replace=False)]))
        else:
            clouds.append(WeightedPointCloud.empirical(V))
    return Environment(times, clouds)


def branching_check(N_env=2048, d=3, t_end=0.5, env_step=0.05, n_trees=10 ** 4,
                    v0s=((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 1.0, 0.0)), seed=0,
                    population_cap=100_000, backend=None):
    """Conservation, population identity and growth bound for trees in a Kac environment."""
    erng = stream(seed, 0, "environment")
    env = kac_environment(maxwellian_init(N_env, d, erng), t_end, env_step, erng)
    brng = stream(seed, 0, "branching")
    out = {"growth": [], "max_momentum_error": 0.0, "max_energy_error": 0.0,
           "population_mismatch": 0, "mass_mismatch": 0, "trees": 0, "truncated": 0, "events": 0}
    for v0 in v0s:
        v0 = np.asarray(v0, dtype=np.float64)[:d]
        tb = simulate_trees(np.repeat(v0[None], n_trees, axis=0), np.ones(n_trees), 0.0, t_end,
                            env, brng, population_cap, backend)
        keep = ~tb.truncated
        out["max_momentum_error"] = max(out["max_momentum_error"], tb.max_momentum_error)
        out["max_energy_error"] = max(out["max_energy_error"], tb.max_energy_error)
        out["population_mismatch"] += int(np.sum(tb.population()[keep] != 1 + 2 * tb.events[keep]))
        mass = np.bincount(tb.leaf_root, weights=tb.leaf_sign, minlength=n_trees)
        out["mass_mismatch"] += int(np.sum(mass[keep] != 1.0))
        out["trees"] += n_trees
        out["truncated"] += int(tb.truncated.sum())
        out["events"] += int(tb.events.sum())
        mean, se, bound, holds = growth_bound_check(v0, 0.0, t_end, env, n_trees, brng,
                                                    population_cap)
        out["growth"].append({"v0": v0.tolist(), "mean": mean, "se": se, "bound": bound,
                              "holds": holds})
    out["discard_fraction"] = out["truncated"] / out["trees"]
    return out


def _support_points(n, d, rng):
    return project_to_boltzmann_sphere(rng.standard_normal((n, d)))


def representation_check(t=0.25, n_points=20, d=3, N=10 ** 4, ensemble_replicas=50,
                         n_trees=10 ** 5, env_step=0.025, env_points=10 ** 5, seed=0,
                         engine="thinning", population_cap=100_000, backend=None):
    """Both sides of the representation identity for ``f = tanh_weight``.

    Left: ensemble means of ``<f, mu^N_t>`` started from ``mu`` and ``nu``
    (``N / n_points`` particles on each atom).  Right: branching estimates of
    ``f_0t(x)`` in the environment ``(phi_t(mu) + phi_t(nu)) / 2``, built from
    the same ensembles at piece midpoints (pooled subsamples projected onto the
    sphere), averaged over each support.
    """
    if N % n_points:
        raise ValueError("N must be a multiple of n_points")
    mrng = stream(seed, 0, "measure")
    supports = {"mu": _support_points(n_points, d, mrng), "nu": _support_points(n_points, d, mrng)}
    n_pieces = int(round(t / env_step))
    grid = np.linspace(0.0, t, n_pieces + 1)
    mids = 0.5 * (grid[:-1] + grid[1:])
    times = list(mids) + [t]
    per = env_points // (2 * ensemble_replicas)
    final = {"mu": [], "nu": []}
    env_parts = [[] for _ in mids]
    for r in range(ensemble_replicas):
        for side, pts in supports.items():
            rng = stream(seed, 2 * r + (side == "nu"), "replica")
            snaps = run_snapshots(np.repeat(pts, N // n_points, axis=0), times, rng, engine)
            final[side].append(float(np.mean(tanh_weight(snaps[-1]))))
            for k in range(len(mids)):
                env_parts[k].append(snaps[k][rng.choice(N, size=min(per, N), replace=False)])
    env = Environment(grid, [_subsample_cloud(np.vstack(p)) for p in env_parts])
    lhs = np.mean(final["mu"]) - np.mean(final["nu"])
    lhs_se = math.sqrt(np.var(final["mu"], ddof=1) / ensemble_replicas
                       + np.var(final["nu"], ddof=1) / ensemble_replicas)
    brng = stream(seed, 0, "branching")
    rhs = rhs_var = 0.0
    discard = []
    for side, sgn in (("mu", 1.0), ("nu", -1.0)):
        for x in supports[side]:
            v0 = np.asarray(x).reshape(1, -1)
            tb_vals = []
            kept = 0
            for start in range(0, n_trees, 20_000):
                m = min(20_000, n_trees - start)
                tb = simulate_trees(np.repeat(v0, m, axis=0), np.ones(m), 0.0, t, env, brng,
                                    population_cap, backend)
                keep = ~tb.truncated
                tb_vals.append(tb.per_root(tanh_weight)[keep])
                kept += int(keep.sum())
            y = np.concatenate(tb_vals)
            rhs += sgn * y.mean() / n_points
            rhs_var += y.var(ddof=1) / len(y) / n_points ** 2
            discard.append(1.0 - kept / n_trees)
    comb = math.sqrt(lhs_se ** 2 + rhs_var)
    return {"lhs": float(lhs), "lhs_se": lhs_se, "rhs": float(rhs), "rhs_se": math.sqrt(rhs_var),
            "combined_se": comb, "z": abs(lhs - rhs) / comb, "max_discard": max(discard),
            "env_points_per_piece": 2 * ensemble_replicas * min(per, N)}
