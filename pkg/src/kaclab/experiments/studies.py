"""Experiment drivers.  Each takes a validated :class:`~kaclab.config.RunConfig`
and returns a :class:`StudyReport`.

Seeding: replica ``r`` of size ``N`` draws from
``make_rng(derive_seed(derive_seed(seed, N, "replica"), r, tag))`` and the
reference runs from ``make_rng(derive_seed(seed, r, "reference"))``, so
results do not depend on the worker count or on execution order.
"""
import logging
import math

import numpy as np

from ..cloud import WeightedPointCloud, sq_norm, weight_function
from ..kinetic import ParticleState, maxwellian_sample, sample_sigma
from ..metrics import (correlation_check, dyadic_upper_bound, lambda_k, w1_ot,
                       wasserstein_lower_witness, wasserstein_lp)
from ..process import KacProcess
from ..seeding import derive_seed, make_rng, stream
from .initial import (equilibrium_sample, fibonacci_sphere, heavy_tailed_init, maxwellian_init,
                      nonchaotic_init, reflections)
from .report import StudyReport, loglog_slope, mean_se, pmap, shared

log = logging.getLogger("kaclab.studies")


def replica_rng(seed, N, r, tag):
    """Generator for replica ``r`` of size ``N`` and purpose ``tag``."""
    return make_rng(derive_seed(derive_seed(seed, N, "replica"), r, tag))


def run_snapshots(V0, times, rng, engine="gillespie", backend=None):
    """Velocities at each of the sorted ``times`` along one path started at ``V0``."""
    state = ParticleState(V0, on_sphere=True)
    proc = KacProcess(state, rng, engine=engine, backend=backend)
    out = []
    for t in times:
        proc.advance(t)
        out.append(state.velocities.copy())
    return out


def weighted_w(V, ref):
    """Exact ``W`` between the empirical measures of two velocity arrays."""
    return wasserstein_lp(WeightedPointCloud.empirical(V), WeightedPointCloud.empirical(ref),
                          method="flow")[0]


# ---------------------------------------------------------------- ensembles vs reference

def _reference_task(args):
    seed, r, N_ref, d, times, engine = args
    rng = stream(seed, r, "reference")
    return run_snapshots(maxwellian_init(N_ref, d, rng), times, rng, engine)


def reference_pools(seed, N_ref, runs, d, times, engine="thinning", threads=None):
    """Pooled reference velocities at each time: ``runs`` independent paths of size ``N_ref``."""
    snaps = pmap(_reference_task, [(seed, r, N_ref, d, tuple(times), engine) for r in range(runs)],
                 threads)
    return [np.vstack([s[k] for s in snaps]) for k in range(len(times))]


def _ensemble_task(args):
    seed, N, r, d, times, engine, kappa, metric = args
    pools = shared()["pools"]
    rng = replica_rng(seed, N, r, "dynamics")
    snaps = run_snapshots(maxwellian_init(N, d, rng), times, rng, engine)
    mrng = replica_rng(seed, N, r, "metric")
    M = max(1, int(round(kappa * N)))
    out = []
    for k, V in enumerate(snaps):
        ref = pools[k][mrng.choice(len(pools[k]), size=M, replace=False)]
        mu, nu = WeightedPointCloud.empirical(V), WeightedPointCloud.empirical(ref)
        if metric["mode"] == "exact":
            w = wasserstein_lp(mu, nu, method="flow")[0]
            lo = up = w
        else:
            lo = wasserstein_lower_witness(mu, nu, metric["subsample"], mrng)[0]
            up = dyadic_upper_bound(mu, nu, metric["J"], metric["L"])[0]
            w = 0.5 * (lo + up)
        out.append((w, lo, up, lambda_k(V, 4)))
    return out


def _ensemble_cells(cfg, times, threads):
    log.info("reference: %d runs of N=%d", cfg.ref_runs, cfg.N_ref)
    pools = reference_pools(cfg.seed, cfg.N_ref, cfg.ref_runs, cfg.d, times, cfg.reference_engine,
                            threads)
    tasks = [(cfg.seed, N, r, cfg.d, tuple(times), cfg.engine, cfg.reference_factor, cfg.metric)
             for N in cfg.N for r in range(cfg.replicas)]
    log.info("ensembles: %d tasks", len(tasks))
    res = pmap(_ensemble_task, tasks, threads, shared_data={"pools": pools})
    cells = []
    pos = 0
    for N in cfg.N:
        block = np.array(res[pos:pos + cfg.replicas])   # (replicas, times, 4)
        pos += cfg.replicas
        for k, t in enumerate(times):
            w, lo, up, lam4 = block[:, k, 0], block[:, k, 1], block[:, k, 2], block[:, k, 3]
            m, se = mean_se(w)
            half = float(np.mean(0.5 * (up - lo)))
            cells.append({"N": N, "t": t, "n": len(w), "mean": m, "se": se,
                          "se_total": math.sqrt(se ** 2 + half ** 2),
                          "lower_mean": float(lo.mean()), "upper_mean": float(up.mean()),
                          "lambda4_mean": float(lam4.mean())})
    return cells, pools


def _split_half(pools, k, M, rng):
    pool = pools[k]
    half = len(pool) // 2
    a = pool[:half][rng.choice(half, size=min(M, half), replace=False)]
    b = pool[half:][rng.choice(len(pool) - half, size=min(M, len(pool) - half), replace=False)]
    return weighted_w(a, b)


def convergence_study(cfg, threads=None):
    """Decay of ``E W(mu^N_t, reference)`` in ``N`` and its log-log slope."""
    times = sorted(cfg.t_grid)
    cells, pools = _ensemble_cells(cfg, times, threads)
    rep = StudyReport("convergence", cfg.to_dict(), cells)
    fit_cells = [c for c in cells if c["t"] == cfg.fit_time]
    fit = loglog_slope([c["N"] for c in fit_cells], [c["mean"] for c in fit_cells],
                       [c["se_total"] for c in fit_cells])
    rep.fits["slope"] = fit
    k = times.index(cfg.fit_time)
    M = int(round(cfg.reference_factor * max(cfg.N)))
    rep.notes["reference_split_half"] = _split_half(pools, k, M, stream(cfg.seed, 0, "metric"))
    rep.notes["metric_mode"] = cfg.metric["mode"]
    lo, hi = cfg.slope_band
    rep.verdict("slope_in_band", fit["slope"], lo <= fit["slope"] <= hi, [lo, hi])
    return rep


def uniform_time_study(cfg, threads=None):
    """``max_t E W(mu^N_t, reference)`` relative to its value at ``t_base``."""
    times = sorted(cfg.t_grid)
    cells, _ = _ensemble_cells(cfg, times, threads)
    rep = StudyReport("uniform_time", cfg.to_dict(), cells)
    for N in cfg.N:
        row = {c["t"]: c["mean"] for c in cells if c["N"] == N}
        ratio = max(row.values()) / row[cfg.t_base]
        rep.fits[f"N={N}"] = {"max_mean": max(row.values()), "base_mean": row[cfg.t_base],
                              "ratio": ratio}
        rep.verdict(f"ratio_N{N}", ratio, ratio <= cfg.ratio_max, [0.0, cfg.ratio_max])
    return rep


# ---------------------------------------------------------------- i.i.d. baseline

def _iid_task(args):
    seed, N, r, d, kappa = args
    rng = replica_rng(seed, N, r, "init")
    V = maxwellian_init(N, d, rng)
    ref = maxwellian_sample(max(1, int(round(kappa * N))), d, rng)
    return w1_ot(WeightedPointCloud.empirical(V), WeightedPointCloud.empirical(ref))


def iid_baseline_study(cfg, threads=None):
    """``E W_1`` between chaotic initial data and an independent Maxwellian sample."""
    tasks = [(cfg.seed, N, r, cfg.d, cfg.reference_factor) for N in cfg.N for r in range(cfg.replicas)]
    res = np.array(pmap(_iid_task, tasks, threads)).reshape(len(cfg.N), cfg.replicas)
    cells = []
    for N, row in zip(cfg.N, res):
        m, se = mean_se(row)
        cells.append({"N": N, "n": len(row), "mean": m, "se": se})
    rep = StudyReport("iid_baseline", cfg.to_dict(), cells)
    fit = loglog_slope(cfg.N, [c["mean"] for c in cells], [c["se"] for c in cells])
    rep.fits["slope"] = fit
    lo, hi = cfg.slope_band
    rep.verdict("slope_in_band", fit["slope"], lo <= fit["slope"] <= hi, [lo, hi])
    return rep


# ---------------------------------------------------------------- moments

def lemma_ratios(lam_start, pre, post, N, k):
    """``Lambda_k`` after/before each event, tracked from ``lam_start`` by increments."""
    q = k / 2.0
    inc = (np.sum(weight_function(post.reshape(-1, post.shape[-1])).reshape(post.shape[:2]) ** q, axis=1)
           - np.sum(weight_function(pre.reshape(-1, pre.shape[-1])).reshape(pre.shape[:2]) ** q, axis=1)) / N
    after = lam_start + np.cumsum(inc)
    before = np.concatenate([[lam_start], after[:-1]])
    return after / before


def _moment_task(args):
    seed, N, r, d, times, alpha, orders, lemma_orders, engine = args
    rng = replica_rng(seed, N, r, "dynamics")
    state = ParticleState(heavy_tailed_init(N, d, alpha, rng), on_sphere=True)
    proc = KacProcess(state, rng, engine=engine)
    moments, worst, violations, corr_viol, n_events = [], {}, 0, 0, 0
    for t in times:
        lam0 = {k: lambda_k(state.velocities, k) for k in lemma_orders}
        n, batch = proc.advance(t, record_pairs=True)
        n_events += n
        if n:
            for k in lemma_orders:
                ratio = lemma_ratios(lam0[k], batch.pre, batch.post, N, k)
                bound = 2.0 ** (k / 2.0 + 1.0)
                violations += int(np.sum(ratio > bound))
                worst[k] = max(worst.get(k, 0.0), float(ratio.max() / bound))
        V = state.velocities
        moments.append([lambda_k(V, q) for q in orders])
        for i, k1 in enumerate(lemma_orders):
            for k2 in lemma_orders[i:]:
                corr_viol += int(not correlation_check(V, k1, k2)[0])
    return moments, worst, violations, corr_viol, n_events


def moment_study(cfg, threads=None):
    """Moment evolution from heavy-tailed data, with per-event lemma checks."""
    times = sorted(cfg.t_grid)
    tasks = [(cfg.seed, cfg.N, r, cfg.d, tuple(times), cfg.tail_index, tuple(cfg.orders),
              tuple(cfg.lemma_orders), cfg.engine) for r in range(cfg.replicas)]
    res = pmap(_moment_task, tasks, threads)
    mom = np.array([r[0] for r in res])     # (replicas, times, orders)
    cells = []
    for k, t in enumerate(times):
        cell = {"t": t, "n": cfg.replicas}
        for j, q in enumerate(cfg.orders):
            m, se = mean_se(mom[:, k, j])
            cell[f"lambda_{q:g}"] = m
            cell[f"lambda_{q:g}_se"] = se
        cells.append(cell)
    rep = StudyReport("moment", cfg.to_dict(), cells)
    worst = {}
    for r in res:
        for k, v in r[1].items():
            worst[f"{k:g}"] = max(worst.get(f"{k:g}", 0.0), v)
    rep.fits["lemma_worst_ratio_over_bound"] = worst
    rep.fits["events"] = int(sum(r[4] for r in res))
    lemma_viol = int(sum(r[2] for r in res))
    corr_viol = int(sum(r[3] for r in res))
    rep.verdict("collision_lemma_violations", lemma_viol, lemma_viol == 0, [0, 0])
    rep.verdict("correlation_violations", corr_viol, corr_viol == 0, [0, 0])
    if 4.0 in cfg.orders:
        j = list(cfg.orders).index(4.0)
        if cfg.t_check in times:
            val = float(mom[:, times.index(cfg.t_check), j].mean())
            rep.verdict("lambda4_finite_at_t_check", val, val < cfg.finite_max, [0, cfg.finite_max])
        first, last = float(mom[:, 0, j].mean()), float(mom[:, -1, j].mean())
        rep.verdict("lambda4_decreases", last - first, last < first, None)
    return rep


# ---------------------------------------------------------------- recurrence

def recurrence_function(N):
    """``f(v) = (1 + |v|^2) min(|v| / sqrt(N/2), 1)``."""
    scale = math.sqrt(N / 2.0)

    def f(v):
        v = np.asarray(v, dtype=np.float64)
        r2 = np.einsum("...i,...i->...", v, v)
        return (1.0 + r2) * np.minimum(np.sqrt(r2) / scale, 1.0)
    return f


def occupation(times, values, t0, t1, initial):
    """Fraction of ``[t0, t1)`` spent with the indicator on.

    The indicator equals ``initial`` before ``times[0]`` and ``values[e]`` on
    ``[times[e], times[e+1])``; the path is observed up to ``times[-1]``.
    """
    starts = np.concatenate([[0.0], times])
    ends = np.concatenate([times, [times[-1]]])
    vals = np.concatenate([[initial], values]).astype(np.float64)
    overlap = np.clip(np.minimum(ends, t1) - np.maximum(starts, t0), 0.0, None)
    return float(np.dot(vals, overlap) / (t1 - t0))


def recurrence_study(cfg, threads=None):
    """Occupation of a rare set of the ``N``-particle equilibrium in two half windows."""
    N, d, p = cfg.N, cfg.d, cfg.p
    f = recurrence_function(N)
    crng = stream(cfg.seed, 0, "calibration")
    F = []
    left = cfg.calibration_samples
    while left > 0:
        m = min(left, 100_000)
        F.append(f(equilibrium_sample(N, d, crng, size=m)).mean(axis=1))
        left -= m
    F = np.concatenate(F)
    theta = float(np.quantile(F, 1.0 - p))
    p_hat = float(np.mean(F > theta))
    drng = stream(cfg.seed, 0, "dynamics")
    state = ParticleState(equilibrium_sample(N, d, drng), on_sphere=True)
    proc = KacProcess(state, drng, engine="gillespie")
    value0 = float(f(state.velocities).mean())
    times = np.empty(cfg.n_events)
    ind = np.empty(cfg.n_events, dtype=bool)
    pos = 0
    current = value0
    while pos < cfg.n_events:
        n, batch = proc.advance(max_events=min(cfg.chunk, cfg.n_events - pos), record_pairs=True,
                                chunk=cfg.chunk)
        if n == 0:
            raise RuntimeError("process absorbed")
        inc = (f(batch.post).sum(axis=1) - f(batch.pre).sum(axis=1)) / N
        vals = current + np.cumsum(inc)
        times[pos:pos + n] = batch.time
        ind[pos:pos + n] = vals > theta
        pos += n
        current = float(f(state.velocities).mean())   # re-anchor against rounding drift
    T = float(times[-1])
    occ1 = occupation(times, ind, 0.0, T / 2, value0 > theta)
    occ2 = occupation(times, ind, T / 2, T, value0 > theta)
    rep = StudyReport("recurrence", cfg.to_dict(), [
        {"window": "first_half", "t0": 0.0, "t1": T / 2, "occupation": occ1},
        {"window": "second_half", "t0": T / 2, "t1": T, "occupation": occ2},
    ])
    rep.fits.update({"theta": theta, "p_hat": p_hat,
                     "p_hat_se": math.sqrt(p_hat * (1 - p_hat) / len(F)), "T": T,
                     "events": pos, "two_particle_value": 1.0 + 2.0 / N})
    band = [p / 2, 2 * p]
    rep.verdict("occupation_first_half", occ1, band[0] <= occ1 <= band[1], band)
    rep.verdict("occupation_second_half", occ2, band[0] <= occ2 <= band[1], band)
    return rep


# ---------------------------------------------------------------- relaxation of non-chaotic data

def _panel():
    def radial(g):
        return lambda V: weight_function(V) * g(np.sqrt(sq_norm(V)))
    return {
        "radial_min": radial(lambda r: np.minimum(r, 1.0)),
        "radial_cos": radial(np.cos),
        "radial_exp": radial(lambda r: np.exp(-r)),
        "axis_tanh_sq": lambda V: weight_function(V) * 0.5 * np.tanh(V[:, 0] ** 2),
    }


PANEL_NAMES = tuple(_panel())


def _relaxation_task(args):
    seed, N, r, d, times, engine = args
    rng = replica_rng(seed, N, r, "dynamics")
    snaps = run_snapshots(nonchaotic_init(N, d, rng), times, rng, engine)
    panel = _panel()
    return [[float(np.mean(fn(V))) for fn in panel.values()] for V in snaps]


def relaxation_study(cfg, threads=None):
    """Panel discrepancy between ``E <f, mu^N_t>`` and equilibrium for reflection data."""
    times = sorted(cfg.t_grid)
    tasks = [(cfg.seed, cfg.N, r, cfg.d, tuple(times), cfg.engine) for r in range(cfg.replicas)]
    vals = np.array(pmap(_relaxation_task, tasks, threads))      # (replicas, times, panel)
    erng = stream(cfg.seed, 0, "calibration")
    panel = _panel()
    eq = np.array([[float(np.mean(fn(V))) for fn in panel.values()]
                   for V in equilibrium_sample(cfg.N, cfg.d, erng, size=cfg.equilibrium_samples)])
    eq_mean = eq.mean(axis=0)
    eq_se = eq.std(axis=0, ddof=1) / math.sqrt(len(eq))
    cells = []
    for k, t in enumerate(times):
        m = vals[:, k, :].mean(axis=0)
        se = vals[:, k, :].std(axis=0, ddof=1) / math.sqrt(cfg.replicas)
        gap = np.abs(m - eq_mean)
        floor = 3.0 * np.sqrt(se ** 2 + eq_se ** 2)
        i = int(np.argmax(gap))
        cell = {"t": t, "discrepancy": float(gap[i]), "noise_floor": float(floor[i]),
                "worst_function": PANEL_NAMES[i], "above_floor": bool(np.any(gap > floor))}
        for name, g, fl in zip(PANEL_NAMES, gap, floor):
            cell[f"gap_{name}"] = float(g)
            cell[f"floor_{name}"] = float(fl)
        cells.append(cell)
    rep = StudyReport("relaxation", cfg.to_dict(), cells)
    above = [(c["t"], c["discrepancy"]) for c in cells if c["above_floor"]]
    if len(above) >= 2:
        tt, dd = np.array(above).T
        rep.fits["decay_rate"] = float(-np.polyfit(tt, np.log(dd), 1)[0])
    # each panel function is compared with its own floor
    rep.verdict("initial_gap_above_floor", cells[0]["discrepancy"], cells[0]["above_floor"], None)
    rep.verdict("final_gap_within_floor", cells[-1]["discrepancy"], not cells[-1]["above_floor"],
                None)
    return rep


# ---------------------------------------------------------------- chaos diagnostic

def _chaos_task(args):
    seed, N, r, d, t, init, engine = args
    rng = replica_rng(seed, N, r, "dynamics")
    V0 = maxwellian_init(N, d, rng) if init == "maxwellian" else nonchaotic_init(N, d, rng)
    V = run_snapshots(V0, [t], rng, engine)[0]
    return np.concatenate([V[0], V[1]])


def chaos_diagnostic(pairs):
    """Two-particle marginal versus product of one-particle marginals.

    ``pairs`` holds ``(v_1, v_2)`` from independent replicas.  The first half
    of the replicas supplies the pair cloud; products are formed by pairing
    ``v_1`` of one replica with ``v_2`` of the next.  Returns
    ``(diagnostic, noise_floor)``: ``W_1`` (in ``R^{2d}``) from the pair cloud
    to the product cloud of the second half, and from the product cloud of
    the first half to the same target.
    """
    pairs = np.asarray(pairs, dtype=np.float64)
    d = pairs.shape[1] // 2
    h = len(pairs) // 2
    A, B = pairs[:h], pairs[h:2 * h]

    def product(P):
        return np.column_stack([P[:, :d], np.roll(P[:, d:], 1, axis=0)])

    target = WeightedPointCloud.empirical(product(B))
    diag = w1_ot(WeightedPointCloud.empirical(A), target)
    floor = w1_ot(WeightedPointCloud.empirical(product(A)), target)
    return diag, floor


def chaos_study(cfg, threads=None):
    tasks = [(cfg.seed, N, r, cfg.d, cfg.t, cfg.init, cfg.engine)
             for N in cfg.N for r in range(cfg.replicas)]
    res = np.array(pmap(_chaos_task, tasks, threads)).reshape(len(cfg.N), cfg.replicas, -1)
    cells = []
    for N, pairs in zip(cfg.N, res):
        diag, floor = chaos_diagnostic(pairs)
        cells.append({"N": N, "diagnostic": diag, "noise_floor": floor, "excess": diag - floor})
    return StudyReport("chaos", cfg.to_dict(), cells)


# ---------------------------------------------------------------- non-chaotic lower bound

def nonchaotic_study(cfg, threads=None):
    """``W`` between reflection data and a sphere discretisation, against a calibrated floor.

    A calibration run over ``calibration_draws`` random unit vectors gives
    ``delta_hat``, the smallest distance seen.  A fresh draw for each ``N``
    must then stay above ``ratio * delta_hat``.
    """
    if cfg.d != 3:
        raise ValueError("the sphere discretisation is implemented for d = 3")
    sphere = fibonacci_sphere(cfg.sphere_points)
    crng = stream(cfg.seed, 0, "calibration")
    cal = np.array([weighted_w(reflections(sample_sigma(cfg.d, crng)), sphere)
                    for _ in range(cfg.calibration_draws)])
    delta_hat = float(cal.min())
    cells = []
    for N in cfg.N:
        rng = replica_rng(cfg.seed, N, 0, "init")
        w = weighted_w(nonchaotic_init(N, cfg.d, rng), sphere)
        cells.append({"N": N, "W": w, "ratio_to_delta_hat": w / delta_hat})
    rep = StudyReport("nonchaotic", cfg.to_dict(), cells)
    rep.fits.update({"delta_hat": delta_hat, "calibration_median": float(np.median(cal)),
                     "calibration_max": float(cal.max())})
    worst = min(c["W"] for c in cells)
    rep.verdict("above_floor", worst / delta_hat, worst >= cfg.ratio * delta_hat,
                [cfg.ratio, None])
    return rep


STUDIES = {
    "convergence": convergence_study,
    "uniform_time": uniform_time_study,
    "iid_baseline": iid_baseline_study,
    "moment": moment_study,
    "recurrence": recurrence_study,
    "relaxation": relaxation_study,
    "chaos": chaos_study,
    "nonchaotic": nonchaotic_study,
}


def run_study(cfg, threads=None):
    """Dispatch on ``cfg.kind``."""
    try:
        fn = STUDIES[cfg.kind]
    except KeyError:
        raise ValueError(f"{cfg.kind!r} is not a study kind; choose from {sorted(STUDIES)}") from None
    return fn(cfg, threads)
