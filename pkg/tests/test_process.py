import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kaclab._backend import get_kernels
from kaclab.cloud import sq_norm
from kaclab.experiments import maxwellian_init
from kaclab.kinetic import ParticleState
from kaclab.process import (ENGINES, KacProcess, Trajectory, generator_drift, simulate,
                            total_rate)
from kaclab.seeding import stream

try:
    get_kernels("compiled")
    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False

needs_compiled = pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernels not built")


def on_sphere(N, seed=0):
    return ParticleState(maxwellian_init(N, 3, stream(seed, N, "init")), on_sphere=True)


def test_total_rate_examples():
    assert total_rate(np.array([[1.0, 0, 0], [-1.0, 0, 0]])) == 2.0
    assert total_rate(np.ones((5, 3))) == 0.0


@given(st.integers(2, 60), st.integers(0, 1000))
def test_total_rate_bounded_on_sphere(N, seed):
    V = on_sphere(N, seed).velocities
    brute = sum(2 * np.linalg.norm(V[i] - V[j]) / N for i in range(N) for j in range(i + 1, N))
    assert math.isclose(total_rate(V), brute, rel_tol=1e-12)
    assert total_rate(V) <= 2 * N


@pytest.mark.parametrize("engine", ENGINES)
def test_two_particles_only_pair(engine):
    state = ParticleState(np.array([[1.0, 0, 0], [-1.0, 0, 0]]), on_sphere=True)
    proc = KacProcess(state, stream(0, 0, "dynamics"), engine=engine)
    for _ in range(20):
        ev = proc.step()
        assert {ev.i, ev.j} == {0, 1}
        # energy of a head-on pair stays on the unit sphere; momentum stays zero
        assert np.allclose(state.velocities.sum(axis=0), 0.0, atol=1e-15)
        assert math.isclose(sq_norm(state.velocities).sum(), 2.0, rel_tol=1e-14)


@pytest.mark.parametrize("engine", ENGINES)
def test_event_conservation(engine):
    state = on_sphere(64)
    proc = KacProcess(state, stream(1, 0, "dynamics"), engine=engine)
    n, b = proc.advance(max_events=5000, record_pairs=True)
    assert n == 5000
    assert np.max(np.abs(b.post.sum(axis=1) - b.pre.sum(axis=1))) < 1e-13
    e_pre = np.einsum("eki,eki->e", b.pre, b.pre)
    e_post = np.einsum("eki,eki->e", b.post, b.post)
    assert np.max(np.abs(e_post - e_pre) / e_pre) < 1e-13
    assert np.all(np.diff(b.time) >= 0)
    assert np.all(b.i != b.j)


def test_pair_selection_frequencies():
    """One event from a fixed N=5 state: pair frequencies proportional to |v_i - v_j|."""
    rng = np.random.default_rng(5)
    V0 = rng.standard_normal((5, 3))
    w = {(i, j): np.linalg.norm(V0[i] - V0[j]) for i in range(5) for j in range(i + 1, 5)}
    total = sum(w.values())
    state = ParticleState(V0)
    proc = KacProcess(state, stream(2, 0, "dynamics"))
    saved = (proc.rows.copy(), proc.aux.copy())
    counts = dict.fromkeys(w, 0)
    n = 100_000
    for _ in range(n):
        state.velocities[:] = V0
        proc.rows[:], proc.aux[:] = saved[0], saved[1]
        ev = proc.step()
        counts[tuple(sorted((ev.i, ev.j)))] += 1
    for pair, c in counts.items():
        p = w[pair] / total
        assert abs(c / n - p) < 3.5 * math.sqrt(p * (1 - p) / n), pair


@pytest.mark.parametrize("engine", ENGINES)
def test_left_limit_and_pause_invariance(engine):
    """Pausing at intermediate times does not change the path, and events at t are excluded."""
    V0 = on_sphere(32).velocities
    a = ParticleState(V0)
    KacProcess(a, stream(3, 0, "dynamics"), engine=engine).advance(2.0)
    b = ParticleState(V0)
    pb = KacProcess(b, stream(3, 0, "dynamics"), engine=engine)
    times = []
    for t in np.linspace(0.1, 2.0, 20):
        _, batch = pb.advance(t, record=True)
        assert np.all(batch.time < t)
        times.append(batch.time)
    assert np.array_equal(a.velocities, b.velocities)
    assert np.all(np.diff(np.concatenate(times)) > 0)


@pytest.mark.parametrize("engine", ENGINES)
def test_replay_reproduces_path(engine):
    state = on_sphere(40)
    final, series, traj = simulate(state, 1.5, stream(4, 0, "dynamics"), observers=["lambda_2"],
                                   t_grid=[0.0, 0.5, 1.0, 1.5], engine=engine, record_events=True)
    assert np.array_equal(traj.replay(), final.velocities)
    assert np.allclose(series["lambda_2"], 2.0, rtol=0, atol=1e-13)
    mid = traj.state_at(0.5)
    assert np.array_equal(mid, traj.replay(int(np.sum(traj.events.time < 0.5))))
    # the initial state is not touched by simulate
    assert np.array_equal(state.velocities, traj.initial)


def test_simulate_zero_time_is_empty():
    state = on_sphere(16)
    final, series, traj = simulate(state, 0.0, stream(0, 0, "dynamics"), observers=["energy"],
                                   record_events=True)
    assert len(traj.events) == 0
    assert np.array_equal(final.velocities, state.velocities)
    assert np.allclose(series["energy"], 1.0)


def test_same_seed_same_events():
    runs = [simulate(on_sphere(30), 1.0, stream(9, 0, "dynamics"), record_events=True)[2]
            for _ in range(2)]
    for field in ("time", "i", "j", "sigma"):
        assert np.array_equal(getattr(runs[0].events, field), getattr(runs[1].events, field))


@pytest.mark.parametrize("engine", ENGINES)
def test_maintained_rate_matches_exact(engine):
    state = on_sphere(100)
    proc = KacProcess(state, stream(5, 0, "dynamics"), engine=engine, refresh_every=1000)
    proc.advance(max_events=20_000)
    if engine == "gillespie":
        assert math.isclose(proc.total_rate(), total_rate(state.velocities), rel_tol=1e-10)
    else:
        S = np.sqrt(sq_norm(state.velocities)).sum()
        assert math.isclose(proc.total_rate(), 2 * 99 * S / 100, rel_tol=1e-10)
    assert proc.max_refresh_discrepancy < 1e-10


def test_engines_agree_in_law():
    """Event counts over a short window and Lambda_4 at t=1 match between samplers."""
    V0 = on_sphere(24).velocities
    out = {}
    for engine in ENGINES:
        counts, lam = [], []
        for r in range(400):
            s = ParticleState(V0)
            # independent streams for the two samplers
            p = KacProcess(s, stream(60 + ENGINES.index(engine), r, "dynamics"), engine=engine)
            counts.append(p.advance(1.0))
            lam.append(np.mean((1 + sq_norm(s.velocities)) ** 2))
        out[engine] = (np.array(counts, float), np.array(lam))
    for k in range(2):
        a, b = out["gillespie"][k], out["thinning"][k]
        se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
        assert abs(a.mean() - b.mean()) < 4 * se


def test_expected_event_count_matches_rate():
    """For small t the mean number of events is t times the total rate."""
    state = on_sphere(20)
    rate = total_rate(state.velocities)
    t = 0.01
    n = [KacProcess(ParticleState(state.velocities), stream(7, r, "dynamics")).advance(t)
         for r in range(20_000)]
    n = np.asarray(n, float)
    # second-order term: rate changes after the first event, bounded by rate^2 t^2
    assert abs(n.mean() - rate * t) < 4 * n.std() / math.sqrt(len(n)) + (rate * t) ** 2


@needs_compiled
@pytest.mark.parametrize("engine", ENGINES)
def test_backends_bit_identical(engine):
    res = []
    for backend in ("compiled", "python"):
        s = on_sphere(50)
        p = KacProcess(s, stream(8, 0, "dynamics"), engine=engine, backend=backend,
                       refresh_every=500)
        n, b = p.advance(3.0, record_pairs=True)
        res.append((s.velocities, b, p.aux.copy()))
    (v1, b1, a1), (v2, b2, a2) = res
    assert np.array_equal(v1, v2)
    assert np.array_equal(a1, a2)
    for field in ("time", "i", "j", "sigma", "pre", "post"):
        assert np.array_equal(getattr(b1, field), getattr(b2, field))


def test_generator_drift_conserved_quantities():
    state = on_sphere(20)
    for f in (lambda V: np.ones(len(V)), sq_norm, lambda V: V[:, 0]):
        est, se = generator_drift(state, f, 0.05, 200, stream(10, 0, "dynamics"))
        assert abs(est) < 1e-11


def test_advance_rejects_bad_arguments():
    proc = KacProcess(on_sphere(8), stream(0, 0, "dynamics"))
    proc.advance(1.0)
    with pytest.raises(ValueError):
        proc.advance(0.5)
    with pytest.raises(ValueError):
        proc.advance()
    with pytest.raises(ValueError):
        KacProcess(on_sphere(8), stream(0, 0, "dynamics"), engine="tau-leap")
