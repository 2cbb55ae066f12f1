"""Exact simulation of the N-particle hard-spheres Kac process.

Every unordered pair ``{i, j}`` collides at rate ``2 |v_i - v_j| / N`` and is
replaced by the post-collisional pair for a uniform ``sigma``.  Two exact
samplers are available:

``"gillespie"``
    Maintains row sums ``r_i = sum_k |v_i - v_k|``.  The waiting time is
    exponential with rate ``sum_i r_i / N``; the first particle is drawn
    proportional to ``r_i`` and its partner proportional to ``|v_i - v_j|``.
    ``O(N)`` work per event.

``"thinning"``
    Proposes pairs at rate ``2 (|v_i| + |v_j|) / N`` (first particle from a
    Fenwick tree over speeds, partner uniform) and accepts with probability
    ``|v_i - v_j| / (|v_i| + |v_j|)``.  ``O(log N)`` work per proposal,
    suited to large ``N``.

Both leave a pending next-proposal time in the sampler state, so the path
does not depend on where it is paused for observation.  Observations at time
``t`` see every event with time strictly below ``t``.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import _pykernels
from ._backend import get_kernels
from .cloud import sq_norm, weight_function
from .kinetic import ParticleState, collide, pair_distance

ENGINES = ("gillespie", "thinning")
DEFAULT_REFRESH = 2 ** 16
_EMPTY_F = np.zeros(0)
_EMPTY_I = np.zeros(0, dtype=np.intp)
_EMPTY_2 = np.zeros((0, 0))


def total_rate(velocities):
    """Exact total jump rate ``sum_{i<j} 2 |v_i - v_j| / N`` (``O(N^2)``)."""
    V = np.asarray(velocities, dtype=np.float64)
    N = len(V)
    return float(sum(_row_sum(V, k) for k in range(N)) / N)


def _row_sum(V, k):
    return _pykernels._seq_sum(_pykernels._row_dists(V, V[k]))


@dataclass(frozen=True)
class CollisionEvent:
    """One accepted collision: pre- and post-collisional velocities of ``(i, j)``."""

    time: float
    i: int
    j: int
    sigma: np.ndarray
    pre: np.ndarray
    post: np.ndarray


@dataclass
class EventBatch:
    """Columnar record of consecutive events (``pre``/``post`` hold ``[v_i, v_j]``)."""

    time: np.ndarray
    i: np.ndarray
    j: np.ndarray
    sigma: np.ndarray
    pre: np.ndarray = None
    post: np.ndarray = None

    def __len__(self):
        return len(self.time)

    @classmethod
    def concatenate(cls, batches, d):
        if not batches:
            return cls(np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, d)))
        pairs = batches[0].pre is not None
        return cls(
            np.concatenate([b.time for b in batches]),
            np.concatenate([b.i for b in batches]),
            np.concatenate([b.j for b in batches]),
            np.concatenate([b.sigma for b in batches]),
            np.concatenate([b.pre for b in batches]) if pairs else None,
            np.concatenate([b.post for b in batches]) if pairs else None,
        )


class KacProcess:
    """Stateful exact sampler; mutates ``state.velocities`` in place.

    Parameters
    ----------
    state : ParticleState
    rng : numpy.random.Generator
        Consumed sequentially by the kernel; must be PCG64-compatible.
    engine : {"gillespie", "thinning"}
    refresh_every : int
        Full recomputation period (events) for the maintained rate index.
    backend : {"compiled", "python"} or None
        Kernel implementation; ``None`` uses the active backend.
    """

    def __init__(self, state, rng, engine="gillespie", refresh_every=DEFAULT_REFRESH,
                 backend=None, t0=0.0):
        if engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {engine!r}")
        self.state = state
        self.rng = rng
        self.engine = engine
        self._k = get_kernels(backend)
        V = state.velocities
        self.aux = np.zeros(_pykernels.AUX_SIZE)
        self.aux[_pykernels.T_NOW] = t0
        self.aux[_pykernels.T_NEXT] = math.nan
        self.aux[_pykernels.REFRESH_EVERY] = refresh_every
        if engine == "gillespie":
            self.rows = np.array([_row_sum(V, k) for k in range(len(V))])
            self.aux[_pykernels.TOTAL] = _pykernels._seq_sum(self.rows)
            self._buf = np.zeros(len(V))
        else:
            self.speed = np.sqrt(sq_norm(V))
            self.tree = np.zeros(len(V) + 1)
            _pykernels.fenwick_build(self.tree, self.speed)
            self.aux[_pykernels.TOTAL] = _pykernels._seq_sum(self.speed)

    @property
    def t(self):
        return float(self.aux[_pykernels.T_NOW])

    @property
    def n_events(self):
        return int(self.aux[_pykernels.N_EVENTS])

    @property
    def n_proposals(self):
        return int(self.aux[_pykernels.N_PROPOSALS])

    @property
    def max_refresh_discrepancy(self):
        """Largest relative gap between maintained and recomputed rate sums."""
        return float(self.aux[_pykernels.MAX_DISC])

    def total_rate(self):
        """Maintained total jump rate (Gillespie) or proposal rate (thinning)."""
        N = self.state.N
        S = self.aux[_pykernels.TOTAL]
        return float(S / N if self.engine == "gillespie" else 2.0 * (N - 1) * S / N)

    def _call(self, t_stop, max_events, record, pairs):
        V = self.state.velocities
        d = V.shape[1]
        if record:
            et, ei, ej = np.zeros(max_events), np.zeros(max_events, np.intp), np.zeros(max_events, np.intp)
            es = np.zeros((max_events, d))
        else:
            et, ei, ej, es = _EMPTY_F, _EMPTY_I, _EMPTY_I, _EMPTY_2
        if pairs:
            pre, post = np.zeros((max_events, 2 * d)), np.zeros((max_events, 2 * d))
        else:
            pre = post = _EMPTY_2
        if self.engine == "gillespie":
            n = self._k.gillespie_advance(V, self.rows, self.aux, self.rng, t_stop, max_events,
                                          et, ei, ej, es, pre, post, self._buf)
        else:
            n = self._k.thinning_advance(V, self.speed, self.tree, self.aux, self.rng, t_stop,
                                         max_events, et, ei, ej, es, pre, post)
        if not record:
            return n, None
        batch = EventBatch(et[:n], ei[:n].astype(np.int64), ej[:n].astype(np.int64), es[:n],
                           pre[:n].reshape(n, 2, d) if pairs else None,
                           post[:n].reshape(n, 2, d) if pairs else None)
        return n, batch

    def advance(self, t_stop=math.inf, max_events=None, record=False, record_pairs=False,
                chunk=1 << 16):
        """Apply every event with time ``< t_stop``, at most ``max_events`` of them.

        Returns the number of events, and an :class:`EventBatch` when
        ``record`` or ``record_pairs`` is set.
        """
        if t_stop < self.t:
            raise ValueError(f"cannot advance backwards: t={self.t}, t_stop={t_stop}")
        if max_events is None:
            if t_stop == math.inf:
                raise ValueError("give t_stop or max_events")
            max_events = np.iinfo(np.int64).max
        record = record or record_pairs
        total = 0
        batches = []
        while total < max_events:
            want = min(chunk, max_events - total) if record else max_events - total
            n, batch = self._call(t_stop, want, record, record_pairs)
            total += n
            if batch is not None:
                batches.append(batch)
            if n < want:
                break
        if record:
            return total, EventBatch.concatenate(batches, self.state.d)
        return total

    def step(self):
        """Apply the next event; ``None`` if the process is absorbed (zero rate)."""
        n, batch = self._call(math.inf, 1, True, True)
        if n == 0:
            return None
        return CollisionEvent(float(batch.time[0]), int(batch.i[0]), int(batch.j[0]),
                              batch.sigma[0].copy(), batch.pre[0].copy(), batch.post[0].copy())


@dataclass
class Trajectory:
    """Initial state plus an event log sufficient to replay the path exactly."""

    initial: np.ndarray
    events: EventBatch
    t_fin: float
    engine: str = "gillespie"
    seed: int = None

    @property
    def N(self):
        return self.initial.shape[0]

    def replay(self, n_events=None):
        """Velocities after the first ``n_events`` events (all of them by default)."""
        V = self.initial.copy()
        n = len(self.events) if n_events is None else n_events
        for e in range(n):
            i, j = self.events.i[e], self.events.j[e]
            vi, vj = collide(V[i], V[j], self.events.sigma[e])
            V[i] = vi
            V[j] = vj
        return V

    def state_at(self, t):
        """Velocities at time ``t`` (events strictly before ``t``)."""
        return self.replay(int(np.searchsorted(self.events.time, t, side="left")))


@dataclass
class ObservableSeries:
    """Values of named observables on a time grid."""

    times: np.ndarray
    values: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.values[name]


def lambda_observable(k):
    def obs(V):
        return float(np.mean(weight_function(V) ** (k / 2.0)))
    obs.__name__ = f"lambda_{k:g}"
    return obs


OBSERVABLES = {
    "lambda_2": lambda_observable(2),
    "lambda_3": lambda_observable(3),
    "lambda_4": lambda_observable(4),
    "momentum": lambda V: V.mean(axis=0),
    "energy": lambda V: float(sq_norm(V).mean()),
    "snapshot": lambda V: V.copy(),
}


def simulate(state0, t_fin, rng, observers=(), t_grid=None, engine="gillespie",
             record_events=False, backend=None, refresh_every=DEFAULT_REFRESH):
    """Run the process from ``state0`` to ``t_fin``.

    ``observers`` is a sequence of names from :data:`OBSERVABLES` or a mapping
    ``name -> callable(velocities)``; they are evaluated at each time of
    ``t_grid`` (default ``[0, t_fin]``).  ``state0`` is not modified.

    Returns ``(final_state, series, trajectory)``; ``trajectory`` is ``None``
    unless ``record_events`` is set.
    """
    if t_fin < 0:
        raise ValueError("t_fin must be non-negative")
    grid = np.array([0.0, t_fin] if t_grid is None else sorted(t_grid), dtype=np.float64)
    if len(grid) and (grid[0] < 0 or grid[-1] > t_fin):
        raise ValueError("t_grid must lie in [0, t_fin]")
    if not isinstance(observers, dict):
        observers = {name: OBSERVABLES[name] for name in observers}
    state = state0.copy()
    initial = state.velocities.copy()
    proc = KacProcess(state, rng, engine=engine, backend=backend, refresh_every=refresh_every)
    values = {name: [] for name in observers}
    batches = []
    for t in grid:
        if record_events:
            _, b = proc.advance(t, record=True)
            batches.append(b)
        else:
            proc.advance(t)
        for name, fn in observers.items():
            values[name].append(fn(state.velocities))
    if record_events:
        _, b = proc.advance(t_fin, record=True)
        batches.append(b)
    else:
        proc.advance(t_fin)
    series = ObservableSeries(grid, {k: _stack(v) for k, v in values.items()})
    traj = None
    if record_events:
        traj = Trajectory(initial, EventBatch.concatenate(batches, state.d), t_fin, engine)
    return state, series, traj


def _stack(vals):
    try:
        return np.asarray(vals, dtype=np.float64)
    except ValueError:
        return vals


def generator_drift(state, f, h, replicas, rng, engine="gillespie", backend=None):
    """Finite-difference estimate of ``(E<f, mu_h> - <f, mu_0>) / h`` and its SE.

    ``f`` maps an ``(m, d)`` array to ``(m,)``.  All replicas start from
    ``state``; only the change in ``<f, mu>`` is accumulated, from the
    recorded pre/post velocities of each event.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    N, d = state.N, state.d
    proc = KacProcess(state.copy(), rng, engine=engine, backend=backend)
    V0 = state.velocities.copy()
    saved = {k: getattr(proc, k).copy() for k in ("rows", "speed", "tree") if hasattr(proc, k)}
    aux0 = proc.aux.copy()
    deltas = np.zeros(replicas)
    for r in range(replicas):
        proc.state.velocities[:] = V0
        for k, arr in saved.items():
            getattr(proc, k)[:] = arr
        proc.aux[:] = aux0
        n, batch = proc._call(h, 1 << 12, True, True)
        if n == 0:
            continue
        if n == 1 << 12:
            raise RuntimeError("h too large for the generator estimate")
        pre = batch.pre.reshape(-1, d)
        post = batch.post.reshape(-1, d)
        deltas[r] = (np.sum(f(post)) - np.sum(f(pre))) / N
    est = float(deltas.mean() / h)
    se = float(deltas.std(ddof=1) / math.sqrt(replicas) / h) if replicas > 1 else 0.0
    return est, se


def exact_generator(state, f, n_sigma, rng, antithetic=True):
    """``<f, Q(mu^N)>`` by Monte Carlo over sigma for every pair, with its SE."""
    from .kinetic import collision_operator_integrate
    return collision_operator_integrate(state.empirical(), f, n_sigma, rng, antithetic=antithetic)


__all__ = [
    "ENGINES", "CollisionEvent", "EventBatch", "KacProcess", "ObservableSeries", "OBSERVABLES",
    "Trajectory", "exact_generator", "generator_drift", "lambda_observable", "pair_distance",
    "simulate", "total_rate",
]
