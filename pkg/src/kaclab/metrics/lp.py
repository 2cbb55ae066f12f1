"""The weighted Wasserstein distance ``W`` on finitely supported measures.

``W(mu, nu) = sup <f, mu - nu>`` over ``f = (1 + |v|^2) g`` with ``|g| <= 1``
and ``g`` 1-Lipschitz.  On a common support ``x_1..x_m`` this is the linear
programme

    maximise  sum_i c_i g_i,   c_i = (1 + |x_i|^2) (mu_i - nu_i),
    subject to  -1 <= g_i <= 1,  g_i - g_j <= |x_i - x_j|,

which is exact because any feasible ``g`` on the support extends to the whole
space (McShane extension, then clipping to ``[-1, 1]``).

Two independent solvers are provided.  ``method="lp"`` solves the programme
above with HiGHS, generating Lipschitz constraints on demand.  ``method="flow"``
solves its network dual with POT's network simplex: positive net mass is
routed to negative net mass at cost ``min(|x - y|, 2)``, or sent to a
reservoir at unit cost.  A witness is recovered from the flow potentials by a
c-transform.
"""
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from ..cloud import union_support, weight_function
from .transport import emd

LP_CAP = 2000
_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10,
          "presolve": True}


class SupportTooLarge(ValueError):
    """The union support exceeds the LP cap; use ``method="flow"`` or the dyadic bound."""


@dataclass(frozen=True, eq=False)
class DualWitness:
    """A test function ``f = (1 + |v|^2) g`` given by values of ``g`` on points.

    ``g`` is defined off the points by its McShane extension clipped to
    ``[-1, 1]``, which keeps ``|g| <= 1`` and the Lipschitz constant ``<= 1``.
    """

    points: np.ndarray
    values: np.ndarray

    def extend(self, v, chunk=4096):
        """Values of the extended ``g`` at the rows of ``v``."""
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        if len(self.values) == 0:
            return np.zeros(len(v))
        out = np.empty(len(v))
        for s in range(0, len(v), chunk):
            D = cdist(v[s:s + chunk], self.points)
            out[s:s + chunk] = np.min(self.values[None, :] + D, axis=1)
        return np.clip(out, -1.0, 1.0)

    def test_function(self, v):
        """``f(v) = (1 + |v|^2) g(v)``."""
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        return weight_function(v) * self.extend(v)

    def is_feasible(self, tol=1e-9):
        if len(self.values) == 0:
            return True
        if np.any(np.abs(self.values) > 1.0 + tol):
            return False
        D = cdist(self.points, self.points)
        return bool(np.all(self.values[:, None] - self.values[None, :] <= D + tol))

    def pairing(self, mu, nu):
        """``<f, mu - nu>`` for the extended test function."""
        x, a, b = union_support(mu, nu)
        return float(np.dot(weight_function(x) * (a - b), self.extend(x)))


def net_weights(mu, nu):
    """Union support ``x`` and ``c_i = (1 + |x_i|^2)(mu_i - nu_i)``."""
    x, a, b = union_support(mu, nu)
    return x, weight_function(x) * (a - b)


def _trivial(c):
    if len(c) == 0:
        return 0.0, np.zeros(0)
    if np.all(c >= 0) or np.all(c <= 0):
        g = np.where(np.sum(c) >= 0, 1.0, -1.0) * np.ones(len(c))
        return float(np.dot(c, g)), g
    return None


def solve_dual_lp(x, c, tol=1e-9, k_init=8, max_rounds=500):
    """Solve the Lipschitz LP on points ``x`` with objective ``c`` by constraint generation.

    Starts from Lipschitz constraints between nearest neighbours, then adds the
    most violated pair constraints until none is violated by more than ``tol``.
    Pairs at distance ``>= 2`` never bind and are skipped.
    """
    c = np.asarray(c, dtype=np.float64)
    triv = _trivial(c)
    if triv is not None:
        return triv
    m = len(c)
    D = cdist(x, x)
    k = min(k_init, m - 1)
    nn = np.argsort(D, axis=1, kind="stable")[:, 1:k + 1]
    rows = np.repeat(np.arange(m), k)
    cols = nn.reshape(-1)
    active = set()
    for i, j in zip(rows.tolist(), cols.tolist()):
        if D[i, j] < 2.0:
            active.add((i, j))
            active.add((j, i))
    budget = 10 * m
    for _ in range(max_rounds):
        pairs = np.array(sorted(active), dtype=np.int64).reshape(-1, 2)
        g = _highs(c, pairs, D, m)
        viol = g[:, None] - g[None, :] - D
        np.fill_diagonal(viol, -np.inf)
        bad = np.argwhere(viol > tol)
        if len(bad) == 0:
            return float(np.dot(c, g)), g
        if len(bad) > budget:
            order = np.argsort(-viol[bad[:, 0], bad[:, 1]], kind="stable")[:budget]
            bad = bad[order]
        for i, j in bad.tolist():
            active.add((i, j))
    raise RuntimeError("constraint generation did not converge")


def _highs(c, pairs, D, m):
    n = len(pairs)
    if n:
        data = np.concatenate([np.ones(n), -np.ones(n)])
        r = np.concatenate([np.arange(n), np.arange(n)])
        col = np.concatenate([pairs[:, 0], pairs[:, 1]])
        A = sparse.csr_matrix((data, (r, col)), shape=(n, m))
        b = D[pairs[:, 0], pairs[:, 1]]
    else:
        A, b = None, None
    res = linprog(-c, A_ub=A, b_ub=b, bounds=(-1.0, 1.0), method="highs", options=_HIGHS)
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    return np.clip(res.x, -1.0, 1.0)


def solve_dual_flow(x, c):
    """Solve the same problem through its transport dual (network simplex).

    Returns ``(value, g)`` where ``value`` is the optimal transport cost and
    ``g`` is the c-transform of the sink potentials evaluated on ``x``.
    """
    c = np.asarray(c, dtype=np.float64)
    triv = _trivial(c)
    if triv is not None:
        return triv
    pos, neg = c > 0, c < 0
    a, b = c[pos], -c[neg]
    xp, xn = x[pos], x[neg]
    C = np.zeros((len(a) + 1, len(b) + 1))
    C[:-1, :-1] = np.minimum(cdist(xp, xn), 2.0)
    C[:-1, -1] = 1.0
    C[-1, :-1] = 1.0
    cost, _, info = emd(np.append(a, b.sum()), np.append(b, a.sum()), C, log=True)
    u, v = info["u"], info["v"]
    g_sink = -(v[:-1] + u[-1])
    g = np.empty(len(x))
    for s in range(0, len(x), 2048):
        Dx = np.minimum(cdist(x[s:s + 2048], xn), 2.0)
        g[s:s + 2048] = np.min(Dx + g_sink[None, :], axis=1)
    return cost, np.clip(g, -1.0, 1.0)


def wasserstein_lp(mu, nu, method="lp", cap=LP_CAP, tol=1e-9):
    """Exact ``W(mu, nu)`` and an optimal :class:`DualWitness`.

    ``method="lp"`` (HiGHS, union support at most ``cap`` points) or
    ``method="flow"`` (network simplex, no cap).

    >>> from kaclab.cloud import WeightedPointCloud as P
    >>> round(wasserstein_lp(P.dirac([0, 0, 0]), P.dirac([0.5, 0, 0]))[0], 12)
    0.75
    """
    x, c = net_weights(mu, nu)
    if method == "lp":
        if len(x) > cap:
            raise SupportTooLarge(
                f"union support has {len(x)} points (cap {cap}); use method='flow' "
                "or dyadic_upper_bound")
        value, g = solve_dual_lp(x, c, tol=tol)
    elif method == "flow":
        value, g = solve_dual_flow(x, c)
    else:
        raise ValueError(f"unknown method {method!r}")
    return value, DualWitness(x, g)


def polish(x, c, g, sweeps=3, chunk=256):
    """Coordinate ascent on a feasible ``g``: each point moves to the end of its
    feasible interval favoured by the sign of ``c``.  Feasibility is preserved,
    so the objective never decreases.
    """
    g = np.array(g, dtype=np.float64)
    m = len(g)
    for _ in range(sweeps):
        before = float(np.dot(c, g))
        for s in range(0, m, chunk):
            D = cdist(x[s:s + chunk], x)
            for r in range(D.shape[0]):
                k = s + r
                if c[k] == 0.0:
                    continue
                row = D[r]
                row[k] = np.inf
                if c[k] > 0:
                    g[k] = min(1.0, float(np.min(g + row)))
                else:
                    g[k] = max(-1.0, float(np.max(g - row)))
        if float(np.dot(c, g)) <= before * (1.0 + 1e-12) + 1e-15:
            break
    return g


def _block_lp(c, g, D, B):
    """Re-optimise ``g[B]`` exactly with every other value frozen (in place)."""
    m, bs = len(g), len(B)
    outside = np.ones(m, dtype=bool)
    outside[B] = False
    if np.any(outside):
        DO = D[np.ix_(B, outside)]
        lo = np.maximum(-1.0, np.max(g[outside][None, :] - DO, axis=1))
        hi = np.minimum(1.0, np.min(g[outside][None, :] + DO, axis=1))
    else:
        lo, hi = -np.ones(bs), np.ones(bs)
    hi = np.maximum(lo, hi)
    DB = D[np.ix_(B, B)]
    ii, jj = np.nonzero((DB < 2.0) & ~np.eye(bs, dtype=bool))
    n = len(ii)
    A = sparse.csr_matrix((np.r_[np.ones(n), -np.ones(n)],
                           (np.r_[np.arange(n), np.arange(n)], np.r_[ii, jj])), shape=(n, bs))
    res = linprog(-c[B], A_ub=A if n else None, b_ub=DB[ii, jj] if n else None,
                  bounds=np.column_stack([lo, hi]), method="highs", options=_HIGHS)
    if res.status == 0 and np.dot(c[B], res.x) >= np.dot(c[B], g[B]):
        g[B] = np.clip(res.x, lo, hi)


def block_polish(x, c, g, rng, block_size, passes=1, core_fraction=0.5, D=None):
    """Block coordinate ascent: re-optimise ``g`` exactly on spatial blocks.

    A block is the ``block_size`` points nearest to a centre.  Values outside
    the block are frozen and become box constraints, the Lipschitz
    constraints inside the block are kept, and HiGHS solves the small LP.  A
    block update is kept only if it does not lower the objective.

    Each pass covers the support: centres are drawn from the points not yet
    covered, and the nearest ``core_fraction * block_size`` points of each
    block count as covered, so neighbouring blocks overlap.
    """
    g = np.array(g, dtype=np.float64)
    m = len(g)
    if D is None:
        D = cdist(x, x)
    bs = min(block_size, m)
    core = max(1, int(core_fraction * bs))
    for _ in range(passes):
        covered = np.zeros(m, dtype=bool)
        while not covered.all():
            centre = int(rng.choice(np.flatnonzero(~covered)))
            B = np.argsort(D[centre], kind="stable")[:bs]
            covered[B[:core]] = True
            _block_lp(c, g, D, B)
    return g


def wasserstein_lower_witness(mu, nu, sample_size, rng, method="lp", sweeps=3, passes=1):
    """Certified lower bound on ``W`` built from LPs of at most ``sample_size`` points.

    1. Net masses are moved to their nearest point of a random subsample and
       the LP is solved on the subsample.
    2. The optimal ``g`` is extended to the full support, then improved by
       coordinate ascent (:func:`polish`) and block coordinate ascent
       (:func:`block_polish`, ``passes`` sweeps of LPs on ``sample_size``
       points).
    3. The result is re-extended from itself, which makes it exactly
       admissible, and its pairing with ``mu - nu`` is returned.
    """
    x, c = net_weights(mu, nu)
    if len(x) <= sample_size:
        value, g = (solve_dual_lp(x, c) if method == "lp" else solve_dual_flow(x, c))
        return value, DualWitness(x, g)
    idx = np.sort(rng.choice(len(x), size=sample_size, replace=False))
    xs = x[idx]
    _, nearest = cKDTree(xs).query(x)
    cs = np.bincount(nearest, weights=c, minlength=sample_size)
    _, gs = (solve_dual_lp(xs, cs) if method == "lp" else solve_dual_flow(xs, cs))
    g = DualWitness(xs, gs).extend(x)
    if sweeps:
        g = polish(x, c, g, sweeps=sweeps)
    if passes:
        g = block_polish(x, c, g, rng, sample_size, passes)
        if sweeps:
            g = polish(x, c, g, sweeps=sweeps)
    w = DualWitness(x, g)
    g = w.extend(x)
    w = DualWitness(x, g)
    return float(np.dot(c, g)), w
