"""Pure-Python fallback for the compiled kernels in ``_kernels.pyx``.

The routines mirror the compiled ones operation for operation: same uniform
draws from the generator, same summation order (``np.cumsum`` is sequential),
same libm calls.  For identical generator states the two backends return
bit-identical results, which the test suite checks.

Sampler state vector ``aux`` (float64, length ``AUX_SIZE``):

0. current time
1. pending next proposal time (NaN when not yet drawn)
2. maintained total (sum of row sums, or sum of speeds for thinning)
3. events since the last full refresh
4. largest relative discrepancy seen at a refresh
5. number of refreshes performed
6. refresh period in events
7. accepted events so far
8. proposals so far (equal to 7 for the row-sum sampler)
"""
import math

import numpy as np

TWO_PI = 6.283185307179586
T_NOW, T_NEXT, TOTAL, SINCE, MAX_DISC, N_REFRESH, REFRESH_EVERY, N_EVENTS, N_PROPOSALS = range(9)
AUX_SIZE = 9


def _unit_vector(rng, d):
    out = [0.0] * d
    while True:
        c = 0
        while c < d:
            u1 = rng.random()
            u2 = rng.random()
            rad = math.sqrt(-2.0 * math.log(1.0 - u1))
            out[c] = rad * math.cos(TWO_PI * u2)
            if c + 1 < d:
                out[c + 1] = rad * math.sin(TWO_PI * u2)
            c += 2
        norm = 0.0
        for c in range(d):
            norm += out[c] * out[c]
        if norm > 0.0:
            break
    norm = math.sqrt(norm)
    return [o / norm for o in out]


def unit_vector(generator, d):
    """One uniform draw on the unit sphere of R^d (Box-Muller, normalised)."""
    return np.array(_unit_vector(generator, d), dtype=np.float64)


def _dist(a, b):
    acc = 0.0
    for c in range(len(a)):
        diff = a[c] - b[c]
        acc += diff * diff
    return math.sqrt(acc)


def _norm(a):
    acc = 0.0
    for x in a:
        acc += x * x
    return math.sqrt(acc)


def _collide(v, w, sig):
    g = _dist(v, w)
    vp = [0.0] * len(v)
    wp = [0.0] * len(v)
    for c in range(len(v)):
        sc = v[c] + w[c]
        vp[c] = (sc + sig[c] * g) * 0.5
        wp[c] = (sc - sig[c] * g) * 0.5
    return vp, wp


def _row_dists(V, x):
    """|V[k] - x| for all k, accumulated coordinate by coordinate."""
    diff = V[:, 0] - x[0]
    acc = diff * diff
    for c in range(1, V.shape[1]):
        diff = V[:, c] - x[c]
        acc = acc + diff * diff
    return np.sqrt(acc)


def _seq_sum(x):
    return float(np.cumsum(x)[-1]) if len(x) else 0.0


def _first_above(cum, target):
    return int(np.searchsorted(cum, target, side="right"))


def gillespie_advance(V, r, aux, generator, t_stop, max_events,
                      ev_time, ev_i, ev_j, ev_sigma, ev_pre, ev_post, buf):
    """Advance the exact jump chain using per-particle row sums of |v_i - v_k|."""
    N, d = V.shape
    record = ev_time.shape[0] > 0
    record_pairs = ev_pre.shape[0] > 0
    n = 0
    while n < max_events:
        S = aux[TOTAL]
        if math.isnan(aux[T_NEXT]):
            if S > 0.0:
                aux[T_NEXT] = aux[T_NOW] + (-math.log(1.0 - generator.random())) / (S / N)
            else:
                aux[T_NEXT] = math.inf
        tn = aux[T_NEXT]
        if not (tn < t_stop):
            if t_stop > aux[T_NOW] and t_stop < math.inf:
                aux[T_NOW] = t_stop
            break
        aux[T_NOW] = tn
        aux[T_NEXT] = math.nan
        target = generator.random() * S
        i = _first_above(np.cumsum(r), target)
        if i >= N:
            k = N - 1
            while k > 0 and not (r[k] > 0.0):
                k -= 1
            i = k
        row = _row_dists(V, V[i])
        buf[:] = row
        R = _seq_sum(row)
        target = generator.random() * R
        j = _first_above(np.cumsum(row), target)
        if j >= N or j == i:
            k = N - 1
            while k > 0 and (k == i or not (row[k] > 0.0)):
                k -= 1
            j = k
        sig = _unit_vector(generator, d)
        oi = V[i].tolist()
        oj = V[j].tolist()
        ni, nj = _collide(oi, oj, sig)
        V[i] = ni
        V[j] = nj
        dni = _row_dists(V, ni)
        dnj = _row_dists(V, nj)
        doj = _row_dists(V, oj)
        r += ((dni - row) + dnj) - doj
        r[i] = _seq_sum(_row_dists(V, V[i]))
        r[j] = _seq_sum(_row_dists(V, V[j]))
        aux[TOTAL] = _seq_sum(r)
        if record:
            ev_time[n] = tn
            ev_i[n] = i
            ev_j[n] = j
            ev_sigma[n] = sig
            if record_pairs:
                ev_pre[n, :d] = oi
                ev_pre[n, d:] = oj
                ev_post[n, :d] = ni
                ev_post[n, d:] = nj
        n += 1
        aux[N_EVENTS] += 1.0
        aux[N_PROPOSALS] += 1.0
        aux[SINCE] += 1.0
        if aux[SINCE] >= aux[REFRESH_EVERY]:
            disc = 0.0
            for k in range(N):
                fresh = _seq_sum(_row_dists(V, V[k]))
                if fresh > 0.0 and abs(fresh - r[k]) / fresh > disc:
                    disc = abs(fresh - r[k]) / fresh
                r[k] = fresh
            aux[TOTAL] = _seq_sum(r)
            if disc > aux[MAX_DISC]:
                aux[MAX_DISC] = disc
            aux[SINCE] = 0.0
            aux[N_REFRESH] += 1.0
    return n


def _fenwick_add(tree, N, idx, delta):
    k = idx + 1
    while k <= N:
        tree[k] += delta
        k += k & (-k)


def fenwick_build(tree, w):
    N = len(w)
    tree[0] = 0.0
    tree[1:N + 1] = w
    for k in range(1, N + 1):
        p = k + (k & (-k))
        if p <= N:
            tree[p] += tree[k]


def _fenwick_find(tree, N, target):
    pos = 0
    step = 1
    while step * 2 <= N:
        step *= 2
    rem = target
    while step > 0:
        if pos + step <= N and tree[pos + step] <= rem:
            pos += step
            rem -= tree[pos]
        step //= 2
    return min(pos, N - 1)


def thinning_advance(V, speed, tree, aux, generator, t_stop, max_events,
                     ev_time, ev_i, ev_j, ev_sigma, ev_pre, ev_post):
    """Advance the exact jump chain by thinning pair proposals at rate 2(|v_i|+|v_j|)/N."""
    N, d = V.shape
    record = ev_time.shape[0] > 0
    record_pairs = ev_pre.shape[0] > 0
    # plain lists are much faster than numpy scalars for this scalar loop
    tl = tree.tolist()
    sl = speed.tolist()
    Vl = V.tolist()
    n = 0
    try:
        while n < max_events:
            S = aux[TOTAL]
            if math.isnan(aux[T_NEXT]):
                lam = 2.0 * (N - 1) * S / N
                if lam > 0.0:
                    aux[T_NEXT] = aux[T_NOW] + (-math.log(1.0 - generator.random())) / lam
                else:
                    aux[T_NEXT] = math.inf
            tn = aux[T_NEXT]
            if not (tn < t_stop):
                if t_stop > aux[T_NOW] and t_stop < math.inf:
                    aux[T_NOW] = t_stop
                break
            aux[T_NOW] = tn
            aux[T_NEXT] = math.nan
            aux[N_PROPOSALS] += 1.0
            i = _fenwick_find(tl, N, generator.random() * S)
            j = int(generator.random() * (N - 1))
            if j > N - 2:
                j = N - 2
            if j >= i:
                j += 1
            oi = Vl[i]
            oj = Vl[j]
            g = _dist(oi, oj)
            den = sl[i] + sl[j]
            if not (generator.random() * den < g):
                continue
            sig = _unit_vector(generator, d)
            ni, nj = _collide(oi, oj, sig)
            Vl[i] = ni
            Vl[j] = nj
            si = _norm(ni)
            sj = _norm(nj)
            _fenwick_add(tl, N, i, si - sl[i])
            _fenwick_add(tl, N, j, sj - sl[j])
            aux[TOTAL] = S + (si - sl[i]) + (sj - sl[j])
            sl[i] = si
            sl[j] = sj
            if record:
                ev_time[n] = tn
                ev_i[n] = i
                ev_j[n] = j
                ev_sigma[n] = sig
                if record_pairs:
                    ev_pre[n, :d] = oi
                    ev_pre[n, d:] = oj
                    ev_post[n, :d] = ni
                    ev_post[n, d:] = nj
            n += 1
            aux[N_EVENTS] += 1.0
            aux[SINCE] += 1.0
            if aux[SINCE] >= aux[REFRESH_EVERY]:
                sp = np.array(sl)
                tr = np.empty(N + 1)
                fenwick_build(tr, sp)
                tl = tr.tolist()
                fresh = _seq_sum(sp)
                disc = 0.0
                if fresh > 0.0:
                    disc = abs(fresh - aux[TOTAL]) / fresh
                if disc > aux[MAX_DISC]:
                    aux[MAX_DISC] = disc
                aux[TOTAL] = fresh
                aux[SINCE] = 0.0
                aux[N_REFRESH] += 1.0
    finally:
        tree[:] = tl
        speed[:] = sl
        V[:] = Vl
    return n


def _search(cum, lo, hi, target):
    a, b = lo, hi
    while a < b:
        mid = (a + b) // 2
        if cum[mid] > target:
            b = mid
        else:
            a = mid + 1
    return hi - 1 if a >= hi else a


def branch_trees(roots, root_sign, t_start, t_end, env_times, env_offsets, env_points,
                 env_speed, env_cumw, env_cumsw, env_mass, env_m1, generator, population_cap):
    """Simulate one branching tree per root on a piecewise-constant environment.

    Returns ``(leaf_v, leaf_sign, leaf_root, events, truncated, max_dp, max_de)``.
    """
    R, d = roots.shape
    K = len(env_mass)
    times = env_times.tolist()
    offsets = env_offsets.tolist()
    points = env_points.tolist()
    speeds = env_speed.tolist()
    cumw = env_cumw.tolist()
    cumsw = env_cumsw.tolist()
    masses = env_mass.tolist()
    m1s = env_m1.tolist()
    events = np.zeros(R, dtype=np.int64)
    truncated = np.zeros(R, dtype=bool)
    leaves = []
    max_dp = 0.0
    max_de = 0.0
    for r in range(R):
        leaf_start = len(leaves)
        population = 1
        dead = False
        k = max(_search(times, 0, K + 1, t_start) - 1, 0)
        stack = [(roots[r].tolist(), float(root_sign[r]), float(t_start), k)]
        while stack and not dead:
            v, s, t, k = stack.pop()
            while True:
                if k >= K or not (t < t_end):
                    leaves.append((v, s, r))
                    break
                piece_end = times[k + 1]
                if t_end < piece_end:
                    piece_end = t_end
                sp = _norm(v)
                mass = masses[k]
                m1 = m1s[k]
                lam = 2.0 * (sp * mass + m1)
                if not (lam > 0.0):
                    t = piece_end
                    if piece_end == times[k + 1]:
                        k += 1
                    continue
                tau = (-math.log(1.0 - generator.random())) / lam
                if not (t + tau < piece_end):
                    t = piece_end
                    if piece_end == times[k + 1]:
                        k += 1
                    continue
                t = t + tau
                lo, hi = offsets[k], offsets[k + 1]
                if generator.random() * (sp * mass + m1) < sp * mass:
                    idx = _search(cumw, lo, hi, generator.random() * mass)
                else:
                    idx = _search(cumsw, lo, hi, generator.random() * m1)
                x = points[idx]
                g = _dist(v, x)
                den = sp + speeds[idx]
                if not (generator.random() * den < g):
                    continue
                sig = _unit_vector(generator, d)
                vp, xp = _collide(v, x, sig)
                e_pre = 0.0
                e_post = 0.0
                for c in range(d):
                    dp = abs((vp[c] + xp[c] - x[c]) - v[c]) / (1.0 + sp + speeds[idx])
                    if dp > max_dp:
                        max_dp = dp
                    e_pre += v[c] * v[c]
                    e_post += vp[c] * vp[c] + xp[c] * xp[c] - x[c] * x[c]
                de = abs(e_post - e_pre) / (1.0 + e_pre + speeds[idx] * speeds[idx])
                if de > max_de:
                    max_de = de
                events[r] += 1
                population += 2
                if population > population_cap:
                    dead = True
                    break
                stack.append((list(x), -s, t, k))
                stack.append((xp, s, t, k))
                v = vp
        if dead:
            truncated[r] = True
            del leaves[leaf_start:]
    leaf_v = np.array([lf[0] for lf in leaves], dtype=np.float64).reshape(-1, d)
    leaf_sign = np.array([lf[1] for lf in leaves], dtype=np.float64)
    leaf_root = np.array([lf[2] for lf in leaves], dtype=np.int64)
    return leaf_v, leaf_sign, leaf_root, events, truncated, max_dp, max_de
