# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops for the Kac jump chain and the linearised branching trees.

Every routine here has a line-for-line twin in ``_pykernels``.  Both consume
uniforms from the same numpy ``BitGenerator`` in the same order and perform
the same floating-point operations in the same order, so the two backends
produce identical trajectories for identical generator states.

The ``aux`` vector carries the scalar sampler state between calls; its layout
is documented in ``_pykernels``.
"""
import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport INFINITY, NAN, cos, isnan, log, sin, sqrt
from libc.stdlib cimport free, malloc, realloc
from numpy.random cimport bitgen_t

cdef double TWO_PI = 6.283185307179586

DEF T_NOW = 0
DEF T_NEXT = 1
DEF TOTAL = 2
DEF SINCE = 3
DEF MAX_DISC = 4
DEF N_REFRESH = 5
DEF REFRESH_EVERY = 6
DEF N_EVENTS = 7
DEF N_PROPOSALS = 8


cdef bitgen_t *_bitgen(object generator) except NULL:
    capsule = generator.bit_generator.capsule
    return <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline double _uniform(bitgen_t *bg) noexcept nogil:
    return bg.next_double(bg.state)


cdef inline double _exponential(bitgen_t *bg) noexcept nogil:
    return -log(1.0 - bg.next_double(bg.state))


cdef void _unit_vector(bitgen_t *bg, double *out, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t c
    cdef double u1, u2, rad, norm
    while True:
        c = 0
        while c < d:
            u1 = _uniform(bg)
            u2 = _uniform(bg)
            rad = sqrt(-2.0 * log(1.0 - u1))
            out[c] = rad * cos(TWO_PI * u2)
            if c + 1 < d:
                out[c + 1] = rad * sin(TWO_PI * u2)
            c += 2
        norm = 0.0
        for c in range(d):
            norm += out[c] * out[c]
        if norm > 0.0:
            break
    norm = sqrt(norm)
    for c in range(d):
        out[c] = out[c] / norm


cdef inline double _dist(const double *a, const double *b, Py_ssize_t d) noexcept nogil:
    cdef double acc = 0.0, diff
    cdef Py_ssize_t c
    for c in range(d):
        diff = a[c] - b[c]
        acc += diff * diff
    return sqrt(acc)


cdef inline double _norm(const double *a, Py_ssize_t d) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t c
    for c in range(d):
        acc += a[c] * a[c]
    return sqrt(acc)


cdef inline void _collide(const double *v, const double *w, const double *sig,
                          double *vp, double *wp, Py_ssize_t d) noexcept nogil:
    # vp/wp must not alias v/w
    cdef double g = _dist(v, w, d), sc
    cdef Py_ssize_t c
    for c in range(d):
        sc = v[c] + w[c]
        vp[c] = (sc + sig[c] * g) * 0.5
        wp[c] = (sc - sig[c] * g) * 0.5


cdef double _row_sum(const double *V, Py_ssize_t N, Py_ssize_t d, Py_ssize_t i) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t k
    for k in range(N):
        acc += _dist(&V[k * d], &V[i * d], d)
    return acc


cdef double _seq_sum(const double *x, Py_ssize_t n) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t k
    for k in range(n):
        acc += x[k]
    return acc


def unit_vector(object generator, Py_ssize_t d):
    """One uniform draw on the unit sphere of R^d (Box-Muller, normalised)."""
    cdef bitgen_t *bg = _bitgen(generator)
    out = np.empty(d, dtype=np.float64)
    cdef double[::1] o = out
    with generator.bit_generator.lock:
        _unit_vector(bg, &o[0], d)
    return out


def gillespie_advance(double[:, ::1] V, double[::1] r, double[::1] aux, object generator,
                      double t_stop, Py_ssize_t max_events,
                      double[::1] ev_time, Py_ssize_t[::1] ev_i, Py_ssize_t[::1] ev_j,
                      double[:, ::1] ev_sigma, double[:, ::1] ev_pre, double[:, ::1] ev_post,
                      double[::1] buf):
    """Advance the exact jump chain using per-particle row sums of |v_i - v_k|."""
    cdef bitgen_t *bg = _bitgen(generator)
    cdef Py_ssize_t N = V.shape[0], d = V.shape[1]
    cdef Py_ssize_t n = 0, k, i, j, c
    cdef bint record = ev_time.shape[0] > 0
    cdef bint record_pairs = ev_pre.shape[0] > 0
    cdef double S, tn, target, acc, R, dni, dnj, doj, fresh, disc
    cdef double *Vp = &V[0, 0]
    cdef double sig[16]
    cdef double oi[16]
    cdef double oj[16]
    cdef double ni[16]
    cdef double nj[16]
    if d > 16:
        raise ValueError("dimension above 16 is not supported by the compiled kernel")
    with generator.bit_generator.lock:
        while n < max_events:
            S = aux[TOTAL]
            if isnan(aux[T_NEXT]):
                if S > 0.0:
                    aux[T_NEXT] = aux[T_NOW] + _exponential(bg) / (S / N)
                else:
                    aux[T_NEXT] = INFINITY
            tn = aux[T_NEXT]
            if not (tn < t_stop):
                if t_stop > aux[T_NOW] and t_stop < INFINITY:
                    aux[T_NOW] = t_stop
                break
            aux[T_NOW] = tn
            aux[T_NEXT] = NAN
            # first particle proportional to its row sum
            target = _uniform(bg) * S
            acc = 0.0
            i = -1
            for k in range(N):
                acc += r[k]
                if acc > target:
                    i = k
                    break
            if i < 0:
                k = N - 1
                while k > 0 and not (r[k] > 0.0):
                    k -= 1
                i = k
            # partner proportional to |v_i - v_k|
            R = 0.0
            for k in range(N):
                buf[k] = _dist(&Vp[k * d], &Vp[i * d], d)
                R += buf[k]
            target = _uniform(bg) * R
            acc = 0.0
            j = -1
            for k in range(N):
                acc += buf[k]
                if acc > target:
                    j = k
                    break
            if j < 0 or j == i:
                k = N - 1
                while k > 0 and (k == i or not (buf[k] > 0.0)):
                    k -= 1
                j = k
            _unit_vector(bg, sig, d)
            for c in range(d):
                oi[c] = Vp[i * d + c]
                oj[c] = Vp[j * d + c]
            _collide(oi, oj, sig, ni, nj, d)
            for c in range(d):
                Vp[i * d + c] = ni[c]
                Vp[j * d + c] = nj[c]
            for k in range(N):
                if k == i or k == j:
                    continue
                dni = _dist(&Vp[k * d], ni, d)
                dnj = _dist(&Vp[k * d], nj, d)
                doj = _dist(&Vp[k * d], oj, d)
                r[k] = r[k] + (((dni - buf[k]) + dnj) - doj)
            r[i] = _row_sum(Vp, N, d, i)
            r[j] = _row_sum(Vp, N, d, j)
            aux[TOTAL] = _seq_sum(&r[0], N)
            if record:
                ev_time[n] = tn
                ev_i[n] = i
                ev_j[n] = j
                for c in range(d):
                    ev_sigma[n, c] = sig[c]
                if record_pairs:
                    for c in range(d):
                        ev_pre[n, c] = oi[c]
                        ev_pre[n, d + c] = oj[c]
                        ev_post[n, c] = ni[c]
                        ev_post[n, d + c] = nj[c]
            n += 1
            aux[N_EVENTS] += 1.0
            aux[N_PROPOSALS] += 1.0
            aux[SINCE] += 1.0
            if aux[SINCE] >= aux[REFRESH_EVERY]:
                disc = 0.0
                for k in range(N):
                    fresh = _row_sum(Vp, N, d, k)
                    if fresh > 0.0 and abs(fresh - r[k]) / fresh > disc:
                        disc = abs(fresh - r[k]) / fresh
                    r[k] = fresh
                aux[TOTAL] = _seq_sum(&r[0], N)
                if disc > aux[MAX_DISC]:
                    aux[MAX_DISC] = disc
                aux[SINCE] = 0.0
                aux[N_REFRESH] += 1.0
    return n


cdef inline void _fenwick_add(double *tree, Py_ssize_t N, Py_ssize_t idx, double delta) noexcept nogil:
    cdef Py_ssize_t k = idx + 1
    while k <= N:
        tree[k] += delta
        k += k & (-k)


cdef void _fenwick_build(double *tree, const double *w, Py_ssize_t N) noexcept nogil:
    cdef Py_ssize_t k, p
    tree[0] = 0.0
    for k in range(1, N + 1):
        tree[k] = w[k - 1]
    for k in range(1, N + 1):
        p = k + (k & (-k))
        if p <= N:
            tree[p] += tree[k]


cdef inline Py_ssize_t _fenwick_find(const double *tree, Py_ssize_t N, double target) noexcept nogil:
    cdef Py_ssize_t pos = 0, step = 1
    cdef double rem = target
    while step * 2 <= N:
        step *= 2
    while step > 0:
        if pos + step <= N and tree[pos + step] <= rem:
            pos += step
            rem -= tree[pos]
        step //= 2
    if pos >= N:
        pos = N - 1
    return pos


def fenwick_build(double[::1] tree, double[::1] w):
    _fenwick_build(&tree[0], &w[0], w.shape[0])


def thinning_advance(double[:, ::1] V, double[::1] speed, double[::1] tree, double[::1] aux,
                     object generator, double t_stop, Py_ssize_t max_events,
                     double[::1] ev_time, Py_ssize_t[::1] ev_i, Py_ssize_t[::1] ev_j,
                     double[:, ::1] ev_sigma, double[:, ::1] ev_pre, double[:, ::1] ev_post):
    """Advance the exact jump chain by thinning pair proposals at rate 2(|v_i|+|v_j|)/N."""
    cdef bitgen_t *bg = _bitgen(generator)
    cdef Py_ssize_t N = V.shape[0], d = V.shape[1]
    cdef Py_ssize_t n = 0, i, j, c
    cdef bint record = ev_time.shape[0] > 0
    cdef bint record_pairs = ev_pre.shape[0] > 0
    cdef double S, lam, tn, g, den, si, sj, fresh, disc
    cdef double *Vp = &V[0, 0]
    cdef double sig[16]
    cdef double oi[16]
    cdef double oj[16]
    cdef double ni[16]
    cdef double nj[16]
    if d > 16:
        raise ValueError("dimension above 16 is not supported by the compiled kernel")
    with generator.bit_generator.lock:
        while n < max_events:
            S = aux[TOTAL]
            if isnan(aux[T_NEXT]):
                lam = 2.0 * (N - 1) * S / N
                if lam > 0.0:
                    aux[T_NEXT] = aux[T_NOW] + _exponential(bg) / lam
                else:
                    aux[T_NEXT] = INFINITY
            tn = aux[T_NEXT]
            if not (tn < t_stop):
                if t_stop > aux[T_NOW] and t_stop < INFINITY:
                    aux[T_NOW] = t_stop
                break
            aux[T_NOW] = tn
            aux[T_NEXT] = NAN
            aux[N_PROPOSALS] += 1.0
            i = _fenwick_find(&tree[0], N, _uniform(bg) * S)
            j = <Py_ssize_t> (_uniform(bg) * (N - 1))
            if j > N - 2:
                j = N - 2
            if j >= i:
                j += 1
            g = _dist(&Vp[i * d], &Vp[j * d], d)
            den = speed[i] + speed[j]
            if not (_uniform(bg) * den < g):
                continue
            _unit_vector(bg, sig, d)
            for c in range(d):
                oi[c] = Vp[i * d + c]
                oj[c] = Vp[j * d + c]
            _collide(oi, oj, sig, ni, nj, d)
            for c in range(d):
                Vp[i * d + c] = ni[c]
                Vp[j * d + c] = nj[c]
            si = _norm(ni, d)
            sj = _norm(nj, d)
            _fenwick_add(&tree[0], N, i, si - speed[i])
            _fenwick_add(&tree[0], N, j, sj - speed[j])
            aux[TOTAL] = S + (si - speed[i]) + (sj - speed[j])
            speed[i] = si
            speed[j] = sj
            if record:
                ev_time[n] = tn
                ev_i[n] = i
                ev_j[n] = j
                for c in range(d):
                    ev_sigma[n, c] = sig[c]
                if record_pairs:
                    for c in range(d):
                        ev_pre[n, c] = oi[c]
                        ev_pre[n, d + c] = oj[c]
                        ev_post[n, c] = ni[c]
                        ev_post[n, d + c] = nj[c]
            n += 1
            aux[N_EVENTS] += 1.0
            aux[SINCE] += 1.0
            if aux[SINCE] >= aux[REFRESH_EVERY]:
                _fenwick_build(&tree[0], &speed[0], N)
                fresh = _seq_sum(&speed[0], N)
                disc = 0.0
                if fresh > 0.0:
                    disc = abs(fresh - aux[TOTAL]) / fresh
                if disc > aux[MAX_DISC]:
                    aux[MAX_DISC] = disc
                aux[TOTAL] = fresh
                aux[SINCE] = 0.0
                aux[N_REFRESH] += 1.0
    return n


cdef Py_ssize_t _search(const double *cum, Py_ssize_t lo, Py_ssize_t hi, double target) noexcept nogil:
    # first index in [lo, hi) with cum > target, clamped to hi - 1
    cdef Py_ssize_t a = lo, b = hi, mid
    while a < b:
        mid = (a + b) // 2
        if cum[mid] > target:
            b = mid
        else:
            a = mid + 1
    if a >= hi:
        a = hi - 1
    return a


def branch_trees(double[:, ::1] roots, double[::1] root_sign, double t_start, double t_end,
                 double[::1] env_times, Py_ssize_t[::1] env_offsets, double[:, ::1] env_points,
                 double[::1] env_speed, double[::1] env_cumw, double[::1] env_cumsw,
                 double[::1] env_mass, double[::1] env_m1, object generator,
                 Py_ssize_t population_cap):
    """Simulate one branching tree per root on a piecewise-constant environment.

    Returns ``(leaf_v, leaf_sign, leaf_root, events, truncated, max_dp, max_de)``.
    """
    cdef bitgen_t *bg = _bitgen(generator)
    cdef Py_ssize_t R = roots.shape[0], d = roots.shape[1], K = env_mass.shape[0]
    cdef Py_ssize_t rec = d + 3          # velocity, sign, time, piece
    cdef Py_ssize_t stack_cap = 64, stack_n = 0
    cdef Py_ssize_t leaf_cap = 1024, leaf_n = 0, leaf_start
    cdef double *stack = <double *> malloc(stack_cap * rec * sizeof(double))
    cdef double *leaves = <double *> malloc(leaf_cap * (d + 2) * sizeof(double))
    cdef double *tmp
    cdef Py_ssize_t r, k, c, idx, lo, hi, population
    cdef double s, t, piece_end, sp, m1, mass, lam, tau, g, den, dp, de, e_pre, e_post
    cdef double v[16]
    cdef double x[16]
    cdef double sig[16]
    cdef double vp[16]
    cdef double xp[16]
    cdef bint dead
    cdef double max_dp = 0.0, max_de = 0.0
    events_arr = np.zeros(R, dtype=np.int64)
    trunc_arr = np.zeros(R, dtype=np.int8)
    cdef long long[::1] events = events_arr
    cdef signed char[::1] truncated = trunc_arr
    if d > 16:
        raise ValueError("dimension above 16 is not supported by the compiled kernel")
    if stack == NULL or leaves == NULL:
        free(stack)
        free(leaves)
        raise MemoryError()
    try:
        with generator.bit_generator.lock:
            for r in range(R):
                leaf_start = leaf_n
                population = 1
                dead = False
                k = _search(&env_times[0], 0, K + 1, t_start) - 1
                if k < 0:
                    k = 0
                stack_n = 1
                for c in range(d):
                    stack[c] = roots[r, c]
                stack[d] = root_sign[r]
                stack[d + 1] = t_start
                stack[d + 2] = <double> k
                while stack_n > 0 and not dead:
                    stack_n -= 1
                    for c in range(d):
                        v[c] = stack[stack_n * rec + c]
                    s = stack[stack_n * rec + d]
                    t = stack[stack_n * rec + d + 1]
                    k = <Py_ssize_t> stack[stack_n * rec + d + 2]
                    while True:
                        if k >= K or not (t < t_end):
                            if leaf_n == leaf_cap:
                                leaf_cap *= 2
                                tmp = <double *> realloc(leaves, leaf_cap * (d + 2) * sizeof(double))
                                if tmp == NULL:
                                    raise MemoryError()
                                leaves = tmp
                            for c in range(d):
                                leaves[leaf_n * (d + 2) + c] = v[c]
                            leaves[leaf_n * (d + 2) + d] = s
                            leaves[leaf_n * (d + 2) + d + 1] = <double> r
                            leaf_n += 1
                            break
                        piece_end = env_times[k + 1]
                        if t_end < piece_end:
                            piece_end = t_end
                        sp = _norm(v, d)
                        mass = env_mass[k]
                        m1 = env_m1[k]
                        lam = 2.0 * (sp * mass + m1)
                        if not (lam > 0.0):
                            t = piece_end
                            if piece_end == env_times[k + 1]:
                                k += 1
                            continue
                        tau = _exponential(bg) / lam
                        if not (t + tau < piece_end):
                            t = piece_end
                            if piece_end == env_times[k + 1]:
                                k += 1
                            continue
                        t = t + tau
                        lo = env_offsets[k]
                        hi = env_offsets[k + 1]
                        if _uniform(bg) * (sp * mass + m1) < sp * mass:
                            idx = _search(&env_cumw[0], lo, hi, _uniform(bg) * mass)
                        else:
                            idx = _search(&env_cumsw[0], lo, hi, _uniform(bg) * m1)
                        for c in range(d):
                            x[c] = env_points[idx, c]
                        g = _dist(v, x, d)
                        den = sp + env_speed[idx]
                        if not (_uniform(bg) * den < g):
                            continue
                        _unit_vector(bg, sig, d)
                        _collide(v, x, sig, vp, xp, d)
                        e_pre = 0.0
                        e_post = 0.0
                        for c in range(d):
                            dp = abs((vp[c] + xp[c] - x[c]) - v[c]) / (1.0 + sp + env_speed[idx])
                            if dp > max_dp:
                                max_dp = dp
                            e_pre += v[c] * v[c]
                            e_post += vp[c] * vp[c] + xp[c] * xp[c] - x[c] * x[c]
                        de = abs(e_post - e_pre) / (1.0 + e_pre + env_speed[idx] * env_speed[idx])
                        if de > max_de:
                            max_de = de
                        events[r] += 1
                        population += 2
                        if population > population_cap:
                            dead = True
                            break
                        if stack_n + 2 > stack_cap:
                            stack_cap *= 2
                            tmp = <double *> realloc(stack, stack_cap * rec * sizeof(double))
                            if tmp == NULL:
                                raise MemoryError()
                            stack = tmp
                        for c in range(d):
                            stack[stack_n * rec + c] = x[c]
                        stack[stack_n * rec + d] = -s
                        stack[stack_n * rec + d + 1] = t
                        stack[stack_n * rec + d + 2] = <double> k
                        stack_n += 1
                        for c in range(d):
                            stack[stack_n * rec + c] = xp[c]
                        stack[stack_n * rec + d] = s
                        stack[stack_n * rec + d + 1] = t
                        stack[stack_n * rec + d + 2] = <double> k
                        stack_n += 1
                        for c in range(d):
                            v[c] = vp[c]
                if dead:
                    truncated[r] = 1
                    leaf_n = leaf_start
                    stack_n = 0
        out = np.empty((leaf_n, d + 2), dtype=np.float64)
        if leaf_n > 0:
            view = <double[:leaf_n * (d + 2)]> leaves
            out.reshape(-1)[:] = np.asarray(view)
    finally:
        free(stack)
        free(leaves)
    return (np.ascontiguousarray(out[:, :d]), np.ascontiguousarray(out[:, d]),
            out[:, d + 1].astype(np.int64), events_arr, trunc_arr.astype(bool), max_dp, max_de)
