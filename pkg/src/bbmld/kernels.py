"""Hot event loops for the particle systems.

Every function here is compiled by numba unless the JIT is disabled (see
``_jit``). They take a ``numpy.random.Generator`` and draw from it in a fixed
order, so the compiled and interpreted paths produce identical output.

Selection codes for the continuous engine: 0 plain BBM, 1 L-BBM, 2 N-BBM.
Rate-function codes for the splitting score: 0 Gaussian, 1 nearest-neighbour
lattice walk.
"""
from __future__ import annotations

import math

import numpy as np

from ._jit import njit

SEL_NONE = 0
SEL_L = 1
SEL_N = 2

F_GAUSS = 0
F_LATTICE = 1

_INF = np.inf


@njit
def rate_fn(u, fkind, sigma):
    if fkind == 0:
        return u * u / (2.0 * sigma * sigma)
    z = u / sigma
    return 1.0 - math.sqrt(1.0 + z * z) + z * math.asinh(z)


@njit
def split_score(tp, xmax, v, t_end, fkind, sigma, b):
    """Crude log-committor of ``X_max(t_end) >= v t_end`` given the leader at ``(tp, xmax)``."""
    gap = v * t_end - xmax
    if gap <= 0.0:
        return 0.0
    tau = t_end - tp
    if tau <= 0.0:
        return -_INF
    s = tau * (b - rate_fn(gap / tau, fkind, sigma))
    return s if s < 0.0 else 0.0


@njit
def _grow(a, n):
    out = np.empty(max(2 * a.shape[0], n), a.dtype)
    out[: a.shape[0]] = a
    return out


@njit
def _sync(pos, last, count, t, sigma, rng):
    for j in range(count):
        dt = t - last[j]
        if dt > 0.0:
            pos[j] += sigma * math.sqrt(dt) * rng.standard_normal()
            last[j] = t


@njit
def _remove(pos, last, ids, count, j):
    k = count - 1
    pos[j] = pos[k]
    last[j] = last[k]
    ids[j] = ids[k]
    return k


@njit
def _eliminate_lagging(pos, last, ids, count, L):
    xmax = pos[0]
    for j in range(1, count):
        if pos[j] > xmax:
            xmax = pos[j]
    j = 0
    while j < count:
        if xmax - pos[j] > L:
            count = _remove(pos, last, ids, count, j)
        else:
            j += 1
    return count


@njit
def _remove_leftmost(pos, last, ids, count):
    jmin = 0
    for j in range(1, count):
        if pos[j] < pos[jmin] or (pos[j] == pos[jmin] and ids[j] < ids[jmin]):
            jmin = j
    return _remove(pos, last, ids, count, jmin)


@njit
def evolve_continuous(pos, ids, count, next_id, t, until, sigma, b, selection, L, ncap,
                      check_dt, obs_times, out_xmax, out_count, out_xmin, rng,
                      stop_level, v, t_end, fkind, fsigma, prune_tol=0.0):
    """Exact event-driven BBM / L-BBM / N-BBM from ``t`` to ``until``.

    ``pos[:count]`` are positions at time ``t``. Brownian increments are drawn
    only at event times; particles are synchronised lazily when no selection
    is active. Observations are written at ``obs_times`` (all in ``(t, until]``).
    When ``stop_level > -inf`` the run halts at the first observation time
    whose splitting score reaches it.

    With ``prune_tol > 0`` (plain BBM only) particles whose first-moment bound
    on reaching ``v t_end`` at ``t_end`` is below ``prune_tol`` are dropped at
    observation times; their bound mass is accumulated in ``pruned``. The run
    ends early once no particle is left.

    Returns ``(pos, ids, count, next_id, t, n_obs_written, stopped, n_events, max_count, pruned)``.
    """
    last = np.full(pos.shape[0], t)
    n_obs = obs_times.shape[0]
    oi = 0
    next_check = t + check_dt if selection == SEL_L else _INF
    n_events = 0
    max_count = count
    stopped = False
    pruned = 0.0
    while True:
        rate = count * b
        tb = t + rng.exponential() / rate if rate > 0.0 else _INF
        ts = until
        kind = 0
        if oi < n_obs and obs_times[oi] <= ts:
            ts = obs_times[oi]
            kind = 1
        if next_check < ts:
            ts = next_check
            kind = 2
        if tb < ts:
            n_events += 1
            i = int(rng.random() * count)
            if i >= count:
                i = count - 1
            lazy = selection == SEL_NONE or (selection == SEL_N and count < ncap)
            if lazy:
                dt = tb - last[i]
                if dt > 0.0:
                    pos[i] += sigma * math.sqrt(dt) * rng.standard_normal()
                last[i] = tb
            else:
                _sync(pos, last, count, tb, sigma, rng)
            if count == pos.shape[0]:
                pos = _grow(pos, count + 1)
                last = _grow(last, count + 1)
                ids = _grow(ids, count + 1)
            pos[count] = pos[i]
            last[count] = tb
            ids[count] = next_id
            next_id += 1
            count += 1
            if count > max_count:
                max_count = count
            if selection == SEL_N and count > ncap:
                count = _remove_leftmost(pos, last, ids, count)
            elif selection == SEL_L:
                count = _eliminate_lagging(pos, last, ids, count, L)
            t = tb
            continue
        _sync(pos, last, count, ts, sigma, rng)
        t = ts
        if kind == 2:
            count = _eliminate_lagging(pos, last, ids, count, L)
            next_check = t + check_dt
            continue
        if kind == 1:
            if prune_tol > 0.0 and selection == SEL_NONE and t < t_end:
                count, mass = _prune(pos, last, ids, count, t, v * t_end, t_end, sigma, b, prune_tol)
                pruned += mass
                if count == 0:
                    break
            xmax = pos[0]
            xmin = pos[0]
            for j in range(1, count):
                if pos[j] > xmax:
                    xmax = pos[j]
                if pos[j] < xmin:
                    xmin = pos[j]
            out_xmax[oi] = xmax
            out_count[oi] = count
            out_xmin[oi] = xmin
            oi += 1
            if stop_level > -_INF and split_score(t, xmax, v, t_end, fkind, fsigma, b) >= stop_level:
                stopped = True
                break
            if t >= until:
                break
            continue
        break
    return pos, ids, count, next_id, t, oi, stopped, n_events, max_count, pruned


@njit
def _moment_bound(x, level, tau, sigma, b):
    if sigma > 0.0:
        tail = _norm_sf((level - x) / (sigma * math.sqrt(tau)))
    else:
        tail = 1.0 if x >= level else 0.0
    return math.exp(b * tau) * tail


@njit
def _prune(pos, last, ids, count, t, level, t_end, sigma, b, tol):
    tau = t_end - t
    mass = 0.0
    j = 0
    while j < count:
        m = _moment_bound(pos[j], level, tau, sigma, b)
        if m < tol:
            mass += m
            count = _remove(pos, last, ids, count, j)
        else:
            j += 1
    return count, mass


@njit
def _norm_sf(z):
    return 0.5 * math.erfc(z / math.sqrt(2.0))


@njit
def bbm_hits_dfs(times, levels, sigma, b, prune_tol, rng):
    """Which levels ``X_max(times[k]) >= levels[k]`` are reached by one BBM from 0.

    Depth-first over the genealogy; the population is never held at once.
    A subtree is abandoned when every remaining target is already hit, or
    when the first-moment bound on it ever hitting an open target is below
    ``prune_tol`` (the abandoned bound mass is returned so the bias can be
    reported). ``prune_tol = 0`` gives the exact indicator.

    Returns ``(hits, pruned_mass, n_particles)``.
    """
    n = times.shape[0]
    t_end = times[n - 1]
    hits = np.zeros(n, np.bool_)
    n_open = n
    cap = 64
    st_t = np.empty(cap)
    st_x = np.empty(cap)
    st_t[0] = 0.0
    st_x[0] = 0.0
    top = 1
    pruned = 0.0
    n_particles = 0
    while top > 0 and n_open > 0:
        top -= 1
        u = st_t[top]
        x = st_x[top]
        if prune_tol > 0.0:
            bound = 0.0
            for k in range(n):
                if hits[k] or times[k] <= u:
                    continue
                tau = times[k] - u
                if sigma > 0.0:
                    tail = _norm_sf((levels[k] - x) / (sigma * math.sqrt(tau)))
                else:
                    tail = 1.0 if x >= levels[k] else 0.0
                bound += math.exp(b * tau) * tail
                if bound >= prune_tol:
                    break
            if bound < prune_tol:
                pruned += bound
                continue
        n_particles += 1
        life = rng.exponential() / b if b > 0.0 else _INF
        death = u + life
        cur_t = u
        cur_x = x
        for k in range(n):
            tk = times[k]
            if tk <= u:
                continue
            if tk >= death:
                break
            if sigma > 0.0:
                cur_x += sigma * math.sqrt(tk - cur_t) * rng.standard_normal()
            cur_t = tk
            if not hits[k] and cur_x >= levels[k]:
                hits[k] = True
                n_open -= 1
        if death < t_end:
            if sigma > 0.0:
                cur_x += sigma * math.sqrt(death - cur_t) * rng.standard_normal()
            if top + 2 > cap:
                cap *= 2
                st_t = _grow(st_t, cap)
                st_x = _grow(st_x, cap)
            st_t[top] = death
            st_x[top] = cur_x
            st_t[top + 1] = death
            st_x[top + 1] = cur_x
            top += 2
    return hits, pruned, n_particles


# ---------------------------------------------------------------------------
# coalescing branching random walk


@njit
def _fen_build(w):
    n = w.shape[0]
    tree = np.zeros(n + 1, np.int64)
    for i in range(n):
        j = i + 1
        tree[j] += w[i]
        p = j + (j & -j)
        if p <= n:
            tree[p] += tree[j]
    return tree


@njit
def _fen_add(tree, i, delta):
    j = i + 1
    n = tree.shape[0] - 1
    while j <= n:
        tree[j] += delta
        j += j & -j


@njit
def _fen_find(tree, k):
    """Smallest index ``i`` with prefix sum through ``i`` exceeding ``k``."""
    n = tree.shape[0] - 1
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= k:
            pos = nxt
            k -= tree[nxt]
        step //= 2
    return pos


@njit
def _pairs(n):
    return n * (n - 1) // 2


@njit
def _recenter(cnt, off):
    w = cnt.shape[0]
    out = np.zeros(2 * w, np.int64)
    shift = w // 2
    out[shift: shift + w] = cnt
    return out, off - shift, shift


@njit
def evolve_cbrw(cnt, off, t, until, sigma, r, mu, obs_times, out_xmax, out_count, out_xmin,
                rng, stop_level, v, t_end):
    """Gillespie simulation of the coalescing branching random walk.

    ``cnt[j]`` is the number of particles on site ``j + off`` (in units of the
    lattice spacing ``sigma``). Per particle: jumps left/right at rate 1/2
    each, branches at rate ``r``; each same-site pair merges at rate ``mu``.
    Site selection uses Fenwick trees over integer weights, so the rate sums
    never drift.

    Returns ``(cnt, off, t, n_obs_written, stopped, n_events, max_count)``.
    """
    w = cnt.shape[0]
    tree_n = _fen_build(cnt)
    pw = np.empty(w, np.int64)
    K = 0
    C = 0
    lo = w
    hi = -1
    for j in range(w):
        pw[j] = _pairs(cnt[j])
        K += cnt[j]
        C += pw[j]
        if cnt[j] > 0:
            if j < lo:
                lo = j
            hi = j
    tree_p = _fen_build(pw)
    n_obs = obs_times.shape[0]
    oi = 0
    n_events = 0
    max_count = K
    stopped = False
    while True:
        R = K * (1.0 + r) + mu * C
        tb = t + rng.exponential() / R
        ts = until
        kind = 0
        if oi < n_obs and obs_times[oi] <= ts:
            ts = obs_times[oi]
            kind = 1
        if tb < ts:
            n_events += 1
            t = tb
            u = rng.random() * R
            if u < K * (1.0 + r):
                j = _fen_find(tree_n, int(rng.random() * K))
                if u < K:
                    step = 1 if u < 0.5 * K else -1
                    if j + step < 0 or j + step >= w:
                        cnt, off, shift = _recenter(cnt, off)
                        w = cnt.shape[0]
                        j += shift
                        lo += shift
                        hi += shift
                        pw = np.empty(w, np.int64)
                        for q in range(w):
                            pw[q] = _pairs(cnt[q])
                        tree_n = _fen_build(cnt)
                        tree_p = _fen_build(pw)
                    dst = j + step
                    dp = -(cnt[j] - 1)
                    cnt[j] -= 1
                    _fen_add(tree_n, j, -1)
                    _fen_add(tree_p, j, dp)
                    C += dp
                    dp = cnt[dst]
                    cnt[dst] += 1
                    _fen_add(tree_n, dst, 1)
                    _fen_add(tree_p, dst, dp)
                    C += dp
                    if dst > hi:
                        hi = dst
                    if dst < lo:
                        lo = dst
                    while cnt[hi] == 0:
                        hi -= 1
                    while cnt[lo] == 0:
                        lo += 1
                else:
                    dp = cnt[j]
                    cnt[j] += 1
                    K += 1
                    _fen_add(tree_n, j, 1)
                    _fen_add(tree_p, j, dp)
                    C += dp
                    if K > max_count:
                        max_count = K
            else:
                j = _fen_find(tree_p, int(rng.random() * C))
                dp = -(cnt[j] - 1)
                cnt[j] -= 1
                K -= 1
                _fen_add(tree_n, j, -1)
                _fen_add(tree_p, j, dp)
                C += dp
            continue
        t = ts
        if kind == 1:
            out_xmax[oi] = sigma * (hi + off)
            out_count[oi] = K
            out_xmin[oi] = sigma * (lo + off)
            oi += 1
            if stop_level > -_INF and split_score(t, sigma * (hi + off), v, t_end, 1, sigma, r) >= stop_level:
                stopped = True
                break
            if t >= until:
                break
            continue
        break
    return cnt, off, t, oi, stopped, n_events, max_count


# ---------------------------------------------------------------------------
# monotone coupling of two N-BBMs


@njit
def _dominates(xs, nx, ys, ny):
    """Counting domination for descending-sorted arrays."""
    if nx < ny:
        return False
    for j in range(ny):
        if xs[j] < ys[j]:
            return False
    return True


@njit
def _sort_desc(a, n):
    s = np.sort(a[:n])
    for j in range(n):
        a[j] = s[n - 1 - j]


@njit
def coupled_nbbm(x, y, cap_x, cap_y, t, until, sigma, b, obs_times,
                 out_x, out_y, rng):
    """Run two N-BBMs with paired Brownian drivers and branching clocks.

    ``x`` (capacity ``cap_x``) and ``y`` (capacity ``cap_y <= cap_x``) are
    sorted descending; the ``j``-th particle of ``y`` is paired with the
    ``j``-th of ``x`` and shares its increments and clock. Unpaired ``x``
    particles move independently. After every branching both systems drop
    their leftmost particles down to capacity and are re-paired by rank.
    Domination is checked at every event and observation time.

    ``out_x`` / ``out_y`` receive ``(x_max, count, x_min)`` rows.
    Returns ``(held, n_checks, n_events)``.
    """
    nx = x.shape[0]
    ny = y.shape[0]
    xs = np.empty(cap_x + 1)
    ys = np.empty(cap_y + 1)
    xs[:nx] = x
    ys[:ny] = y
    _sort_desc(xs, nx)
    _sort_desc(ys, ny)
    held = _dominates(xs, nx, ys, ny)
    n_checks = 1
    n_events = 0
    oi = 0
    n_obs = obs_times.shape[0]
    while True:
        rate = nx * b
        tb = t + rng.exponential() / rate if rate > 0.0 else _INF
        ts = until
        is_obs = False
        if oi < n_obs and obs_times[oi] <= ts:
            ts = obs_times[oi]
            is_obs = True
        t_new = tb if tb < ts else ts
        dt = t_new - t
        if dt > 0.0:
            scale = sigma * math.sqrt(dt)
            for j in range(nx):
                dz = scale * rng.standard_normal()
                xs[j] += dz
                if j < ny:
                    ys[j] += dz
        t = t_new
        if tb < ts:
            n_events += 1
            i = int(rng.random() * nx)
            if i >= nx:
                i = nx - 1
            xs[nx] = xs[i]
            if i < ny:
                ys[ny] = ys[i]
                ny += 1
            nx += 1
            _sort_desc(xs, nx)
            _sort_desc(ys, ny)
            if nx > cap_x:
                nx = cap_x
            if ny > cap_y:
                ny = cap_y
        else:
            _sort_desc(xs, nx)
            _sort_desc(ys, ny)
        n_checks += 1
        if not _dominates(xs, nx, ys, ny):
            held = False
        if tb < ts:
            continue
        if is_obs:
            out_x[oi, 0] = xs[0]
            out_x[oi, 1] = nx
            out_x[oi, 2] = xs[nx - 1]
            out_y[oi, 0] = ys[0]
            out_y[oi, 1] = ny
            out_y[oi, 2] = ys[ny - 1]
            oi += 1
            if t >= until:
                break
            continue
        break
    return held, n_checks, n_events
