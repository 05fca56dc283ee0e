"""Jitted kernels of the event-driven hard-sphere engine.

State lives in plain arrays owned by ``md.SimState``.  Events sit in an
array-backed binary heap keyed by (time, i, j, kind); an event is valid
iff the revision stamps it carries are still current (lazy invalidation).
Particles are advanced lazily: ``pos[i]`` is the position at ``tpos[i]``.

Event rows in ``hq_d``: (i, j, kind, stamp_i, stamp_j); kind 0 is a pair
collision, kind 1 a cell crossing of i (axis in j, direction in stamp_j).
"""

import math

import numpy as np
from numba import njit

from .geometry import _contact_time

COLLISION = 0
CROSSING = 1

# return codes of ``advance``
DONE = 0
HEAP_FULL = 1
LOG_FULL = 2
EVENT_CAP = 3

SIMULTANEOUS_TOL = 1e-12

# counters (int64 array)
C_EVENTS, C_COLL, C_CROSS, C_DEGEN, C_STALE, C_GRAZE = range(6)
# scalars (float64 array)
S_CLOCK, S_LASTCOLL, S_MINCONTACT = range(3)


@njit(cache=True)
def _less(hq_t, hq_d, a, b):
    if hq_t[a] != hq_t[b]:
        return hq_t[a] < hq_t[b]
    if hq_d[a, 0] != hq_d[b, 0]:
        return hq_d[a, 0] < hq_d[b, 0]
    if hq_d[a, 1] != hq_d[b, 1]:
        return hq_d[a, 1] < hq_d[b, 1]
    return hq_d[a, 2] < hq_d[b, 2]


@njit(cache=True)
def _swap(hq_t, hq_d, a, b):
    t = hq_t[a]
    hq_t[a] = hq_t[b]
    hq_t[b] = t
    for c in range(5):
        x = hq_d[a, c]
        hq_d[a, c] = hq_d[b, c]
        hq_d[b, c] = x


@njit(cache=True)
def heap_push(hq_t, hq_d, hsize, t, i, j, kind, si, sj):
    n = hsize[0]
    hq_t[n] = t
    hq_d[n, 0] = i
    hq_d[n, 1] = j
    hq_d[n, 2] = kind
    hq_d[n, 3] = si
    hq_d[n, 4] = sj
    hsize[0] = n + 1
    while n > 0:
        p = (n - 1) // 2
        if _less(hq_t, hq_d, n, p):
            _swap(hq_t, hq_d, n, p)
            n = p
        else:
            break


@njit(cache=True)
def heap_pop(hq_t, hq_d, hsize):
    """Move the minimum to slot hsize-1 and shrink; caller reads that slot."""
    n = hsize[0] - 1
    _swap(hq_t, hq_d, 0, n)
    hsize[0] = n
    k = 0
    while True:
        left = 2 * k + 1
        if left >= n:
            break
        m = left
        right = left + 1
        if right < n and _less(hq_t, hq_d, right, left):
            m = right
        if _less(hq_t, hq_d, m, k):
            _swap(hq_t, hq_d, m, k)
            k = m
        else:
            break
    return n


@njit(cache=True)
def _cell_index(cc, ncell):
    idx = 0
    for a in range(cc.shape[0]):
        idx = idx * ncell + cc[a]
    return idx


@njit(cache=True)
def _cell_remove(i, cell, head, nxt, prv):
    p = prv[i]
    n = nxt[i]
    if p >= 0:
        nxt[p] = n
    else:
        head[cell] = n
    if n >= 0:
        prv[n] = p
    nxt[i] = -1
    prv[i] = -1


@njit(cache=True)
def _cell_insert(i, cell, head, nxt, prv):
    h = head[cell]
    nxt[i] = h
    prv[i] = -1
    if h >= 0:
        prv[h] = i
    head[cell] = i


@njit(cache=True)
def build_cells(pos, ccell, head, nxt, prv, ncell):
    n, d = pos.shape
    head[:] = -1
    for i in range(n):
        for a in range(d):
            c = int(math.floor(pos[i, a] * ncell))
            if c >= ncell:
                c = ncell - 1
            if c < 0:
                c = 0
            ccell[i, a] = c
        _cell_insert(i, _cell_index(ccell[i], ncell), head, nxt, prv)


@njit(cache=True)
def _materialize(i, t, pos, vel, tpos):
    dt = t - tpos[i]
    for a in range(pos.shape[1]):
        y = pos[i, a] + dt * vel[i, a]
        y -= math.floor(y)
        if y >= 1.0:
            y -= 1.0
        pos[i, a] = y
    tpos[i] = t


@njit(cache=True)
def _schedule_crossing(i, now, pos, vel, tpos, ccell, side, stamp, cross_t,
                       hq_t, hq_d, hsize):
    d = pos.shape[1]
    dt0 = now - tpos[i]
    best = np.inf
    ax = -1
    dr = 0
    for a in range(d):
        v = vel[i, a]
        if v == 0.0:
            continue
        rel = pos[i, a] + dt0 * v - ccell[i, a] * side
        rel -= math.ceil(rel - 0.5)
        if v > 0.0:
            tb = (side - rel) / v
            s = 1
        else:
            tb = -rel / v
            s = -1
        if tb < 0.0:
            tb = 0.0
        if tb < best:
            best = tb
            ax = a
            dr = s
    if ax < 0:
        cross_t[i] = np.inf
        return
    cross_t[i] = now + best
    heap_push(hq_t, hq_d, hsize, now + best, i, ax, CROSSING, stamp[i], dr)


@njit(cache=True)
def _predict_pairs(i, now, only_higher, pos, vel, tpos, ccell, head, nxt, ncell,
                   eps, stamp, cross_t, hq_t, hq_d, hsize):
    d = pos.shape[1]
    xi = np.empty(d)
    dx = np.empty(d)
    dv = np.empty(d)
    cc = np.empty(d, dtype=np.int64)
    dti = now - tpos[i]
    for a in range(d):
        xi[a] = pos[i, a] + dti * vel[i, a]
    total = 3 ** d
    for code in range(total):
        rem = code
        for a in range(d):
            off = rem % 3 - 1
            rem //= 3
            cc[a] = (ccell[i, a] + off) % ncell
        j = head[_cell_index(cc, ncell)]
        while j >= 0:
            if j != i and (not only_higher or j > i):
                tmax = min(cross_t[i], cross_t[j]) - now
                if tmax > 0.0:
                    dtj = now - tpos[j]
                    for a in range(d):
                        r = xi[a] - (pos[j, a] + dtj * vel[j, a])
                        dx[a] = r - math.ceil(r - 0.5)
                        dv[a] = vel[i, a] - vel[j, a]
                    tc = _contact_time(dx, dv, eps, tmax)
                    if tc < np.inf:
                        a_, b_ = (i, j) if i < j else (j, i)
                        heap_push(hq_t, hq_d, hsize, now + tc, a_, b_, COLLISION,
                                  stamp[a_], stamp[b_])
            j = nxt[j]


@njit(cache=True)
def initialize(pos, vel, tpos, ccell, head, nxt, ncell, side, eps, stamp, cross_t,
               hq_t, hq_d, hsize, now):
    n = pos.shape[0]
    for i in range(n):
        _schedule_crossing(i, now, pos, vel, tpos, ccell, side, stamp, cross_t,
                           hq_t, hq_d, hsize)
    for i in range(n):
        _predict_pairs(i, now, True, pos, vel, tpos, ccell, head, nxt, ncell, eps,
                       stamp, cross_t, hq_t, hq_d, hsize)


@njit(cache=True)
def advance(t_stop, pos, vel, tpos, ccell, head, nxt, prv, ncell, side, eps, stamp,
            cross_t, hq_t, hq_d, hsize, lg_t, lg_ij, lg_w, lg_pre, lg_post, lg_n,
            counters, scalars, max_events):
    """Process all events with time <= t_stop; see module docstring for codes."""
    n, d = pos.shape
    cap = hq_t.shape[0]
    lcap = lg_t.shape[0]
    w = np.empty(d)
    while hsize[0] > 0:
        if hq_t[0] > t_stop:
            break
        if hsize[0] + 2 * (n + 2) >= cap:
            return HEAP_FULL
        if lg_n[0] >= lcap:
            return LOG_FULL
        if counters[C_EVENTS] >= max_events:
            return EVENT_CAP
        k = heap_pop(hq_t, hq_d, hsize)
        t = hq_t[k]
        i = hq_d[k, 0]
        j = hq_d[k, 1]
        kind = hq_d[k, 2]
        if kind == CROSSING:
            if hq_d[k, 3] != stamp[i]:
                counters[C_STALE] += 1
                continue
            counters[C_EVENTS] += 1
            counters[C_CROSS] += 1
            scalars[S_CLOCK] = t
            _materialize(i, t, pos, vel, tpos)
            _cell_remove(i, _cell_index(ccell[i], ncell), head, nxt, prv)
            ccell[i, j] = (ccell[i, j] + hq_d[k, 4]) % ncell
            _cell_insert(i, _cell_index(ccell[i], ncell), head, nxt, prv)
            _schedule_crossing(i, t, pos, vel, tpos, ccell, side, stamp, cross_t,
                               hq_t, hq_d, hsize)
            _predict_pairs(i, t, False, pos, vel, tpos, ccell, head, nxt, ncell, eps,
                           stamp, cross_t, hq_t, hq_d, hsize)
            continue
        if hq_d[k, 3] != stamp[i] or hq_d[k, 4] != stamp[j]:
            counters[C_STALE] += 1
            continue
        counters[C_EVENTS] += 1
        counters[C_COLL] += 1
        scalars[S_CLOCK] = t
        if t - scalars[S_LASTCOLL] < SIMULTANEOUS_TOL:
            counters[C_DEGEN] += 1
        scalars[S_LASTCOLL] = t
        _materialize(i, t, pos, vel, tpos)
        _materialize(j, t, pos, vel, tpos)
        dist2 = 0.0
        for a in range(d):
            r = pos[i, a] - pos[j, a]
            r -= math.ceil(r - 0.5)
            w[a] = r
            dist2 += r * r
        dist = math.sqrt(dist2)
        if dist < scalars[S_MINCONTACT]:
            scalars[S_MINCONTACT] = dist
        g = 0.0
        for a in range(d):
            w[a] /= dist
            g += (vel[i, a] - vel[j, a]) * w[a]
        m = lg_n[0]
        lg_t[m] = t
        lg_ij[m, 0] = i
        lg_ij[m, 1] = j
        for a in range(d):
            lg_w[m, a] = w[a]
            lg_pre[m, 0, a] = vel[i, a]
            lg_pre[m, 1, a] = vel[j, a]
        if g < 0.0:
            for a in range(d):
                vel[i, a] -= g * w[a]
                vel[j, a] += g * w[a]
        else:
            counters[C_GRAZE] += 1
        for a in range(d):
            lg_post[m, 0, a] = vel[i, a]
            lg_post[m, 1, a] = vel[j, a]
        lg_n[0] = m + 1
        stamp[i] += 1
        stamp[j] += 1
        _schedule_crossing(i, t, pos, vel, tpos, ccell, side, stamp, cross_t,
                           hq_t, hq_d, hsize)
        _schedule_crossing(j, t, pos, vel, tpos, ccell, side, stamp, cross_t,
                           hq_t, hq_d, hsize)
        _predict_pairs(i, t, False, pos, vel, tpos, ccell, head, nxt, ncell, eps,
                       stamp, cross_t, hq_t, hq_d, hsize)
        _predict_pairs(j, t, False, pos, vel, tpos, ccell, head, nxt, ncell, eps,
                       stamp, cross_t, hq_t, hq_d, hsize)
    scalars[S_CLOCK] = t_stop
    return DONE


@njit(cache=True)
def positions_at(t, pos, vel, tpos):
    n, d = pos.shape
    out = np.empty((n, d))
    for i in range(n):
        dt = t - tpos[i]
        for a in range(d):
            y = pos[i, a] + dt * vel[i, a]
            y -= math.floor(y)
            if y >= 1.0:
                y -= 1.0
            out[i, a] = y
    return out
