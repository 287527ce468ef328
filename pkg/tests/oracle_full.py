"""Compiled form of ``oracles.mini_next_id`` for the exhaustive sweep.

Same rule, same brute force, just under numba so that every swarm set of
size <= 5 on every ring up to 64 points can be checked in minutes.
Imported only when SWARMMSG_FULL_RING=1.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _better(gaps_a, start_a, off_a, gaps_b, start_b, off_b, n):
    for i in range(n):
        if gaps_a[i] != gaps_b[i]:
            return gaps_a[i] < gaps_b[i]
    if start_a != start_b:
        return start_a < start_b
    return off_a < off_b


@numba.njit(cache=True)
def _sorted_gaps_desc(points, n, m, out):
    # points sorted ascending, length n
    for i in range(n):
        g = (points[(i + 1) % n] - points[i]) % m
        out[i] = m if g == 0 else g
    for i in range(1, n):  # insertion sort, descending
        x = out[i]
        j = i - 1
        while j >= 0 and out[j] < x:
            out[j + 1] = out[j]
            j -= 1
        out[j + 1] = x


@numba.njit(cache=True)
def _oracle_one(ids, k, m):
    pts = np.empty(k + 1, np.int64)
    cur = np.empty(k + 1, np.int64)
    best = np.empty(k + 1, np.int64)
    found = False
    best_start = 0
    best_off = 0
    best_c = -1
    for c in range(m):
        taken = False
        for j in range(k):
            if ids[j] == c:
                taken = True
        if taken:
            continue
        # insert c keeping order
        p = 0
        placed = False
        for j in range(k):
            if not placed and c < ids[j]:
                pts[p] = c
                p += 1
                placed = True
            pts[p] = ids[j]
            p += 1
        if not placed:
            pts[p] = c
        _sorted_gaps_desc(pts, k + 1, m, cur)
        start = ids[k - 1]
        for j in range(k):
            if ids[j] <= c:
                start = ids[j]
        off = (c - start) % m
        if not found or _better(cur, start, off, best, best_start, best_off, k + 1):
            found = True
            best[:] = cur
            best_start = start
            best_off = off
            best_c = c
    return best_c


@numba.njit(cache=True)
def oracle_all(m, k, count):
    """Oracle answer for every k-subset of range(m), in itertools order;
    -1 where the ring is full."""
    out = np.empty(count, np.int64)
    idx = np.arange(k).astype(np.int64)
    for n in range(count):
        out[n] = _oracle_one(idx, k, m)
        # next combination in lexicographic order
        i = k - 1
        while i >= 0 and idx[i] == m - k + i:
            i -= 1
        if i < 0:
            break
        idx[i] += 1
        for j in range(i + 1, k):
            idx[j] = idx[j - 1] + 1
    return out
