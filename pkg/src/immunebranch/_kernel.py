"""Compiled episode kernel.

Same event semantics and draw order as :func:`immunebranch.engine.simulate`,
without the genealogy records.  The two are checked against each other in
the test suite, outcome for outcome.
"""

from __future__ import annotations

import heapq

import numba as nb
import numpy as np

STANDARD = 0
STAR = 1
MIXED = 2
CONDITIONED = 3

EXTINCT = 0
CENSORED = 1
ABORTED = 2


@nb.njit(cache=True, nogil=True)
def run_kernel(rng, variant, lam, r, p, t_root, horizon, pop_cap, progeny_cap):
    """Returns ``(verdict, N, S, extinction_time, peak, types_created)``.

    ``extinction_time`` is NaN unless the verdict is extinct.
    """
    mean_gap = 1.0 / lam
    sterile_coin = variant == MIXED and p < 1.0

    if variant == CONDITIONED:
        d0 = t_root
    elif variant == STAR:
        if rng.random() < r:
            d0 = rng.exponential(1.0)
        else:
            d0 = 0.0
    else:
        d0 = rng.exponential(1.0)

    cap = 64
    death = np.empty(cap, dtype=np.float64)
    alive = np.zeros(cap, dtype=np.int64)
    death[0] = d0
    alive[0] = 1
    n_types = 1

    heap = [(d0, 0, 0, 0)]
    seq = 1
    gap = rng.exponential(mean_gap)
    if gap < d0:
        heapq.heappush(heap, (gap, 1, seq, 0))
        seq += 1

    population = 1
    peak = 1
    n_total = 1
    n_sterile = 0
    verdict = -1
    ext_time = np.nan

    while verdict < 0:
        ev = heapq.heappop(heap)
        t = ev[0]
        kind = ev[1]
        tid = ev[3]
        if t > horizon:
            verdict = CENSORED
            break
        if kind == 0:
            population -= alive[tid]
            alive[tid] = 0
            if population == 0:
                verdict = EXTINCT
                ext_time = t
            continue

        is_sterile = False
        if rng.random() < r:
            if sterile_coin and not rng.random() < p:
                is_sterile = True
            clock = rng.exponential(1.0)
            if n_types == cap:
                cap *= 2
                nd = np.empty(cap, dtype=np.float64)
                nd[:n_types] = death[:n_types]
                death = nd
                na = np.zeros(cap, dtype=np.int64)
                na[:n_types] = alive[:n_types]
                alive = na
            child_type = n_types
            n_types += 1
            d_child = death[tid] + clock
            death[child_type] = d_child
            heapq.heappush(heap, (d_child, 0, seq, child_type))
            seq += 1
        else:
            child_type = tid
            d_child = death[tid]

        n_total += 1
        if is_sterile:
            n_sterile += 1
        alive[child_type] += 1
        population += 1
        if population > peak:
            peak = population

        if not is_sterile:
            gap = rng.exponential(mean_gap)
            if t + gap < d_child:
                heapq.heappush(heap, (t + gap, 1, seq, child_type))
                seq += 1
        gap = rng.exponential(mean_gap)
        if t + gap < death[tid]:
            heapq.heappush(heap, (t + gap, 1, seq, tid))
            seq += 1

        if population >= pop_cap:
            verdict = CENSORED
        elif n_total >= progeny_cap:
            verdict = ABORTED

    return verdict, n_total, n_sterile, ext_time, peak, n_types
