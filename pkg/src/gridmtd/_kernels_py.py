"""Pure-Python EXP3 kernels.

Mirrors ``_kernels.pyx`` operation for operation so both backends give
bit-identical results.
"""

from __future__ import annotations

import math

import numpy as np


def player_update(p: list, g: list, num: list, wsum: float, played: int, payoff: float,
                  gamma: float, eta: float, beta: float, floor: float) -> float:
    """One EXP3 update in place on ``p``, ``g`` and ``num``; returns new weight sum."""
    n = len(p)
    for s in range(n):
        num[s] += eta * p[s]
    wsum += eta
    for s in range(n):
        est = beta / p[s]
        if s == played:
            est += payoff / p[s]
        g[s] += eta * est
    gmax = g[0]
    for s in range(1, n):
        if g[s] > gmax:
            gmax = g[s]
    tot = 0.0
    for s in range(n):
        p[s] = math.exp(g[s] - gmax)
        tot += p[s]
    for s in range(n):
        p[s] = gamma / n + (1.0 - gamma) * p[s] / tot
    tot = 0.0
    for s in range(n):
        if p[s] < floor:
            p[s] = floor
        tot += p[s]
    for s in range(n):
        p[s] /= tot
    return wsum


def sample(p: list, u: float) -> int:
    acc = 0.0
    n = len(p)
    for s in range(n):
        acc += p[s]
        if u < acc:
            return s
    return n - 1


def selfplay(u, sched_d, sched_a, draws, noise, floor: float, record_every: int):
    """Two-player EXP3 on payoff matrix ``u`` (defender rows, values in [0, 1]).

    ``sched_*`` are (T, 3) arrays of (gamma, eta, beta); ``draws`` and
    ``noise`` are (T, 2) arrays of uniforms and payoff noise. Returns
    ``(num_d, wsum_d, num_a, wsum_a, p_d, p_a, snapshots)`` where each
    snapshot row is the running average of both players.
    """
    um = np.asarray(u, dtype=float).tolist()
    nd, na = len(um), len(um[0])
    sd = np.asarray(sched_d, dtype=float).tolist()
    sa = np.asarray(sched_a, dtype=float).tolist()
    dr = np.asarray(draws, dtype=float).tolist()
    nz = np.asarray(noise, dtype=float).tolist()
    horizon = len(sd)
    p_d, p_a = [1.0 / nd] * nd, [1.0 / na] * na
    g_d, g_a = [0.0] * nd, [0.0] * na
    num_d, num_a = [0.0] * nd, [0.0] * na
    w_d = w_a = 0.0
    snaps = []
    for t in range(horizon):
        i = sample(p_d, dr[t][0])
        j = sample(p_a, dr[t][1])
        val = um[i][j]
        w_d = player_update(p_d, g_d, num_d, w_d, i, val + nz[t][0], sd[t][0], sd[t][1], sd[t][2], floor)
        w_a = player_update(p_a, g_a, num_a, w_a, j, 1.0 - val + nz[t][1], sa[t][0], sa[t][1], sa[t][2], floor)
        if record_every > 0 and (t + 1) % record_every == 0:
            row = [num_d[s] / w_d if w_d > 0 else p_d[s] for s in range(nd)]
            row += [num_a[s] / w_a if w_a > 0 else p_a[s] for s in range(na)]
            snaps.append(row)
    return (np.array(num_d), w_d, np.array(num_a), w_a, np.array(p_d), np.array(p_a),
            np.array(snaps, dtype=float).reshape(len(snaps), nd + na))
