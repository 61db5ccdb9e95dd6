"""Compiled inner loops shared by the feature pipeline and the DP solver."""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def greedy_spend(wealth, group, disc, item_tau, item_cost, item_util, infusions):
    """Expected utility of greedily buying goals, per wealth lane and portfolio.

    Parameters
    ----------
    wealth : (M,) float
        Wealth available now for each lane.
    group : (M,) int
        Row of ``disc`` used by each lane.
    disc : (G, P, n, L) float
        Discount factors by group, portfolio, shock quantile and time offset.
    item_tau, item_cost, item_util : (K,) arrays
        Goals in purchase-priority order: time offset, undiscounted cost and
        utility.
    infusions : (L,) float
        Undiscounted infusion per time offset. An infusion at offset ``s``
        may only pay for goals at offsets ``>= s``.

    Returns
    -------
    (M, P) float
        Utility bought, averaged over the shock quantiles.
    """
    M = wealth.shape[0]
    P = disc.shape[1]
    n = disc.shape[2]
    L = disc.shape[3]
    K = item_tau.shape[0]
    out = np.zeros((M, P))
    has_inf = False
    for s in range(L):
        if infusions[s] > 0.0:
            has_inf = True
            break
    rem = np.zeros(L)
    fen = np.zeros(L + 1)
    link = np.zeros(L, dtype=np.int64)
    for m in range(M):
        g = group[m]
        for p in range(P):
            acc = 0.0
            for i in range(n):
                d = disc[g, p, i]
                w = wealth[m]
                if has_inf:
                    _fenwick_init(fen, rem, link, infusions, d)
                total = 0.0
                for k in range(K):
                    tau = item_tau[k]
                    c = item_cost[k] * d[tau]
                    avail = w
                    if has_inf:
                        avail += _fenwick_prefix(fen, tau)
                    if avail >= c:
                        total += item_util[k]
                        need = c
                        if has_inf:
                            s = _find_live(link, tau)
                            while s >= 0 and need > 0.0:
                                take = rem[s] if rem[s] < need else need
                                rem[s] -= take
                                need -= take
                                _fenwick_add(fen, s, -take)
                                if rem[s] <= 0.0:
                                    link[s] = s - 1
                                    s = _find_live(link, s - 1)
                        w -= need
                        if w < 0.0:
                            w = 0.0
                acc += total
            out[m, p] = acc / n
    return out


@njit(cache=True, inline="always")
def _fenwick_add(fen, s, delta):
    i = s + 1
    n = fen.shape[0]
    while i < n:
        fen[i] += delta
        i += i & (-i)


@njit(cache=True, inline="always")
def _fenwick_prefix(fen, s):
    i = s + 1
    total = 0.0
    while i > 0:
        total += fen[i]
        i -= i & (-i)
    return total


@njit(cache=True)
def _fenwick_init(fen, rem, link, infusions, d):
    L = rem.shape[0]
    for s in range(L):
        rem[s] = infusions[s] * d[s]
        fen[s + 1] = rem[s]
        link[s] = s if rem[s] > 0.0 else s - 1
    fen[0] = 0.0
    for i in range(1, L + 1):
        j = i + (i & (-i))
        if j <= L:
            fen[j] += fen[i]


@njit(cache=True)
def _find_live(link, s):
    """Largest offset <= s whose infusion is not exhausted (-1 if none)."""
    r = s
    while r >= 0 and link[r] != r:
        r = link[r]
    # path compression
    while s >= 0 and link[s] != s:
        nxt = link[s]
        link[s] = r
        s = nxt
    return r


@njit(cache=True)
def _interp_value(x, nodes, values):
    N = nodes.shape[0]
    if x <= nodes[0]:
        return values[0]
    if x >= nodes[N - 1]:
        return values[N - 1]
    lo = 0
    hi = N - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if nodes[mid] <= x:
            lo = mid
        else:
            hi = mid
    f = (x - nodes[lo]) / (nodes[hi] - nodes[lo])
    return values[lo] + f * (values[hi] - values[lo])


@njit(cache=True, inline="always")
def _phi(u):
    return 0.5 * math.erfc(-u * 0.7071067811865476)


@njit(cache=True)
def lognormal_expectation(wp, x, log_x, values, infusion, mean_log, vol, band):
    """Expectation of the next-step value from post-decision wealth ``wp``.

    The value is taken as the piecewise-linear interpolant through
    ``(x[j], values[j])`` (constant beyond the last node), where
    ``x = node - infusion`` is the growth part of next-step wealth, and is
    integrated exactly against the lognormal law of ``wp * growth``,
    truncated to ``band`` standard deviations and renormalised.
    """
    N = x.shape[0]
    if wp <= 0.0:
        return _interp_value(0.0, x, values)
    centre = math.log(wp) + mean_log
    lo_v = centre - band * vol
    hi_v = centre + band * vol
    # a: last node with log_x <= lo_v (node 0 always qualifies: x[0] <= 0)
    lo = 0
    hi = N
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if log_x[mid] <= lo_v:
            lo = mid
        else:
            hi = mid
    a = lo
    # b: last node with log_x < hi_v
    lo = a
    hi = N
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if log_x[mid] < hi_v:
            lo = mid
        else:
            hi = mid
    b = lo
    scale = math.exp(centre + 0.5 * vol * vol)
    mass = _phi(band) - _phi(-band)
    total = 0.0
    u_prev = -band
    pu_prev = _phi(-band)
    qu_prev = _phi(-band - vol)
    for j in range(a, min(b, N - 2) + 1):
        if j + 1 > b:
            u_next = band
        else:
            u_next = (log_x[j + 1] - centre) / vol
        pu_next = _phi(u_next)
        qu_next = _phi(u_next - vol)
        prob = pu_next - pu_prev
        if prob > 0.0:
            dx = x[j + 1] - x[j]
            slope = (values[j + 1] - values[j]) / dx
            part = scale * (qu_next - qu_prev) - x[j] * prob
            total += values[j] * prob + slope * part
        u_prev = u_next
        pu_prev = pu_next
        qu_prev = qu_next
    if b >= N - 1:
        total += values[N - 1] * (_phi(band) - pu_prev)
    return total / mass


@njit(cache=True)
def bellman_lognormal(nodes_cur, nodes_next, v_next, infusion, opt_cost, opt_util, mean_log, vol, band, terminal):
    """One backward step over all current nodes (continuous shocks).

    Returns value, chosen pareto index and chosen portfolio per node.
    """
    N = nodes_cur.shape[0]
    P = mean_log.shape[0]
    K = opt_cost.shape[0]
    Nn = nodes_next.shape[0]
    x = np.empty(Nn)
    log_x = np.empty(Nn)
    for j in range(Nn):
        x[j] = nodes_next[j] - infusion
        log_x[j] = math.log(x[j]) if x[j] > 0.0 else -np.inf
    value = np.empty(N)
    goal = np.zeros(N, dtype=np.int64)
    port = np.zeros(N, dtype=np.int64)
    for i in range(N):
        w = nodes_cur[i]
        best = -1.0
        bk = 0
        bp = 0
        for k in range(K):
            if opt_cost[k] > w:
                break
            wp = w - opt_cost[k]
            if terminal:
                v = opt_util[k]
                if v > best:
                    best = v
                    bk = k
                    bp = 0
                continue
            for p in range(P):
                v = opt_util[k] + lognormal_expectation(
                    wp, x, log_x, v_next, infusion, mean_log[p], vol[p], band
                )
                if v > best:
                    best = v
                    bk = k
                    bp = p
        value[i] = best
        goal[i] = bk
        port[i] = bp
    return value, goal, port
