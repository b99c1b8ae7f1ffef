"""Test-side oracles, implemented independently of the package code."""

from __future__ import annotations

import numpy as np


def markov_hit_table(g, center, steps, restarts):
    """Exact expected hit table via transition-matrix powering.

    States are the graph nodes plus an absorbing sink for dead ends.
    The expected visit count of node u over one restart is the sum over
    t = 1..T of the occupation probability at step t.  Expected counts
    are pushed through the same add-one smoothing and neighbor
    restriction as the sampler, giving the distribution the empirical
    table converges to.
    """
    nodes = list(g.nodes)
    index = {v: i for i, v in enumerate(nodes)}
    n = len(nodes)
    P = np.zeros((n + 1, n + 1))
    for v in nodes:
        nbrs = g.neighbors(v)
        if nbrs:
            for u in nbrs:
                P[index[v], index[u]] = 1.0 / len(nbrs)
        else:
            P[index[v], n] = 1.0
    P[n, n] = 1.0

    occ = np.zeros(n + 1)
    occ[index[center]] = 1.0
    expected = np.zeros(n + 1)
    for _ in range(steps):
        occ = occ @ P
        expected += occ

    nbrs = g.neighbors(center)
    smoothed = {u: restarts * expected[index[u]] + 1.0 for u in nbrs}
    denom = sum(smoothed.values())
    return {u: c / denom for u, c in smoothed.items()}


def total_variation(table, exact):
    """TV distance between a HitTable and an exact {node: p} map."""
    empirical = {node: p for node, p in table.entries}
    keys = set(empirical) | set(exact)
    return 0.5 * sum(abs(empirical.get(k, 0.0) - exact.get(k, 0.0)) for k in keys)
