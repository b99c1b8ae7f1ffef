"""Random-walk neighborhood sampling with hit-probability smoothing.

For a center node, R restarts of a T-step uniform undirected walk are
simulated.  Visit counts over the center's immediate neighbors, plus
add-one smoothing, give a probability table used to rank and truncate
neighborhoods.  Each (center, restart) pair owns its own PCG64 stream,
so tables do not depend on the order in which centers are queried.
"""

from dataclasses import dataclass

from .errors import ConfigError, ContractError, UnknownNodeError
from .seeding import make_rng


@dataclass(frozen=True)
class WalkConfig:
    steps: int = 20
    restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.restarts < 1:
            raise ConfigError(f"restarts must be >= 1, got {self.restarts}")


def simulate_walks(g, center, cfg):
    """Visit counts over all nodes touched by the walks from `center`.

    The starting occupation of the center is not counted; a step has to
    land on a node for it to count.  A walk stops early at a dead end.
    """
    if center not in g:
        raise UnknownNodeError(center)
    counts = {}
    for restart in range(cfg.restarts):
        rng = make_rng("walk", cfg.seed, center, restart)
        draws = rng.random(cfg.steps)
        cur = center
        for t in range(cfg.steps):
            nbrs = g.neighbors(cur)
            if not nbrs:
                break
            cur = nbrs[int(draws[t] * len(nbrs))]
            counts[cur] = counts.get(cur, 0) + 1
    return counts


@dataclass(frozen=True)
class HitTable:
    """Smoothed hit probabilities over one center's immediate neighbors.

    `entries` is a tuple of (neighbor id, probability), sorted by
    probability descending with ties broken by id ascending.  The
    probabilities are strictly positive and sum to 1 unless the center
    has no neighbors at all.
    """

    center: str
    entries: tuple

    def __post_init__(self):
        if self.entries:
            total = sum(p for _, p in self.entries)
            if abs(total - 1.0) > 1e-9:
                raise ContractError(f"hit probabilities sum to {total!r}, want 1")
            if any(p <= 0 for _, p in self.entries):
                raise ContractError("hit probabilities must be strictly positive")

    def probability(self, node):
        for n, p in self.entries:
            if n == node:
                return p
        return 0.0

    def to_jsonable(self):
        return {
            "center": self.center,
            "neighbors": [{"id": n, "p": p} for n, p in self.entries],
        }


def hit_probabilities(g, center, counts):
    """Build the smoothed, ranked HitTable for `center` from walk counts.

    Only immediate neighbors of the center are eligible; every neighbor
    gets probability (count + 1) / sum over neighbors of (count + 1), so
    unvisited neighbors still rank, just last.
    """
    nbrs = g.neighbors(center)
    if not nbrs:
        return HitTable(center, ())
    smoothed = [(n, counts.get(n, 0) + 1) for n in nbrs]
    denom = sum(c for _, c in smoothed)
    # sort on integer counts, not float probabilities, so ties are exact
    ranked = sorted(smoothed, key=lambda item: (-item[1], item[0]))
    entries = tuple((n, c / denom) for n, c in ranked)
    return HitTable(center, entries)


def sample_neighborhood(g, center, cfg):
    """Walks plus smoothing in one call."""
    return hit_probabilities(g, center, simulate_walks(g, center, cfg))


def top_n(table, n):
    """Ids of the n most probable neighbors, in table order; 0 is allowed."""
    if n < 0:
        raise ContractError(f"n must be >= 0, got {n}")
    return [node for node, _ in table.entries[:n]]


class HitSource:
    """Caching hit-table provider for the nodes of one graph.

    Tables are computed lazily and cached; because streams are keyed by
    (seed, center, restart), the result for a node does not depend on
    which other nodes were queried first.
    """

    def __init__(self, graph, cfg):
        self.graph = graph
        self.cfg = cfg
        self._cache = {}

    def __call__(self, node):
        table = self._cache.get(node)
        if table is None:
            table = sample_neighborhood(self.graph, node, self.cfg)
            self._cache[node] = table
        return table
