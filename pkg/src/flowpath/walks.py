"""Flow-path generation: degree-based restart allocation and (p, q)-biased walks.

A path is a fixed-length node sequence sampled by a second-order biased walk:
the step from ``cur`` with predecessor ``prev`` weights each neighbor x by
1/p if x == prev, 1 if x neighbors prev, and 1/q otherwise.  Paths are stored
as rows of an int64 matrix; the first column is the source, the last the sink.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import streams
from .exceptions import DegenerateWalkError
from .graph import Graph


@dataclass(frozen=True)
class WalkParams:
    """Biased-walk hyperparameters.

    p: return parameter (> 0), high values suppress backtracking.
    q: in-out parameter (> 0), low values favor depth-first exploration.
    path_len: nodes per path (>= 2).
    restarts: base walk rounds per node (>= 1), scaled by node importance.
    """

    p: float = 1000.0
    q: float = 1.0
    path_len: int = 6
    restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.p <= 0 or self.q <= 0:
            raise ValueError(f"p and q must be positive, got p={self.p}, q={self.q}")
        if self.path_len < 2:
            raise ValueError(f"path_len must be >= 2, got {self.path_len}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")


@dataclass
class PathSet:
    """A batch of flow paths with the parameters that generated them."""

    nodes: np.ndarray  # (count, path_len) int64
    params: WalkParams | None = None
    layer: int = 0
    skipped_isolated: int = 0

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def __iter__(self):
        return iter(self.nodes)

    @property
    def path_len(self) -> int:
        return self.nodes.shape[1]

    def slice(self, start: int, stop: int) -> "PathSet":
        return PathSet(self.nodes[start:stop], self.params, self.layer)


def importance_restarts(graph: Graph, v: int, r: int) -> int:
    """Walk count for node v: r scaled by degree relative to the mean degree.

    Isolated nodes get 0 (no walk can leave them); everyone else at least r.
    """
    deg = graph.degree(v)
    if deg == 0:
        return 0
    mean_deg = 2.0 * graph.num_edges / graph.num_nodes
    # round half away from zero, not banker's rounding
    return r * max(1, int(deg / mean_deg + 0.5))


def second_order_step_weights(graph: Graph, prev: int, cur: int, p: float, q: float):
    """Unnormalized step weights out of ``cur`` given predecessor ``prev``.

    Returns (neighbors of cur, weights): 1/p for backtracking to prev, 1 for
    common neighbors of prev, 1/q for everything else.
    """
    prev_nbrs = graph.neighbors_of(prev)
    nbrs = graph.neighbors_of(cur)
    pos = np.searchsorted(prev_nbrs, cur)
    if pos >= len(prev_nbrs) or prev_nbrs[pos] != cur:
        raise ValueError(f"prev={prev} is not adjacent to cur={cur}")
    idx = np.searchsorted(prev_nbrs, nbrs)
    idx[idx == len(prev_nbrs)] = len(prev_nbrs) - 1
    shares_edge = prev_nbrs[idx] == nbrs
    weights = np.where(shares_edge, 1.0, 1.0 / q)
    weights[nbrs == prev] = 1.0 / p
    return nbrs, weights


def sample_step(graph: Graph, prev: int, cur: int, p: float, q: float,
                rng: np.random.Generator, size: int | None = None):
    """Draw the next node(s) after (prev, cur) by inverse-CDF over the weights."""
    nbrs, weights = second_order_step_weights(graph, prev, cur, p, q)
    cum = np.cumsum(weights)
    draws = rng.random(size) * cum[-1]
    idx = np.minimum(np.searchsorted(cum, draws, side="right"), len(nbrs) - 1)
    if size is None:
        return int(nbrs[idx])
    return nbrs[idx]


class SecondOrderCache:
    """Lazy memo of (prev, cur) -> (neighbors, cumulative weights).

    Sampling against the cached cumulative array draws the exact same node
    as a fresh weight computation for the same RNG state, so paths are
    byte-identical with or without the cache.  Memory grows with the number
    of distinct directed edges actually walked.
    """

    def __init__(self, graph: Graph, p: float, q: float):
        self.graph = graph
        self.p = p
        self.q = q
        self._table: dict = {}

    def lookup(self, prev: int, cur: int):
        key = (prev, cur)
        hit = self._table.get(key)
        if hit is None:
            nbrs, weights = second_order_step_weights(self.graph, prev, cur,
                                                      self.p, self.q)
            hit = (nbrs, np.cumsum(weights))
            self._table[key] = hit
        return hit


def node2vec_walk(graph: Graph, start: int, params: WalkParams,
                  rng: np.random.Generator,
                  cache: SecondOrderCache | None = None) -> np.ndarray:
    """One biased walk of exactly ``path_len`` nodes starting at ``start``.

    The first step is uniform over the start's neighbors; later steps follow
    the second-order weights.  Undirected graphs always offer a next hop (the
    arrival edge), so the walk never terminates early.  Every step consumes
    exactly one uniform draw from ``rng``.
    """
    first_nbrs = graph.neighbors_of(start)
    if len(first_nbrs) == 0:
        raise DegenerateWalkError(f"node {start} has no neighbors")
    path = np.empty(params.path_len, dtype=np.int64)
    path[0] = start
    cur = int(first_nbrs[int(rng.random() * len(first_nbrs))])
    path[1] = cur
    prev = start
    p, q = params.p, params.q
    for i in range(2, params.path_len):
        if cache is None:
            nbrs, weights = second_order_step_weights(graph, prev, cur, p, q)
            cum = np.cumsum(weights)
        else:
            nbrs, cum = cache.lookup(prev, cur)
        j = cum.searchsorted(rng.random() * cum[-1], side="right")
        if j >= len(nbrs):
            j = len(nbrs) - 1
        nxt = int(nbrs[j])
        path[i] = nxt
        prev, cur = cur, nxt
    return path


def pathgen(graph: Graph, params: WalkParams, layer: int = 0, salt: int = 0,
            cache_weights: bool = True) -> PathSet:
    """Generate the full path batch for one layer.

    For each round and each non-isolated node, emits importance_restarts(v, 1)
    walks from v.  Each (node, round) pair draws from its own RNG stream
    derived from (seed, layer, salt, round, node), so output is byte-identical
    for identical inputs regardless of scheduling.  ``cache_weights`` memoizes
    per-(prev, cur) step weights; it changes speed and memory, never output.
    """
    per_node = np.array([importance_restarts(graph, v, 1)
                         for v in range(graph.num_nodes)], dtype=np.int64)
    active = np.flatnonzero(per_node)
    skipped = graph.num_nodes - len(active)
    total = int(params.restarts * per_node.sum())
    if total == 0:
        warnings.warn("graph has no edges; no paths generated")
        return PathSet(np.empty((0, params.path_len), dtype=np.int64), params,
                       layer, skipped_isolated=skipped)
    cache = SecondOrderCache(graph, params.p, params.q) if cache_weights else None
    rows = np.empty((total, params.path_len), dtype=np.int64)
    at = 0
    for rnd in range(params.restarts):
        for v in active:
            rng = streams.derive_rng(params.seed, streams.WALKS, layer, salt, rnd, v)
            for _ in range(per_node[v]):
                rows[at] = node2vec_walk(graph, int(v), params, rng, cache)
                at += 1
    return PathSet(rows, params, layer, skipped_isolated=skipped)


def uniform_walks(graph: Graph, starts: np.ndarray, path_len: int,
                  rng: np.random.Generator) -> np.ndarray:
    """First-order uniform walks, vectorized over many walkers at once.

    Distributionally identical to the biased walk at p = q = 1, where every
    neighbor weight collapses to 1.  Used where huge sample counts are needed.
    """
    starts = np.asarray(starts, dtype=np.int64)
    deg = graph.degrees
    if (deg[starts] == 0).any():
        raise DegenerateWalkError("some start nodes have no neighbors")
    paths = np.empty((len(starts), path_len), dtype=np.int64)
    paths[:, 0] = starts
    cur = starts
    for i in range(1, path_len):
        idx = (rng.random(len(starts)) * deg[cur]).astype(np.int64)
        cur = graph.neighbors[graph.offsets[cur] + idx]
        paths[:, i] = cur
    return paths


def validate_paths(graph: Graph, paths: PathSet) -> None:
    """Assert every path steps along graph edges (full scan)."""
    nodes = paths.nodes
    if nodes.size == 0:
        return
    if nodes.min() < 0 or nodes.max() >= graph.num_nodes:
        raise AssertionError("path contains out-of-range node ids")
    adj = graph.adjacency_csr
    for i in range(nodes.shape[1] - 1):
        present = np.asarray(adj[nodes[:, i], nodes[:, i + 1]]).ravel()
        if not (present > 0).all():
            j = int(np.flatnonzero(present == 0)[0])
            raise AssertionError(
                f"path {j} uses non-edge {nodes[j, i]}->{nodes[j, i + 1]}")


def write_paths(paths: PathSet, path) -> int:
    """Dump one path per line, space-separated node ids. Returns line count."""
    out = Path(path)
    with out.open("w", encoding="utf-8") as fh:
        for row in paths.nodes:
            fh.write(" ".join(map(str, row)) + "\n")
    return len(paths)


def read_paths(path, params: WalkParams | None = None, layer: int = 0) -> PathSet:
    """Load a path dump written by write_paths."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            rows.append([int(tok) for tok in line.split()])
    nodes = np.array(rows, dtype=np.int64) if rows else np.empty((0, 0), dtype=np.int64)
    return PathSet(nodes, params, layer)
