"""Graph storage, dataset ingestion, grid generation, and exact walk distributions.

Graphs are undirected and stored in compressed-adjacency form: an offsets
array of length ``num_nodes + 1`` and a flattened array of neighbor ids,
sorted ascending within each node so membership tests are a binary search.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from . import streams
from .exceptions import DegenerateWalkError, FormatError, ParseError

SPLIT_TAGS = ("train", "val", "test", "unlabeled")


class Graph:
    """Undirected graph in compressed-adjacency (CSR) form."""

    def __init__(self, offsets: np.ndarray, neighbors: np.ndarray):
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.neighbors = np.asarray(neighbors, dtype=np.int64)
        self.num_nodes = len(self.offsets) - 1

    @classmethod
    def from_edges(cls, num_nodes: int, edges) -> "Graph":
        """Build a graph from an iterable of (u, v) pairs.

        Edges are symmetrized and deduplicated; self-loops are dropped.
        """
        if num_nodes < 0:
            raise ValueError("num_nodes must be non-negative")
        arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                         dtype=np.int64)
        if arr.size == 0:
            arr = arr.reshape(0, 2)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("edges must be pairs of node ids")
        if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
            raise IndexError(f"edge endpoints must lie in [0, {num_nodes}), "
                             f"got range [{arr.min()}, {arr.max()}]")
        arr = arr[arr[:, 0] != arr[:, 1]]
        both = np.concatenate([arr, arr[:, ::-1]], axis=0)
        both = np.unique(both, axis=0)  # dedup + lexsort by (u, v)
        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        counts = np.bincount(both[:, 0], minlength=num_nodes)
        np.cumsum(counts, out=offsets[1:])
        return cls(offsets, both[:, 1].copy())

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return len(self.neighbors) // 2

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def degree(self, v: int) -> int:
        return int(self.offsets[v + 1] - self.offsets[v])

    def neighbors_of(self, v: int) -> np.ndarray:
        """Sorted neighbor ids of v (a view, do not mutate)."""
        return self.neighbors[self.offsets[v]:self.offsets[v + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        nbrs = self.neighbors_of(u)
        i = np.searchsorted(nbrs, v)
        return i < len(nbrs) and nbrs[i] == v

    @cached_property
    def adjacency_csr(self) -> sp.csr_matrix:
        """Binary adjacency as a scipy CSR matrix."""
        data = np.ones(len(self.neighbors), dtype=np.float64)
        return sp.csr_matrix((data, self.neighbors, self.offsets),
                             shape=(self.num_nodes, self.num_nodes))

    def check_symmetry(self) -> None:
        """Assert v in N(u) <=> u in N(v) with a full scan."""
        fwd = np.column_stack([
            np.repeat(np.arange(self.num_nodes), self.degrees), self.neighbors])
        rev = fwd[:, ::-1]
        order_f = np.lexsort((fwd[:, 1], fwd[:, 0]))
        order_r = np.lexsort((rev[:, 1], rev[:, 0]))
        if not np.array_equal(fwd[order_f], rev[order_r]):
            raise AssertionError("adjacency is not symmetric")


@dataclass
class DatasetBundle:
    """A graph plus node features, labels, and a train/val/test split."""

    graph: Graph
    features: np.ndarray  # (num_nodes, d) float64
    labels: np.ndarray    # (num_nodes,) int64, -1 = unlabeled
    split: np.ndarray     # (num_nodes,) str tags from SPLIT_TAGS
    name: str = ""
    _masks: dict = field(default_factory=dict, repr=False)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if (self.labels >= 0).any() else 0

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def mask(self, tag: str) -> np.ndarray:
        """Boolean mask of labeled nodes carrying the given split tag."""
        if tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {tag!r}")
        if tag not in self._masks:
            self._masks[tag] = (self.split == tag) & (self.labels >= 0)
        return self._masks[tag]

    def split_counts(self) -> dict[str, int]:
        return {tag: int((self.split == tag).sum()) for tag in SPLIT_TAGS}


def _data_lines(path: Path) -> list[str]:
    """Non-empty lines with '#' comments stripped, in file order."""
    lines = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        text = raw.split("#", 1)[0].strip()
        if text:
            lines.append(text)
    return lines


def load_dataset(directory, normalize_features: bool = True, name: str = "") -> DatasetBundle:
    """Load a dataset directory (graph.tsv, features.tsv, labels.tsv, split.tsv).

    Edges are symmetrized and deduplicated, self-loops dropped.  Features are
    row-normalized to unit sum by default (zero rows left untouched).
    """
    directory = Path(directory)
    paths = {n: directory / f"{n}.tsv" for n in ("graph", "features", "labels", "split")}
    for n, p in paths.items():
        if not p.is_file():
            raise FormatError(f"missing {p.name} in {directory}")

    feat_lines = _data_lines(paths["features"])
    num_nodes = len(feat_lines)
    try:
        features = np.array([[float(tok) for tok in line.split()] for line in feat_lines],
                            dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"non-numeric feature value in features.tsv: {exc}") from None
    if features.ndim != 2:
        raise FormatError("features.tsv rows have inconsistent column counts")

    edges = []
    for line in _data_lines(paths["graph"]):
        toks = line.split()
        if len(toks) != 2:
            raise FormatError(f"graph.tsv line {line!r} is not a 'u v' pair")
        try:
            edges.append((int(toks[0]), int(toks[1])))
        except ValueError:
            raise ParseError(f"non-integer node id in graph.tsv: {line!r}") from None
    graph = Graph.from_edges(num_nodes, edges)

    label_lines = _data_lines(paths["labels"])
    if len(label_lines) != num_nodes:
        raise FormatError(f"labels.tsv has {len(label_lines)} rows, expected {num_nodes}")
    try:
        labels = np.array([int(line.split()[0]) for line in label_lines], dtype=np.int64)
    except ValueError:
        raise ParseError("non-integer class id in labels.tsv") from None
    if (labels < -1).any():
        raise FormatError("labels.tsv contains class id below -1")

    split_lines = _data_lines(paths["split"])
    if len(split_lines) != num_nodes:
        raise FormatError(f"split.tsv has {len(split_lines)} rows, expected {num_nodes}")
    split = np.array([line.split()[0] for line in split_lines])
    unknown = set(split) - set(SPLIT_TAGS)
    if unknown:
        raise FormatError(f"unknown split tags {sorted(unknown)}")

    if normalize_features:
        sums = features.sum(axis=1, keepdims=True)
        np.divide(features, sums, out=features, where=sums != 0)

    return DatasetBundle(graph, features, labels, split, name=name or directory.name)


def grid_torus(rows: int, cols: int) -> Graph:
    """4-regular wraparound grid; node (i, j) gets id i * cols + j."""
    if rows < 3 or cols < 3:
        raise ValueError(f"torus needs rows, cols >= 3, got {rows}x{cols}")
    ids = np.arange(rows * cols).reshape(rows, cols)
    right = np.stack([ids, np.roll(ids, -1, axis=1)], axis=-1).reshape(-1, 2)
    down = np.stack([ids, np.roll(ids, -1, axis=0)], axis=-1).reshape(-1, 2)
    return Graph.from_edges(rows * cols, np.concatenate([right, down]))


def largest_component(graph: Graph) -> np.ndarray:
    """Node ids of the largest connected component."""
    n_comp, comp = csgraph.connected_components(graph.adjacency_csr, directed=False)
    sizes = np.bincount(comp, minlength=n_comp)
    return np.flatnonzero(comp == sizes.argmax())


def _component_distances(graph: Graph, sample: int | None, seed: int):
    """BFS distance rows from (sampled) largest-component sources.

    Returns (dist, lcc) where dist has one row per source restricted to
    component columns.  Sampling is without replacement, so sample = |LCC|
    reproduces the exact all-sources computation.
    """
    lcc = largest_component(graph)
    if sample is None or sample >= len(lcc):
        sources = lcc
    else:
        rng = streams.derive_rng(seed, streams.SHORTEST_PATH)
        sources = np.sort(rng.choice(lcc, size=sample, replace=False))
    dist = csgraph.shortest_path(graph.adjacency_csr, method="D", unweighted=True,
                                 indices=sources)
    return dist[:, lcc], lcc


def avg_shortest_path(graph: Graph, sample: int | None = None, seed: int = 0) -> float:
    """Mean BFS distance over ordered reachable pairs in the largest component.

    With ``sample`` set, the mean is over BFS trees from that many uniformly
    drawn component sources (deterministic given seed).
    """
    if graph.num_nodes == 0:
        raise ValueError("graph is empty")
    lcc = largest_component(graph)
    if len(lcc) == 1:
        warnings.warn("largest component is a single node; average shortest path is 0")
        return 0.0
    dist, lcc = _component_distances(graph, sample, seed)
    # distances are exact integers; sum as int64 so the result is
    # independent of reduction order
    total = int(dist[np.isfinite(dist)].astype(np.int64).sum())
    return total / (dist.shape[0] * (len(lcc) - 1))


def shortest_path_summary(graph: Graph, exact_threshold: int = 5000,
                          sample: int = 2000, seed: int = 0) -> dict:
    """Average shortest path with sampling above a node-count threshold.

    Exact for graphs below exact_threshold nodes; otherwise averaged over
    `sample` BFS sources with a normal-approximation 95% CI on the mean.
    """
    if graph.num_nodes == 0:
        raise ValueError("graph is empty")
    lcc = largest_component(graph)
    disconnected = len(lcc) < graph.num_nodes
    if len(lcc) == 1:
        warnings.warn("largest component is a single node; average shortest path is 0")
        return {"mean": 0.0, "ci95": 0.0, "sampled": False, "sources": 1,
                "lcc_size": 1, "disconnected": disconnected}
    sampled = graph.num_nodes >= exact_threshold and sample < len(lcc)
    dist, lcc = _component_distances(graph, sample if sampled else None, seed)
    dist = np.where(np.isfinite(dist), dist, 0.0)
    per_source = dist.sum(axis=1) / (len(lcc) - 1)
    ci95 = 0.0
    if sampled and len(per_source) > 1:
        ci95 = 1.96 * float(per_source.std(ddof=1)) / np.sqrt(len(per_source))
    return {"mean": float(per_source.mean()), "ci95": ci95, "sampled": sampled,
            "sources": len(per_source), "lcc_size": len(lcc),
            "disconnected": disconnected}


def transition_matrix(graph: Graph) -> sp.csr_matrix:
    """Uniform random-walk operator: row v spreads mass 1/deg(v) to neighbors."""
    deg = graph.degrees.astype(np.float64)
    data = np.repeat(np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0),
                     graph.degrees)
    return sp.csr_matrix((data, graph.neighbors, graph.offsets),
                         shape=(graph.num_nodes, graph.num_nodes))


def k_step_rw_distribution(graph: Graph, x: int, k: int) -> np.ndarray:
    """Exact k-step uniform random-walk distribution started at node x."""
    if not 0 <= x < graph.num_nodes:
        raise IndexError(f"node {x} outside [0, {graph.num_nodes})")
    if k < 0:
        raise ValueError("k must be non-negative")
    prob = np.zeros(graph.num_nodes, dtype=np.float64)
    prob[x] = 1.0
    if k == 0:
        return prob
    op = transition_matrix(graph)
    zero_deg = graph.degrees == 0
    for _ in range(k):
        if (prob[zero_deg] > 0).any():
            raise DegenerateWalkError(
                f"walk from {x} reaches a zero-degree node within {k} steps")
        prob = prob @ op
    return prob
