"""Influence scores and the grid-graph equivalence check.

The influence of node y on node x is the total absolute Jacobian mass of
x's final hidden representation with respect to y's input features;
normalizing over y gives a distribution.  On wraparound grids, uniform
unbiased flow paths conserved at x reproduce (in the sample limit) the
exact k-step random-walk distribution from x, which this module verifies
empirically by total-variation distance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import streams
from .exceptions import EmptyInfluenceError, ShapeError, TooLargeError
from .graph import grid_torus, k_step_rw_distribution
from .model import ACTIVATIONS, ModelParams, forward
from .walks import PathSet, WalkParams, uniform_walks

_DENSE_PROBE_LIMIT = 10_000


def tv_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Total-variation distance (1/2) sum |a_i - b_i| between distributions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch {a.shape} vs {b.shape}")
    for name, vec in (("a", a), ("b", b)):
        if abs(vec.sum() - 1.0) > 1e-6:
            raise ValueError(f"{name} is not a probability vector (sum={vec.sum()!r})")
    return 0.5 * float(np.abs(a - b).sum())


def influence_jacobian(params: ModelParams, features: np.ndarray, prop_matrices,
                       x: int, activation: str = "relu") -> np.ndarray:
    """Influence scores of node x by every node: sum of |Jacobian| entries.

    Computed exactly by one reverse-mode pass per output coordinate of x's
    final hidden vector.  Guarded to small dense problems.
    """
    feats = np.asarray(features, dtype=np.float64)
    n, d = feats.shape
    if n * d > _DENSE_PROBE_LIMIT:
        raise TooLargeError(f"dense Jacobian probing needs n*d <= {_DENSE_PROBE_LIMIT}, "
                            f"got {n * d}")
    if not 0 <= x < n:
        raise IndexError(f"node {x} outside [0, {n})")
    _, act_grad = ACTIVATIONS[activation]
    cache = forward(feats, prop_matrices, params, activation)
    out_dim = cache.hidden[-1].shape[1]
    scores = np.zeros(n, dtype=np.float64)
    for i in range(out_dim):
        dh = np.zeros_like(cache.hidden[-1])
        dh[x, i] = 1.0
        for k in reversed(range(params.num_layers)):
            dz = dh * act_grad(cache.pre[k])
            dcat = dz @ params.weights[k].T
            d_in = cache.hidden[k].shape[1]
            dh = dcat[:, :d_in] + prop_matrices[k].T @ dcat[:, d_in:]
        scores += np.abs(dh).sum(axis=1)
    return scores


def influence_distribution(scores: np.ndarray) -> np.ndarray:
    """Normalize influence scores into a distribution."""
    total = scores.sum()
    if total <= 0:
        raise EmptyInfluenceError("influence scores are all zero")
    return scores / total


def flow_influence(paths: PathSet, x: int, num_nodes: int,
                   sink_only: bool = False) -> np.ndarray:
    """Empirical source distribution of flows conserved at x.

    Every conserving occurrence counts (revisits accumulate); with sink_only
    set, only flows whose final node is x are counted.
    """
    nodes = paths.nodes if isinstance(paths, PathSet) else np.asarray(paths)
    if nodes.size == 0:
        raise EmptyInfluenceError(f"no flow conserved at node {x}")
    if sink_only:
        sources = nodes[nodes[:, -1] == x, 0]
    else:
        occurrences = (nodes[:, 1:] == x).sum(axis=1)
        sources = np.repeat(nodes[:, 0], occurrences)
    if len(sources) == 0:
        raise EmptyInfluenceError(f"no flow conserved at node {x}")
    return np.bincount(sources, minlength=num_nodes) / len(sources)


@dataclass
class InfluenceReport:
    """Outcome of one influence comparison against the exact walk reference."""

    x: int
    k: int
    samples: int
    method: str  # "jacobian" or "flow-count"
    dist: np.ndarray
    ref: np.ndarray
    tv: float

    def __post_init__(self):
        for name, vec in (("dist", self.dist), ("ref", self.ref)):
            if abs(float(np.sum(vec)) - 1.0) > 1e-9:
                raise ValueError(f"{name} does not sum to 1")
        if not 0.0 <= self.tv <= 1.0:
            raise ValueError(f"tv distance {self.tv} outside [0, 1]")
        if self.method not in ("jacobian", "flow-count"):
            raise ValueError(f"unknown method tag {self.method!r}")

    def to_dict(self) -> dict:
        return {"x": self.x, "k": self.k, "samples": self.samples, "tv": self.tv,
                "method": self.method,
                "dist": [float(v) for v in self.dist],
                "ref": [float(v) for v in self.ref]}

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def torus_center(rows: int, cols: int) -> int:
    return (rows // 2) * cols + cols // 2


def verify_theorem(rows: int, cols: int, k: int, samples: int,
                   seed: int = 0) -> InfluenceReport:
    """Compare flow influence at the torus center against the k-step walk.

    Generates `samples` unbiased walks of k steps (k+1 nodes) from starts
    allocated uniformly over all nodes, then measures the total-variation
    distance between the sink-only flow influence at the center node and the
    exact k-step random-walk distribution from it.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    graph = grid_torus(rows, cols)
    n = graph.num_nodes
    center = torus_center(rows, cols)
    counts = np.full(n, samples // n, dtype=np.int64)
    counts[:samples % n] += 1
    starts = np.repeat(np.arange(n), counts)
    if len(starts) == 0:
        raise EmptyInfluenceError("samples=0 generates no walks")
    rng = streams.derive_rng(seed, streams.INFLUENCE)
    walks = uniform_walks(graph, starts, k + 1, rng)
    params = WalkParams(p=1.0, q=1.0, path_len=k + 1, restarts=1, seed=seed)
    dist = flow_influence(PathSet(walks, params), center, n, sink_only=True)
    ref = k_step_rw_distribution(graph, center, k)
    return InfluenceReport(x=center, k=k, samples=samples, method="flow-count",
                           dist=dist, ref=ref, tv=tv_distance(dist, ref))
