"""Flow propagation over path batches and its sparse-operator form.

Each path carries a flow generated at its source; every later node on the
path conserves the incoming flow (once per visit) and then transmits it
downstream.  A node's aggregate is the elementwise mean of everything it
conserved.  Under the default identity mechanism this whole procedure is a
sparse row-normalized flow-count operator applied to the feature matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .exceptions import ShapeError
from .walks import PathSet


@dataclass(frozen=True)
class PropagationMechanism:
    """Pluggable generate/transmit/conserve triple applied along each path.

    conserve is called before transmit at every node, following the
    propagation procedure's line order (relevant only when transmit is not
    the identity).
    """

    generate: Callable[[np.ndarray], np.ndarray]
    transmit: Callable[[int, np.ndarray], np.ndarray]
    conserve: Callable[[int, np.ndarray], np.ndarray]


def identity_mechanism() -> PropagationMechanism:
    """Lossless transmission: the source vector arrives unchanged everywhere."""
    return PropagationMechanism(
        generate=lambda h: h,
        transmit=lambda v, flow: flow,
        conserve=lambda v, flow: flow,
    )


def decay_mechanism(gamma: float = 1.0) -> PropagationMechanism:
    """Transmission attenuates the flow by gamma per hop (gamma=1 is identity)."""
    return PropagationMechanism(
        generate=lambda h: h,
        transmit=lambda v, flow: gamma * flow,
        conserve=lambda v, flow: flow,
    )


def _path_matrix(paths) -> np.ndarray:
    nodes = paths.nodes if isinstance(paths, PathSet) else np.asarray(paths, dtype=np.int64)
    if nodes.ndim != 2:
        raise ShapeError("paths must be a (count, path_len) matrix")
    return nodes


def mean_aggregate(records, dim: int | None = None) -> np.ndarray:
    """Elementwise mean of equal-length vectors; empty input gives zeros."""
    records = list(records)
    if not records:
        if dim is None:
            raise ValueError("dim is required to aggregate an empty record set")
        return np.zeros(dim, dtype=np.float64)
    first = np.asarray(records[0], dtype=np.float64)
    total = np.zeros_like(first)
    for rec in records:
        rec = np.asarray(rec, dtype=np.float64)
        if rec.shape != first.shape:
            raise ShapeError(f"mixed record shapes {first.shape} vs {rec.shape}")
        total += rec
    return total / len(records)


def info_propagate(features: np.ndarray, paths,
                   mech: PropagationMechanism | None = None) -> np.ndarray:
    """Run the propagation procedure literally, path by path.

    For each path the source generates a flow; nodes at positions 1..end
    conserve the incoming flow (the source does not conserve its own), with
    revisits conserving once per visit.  Output row v is the mean of v's
    conserved records, or zeros if it conserved nothing.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ShapeError("features must be a 2-D matrix")
    nodes = _path_matrix(paths)
    num_nodes = feats.shape[0]
    if nodes.size and (nodes.min() < 0 or nodes.max() >= num_nodes):
        raise ShapeError("path node ids exceed the feature row count")
    mech = mech or identity_mechanism()
    sums = np.zeros_like(feats)
    counts = np.zeros(num_nodes, dtype=np.int64)
    for row in nodes:
        flow = mech.generate(feats[row[0]])
        for v in row[1:-1]:
            sums[v] += mech.conserve(int(v), flow)
            counts[v] += 1
            flow = mech.transmit(int(v), flow)
        sink = row[-1]
        sums[sink] += mech.conserve(int(sink), flow)
        counts[sink] += 1
    out = np.zeros_like(feats)
    nonzero = counts > 0
    out[nonzero] = sums[nonzero] / counts[nonzero, None]
    return out


def build_propagation_matrix(paths, num_nodes: int) -> sp.csr_matrix:
    """Row-normalized (conserver x source) flow-count operator.

    Entry (v, s) is the fraction of flows conserved at v that originated at
    s; rows of nodes that conserve nothing are all zero.  Applying it to a
    feature matrix reproduces info_propagate under the identity mechanism.
    """
    nodes = _path_matrix(paths)
    if nodes.size == 0:
        return sp.csr_matrix((num_nodes, num_nodes), dtype=np.float64)
    if nodes.min() < 0 or nodes.max() >= num_nodes:
        raise ShapeError("path node ids exceed num_nodes")
    span = nodes.shape[1] - 1
    rows = nodes[:, 1:].ravel()
    cols = np.repeat(nodes[:, 0], span)
    counts = sp.coo_matrix((np.ones(rows.size, dtype=np.float64), (rows, cols)),
                           shape=(num_nodes, num_nodes)).tocsr()
    counts.sum_duplicates()
    row_sums = np.asarray(counts.sum(axis=1)).ravel()
    inv = np.divide(1.0, row_sums, out=np.zeros_like(row_sums), where=row_sums > 0)
    return sp.diags(inv).dot(counts).tocsr()


def write_matrix_triplets(matrix: sp.csr_matrix, path) -> int:
    """Debug dump of a propagation matrix as 'v s weight' lines."""
    coo = matrix.tocoo()
    with Path(path).open("w", encoding="utf-8") as fh:
        for v, s, w in zip(coo.row, coo.col, coo.data):
            fh.write(f"{v} {s} {w:.12g}\n")
    return coo.nnz
