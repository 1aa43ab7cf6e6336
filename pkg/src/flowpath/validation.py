"""Input validation helpers shared across modules."""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError
from .graph import DatasetBundle, Graph


def check_node(graph: Graph, v: int) -> int:
    v = int(v)
    if not 0 <= v < graph.num_nodes:
        raise IndexError(f"node {v} outside [0, {graph.num_nodes})")
    return v


def check_feature_matrix(features, num_nodes: int | None = None) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ShapeError(f"features must be 2-D, got shape {feats.shape}")
    if num_nodes is not None and feats.shape[0] != num_nodes:
        raise ShapeError(f"features have {feats.shape[0]} rows, expected {num_nodes}")
    return feats


def check_probability_vector(vec, tol: float = 1e-6) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError("probability vector must be 1-D")
    if (v < 0).any() or abs(v.sum() - 1.0) > tol:
        raise ValueError("not a probability vector")
    return v


def check_bundle(bundle: DatasetBundle) -> DatasetBundle:
    n = bundle.graph.num_nodes
    check_feature_matrix(bundle.features, n)
    if bundle.labels.shape != (n,) or bundle.split.shape != (n,):
        raise ShapeError("labels and split must have one entry per node")
    if bundle.num_classes < 1:
        raise ValueError("bundle has no labeled nodes")
    return bundle
