from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from flowpath import DatasetBundle, Graph

import acceptance_log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(acceptance_log.RESULTS):
        status, detail = acceptance_log.RESULTS[criterion]
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"{criterion}: {status}{suffix}")


# --- small fixed graphs -----------------------------------------------------

@pytest.fixture
def triangle():
    return Graph.from_edges(3, [(0, 1), (1, 2), (2, 0)])


@pytest.fixture
def path3():
    return Graph.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def two_node():
    return Graph.from_edges(2, [(0, 1)])


@pytest.fixture
def star5():
    """K_{1,4}: node 0 is the center."""
    return Graph.from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)])


def make_toy_bundle(seed=42, n_per=10):
    """Two feature blobs on two rings joined by one cross edge."""
    rng = np.random.default_rng(seed)
    edges = []
    for b in (0, 1):
        base = b * n_per
        for i in range(n_per):
            edges.append((base + i, base + (i + 1) % n_per))
    edges.append((0, n_per))
    graph = Graph.from_edges(2 * n_per, edges)
    features = np.vstack([rng.normal([2.0, 0.0], 0.4, size=(n_per, 2)),
                          rng.normal([-2.0, 0.0], 0.4, size=(n_per, 2))])
    labels = np.array([0] * n_per + [1] * n_per, dtype=np.int64)
    split = np.array((["train"] * 6 + ["val"] * 2 + ["test"] * 2) * 2)
    return DatasetBundle(graph, features, labels, split, name="toy")


@pytest.fixture
def toy_bundle():
    return make_toy_bundle()


# --- dataset directories ----------------------------------------------------

def write_dataset_dir(directory: Path, edges, features, labels, split) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "graph.tsv").write_text(
        "".join(f"{u} {v}\n" for u, v in edges), encoding="utf-8")
    (directory / "features.tsv").write_text(
        "".join(" ".join(str(x) for x in row) + "\n" for row in features),
        encoding="utf-8")
    (directory / "labels.tsv").write_text(
        "".join(f"{y}\n" for y in labels), encoding="utf-8")
    (directory / "split.tsv").write_text(
        "".join(f"{s}\n" for s in split), encoding="utf-8")
    return directory


@pytest.fixture
def two_node_dataset(tmp_path):
    return write_dataset_dir(tmp_path / "pair", [(0, 1)],
                             [[1, 0], [0, 1]], [0, 1], ["train", "test"])


@pytest.fixture
def toy_dataset_dir(tmp_path):
    bundle = make_toy_bundle()
    edges = []
    g = bundle.graph
    for v in range(g.num_nodes):
        for u in g.neighbors_of(v):
            if v < u:
                edges.append((v, int(u)))
    return write_dataset_dir(tmp_path / "toy", edges, bundle.features,
                             bundle.labels, bundle.split)


def dataset_root() -> Path | None:
    """Directory holding cora/, citeseer/, pubmed/ in the package text format."""
    env = os.environ.get("FLOWPATH_DATA")
    candidates = [Path(env)] if env else []
    candidates.append(Path(__file__).resolve().parent.parent / "data")
    for cand in candidates:
        if cand.is_dir():
            return cand
    return None


def require_dataset(name: str) -> Path:
    root = dataset_root()
    if root is None or not (root / name / "graph.tsv").is_file():
        pytest.skip(f"dataset {name!r} not available (set FLOWPATH_DATA; "
                    f"see README for the converter recipe)")
    return root / name
