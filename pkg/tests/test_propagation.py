import numpy as np
import pytest

from flowpath import (Graph, PathSet, ShapeError, WalkParams,
                      build_propagation_matrix, decay_mechanism,
                      identity_mechanism, info_propagate, mean_aggregate,
                      pathgen)
from flowpath.propagation import write_matrix_triplets

import oracles


def paths_of(*rows):
    return PathSet(np.array(rows, dtype=np.int64))


def random_instance(rng, max_nodes=12, dim=3):
    n = int(rng.integers(4, max_nodes))
    g = Graph.from_edges(n, oracles.random_graph(rng, n, 0.5))
    params = WalkParams(p=float(rng.uniform(0.3, 3)), q=float(rng.uniform(0.3, 3)),
                        path_len=int(rng.integers(2, 6)), restarts=2,
                        seed=int(rng.integers(10_000)))
    ps = pathgen(g, params)
    feats = rng.normal(size=(n, dim))
    return g, ps, feats


class TestInfoPropagate:
    def test_single_path(self):
        feats = np.arange(9, dtype=float).reshape(3, 3)
        out = info_propagate(feats, paths_of([0, 1, 2]))
        assert np.array_equal(out[1], feats[0])
        assert np.array_equal(out[2], feats[0])
        assert np.array_equal(out[0], np.zeros(3))

    def test_two_paths_share_sink(self):
        feats = np.eye(5)
        out = info_propagate(feats, paths_of([0, 1, 2], [3, 4, 2]))
        assert np.allclose(out[2], (feats[0] + feats[3]) / 2)

    def test_revisit_conserves_per_visit(self):
        # path a,b,a,b: a conserves once (its own source flow at position 2),
        # b conserves the same source flow at positions 1 and 3
        feats = np.array([[1.0, 2.0], [10.0, 20.0]])
        out = info_propagate(feats, paths_of([0, 1, 0, 1]))
        assert np.array_equal(out[0], feats[0])
        assert np.array_equal(out[1], feats[0])

    def test_matches_simulation_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            g, ps, feats = random_instance(rng)
            if len(ps) == 0:
                continue
            expected = oracles.simulate_propagation(feats, ps.nodes)
            assert np.allclose(info_propagate(feats, ps), expected, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            info_propagate(np.ones((2, 3)), paths_of([0, 1, 2]))
        with pytest.raises(ShapeError):
            info_propagate(np.ones(4), paths_of([0, 1]))

    def test_identity_mechanism_explicit(self):
        feats = np.random.default_rng(0).normal(size=(4, 2))
        ps = paths_of([0, 1, 2], [2, 3, 0])
        assert np.array_equal(info_propagate(feats, ps),
                              info_propagate(feats, ps, identity_mechanism()))

    def test_decay_conserves_before_transmitting(self):
        # v1 stores the undamped flow, the sink gets one hop of decay
        feats = np.array([[8.0], [0.0], [0.0]])
        out = info_propagate(feats, paths_of([0, 1, 2]), decay_mechanism(0.5))
        assert out[1] == pytest.approx(8.0)
        assert out[2] == pytest.approx(4.0)

    def test_decay_gamma_one_is_identity(self):
        feats = np.random.default_rng(1).normal(size=(5, 3))
        ps = paths_of([0, 1, 2, 3], [4, 3, 2, 1])
        assert np.allclose(info_propagate(feats, ps, decay_mechanism(1.0)),
                           info_propagate(feats, ps))


class TestPropagationMatrix:
    def test_single_path_rows(self):
        mat = build_propagation_matrix(paths_of([0, 1, 2]), 3).toarray()
        assert np.array_equal(mat[1], [1, 0, 0])
        assert np.array_equal(mat[2], [1, 0, 0])
        assert np.array_equal(mat[0], [0, 0, 0])

    def test_shared_sink_row(self):
        mat = build_propagation_matrix(paths_of([0, 1, 2], [3, 4, 2]), 5).toarray()
        assert mat[2][0] == pytest.approx(0.5)
        assert mat[2][3] == pytest.approx(0.5)

    def test_empty_pathset(self):
        mat = build_propagation_matrix(PathSet(np.empty((0, 4), dtype=np.int64)), 6)
        assert mat.shape == (6, 6) and mat.nnz == 0

    def test_operator_equivalence(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            g, ps, feats = random_instance(rng)
            mat = build_propagation_matrix(ps, g.num_nodes)
            direct = info_propagate(feats, ps)
            assert np.abs(mat @ feats - direct).max() < 1e-9

    def test_nonzero_rows_are_stochastic(self):
        rng = np.random.default_rng(13)
        for _ in range(15):
            g, ps, _ = random_instance(rng)
            mat = build_propagation_matrix(ps, g.num_nodes)
            sums = np.asarray(mat.sum(axis=1)).ravel()
            nonzero = sums > 0
            assert np.all(np.abs(sums[nonzero] - 1.0) < 1e-9)
            assert np.all(mat.data >= 0)

    def test_diag_zero_without_source_revisits(self):
        rng = np.random.default_rng(19)
        for _ in range(15):
            g, ps, _ = random_instance(rng)
            revisits = (ps.nodes[:, 1:] == ps.nodes[:, :1]).any()
            if revisits:
                continue
            mat = build_propagation_matrix(ps, g.num_nodes)
            assert np.all(mat.diagonal() == 0)

    def test_triplet_dump(self, tmp_path):
        mat = build_propagation_matrix(paths_of([0, 1, 2], [3, 4, 2]), 5)
        out = tmp_path / "matrix.txt"
        assert write_matrix_triplets(mat, out) == mat.nnz
        lines = {tuple(line.split()[:2]) for line in out.read_text().splitlines()}
        assert ("2", "0") in lines and ("2", "3") in lines

    def test_path_order_invariance(self):
        rng = np.random.default_rng(23)
        g, ps, feats = random_instance(rng, max_nodes=10)
        shuffled = PathSet(ps.nodes[rng.permutation(len(ps))], ps.params)
        a = info_propagate(feats, ps)
        b = info_propagate(feats, shuffled)
        assert np.abs(a - b).max() < 1e-9


class TestMeanAggregate:
    def test_pair(self):
        assert np.array_equal(mean_aggregate([[1, 2], [3, 4]]), [2.0, 3.0])

    def test_singleton_identity(self):
        x = np.array([1.5, -2.0, 7.0])
        assert np.array_equal(mean_aggregate([x]), x)

    def test_empty(self):
        assert np.array_equal(mean_aggregate([], dim=3), np.zeros(3))
        with pytest.raises(ValueError):
            mean_aggregate([])

    def test_mixed_dimensions(self):
        with pytest.raises(ShapeError):
            mean_aggregate([np.ones(2), np.ones(3)])

    def test_permutation_bit_identical_after_canonical_sort(self):
        rng = np.random.default_rng(3)
        records = list(rng.normal(size=(5, 4)))
        ids = list(range(5))
        baseline = mean_aggregate([records[i] for i in sorted(ids)])
        for _ in range(10):
            perm = rng.permutation(5)
            permuted = {int(i): records[int(i)] for i in perm}
            canonical = [permuted[i] for i in sorted(permuted)]
            result = mean_aggregate(canonical)
            assert np.array_equal(result, baseline)  # bit-for-bit
