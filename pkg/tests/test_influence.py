import numpy as np
import pytest
import scipy.sparse as sp

from flowpath import (EmptyInfluenceError, PathSet, ShapeError, TooLargeError,
                      flow_influence, grid_torus, influence_distribution,
                      influence_jacobian, k_step_rw_distribution, tv_distance,
                      uniform_walks, verify_theorem)
from flowpath.influence import torus_center
from flowpath.model import init_params
from flowpath import streams

from test_model import differentiable_instances


def paths_of(*rows):
    return PathSet(np.array(rows, dtype=np.int64))


class TestTvDistance:
    def test_identical(self):
        a = np.array([0.2, 0.3, 0.5])
        assert tv_distance(a, a) == 0.0

    def test_disjoint_indicators(self):
        assert tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0

    def test_quarter(self):
        assert tv_distance([0.5, 0.5], [0.75, 0.25]) == pytest.approx(0.25)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            tv_distance([1.0], [0.5, 0.5])

    def test_rejects_non_probability(self):
        with pytest.raises(ValueError):
            tv_distance([0.7, 0.7], [0.5, 0.5])


class TestInfluenceJacobian:
    def test_zero_propagation_keeps_influence_local(self):
        n, d = 4, 3
        rng = np.random.default_rng(0)
        params = init_params(d, d, 2, 1, rng)
        mats = [sp.csr_matrix((n, n))]
        feats = rng.normal(size=(n, d))
        scores = influence_jacobian(params, feats, mats, x=1,
                                    activation="identity")
        self_block = params.weights[0][:d, :]
        assert scores[1] == pytest.approx(np.abs(self_block).sum())
        others = np.delete(scores, 1)
        assert np.all(others == 0.0)

    def test_propagation_block_carries_cross_influence(self):
        # 2 nodes, P sends node 1's aggregate entirely from node 0
        d = 2
        rng = np.random.default_rng(1)
        params = init_params(d, d, 2, 1, rng)
        mats = [sp.csr_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]))]
        feats = rng.normal(size=(2, d))
        scores = influence_jacobian(params, feats, mats, x=1,
                                    activation="identity")
        cross_block = params.weights[0][d:, :]
        assert scores[0] == pytest.approx(np.abs(cross_block).sum())

    def test_matches_finite_difference_jacobian(self):
        feats, mats, _, _, params = differentiable_instances(1)[0]
        feats = feats.copy()
        n, d = feats.shape
        x = 0
        from flowpath.model import forward
        step = 1e-4
        expected = np.zeros(n)
        for y in range(n):
            for j in range(d):
                orig = feats[y, j]
                feats[y, j] = orig + step
                f_plus = forward(feats, mats, params).hidden[-1][x]
                feats[y, j] = orig - step
                f_minus = forward(feats, mats, params).hidden[-1][x]
                feats[y, j] = orig
                expected[y] += np.abs((f_plus - f_minus) / (2 * step)).sum()
        scores = influence_jacobian(params, feats, mats, x)
        denom = np.maximum(1e-6, np.maximum(np.abs(scores), np.abs(expected)))
        assert (np.abs(scores - expected) / denom).max() < 1e-5

    def test_normalized_scores_are_probability(self):
        feats, mats, _, _, params = differentiable_instances(1, start_seed=200)[0]
        dist = influence_distribution(influence_jacobian(params, feats, mats, 2))
        assert abs(dist.sum() - 1.0) < 1e-9
        assert (dist >= 0).all()

    def test_off_self_mass_proportional_to_propagation_row(self):
        # one linear layer: cross-node influence is P[x, y] * sum|W_prop|
        n, d = 5, 3
        rng = np.random.default_rng(7)
        params = init_params(d, d, 2, 1, rng)
        dense = np.array([[0.0, 0.4, 0.6, 0.0, 0.0]] * n)
        dense[:, 0] = 0.0  # keep the diagonal empty for row 0's probe
        mats = [sp.csr_matrix(dense)]
        feats = rng.normal(size=(n, d))
        scores = influence_jacobian(params, feats, mats, x=0,
                                    activation="identity")
        off_self = scores.copy()
        off_self[0] = 0.0
        normalized = off_self / off_self.sum()
        assert np.abs(normalized - dense[0]).max() < 1e-9

    def test_size_guard(self):
        rng = np.random.default_rng(3)
        params = init_params(4, 4, 2, 1, rng)
        feats = rng.normal(size=(3000, 4))
        with pytest.raises(TooLargeError):
            influence_jacobian(params, feats, [sp.csr_matrix((3000, 3000))], 0)


class TestFlowInfluence:
    def test_two_node_sink_only(self):
        dist = flow_influence(paths_of([0, 1], [1, 0]), x=0, num_nodes=2,
                              sink_only=True)
        assert np.array_equal(dist, [0.0, 1.0])

    def test_single_path_intermediate(self):
        dist = flow_influence(paths_of([0, 1, 2]), x=1, num_nodes=3)
        assert np.array_equal(dist, [1.0, 0.0, 0.0])

    def test_revisits_count_per_visit(self):
        dist = flow_influence(paths_of([0, 1, 0, 1], [2, 1, 2, 3]), x=1,
                              num_nodes=4)
        # node 1 conserves twice from source 0 and once from source 2
        assert np.allclose(dist, [2 / 3, 0.0, 1 / 3, 0.0])

    def test_no_conserved_flow(self):
        with pytest.raises(EmptyInfluenceError):
            flow_influence(paths_of([0, 1, 2]), x=0, num_nodes=3)

    def test_sink_only_ignores_intermediate_visits(self):
        # node 1 appears only mid-path, so sink-only sees no conserved flow
        ps = paths_of([0, 1, 2], [3, 1, 0])
        assert flow_influence(ps, x=1, num_nodes=4)[0] == pytest.approx(0.5)
        with pytest.raises(EmptyInfluenceError):
            flow_influence(ps, x=1, num_nodes=4, sink_only=True)


class TestVerifyTheorem:
    def test_one_step_on_small_torus(self):
        report = verify_theorem(3, 3, k=1, samples=100_000, seed=0)
        assert report.tv < 0.02
        # 1-step reference is uniform over the 4 neighbors
        assert sorted(np.flatnonzero(report.ref > 0).tolist()) == \
            sorted(grid_torus(3, 3).neighbors_of(report.x).tolist())
        assert np.allclose(report.ref[report.ref > 0], 0.25)

    def test_desk_scale_three_steps(self):
        report = verify_theorem(10, 10, k=3, samples=200_000, seed=1)
        assert report.tv < 0.05
        assert report.method == "flow-count"
        assert report.x == torus_center(10, 10)

    def test_zero_samples(self):
        with pytest.raises(EmptyInfluenceError):
            verify_theorem(4, 4, k=2, samples=0, seed=0)

    def test_report_dict_round_trip(self, tmp_path):
        report = verify_theorem(3, 3, k=1, samples=20_000, seed=5)
        payload = report.to_dict()
        assert set(payload) == {"x", "k", "samples", "tv", "method", "dist", "ref"}
        out = tmp_path / "report.json"
        report.write_json(out)
        import json
        assert json.loads(out.read_text())["samples"] == 20_000

    def test_more_samples_tighten_tv(self):
        wins = 0
        for seed in range(10):
            small = verify_theorem(10, 10, k=3, samples=50_000, seed=seed)
            large = verify_theorem(10, 10, k=3, samples=400_000, seed=seed)
            wins += large.tv <= small.tv
        assert wins >= 9

    def test_translation_symmetry_of_flow_influence(self):
        rows = cols = 10
        g = grid_torus(rows, cols)
        n = g.num_nodes
        samples = 200_000
        counts = np.full(n, samples // n)
        starts = np.repeat(np.arange(n), counts)
        rng = streams.derive_rng(3, streams.INFLUENCE)
        walks = PathSet(uniform_walks(g, starts, 4, rng))
        x = torus_center(rows, cols)
        di, dj = 3, 4
        perm = np.array([((i + di) % rows) * cols + (j + dj) % cols
                         for i in range(rows) for j in range(cols)])
        y = int(perm[x])
        dist_x = flow_influence(walks, x, n, sink_only=True)
        dist_y = flow_influence(walks, y, n, sink_only=True)
        assert tv_distance(dist_x, dist_y[perm]) < 0.05


class TestTheoremReference:
    def test_flow_influence_approaches_k_step_distribution(self):
        g = grid_torus(10, 10)
        x = torus_center(10, 10)
        ref = k_step_rw_distribution(g, x, 3)
        report = verify_theorem(10, 10, k=3, samples=200_000, seed=2)
        assert np.allclose(report.ref, ref)

    def test_path_dump_feeds_flow_influence(self, tmp_path):
        from flowpath import WalkParams, pathgen, read_paths, write_paths
        g = grid_torus(4, 4)
        ps = pathgen(g, WalkParams(p=1, q=1, path_len=3, restarts=5, seed=6))
        dump = tmp_path / "paths.txt"
        write_paths(ps, dump)
        loaded = read_paths(dump)
        direct = flow_influence(ps, 5, g.num_nodes)
        via_dump = flow_influence(loaded, 5, g.num_nodes)
        assert np.array_equal(direct, via_dump)
