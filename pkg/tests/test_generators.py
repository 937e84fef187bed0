import math

import numpy as np
import pytest

from obbm.core import validate_instance
from obbm.generators import (
    BaseGraph,
    GeneratorConfig,
    GeneratorError,
    RoadGraph,
    SmoothSpec,
    add_noise,
    gen_ba,
    gen_basegraph,
    gen_brgg_theory,
    gen_er,
    gen_geom,
    gen_rideshare,
    generate,
    linf_edges,
)
from obbm.rng import stream


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def road_file(tmp_path):
    return _write(tmp_path / "times.csv", "from_id,to_id,minutes\nD,R1,5\nD,R2,10\nD,R3,20\n")


@pytest.fixture
def base_file(tmp_path):
    rows = ["worker_id,task_id,payoff", "w1,t1,4", "w1,t2,2", "w2,t2,8", "w3,t3,1", "w4,t1,6", "w4,t4,3"]
    return _write(tmp_path / "base.csv", "\n".join(rows) + "\n")


class TestER:
    def test_extremes(self):
        assert len(gen_er(4, 5, 1.0, 0).edges) == 20
        assert gen_er(4, 5, 0.0, 0).edges == ()

    def test_mean_edge_count(self):
        counts = [len(gen_er(20, 20, 0.25, s).edges) for s in range(500)]
        assert np.mean(counts) == pytest.approx(100, abs=10)
        # the sample mean is far tighter than the stated band
        assert abs(np.mean(counts) - 100) < 4 * math.sqrt(400 * 0.25 * 0.75 / 500)

    def test_value_ranges(self):
        inst = gen_er(10, 10, 0.5, 3)
        assert validate_instance(inst) == []
        assert all(0 <= w <= 1 for _, _, w in inst.edges)

    def test_deterministic_json(self):
        assert gen_er(6, 4, 0.5, 9).to_json() == gen_er(6, 4, 0.5, 9).to_json()
        assert gen_er(6, 4, 0.5, 9).to_json() != gen_er(6, 4, 0.5, 10).to_json()


class TestBA:
    def test_complete_when_b_equals_n(self):
        assert len(gen_ba(5, 4, 4, 1).edges) == 20

    def test_online_degrees(self):
        for seed in range(20):
            inst = gen_ba(12, 6, 3, seed)
            assert np.all(inst.adjacency.sum(axis=1) == 3)

    def test_b_too_large(self):
        with pytest.raises(GeneratorError):
            gen_ba(3, 2, 3, 0)

    def test_heavier_tail_than_er(self):
        ba_var, er_var = [], []
        for s in range(500):
            ba_var.append(gen_ba(30, 10, 4, s).adjacency.sum(axis=0).var())
            er_var.append(gen_er(30, 10, 0.4, s).adjacency.sum(axis=0).var())
        assert np.mean(ba_var) > np.mean(er_var)


class TestGeom:
    def test_complete_when_q_is_one(self):
        assert len(gen_geom(4, 3, 1.0, 0).edges) == 12

    def test_edge_count_exact(self):
        for q in (0.1, 0.25, 0.5, 0.75):
            assert len(gen_geom(10, 20, q, 5).edges) == math.ceil(q * 200)

    def test_kept_edges_are_the_heaviest(self):
        for seed in range(20):
            inst = gen_geom(8, 6, 0.3, seed)
            emb = inst.embedding_array
            dist = np.linalg.norm(emb[:8, None, :] - emb[None, 8:, :], axis=2)
            w = 1 - dist / math.sqrt(2)
            kept = inst.adjacency
            assert w[kept].min() >= w[~kept].max()
            np.testing.assert_allclose(inst.weights[kept], w[kept])

    def test_bad_q(self):
        with pytest.raises(GeneratorError):
            gen_geom(2, 2, 0.0, 0)


class TestBrgg:
    def test_large_delta_is_complete(self):
        assert len(gen_brgg_theory(5, 4, 3, 1.0, None, 0).edges) == 20

    def test_point_mass_is_complete(self):
        inst = gen_brgg_theory(5, 4, 2, 0.01, SmoothSpec.point_mass((0.3, 0.3)), 0)
        assert len(inst.edges) == 20

    def test_edge_rule_recomputed(self):
        for seed in range(100):
            inst = gen_brgg_theory(7, 6, 2, 0.2, None, seed)
            emb = inst.embedding_array
            expected = {(t, u) for t in range(7) for u in range(6) if np.max(np.abs(emb[t] - emb[7 + u])) <= 0.2}
            assert {(t, u) for t, u, _ in inst.edges} == expected

    def test_mean_degree(self):
        # E[length of [x - d, x + d] clipped to [0, 1]] = 2d - d^2, per axis
        delta = 0.1
        expected = 50 * (2 * delta - delta**2) ** 2
        degrees = [len(gen_brgg_theory(50, 50, 2, delta, None, s).edges) / 50 for s in range(200)]
        se = np.std(degrees, ddof=1) / math.sqrt(len(degrees))
        assert abs(np.mean(degrees) - expected) < 4 * se

    def test_embeddings_stored(self):
        inst = gen_brgg_theory(3, 2, 4, 0.3, None, 1)
        assert inst.embedding_array.shape == (5, 4)

    def test_smooth_spec(self):
        spec = SmoothSpec.mixture([(1.0, (0.0, 0.0), (0.5, 0.5)), (1.0, (0.25, 0.25), (0.75, 0.75))])
        # overlap of two boxes of area 1/4, each carrying half the mass: 2 + 2
        assert spec.beta == pytest.approx(4.0)
        assert SmoothSpec.uniform().beta == 1.0
        assert math.isinf(SmoothSpec.point_mass((0.5,)).beta)
        pts = spec.sample(stream(0, "t"), 1000, 2)
        assert pts.min() >= 0 and pts.max() <= 0.75
        assert SmoothSpec.from_dict(spec.to_dict()) == spec

    def test_linf_edges(self):
        adj = linf_edges(np.array([[0.0, 0.0]]), np.array([[0.1, 0.05], [0.1, 0.2]]), 0.1)
        np.testing.assert_array_equal(adj, [[True, False]])


class TestRideshare:
    def test_toy_file(self, road_file):
        road = RoadGraph.load(road_file)
        found = False
        for seed in range(200):
            inst = gen_rideshare(road, 3, 1, 15.0, seed)
            if inst.meta["drivers"] != ["D"]:
                continue
            found = True
            got = {inst.meta["riders"][t]: w for t, _, w in inst.edges}
            assert got.keys() == {"R1", "R2"}
            assert got["R1"] == pytest.approx(2 / 3)
            assert got["R2"] == pytest.approx(1 / 3)
            break
        assert found

    def test_boundary_time_kept_with_zero_weight(self, road_file):
        road = RoadGraph.load(road_file)
        for seed in range(200):
            inst = gen_rideshare(road, 3, 1, 20.0, seed)
            if inst.meta["drivers"] == ["D"]:
                got = {inst.meta["riders"][t]: w for t, _, w in inst.edges}
                assert got["R3"] == 0.0
                break

    def test_huge_threshold_complete(self, tmp_path):
        rows = ["from_id,to_id,minutes"] + [f"{a},{b},{i + 1}" for i, (a, b) in enumerate((a, b) for a in "ABCD" for b in "ABCD" if a != b)]
        road = RoadGraph.load(_write(tmp_path / "t.csv", "\n".join(rows) + "\n"))
        inst = gen_rideshare(road, 2, 2, 1000.0, 4)
        assert len(inst.edges) == 4

    def test_errors(self, tmp_path, road_file):
        with pytest.raises(GeneratorError):
            gen_rideshare(road_file, 4, 1, 15.0, 0)
        bad = _write(tmp_path / "bad.csv", "from,to\nA,B\n")
        with pytest.raises(GeneratorError):
            RoadGraph.load(bad)
        bad = _write(tmp_path / "bad2.csv", "from_id,to_id,minutes\nA,B,x\n")
        with pytest.raises(GeneratorError):
            RoadGraph.load(bad)

    def test_nodes_file(self, tmp_path, road_file):
        nodes = _write(tmp_path / "nodes.csv", "id\nD\nR1\nR2\nR3\nX\n")
        assert RoadGraph.load(road_file, nodes).nodes == ["D", "R1", "R2", "R3", "X"]


class TestBaseGraph:
    def test_whole_graph(self, base_file):
        base = BaseGraph.load(base_file)
        inst = gen_basegraph(base, 4, 4, 0)
        workers, tasks = inst.meta["workers"], inst.meta["tasks"]
        got = {(tasks[t], workers[u]): w for t, u, w in inst.edges}
        expected = {("t1", "w1"): 0.5, ("t2", "w1"): 0.25, ("t2", "w2"): 1.0, ("t3", "w3"): 0.125, ("t1", "w4"): 0.75, ("t4", "w4"): 0.375}
        assert got == pytest.approx(expected)

    def test_induced_subgraph(self, base_file):
        base = BaseGraph.load(base_file)
        for seed in range(20):
            inst = gen_basegraph(base, 2, 2, seed)
            workers, tasks = inst.meta["workers"], inst.meta["tasks"]
            expected = {(t, u) for t in range(2) for u in range(2) if (workers[u], tasks[t]) in base.payoff}
            assert {(t, u) for t, u, _ in inst.edges} == expected
            assert all(w <= 1 for _, _, w in inst.edges)

    def test_insufficient_nodes(self, base_file):
        with pytest.raises(GeneratorError):
            gen_basegraph(base_file, 5, 1, 0)


class TestNoise:
    def test_zero_noise_identity(self):
        inst = gen_er(5, 4, 0.5, 2)
        out = add_noise(inst, 0.0, 1)
        assert out.edges == inst.edges and out.arrival_probs == inst.arrival_probs

    def test_outputs_valid(self):
        inst = gen_er(8, 6, 0.7, 2)
        for rho in (0.1, 1.0, 5.0):
            assert validate_instance(add_noise(inst, rho, 3)) == []

    def test_original_untouched(self):
        inst = gen_er(5, 4, 0.5, 2)
        before = inst.to_json()
        add_noise(inst, 0.5, 1)
        assert inst.to_json() == before

    def test_gaussian_moments(self):
        from obbm.core import make_instance

        inst = make_instance([[0.5]], [0.5])
        g = stream(77, "noise-test")
        w = np.array([add_noise(inst, 0.1, g).edges[0][2] for _ in range(10_000)])
        assert w.mean() == pytest.approx(0.5, abs=0.005)
        assert w.std() == pytest.approx(0.1, abs=0.005)

    def test_negative_rho(self):
        with pytest.raises(GeneratorError):
            add_noise(gen_er(2, 2, 0.5, 0), -0.1, 0)


class TestConfig:
    def test_round_trip_and_id(self):
        cfg = GeneratorConfig.from_dict({"family": "er", "m": 20, "n": 10, "p": 0.25})
        assert cfg.family == "ER"
        assert cfg.config_id == "ER(p=0.25)[10x20]"
        assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg

    def test_problems(self):
        assert GeneratorConfig("ER", 2, 2, {"p": 1.5}).problems()
        assert GeneratorConfig("BA", 2, 2, {"b": 3}).problems()
        assert GeneratorConfig("XX", 2, 2, {}).problems() == ["unknown family 'XX'"]
        with pytest.raises(GeneratorError):
            generate(GeneratorConfig("GEOM", 2, 2, {"q": 0}), 0)

    def test_every_family_is_valid(self, road_file, base_file):
        configs = [
            GeneratorConfig("ER", 6, 4, {"p": 0.5}),
            GeneratorConfig("BA", 6, 4, {"b": 2}),
            GeneratorConfig("GEOM", 6, 4, {"q": 0.4}),
            GeneratorConfig("BRGG_THEORY", 6, 4, {"d": 2, "delta": 0.3}),
            GeneratorConfig("RIDESHARE", 2, 1, {"road_file": str(road_file)}),
            GeneratorConfig("BASEGRAPH", 2, 2, {"base_file": str(base_file)}),
        ]
        for cfg in configs:
            for seed in range(5):
                inst = generate(cfg, seed)
                assert validate_instance(inst) == []
                assert generate(cfg, seed).to_json() == inst.to_json()
