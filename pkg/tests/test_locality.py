import json
import math

import numpy as np
import pytest
from scipy import stats

from obbm.core import Instance
from obbm.exact_dp import vtg
from obbm.generators import SmoothSpec, gen_brgg_theory
from obbm.locality import (
    LocalityError,
    LocalityParams,
    Partition,
    cell_index,
    component_vtg,
    cut_rate,
    decompose,
    derived_k,
    load_bound,
    max_loads,
    mc_local_estimate,
    sample_partition,
    verify_cut_probability,
    verify_local_approx,
    verify_max_load,
    verify_vtg_sandwich,
)
from obbm.rng import stream

CENTER = SmoothSpec.mixture([(1.0, (0.4, 0.4), (0.6, 0.6))])


def two_edge_instance():
    # online 0 - offline 0 near the origin, online 1 - offline 1 near (0.5, 0.5)
    emb = ((0.1, 0.1), (0.5, 0.5), (0.12, 0.1), (0.5, 0.52))
    return Instance(2, 2, ((0, 0, 1.0), (1, 1, 1.0)), (0.5, 0.5), emb, {"delta": 0.05})


class TestPartition:
    def test_single_cell(self):
        part = sample_partition(1, 2, 3)
        pts = np.random.default_rng(0).random((50, 2))
        assert np.all(cell_index(part, pts) == 0)

    def test_boundaries(self):
        assert Partition(2, 1, (0.25,)).boundaries() == [0.25, 0.75]

    def test_shift_range_enforced(self):
        with pytest.raises(LocalityError):
            Partition(2, 1, (0.6,))
        with pytest.raises(LocalityError):
            Partition(0, 1, (0.0,))
        with pytest.raises(LocalityError):
            sample_partition(0, 1, 0)

    def test_shift_is_uniform(self):
        g = stream(5, "ks")
        s = np.array([sample_partition(4, 1, g).s[0] for _ in range(100_000)])
        assert s.min() >= 0 and s.max() <= 0.25
        assert stats.kstest(s, stats.uniform(0, 0.25).cdf).pvalue > 0.01

    def test_deterministic(self):
        assert sample_partition(3, 2, 8) == sample_partition(3, 2, 8)


class TestCellIndex:
    part = Partition(2, 1, (0.25,))

    def test_same_cell(self):
        assert cell_index(self.part, [0.3]) == cell_index(self.part, [0.5])

    def test_different_cells(self):
        assert cell_index(self.part, [0.2]) != cell_index(self.part, [0.3])

    def test_wrap_around(self):
        assert cell_index(self.part, [0.1]) == cell_index(self.part, [0.9])
        assert cell_index(self.part, [0.1]) != cell_index(self.part, [0.5])

    def test_vector_form(self):
        part = Partition(4, 2, (0.1, 0.0))
        np.testing.assert_array_equal(cell_index(part, [[0.05, 0.3], [0.5, 0.99]]), [[3, 1], [1, 3]])


class TestDecompose:
    def test_k1_keeps_everything(self):
        inst = two_edge_instance()
        dg = decompose(inst, Partition(1, 2, (0.0, 0.0)))
        assert dg.edges == inst.edges
        assert dg.components == [((0,), (0,)), ((1,), (1,))]

    def test_one_cell(self):
        inst = gen_brgg_theory(6, 6, 2, 0.5, SmoothSpec.mixture([(1.0, (0.3, 0.3), (0.4, 0.4))]), 1)
        dg = decompose(inst, Partition(2, 2, (0.0, 0.0)))
        assert dg.edges == inst.edges

    def test_surviving_edges_recheck(self):
        for seed in range(30):
            inst = gen_brgg_theory(8, 8, 2, 0.15, None, seed)
            part = sample_partition(3, 2, seed)
            dg = decompose(inst, part)
            emb = inst.embedding_array
            kept = set(dg.edges)
            assert kept <= set(inst.edges)
            for t, u, w in inst.edges:
                same = bool(np.all(cell_index(part, emb[t]) == cell_index(part, emb[8 + u])))
                assert ((t, u, w) in kept) == same
            nodes_on = [t for c in dg.components for t in c[0]]
            nodes_off = [u for c in dg.components for u in c[1]]
            assert len(nodes_on) == len(set(nodes_on)) and len(nodes_off) == len(set(nodes_off))

    def test_requires_embeddings(self):
        with pytest.raises(LocalityError):
            decompose(Instance(1, 1, (), (0.5,)), Partition(1, 1, (0.0,)))


class TestComponentVtg:
    def test_two_disjoint_edges(self):
        dg = decompose(two_edge_instance(), Partition(1, 2, (0.0, 0.0)))
        assert component_vtg(dg) == pytest.approx(1.0)

    def test_empty(self):
        inst = Instance(2, 2, (), (0.5, 0.5), ((0.1,), (0.2,), (0.3,), (0.4,)))
        assert component_vtg(decompose(inst, Partition(1, 1, (0.0,)))) == 0.0

    def test_equals_whole_graph_value(self):
        for seed in range(40):
            inst = gen_brgg_theory(8, 6, 2, 0.3, None, seed)
            dg = decompose(inst, sample_partition(2, 2, seed))
            assert component_vtg(dg) == pytest.approx(vtg(dg.instance()), abs=1e-9)
            assert component_vtg(dg) <= vtg(inst) + 1e-9


class TestParams:
    def test_derived_k(self):
        assert derived_k(0.25, 2, 0.25 / 8) == 2
        assert derived_k(0.2, 1, 0.1) == 1
        assert LocalityParams(0.25, 0.1, 10, 0.03, 2).k == 3

    def test_min_samples(self):
        assert LocalityParams.min_samples(0.25, 0.1) == math.ceil(32 * math.log(40))
        assert not LocalityParams(0.25, 0.1, 10, 0.03, 2).certifiable

    def test_validation(self):
        with pytest.raises(LocalityError):
            LocalityParams(0.6, 0.1, 10, 0.1, 1)
        with pytest.raises(LocalityError):
            LocalityParams(0.25, 0.0, 10, 0.1, 1)


class TestMcEstimate:
    def test_k1_exact(self):
        inst = gen_brgg_theory(6, 6, 2, 0.2, None, 2)
        est = mc_local_estimate(inst, LocalityParams(0.25, 0.1, 5, 0.2, 2), 0)
        assert est.estimate == pytest.approx(vtg(inst), abs=1e-12)

    def test_no_edges(self):
        inst = Instance(2, 2, (), (0.5, 0.5), ((0.1, 0.1),) * 4)
        assert mc_local_estimate(inst, LocalityParams(0.25, 0.1, 5, 0.05, 2), 0).estimate == 0.0

    def test_sandwiched(self):
        inst = gen_brgg_theory(6, 6, 2, 0.06, CENTER, 3)
        est = mc_local_estimate(inst, LocalityParams(0.25, 0.1, 200, 0.06, 2), 1)
        assert min(est.values) - 1e-12 <= est.estimate <= vtg(inst) + 1e-9
        assert est.skipped == 0

    def test_oversized_components_are_skipped(self):
        inst = gen_brgg_theory(4, 4, 1, 1.0, None, 0)
        est = mc_local_estimate(inst, LocalityParams(0.25, 0.1, 3, 1.0, 1), 0, dp_limit=2)
        assert est.skipped == 3 and est.values == [] and math.isnan(est.estimate)


class TestCutProbability:
    def test_one_dim_closed_form(self):
        rep = verify_cut_probability(0.1, 1, 0.4, 100_000, 0)
        assert rep.details["k"] == 2
        assert rep.details["closed_form"] == pytest.approx(0.2)
        assert rep.passed

    def test_coincident_points(self):
        x = np.random.default_rng(0).random((1000, 2))
        assert cut_rate(3, 2, x, x.copy(), np.random.default_rng(1)) == 0.0

    def test_two_dims(self):
        rep = verify_cut_probability(0.2 / 8, 2, 0.2, 100_000, 1)
        assert rep.statistic <= rep.bound and rep.passed

    def test_parameter_violation(self):
        with pytest.raises(LocalityError):
            verify_cut_probability(0.2, 1, 0.1, 10, 0)

    def test_report_json(self):
        d = verify_cut_probability(0.05, 1, 0.25, 1000, 0).to_dict()
        assert {"lemma", "params", "trials", "statistic", "bound", "pass"} <= d.keys()
        json.dumps(d)


class TestMaxLoad:
    def test_single_point(self):
        assert np.all(max_loads(1, 2, 1, SmoothSpec.uniform(), 10, 0) == 1)

    def test_point_mass_piles_up(self):
        loads = max_loads(50, 2, 8, SmoothSpec.point_mass((0.3, 0.7)), 20, 0)
        assert np.all(loads == 50)

    def test_requires_enough_cells(self):
        with pytest.raises(LocalityError):
            verify_max_load(100, 2, 5, SmoothSpec.uniform(), 5, 0)

    def test_load_bound(self):
        assert math.isinf(load_bound(2, 1.0))
        assert load_bound(4096, 1.0) == pytest.approx(3 * math.log(4096) / math.log(math.log(4096)))

    def test_counts_match_direct_binning(self):
        rng = stream(3, "max-load")
        loads = max_loads(200, 2, 16, SmoothSpec.uniform(), 3, 3, batch=3)
        pts = rng.random((3 * 200, 2)).reshape(3, 200, 2)
        s = rng.random((3, 1, 2)) / 16
        for b in range(3):
            part = Partition(16, 2, tuple(s[b, 0]))
            cells = cell_index(part, pts[b])
            _, counts = np.unique(cells, axis=0, return_counts=True)
            assert loads[b] == counts.max()


class TestSandwich:
    def test_k1_equality(self):
        inst = gen_brgg_theory(5, 5, 2, 0.3, None, 4)
        rep = verify_vtg_sandwich(inst, 0.25, 20, 0, dist=0.3)
        assert rep.details["k"] == 1
        assert rep.statistic == pytest.approx(vtg(inst))
        assert rep.passed

    def test_single_edge_closed_form(self):
        emb = ((0.30, 0.50), (0.33, 0.52))
        inst = Instance(1, 1, ((0, 0, 1.0),), (0.8,), emb, {"delta": 0.03})
        trials = 4000
        rep = verify_vtg_sandwich(inst, 0.25, trials, 2)
        k = rep.details["k"]
        keep = (1 - k * 0.03) * (1 - k * 0.02)
        assert rep.passed
        se = 0.8 * math.sqrt(keep * (1 - keep) / trials)
        assert rep.statistic == pytest.approx(keep * 0.8, abs=4 * se)

    def test_random_brgg(self):
        inst = gen_brgg_theory(6, 6, 2, 0.06, CENTER, 7)
        rep = verify_vtg_sandwich(inst, 0.25, 400, 7)
        assert rep.passed
        assert rep.details["upper_violations"] == 0 and rep.details["edge_sum_violations"] == 0

    def test_size_cap(self):
        with pytest.raises(LocalityError):
            verify_vtg_sandwich(gen_brgg_theory(11, 2, 2, 0.1, None, 0), 0.25, 5, 0)


class TestLocalApproximation:
    def test_failure_rate_within_delta(self):
        rep = verify_local_approx(5, 5, 2, 0.06, 0.25, 0.1, 500, 3, CENTER)
        assert rep.params["ell"] >= LocalityParams.min_samples(0.25, 0.1)
        assert rep.passed, rep.to_dict()
