import numpy as np
import pytest

from cdrec.graph import NodeKind, build_graph, degrees
from cdrec.metrics import (FINETUNE_SCHEMAS, PRETRAIN_SCHEMAS, MetricSet,
                           bruteforce_metrics, build_colsums,
                           build_consistency, build_member_metrics,
                           build_tuple_metrics, delta, export_metrics,
                           import_metrics, scenario_labels)
from cdrec.synthetic import random_tripartite

from conftest import make_relation

# Frozen from independent evaluation of the coefficient formula.
DELTA_3_1 = 0.4714045207910317          # (1/3) * sqrt(4/2)
DELTA_1_2 = 0.816496580927726           # sqrt(2/3)
S_T1 = DELTA_1_2 + 0.5                  # toy graph column mass of t1


class TestDelta:
    def test_unit_degrees(self):
        assert delta(1, 1) == 1.0

    def test_equal_degrees_reduce_to_reciprocal(self):
        assert delta(4, 4) == 0.25

    def test_uneven_degrees(self):
        assert delta(3, 1) == pytest.approx(DELTA_3_1, abs=1e-15)

    def test_zero_midpoint_guard(self):
        assert delta(0, 5) == 0.0


class TestConsistencyToyGraph:
    def toy_parts(self, toy_graph):
        deg = degrees(toy_graph, "pretrain")
        Z = toy_graph.Z
        return Z, Z.transpose(), deg

    def test_shared_midpoint_pair(self, toy_graph):
        Z, Zt, deg = self.toy_parts(toy_graph)
        C = build_consistency(Z, Zt, deg.members, deg.tuples)
        assert C[0, 1] == pytest.approx(0.5, abs=1e-12)

    def test_diagonal_equals_column_mass(self, toy_graph):
        Z, Zt, deg = self.toy_parts(toy_graph)
        C = build_consistency(Z, Zt, deg.members, deg.tuples)
        S = build_colsums(Zt, deg.members, deg.tuples)
        assert C[0, 0] == pytest.approx(DELTA_1_2 + 0.5, abs=1e-12)
        # exact identity, not just approximate
        assert C[0, 0] == S[0]
        assert C[1, 1] == S[1]

    def test_no_common_midpoint_no_entry(self):
        Z = make_relation([(0, 0), (1, 1)], NodeKind.TUPLE, NodeKind.MEMBER)
        deg_members = np.array([1, 1])
        deg_tuples = np.array([1, 1])
        C = build_consistency(Z, Z.transpose(), deg_members, deg_tuples)
        assert C[0, 1] == 0.0
        assert C.nnz == 2  # only the diagonals

    def test_colsum_values(self, toy_graph):
        Z, Zt, deg = self.toy_parts(toy_graph)
        S = build_colsums(Zt, deg.members, deg.tuples)
        assert S[1] == pytest.approx(S_T1, abs=1e-12)
        C = build_consistency(Z, Zt, deg.members, deg.tuples)
        assert S[1] - C[0, 1] == pytest.approx(DELTA_1_2, abs=1e-12)

    def test_isolated_column_has_zero_mass(self):
        Z = make_relation([(0, 0)], NodeKind.TUPLE, NodeKind.MEMBER,
                          n_src=2, n_dst=1)
        S = build_colsums(Z.transpose(), np.array([1]), np.array([1, 0]))
        assert S[1] == 0.0

    def test_asymmetry_with_uneven_endpoints(self, toy_graph_lopsided):
        deg = degrees(toy_graph_lopsided, "pretrain")
        Z = toy_graph_lopsided.Z
        C = build_consistency(Z, Z.transpose(), deg.members, deg.tuples)
        assert C[0, 1] != C[1, 0]
        assert C[0, 1] == pytest.approx(0.5 * np.sqrt(3.0 / 4.0), abs=1e-12)
        assert C[1, 0] == pytest.approx(0.5, abs=1e-12)


class TestStageBuilders:
    def test_member_metrics_require_both_relations(self, toy_graph):
        with pytest.raises(ValueError, match="non-empty"):
            build_member_metrics(toy_graph)  # toy graph has no X edges

    def test_member_metrics_match_oracle(self):
        graph = random_tripartite(8, 10, 9, 3.0, seed=5)
        mset = build_member_metrics(graph)
        C, D = bruteforce_metrics(graph, "pretrain")
        np.testing.assert_allclose(mset.C.toarray(), C, atol=1e-10)
        dense_d = np.vstack([mset.discrepancy_row(v) for v in range(mset.n_nodes)])
        np.testing.assert_allclose(dense_d, D, atol=1e-10)

    def test_tmo_empty_when_members_bridge_nothing(self):
        # members attached to tuples never touch objects and vice versa
        Z = make_relation([(0, 0)], NodeKind.TUPLE, NodeKind.MEMBER,
                          n_src=1, n_dst=2)
        X = make_relation([(1, 0)], NodeKind.MEMBER, NodeKind.OBJECT)
        mset = build_member_metrics(build_graph(None, X, Z))
        assert mset.blocks["TMO"].C.nnz == 0

    def test_group_scenario_labels(self):
        assert scenario_labels("pretrain", "group") == ("GUG", "GUI", "IUG", "IUI")
        assert scenario_labels("finetune", "group") == ("GIG", "GI", "IG", "IGI")
        assert scenario_labels("pretrain", "bundle") == ("BIB", "BIU", "UIB", "UIU")

    def test_single_edge_one_hop_values(self):
        Y = make_relation([(0, 0)], NodeKind.TUPLE, NodeKind.OBJECT)
        mset = build_tuple_metrics(Y)
        assert mset.blocks["TO"].C[0, 0] == pytest.approx(1.0, abs=1e-15)
        a, b = mset.blocks["TO"].factors
        assert a[0] * b[0] == pytest.approx(1.0, abs=1e-15)
        # the dense one-hop discrepancy covers the observed pair as well
        assert mset.discrepancy(0, 1) == pytest.approx(1.0, abs=1e-15)

    def test_zero_degree_tuple_has_empty_row_and_factor(self):
        Y = make_relation([(0, 0)], NodeKind.TUPLE, NodeKind.OBJECT,
                          n_src=2, n_dst=1)
        mset = build_tuple_metrics(Y)
        assert mset.blocks["TOT"].C[1].nnz == 0
        assert mset.blocks["TO"].factors[0][1] == 0.0

    def test_oto_diagonal_identity(self):
        Y = make_relation([(0, 0), (1, 0), (1, 1)], NodeKind.TUPLE,
                          NodeKind.OBJECT)
        mset = build_tuple_metrics(Y)
        oto = mset.blocks["OTO"]
        for o in range(2):
            assert oto.C[o, o] == oto.colsum[o]

    def test_tuple_metrics_match_oracle(self):
        graph = random_tripartite(9, 7, 8, 2.5, seed=3)
        mset = build_tuple_metrics(graph.Y)
        C, D = bruteforce_metrics(graph, "finetune")
        np.testing.assert_allclose(mset.C.toarray(), C, atol=1e-10)
        dense_d = np.vstack([mset.discrepancy_row(v) for v in range(mset.n_nodes)])
        np.testing.assert_allclose(dense_d, D, atol=1e-10)

    def test_tuple_metrics_reject_empty_y(self):
        Y = make_relation(np.zeros((0, 2)), NodeKind.TUPLE, NodeKind.OBJECT,
                          n_src=3, n_dst=3)
        with pytest.raises(ValueError, match="non-empty"):
            build_tuple_metrics(Y)


class TestOracleProperties:
    def test_randomized_equivalence(self):
        for seed in range(50):
            graph = random_tripartite(20, 20, 20, 3.0, seed)
            for stage in ("pretrain", "finetune"):
                mset = (build_member_metrics(graph) if stage == "pretrain"
                        else build_tuple_metrics(graph.Y))
                C, D = bruteforce_metrics(graph, stage)
                np.testing.assert_allclose(mset.C.toarray(), C, atol=1e-10,
                                           err_msg=f"seed {seed} {stage} C")
                dense_d = np.vstack([mset.discrepancy_row(v)
                                     for v in range(mset.n_nodes)])
                np.testing.assert_allclose(dense_d, D, atol=1e-10,
                                           err_msg=f"seed {seed} {stage} D")

    def test_empty_relations_mean_zero_metrics(self):
        graph = random_tripartite(6, 6, 6, 2.0, seed=0, with_y=False)
        C, D = bruteforce_metrics(graph, "finetune")
        assert not C.any() and not D.any()

    def test_colsum_identity_on_samples(self):
        rng = np.random.default_rng(0)
        for seed in range(5):
            graph = random_tripartite(25, 30, 25, 3.0, seed)
            for mset in (build_member_metrics(graph),
                         build_tuple_metrics(graph.Y)):
                v1 = rng.integers(0, mset.n_nodes, size=10_000)
                v2 = rng.integers(0, mset.n_nodes, size=10_000)
                for a, b in zip(v1[:200], v2[:200]):
                    d = mset.discrepancy(int(a), int(b))
                    assert d >= 0.0
                rows = np.unique(v1)
                dense = np.vstack([mset.discrepancy_row(int(v)) for v in rows])
                assert dense.min() >= 0.0

    def test_diagonal_identity_exact(self):
        for seed in range(10):
            graph = random_tripartite(15, 18, 12, 3.0, seed)
            for mset in (build_member_metrics(graph),
                         build_tuple_metrics(graph.Y)):
                diag = mset.C.diagonal()
                np.testing.assert_array_equal(diag[diag > 0],
                                              mset.colsum[diag > 0])
                for v in range(mset.n_nodes):
                    assert mset.discrepancy(v, v) == 0.0


class TestExportImport:
    def test_round_trip_bit_exact(self, tmp_path):
        graph = random_tripartite(10, 12, 9, 3.0, seed=8)
        for mset in (build_member_metrics(graph),
                     build_tuple_metrics(graph.Y)):
            out = tmp_path / mset.stage
            export_metrics(mset, out)
            back = import_metrics(out)
            assert back.stage == mset.stage
            assert (back.C != mset.C).nnz == 0
            np.testing.assert_array_equal(back.colsum, mset.colsum)
            if mset.stage == "finetune":
                np.testing.assert_array_equal(back.cross_a, mset.cross_a)
                np.testing.assert_array_equal(back.cross_b, mset.cross_b)

    def test_toy_export_carries_expected_line(self, toy_graph, tmp_path):
        # TMT entry (t0, t1) must serialize c = 0.5
        deg = degrees(toy_graph, "pretrain")
        Z = toy_graph.Z
        C = build_consistency(Z, Z.transpose(), deg.members, deg.tuples)
        S = build_colsums(Z.transpose(), deg.members, deg.tuples)
        from cdrec.metrics import MetricBlock
        import scipy.sparse as sp
        empty_o = sp.csr_matrix((0, 0))
        blocks = {
            "TMT": MetricBlock("TMT", C, colsum=S),
            "TMO": MetricBlock("TMO", sp.csr_matrix((2, 0)), colsum=np.zeros(0)),
            "OMT": MetricBlock("OMT", sp.csr_matrix((0, 2)), colsum=S),
            "OMO": MetricBlock("OMO", empty_o, colsum=np.zeros(0)),
        }
        mset = MetricSet("pretrain", 2, 0, blocks)
        export_metrics(mset, tmp_path / "toy")
        lines = (tmp_path / "toy" / "metrics.coo").read_text().splitlines()
        assert any(line.startswith("TMT 0 1 0.5 ") for line in lines)

    def test_empty_block_keeps_manifest(self, tmp_path):
        Y = make_relation([(0, 0)], NodeKind.TUPLE, NodeKind.OBJECT)
        mset = build_tuple_metrics(Y)
        export_metrics(mset, tmp_path / "m")
        manifest = (tmp_path / "m" / "manifest.txt").read_text()
        assert "stage=finetune" in manifest
        assert "blocks=TOT,TO,OT,OTO" in manifest


class TestSchemas:
    def test_block_layout_covers_joint_space(self):
        graph = random_tripartite(7, 9, 6, 2.0, seed=1)
        pre = build_member_metrics(graph)
        fine = build_tuple_metrics(graph.Y)
        for mset, schemas in ((pre, PRETRAIN_SCHEMAS), (fine, FINETUNE_SCHEMAS)):
            assert tuple(mset.blocks) == schemas
            nt, no = mset.n_tuples, mset.n_objects
            assert mset.blocks[schemas[0]].shape == (nt, nt)
            assert mset.blocks[schemas[1]].shape == (nt, no)
            assert mset.blocks[schemas[2]].shape == (no, nt)
            assert mset.blocks[schemas[3]].shape == (no, no)
            assert mset.C.shape == (nt + no, nt + no)
