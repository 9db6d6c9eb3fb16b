import logging

import numpy as np
import pytest

from cdrec.graph import (GraphError, NodeKind, Relation, SplitSpec,
                         build_graph, degrees, load_relation, parse_edge_file,
                         split_interactions, write_relation)
from cdrec.synthetic import random_tripartite

from conftest import make_relation


def write_lines(tmp_path, lines, name="edges.tsv"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestLoadRelation:
    def test_basic_read_back(self, tmp_path):
        path = write_lines(tmp_path, ["0\t1", "0\t0", "1\t2"])
        rel = load_relation(path, (NodeKind.TUPLE, NodeKind.MEMBER))
        assert rel.edge_count == 3
        assert rel.n_src == 2
        assert rel.n_dst == 3
        assert rel.neighbors(0).tolist() == [0, 1]

    def test_duplicate_lines_dedup_and_report(self, tmp_path, caplog):
        path = write_lines(tmp_path, ["0\t1", "0\t1"])
        parsed = parse_edge_file(path)
        assert parsed.n_duplicates == 1
        with caplog.at_level(logging.WARNING):
            rel = load_relation(path, (NodeKind.TUPLE, NodeKind.MEMBER))
        assert rel.edge_count == 1
        assert any("duplicate" in rec.message for rec in caplog.records)

    def test_non_integer_id_names_line(self, tmp_path):
        path = write_lines(tmp_path, ["a\t1"])
        with pytest.raises(GraphError, match=r":1:"):
            load_relation(path, (NodeKind.TUPLE, NodeKind.MEMBER))

    def test_negative_id_rejected(self, tmp_path):
        path = write_lines(tmp_path, ["0\t1", "-1\t2"])
        with pytest.raises(GraphError, match=r":2:"):
            load_relation(path, (NodeKind.TUPLE, NodeKind.MEMBER))

    def test_empty_file_is_warning_not_error(self, tmp_path, caplog):
        path = write_lines(tmp_path, ["# only a comment"])
        with caplog.at_level(logging.WARNING):
            rel = load_relation(path, (NodeKind.MEMBER, NodeKind.OBJECT))
        assert rel.edge_count == 0
        assert any("empty relation" in rec.message for rec in caplog.records)

    def test_counts_header_fixes_universe(self, tmp_path):
        path = write_lines(tmp_path, ["#counts 5 9 4", "0\t1"])
        rel = load_relation(path, (NodeKind.TUPLE, NodeKind.OBJECT))
        assert (rel.n_src, rel.n_dst) == (5, 4)

    def test_round_trip_through_write(self, tmp_path):
        rel = make_relation([(0, 2), (3, 1)], NodeKind.TUPLE, NodeKind.MEMBER,
                            n_src=5, n_dst=4)
        path = tmp_path / "out.tsv"
        write_relation(rel, path, counts=(5, 4, 0))
        back = load_relation(path, (NodeKind.TUPLE, NodeKind.MEMBER))
        assert back.same_edges(rel)


class TestBuildGraph:
    def test_cold_start_allows_missing_y(self, toy_graph):
        assert toy_graph.Y.edge_count == 0
        assert toy_graph.counts == (2, 3, 0)

    def test_member_degree_unions_interactions_and_affiliations(self):
        Z = make_relation([(0, 0), (1, 0)], NodeKind.TUPLE, NodeKind.MEMBER)
        X = make_relation([(0, 0), (0, 1), (0, 2)], NodeKind.MEMBER,
                          NodeKind.OBJECT)
        graph = build_graph(None, X, Z)
        deg = degrees(graph, "pretrain")
        assert deg.members[0] == 5

    def test_member_count_mismatch_is_error(self):
        X = make_relation([(9, 0)], NodeKind.MEMBER, NodeKind.OBJECT)   # 10 members
        Z = make_relation([(0, 11)], NodeKind.TUPLE, NodeKind.MEMBER)   # 12 members
        with pytest.raises(GraphError, match="member count mismatch"):
            build_graph(None, X, Z)

    def test_kind_mismatch_is_error(self):
        bad = make_relation([(0, 0)], NodeKind.OBJECT, NodeKind.MEMBER)
        Z = make_relation([(0, 0)], NodeKind.TUPLE, NodeKind.MEMBER)
        with pytest.raises(GraphError, match="member -> object"):
            build_graph(None, bad, Z)


class TestDegrees:
    def test_tuple_degree_counts_affiliations(self, toy_graph):
        deg = degrees(toy_graph, "pretrain")
        assert deg.tuples.tolist() == [2, 2]

    def test_finetune_cold_object_has_zero_degree(self):
        Y = make_relation([(0, 0)], NodeKind.TUPLE, NodeKind.OBJECT,
                          n_src=2, n_dst=3)
        X = make_relation([(0, 0)], NodeKind.MEMBER, NodeKind.OBJECT,
                          n_src=1, n_dst=3)
        Z = make_relation([(0, 0), (1, 0)], NodeKind.TUPLE, NodeKind.MEMBER)
        deg = degrees(build_graph(Y, X, Z), "finetune")
        assert deg.objects.tolist() == [1, 0, 0]
        assert deg.tuples.tolist() == [1, 0]

    def test_member_with_only_interactions(self):
        Z = make_relation([(0, 0)], NodeKind.TUPLE, NodeKind.MEMBER,
                          n_src=1, n_dst=2)
        X = make_relation([(1, 0), (1, 1)], NodeKind.MEMBER, NodeKind.OBJECT)
        deg = degrees(build_graph(None, X, Z), "pretrain")
        assert deg.members[1] == 2

    def test_recomputed_degrees_match_edge_counts(self):
        # Degrees derived from CSR pointers must agree with raw edge counting.
        for seed in range(100):
            graph = random_tripartite(5 + seed % 40, 8 + seed % 30,
                                      6 + seed % 25, 2.5, seed)
            deg = degrees(graph, "pretrain")
            z_edges = graph.Z.edges()
            x_edges = graph.X.edges()
            for m in range(graph.n_members):
                expected = int((z_edges[:, 1] == m).sum() + (x_edges[:, 0] == m).sum())
                assert deg.members[m] == expected
            assert deg.tuples.sum() + deg.objects.sum() + deg.members.sum() == \
                2 * (graph.Z.edge_count + graph.X.edge_count)


class TestTranspose:
    def test_round_trip_identity(self):
        for seed in range(20):
            graph = random_tripartite(10, 12, 9, 3.0, seed)
            for rel in (graph.Y, graph.X, graph.Z):
                back = rel.transpose().transpose()
                assert back.same_edges(rel)


class TestSplit:
    def make_y(self, n_edges=100):
        rng = np.random.default_rng(1)
        pairs = set()
        while len(pairs) < n_edges:
            pairs.add((int(rng.integers(0, 30)), int(rng.integers(0, 40))))
        return make_relation(sorted(pairs), NodeKind.TUPLE, NodeKind.OBJECT)

    def test_five_twenty_five_split(self):
        y = self.make_y(100)
        spec = SplitSpec(train_fraction=0.05, test_fraction=0.20,
                         valid_fraction=0.05, seed=11)
        train, valid, test, rest = split_interactions(y, spec)
        assert [p.edge_count for p in (train, valid, test, rest)] == [5, 5, 20, 70]

    def test_full_train_assignment(self):
        y = self.make_y(40)
        train, valid, test, rest = split_interactions(
            y, SplitSpec(1.0, 0.0, 0.0, seed=2))
        assert train.same_edges(y)
        assert valid.edge_count == test.edge_count == rest.edge_count == 0

    def test_same_seed_same_partition(self):
        y = self.make_y(64)
        spec = SplitSpec(0.1, 0.3, 0.1, seed=99)
        first = split_interactions(y, spec)
        second = split_interactions(y, spec)
        for a, b in zip(first, second):
            assert a.same_edges(b)

    def test_partition_is_exact(self):
        for seed in range(10):
            y = self.make_y(83)
            parts = split_interactions(y, SplitSpec(0.07, 0.33, 0.11, seed=seed))
            total = sum(p.edge_count for p in parts)
            assert total == y.edge_count
            stacked = np.vstack([p.edges() for p in parts if p.edge_count])
            assert np.unique(stacked, axis=0).shape[0] == y.edge_count

    def test_overfull_fractions_rejected(self):
        y = self.make_y(10)
        with pytest.raises(GraphError, match="sum"):
            split_interactions(y, SplitSpec(0.6, 0.3, 0.2, seed=0))
