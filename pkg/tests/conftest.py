import numpy as np
import pytest

from cdrec.graph import NodeKind, Relation, build_graph


def make_relation(pairs, src_kind, dst_kind, n_src=None, n_dst=None):
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return Relation.from_edges(arr, src_kind, dst_kind, n_src, n_dst)


@pytest.fixture
def toy_graph():
    """Two tuples sharing member 1; no member interactions.

    t0 -> {m0, m1}, t1 -> {m1, m2}.  Pretrain degrees: members (1, 2, 1),
    tuples (2, 2).
    """
    Z = make_relation([(0, 0), (0, 1), (1, 1), (1, 2)],
                      NodeKind.TUPLE, NodeKind.MEMBER)
    X = make_relation(np.zeros((0, 2)), NodeKind.MEMBER, NodeKind.OBJECT,
                      n_src=3, n_dst=0)
    return build_graph(None, X, Z)


@pytest.fixture
def toy_graph_lopsided():
    """Same as toy_graph but t1 has a third member, so endpoint degrees
    differ and consistency becomes visibly asymmetric."""
    Z = make_relation([(0, 0), (0, 1), (1, 1), (1, 2), (1, 3)],
                      NodeKind.TUPLE, NodeKind.MEMBER)
    X = make_relation(np.zeros((0, 2)), NodeKind.MEMBER, NodeKind.OBJECT,
                      n_src=4, n_dst=0)
    return build_graph(None, X, Z)
