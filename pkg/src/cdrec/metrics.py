"""Consistency/discrepancy metric precomputation.

For a node pair (v1, v2) sharing midpoints of one kind, the consistency is

    c[v1, v2] = sum over m in N(v1) & N(v2) of delta(deg_m, deg_v2)

and the discrepancy sums the same coefficient over midpoints adjacent to v2
but *not* to v1.  Because delta factors as

    delta(deg_m, deg_v2) = w(deg_m) * u(deg_v2),
    w(d) = sqrt(d + 1) / d          (0 when d == 0)
    u(d) = 1 / sqrt(d + 1)

the discrepancy never needs to be materialized: with the per-column mass
S[v2] = sum over m in N(v2) of delta(deg_m, deg_v2), we have

    d[v1, v2] = S[v2] - c[v1, v2]        (two-hop schemas)

and for the one-hop schemas of the fine-tuning stage the dense discrepancy
is the rank-1 product a[v1] * b[v2] with a = w(deg), b = u(deg).

Everything is computed by sparse path aggregation; there is no dense matrix
product anywhere, so the cost is proportional to the number of two-hop path
instances.  Accumulation happens in ascending midpoint order, which makes
the results reproducible and makes c[v, v] bit-identical to S[v].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import DegreeTable, Relation, TripartiteGraph, degrees

PRETRAIN_SCHEMAS = ("TMT", "TMO", "OMT", "OMO")
FINETUNE_SCHEMAS = ("TOT", "TO", "OT", "OTO")

# Role letters per recommendation scenario: groups of users consuming items,
# or bundles of items consumed by users.
_SCENARIO_ROLES = {
    "group": {"T": "G", "M": "U", "O": "I"},
    "bundle": {"T": "B", "M": "I", "O": "U"},
}


def scenario_labels(stage: str, scenario: str) -> tuple[str, ...]:
    """Schema labels translated into a scenario's own vocabulary."""
    roles = _SCENARIO_ROLES[scenario]
    schemas = PRETRAIN_SCHEMAS if stage == "pretrain" else FINETUNE_SCHEMAS
    return tuple("".join(roles[ch] for ch in schema) for schema in schemas)


def delta(deg_mid: int, deg_end: int) -> float:
    """Degree coefficient of one two-hop path instance.

    Zero-degree midpoints cannot lie on any path; the value is defined as 0
    for totality.
    """
    if deg_mid <= 0:
        return 0.0
    return (1.0 / deg_mid) * math.sqrt((deg_mid + 1) / (deg_end + 1))


def midpoint_weights(deg: np.ndarray) -> np.ndarray:
    """w(d) = sqrt(d + 1) / d, with w(0) = 0."""
    deg = np.asarray(deg, dtype=np.float64)
    out = np.zeros_like(deg)
    np.divide(np.sqrt(deg + 1.0), deg, out=out, where=deg > 0)
    return out


def endpoint_weights(deg: np.ndarray) -> np.ndarray:
    """u(d) = 1 / sqrt(d + 1)."""
    deg = np.asarray(deg, dtype=np.float64)
    return 1.0 / np.sqrt(deg + 1.0)


def build_consistency(
    src_to_mid: Relation,
    mid_to_dst: Relation,
    mid_degrees: np.ndarray,
    dst_degrees: np.ndarray,
) -> sp.csr_matrix:
    """Sparse consistency block for one two-hop schema.

    Enumerates all path instances src -> mid -> dst, scattering w(deg_mid)
    into (src, dst) cells, then scales each column by u(deg_dst).  Entries
    exist only where the common-midpoint set is non-empty.
    """
    if src_to_mid.n_dst != mid_to_dst.n_src:
        raise ValueError("midpoint universes of the two relations differ")
    n_src, n_dst = src_to_mid.n_src, mid_to_dst.n_dst
    mid_to_src = src_to_mid.transpose()

    w = midpoint_weights(mid_degrees)
    u = endpoint_weights(dst_degrees)

    na = mid_to_src.out_degrees          # src fan-in per midpoint
    nb = mid_to_dst.out_degrees          # dst fan-out per midpoint
    pair_counts = na * nb
    total = int(pair_counts.sum())
    if total == 0:
        return sp.csr_matrix((n_src, n_dst), dtype=np.float64)

    # Flat enumeration of every (mid, src-slot, dst-slot) combination.
    mid_of = np.repeat(np.arange(len(pair_counts), dtype=np.int64), pair_counts)
    offsets = np.zeros(len(pair_counts) + 1, dtype=np.int64)
    np.cumsum(pair_counts, out=offsets[1:])
    within = np.arange(total, dtype=np.int64) - offsets[mid_of]
    nb_of = nb[mid_of]
    src_slot = within // nb_of
    dst_slot = within - src_slot * nb_of
    rows = mid_to_src.indices[mid_to_src.indptr[mid_of] + src_slot]
    cols = mid_to_dst.indices[mid_to_dst.indptr[mid_of] + dst_slot]
    vals = w[mid_of]

    # Coalesce duplicates.  lexsort is stable, so entries of one (row, col)
    # cell stay in ascending-midpoint order and reduceat adds them
    # left-to-right -- the same order build_colsums uses.
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    boundary = np.empty(rows.shape[0], dtype=bool)
    boundary[0] = True
    np.not_equal(rows[1:], rows[:-1], out=boundary[1:])
    np.logical_or(boundary[1:], cols[1:] != cols[:-1], out=boundary[1:])
    starts = np.flatnonzero(boundary)
    summed = np.add.reduceat(vals, starts)
    rows, cols = rows[starts], cols[starts]
    summed *= u[cols]

    counts = np.bincount(rows, minlength=n_src)
    indptr = np.zeros(n_src + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return sp.csr_matrix((summed, cols, indptr), shape=(n_src, n_dst))


def build_colsums(mid_to_dst: Relation, mid_degrees: np.ndarray,
                  dst_degrees: np.ndarray) -> np.ndarray:
    """Per-column total path mass S[v2] = sum over m in N(v2) of delta(m, v2).

    Every two-hop discrepancy follows as S[v2] - c[v1, v2] >= 0.
    """
    w = midpoint_weights(mid_degrees)
    contrib = np.repeat(w, mid_to_dst.out_degrees)
    sums = np.bincount(mid_to_dst.indices, weights=contrib, minlength=mid_to_dst.n_dst)
    return sums * endpoint_weights(dst_degrees)


@dataclass
class MetricBlock:
    """One labeled block of the stage metric matrix."""

    schema: str
    C: sp.csr_matrix
    colsum: np.ndarray | None = None              # two-hop blocks
    factors: tuple[np.ndarray, np.ndarray] | None = None  # one-hop rank-1 (a, b)

    @property
    def shape(self) -> tuple[int, int]:
        return self.C.shape


class MetricSet:
    """All four blocks of one stage over the joint tuple+object index space.

    Nodes are indexed 0..n_tuples-1 (tuples) then n_tuples..N-1 (objects).
    ``C`` is the joint sparse consistency matrix.  Discrepancies are implicit:
    same-kind pairs (and every pretrain pair) use the colsum identity, the
    fine-tuning cross-kind pairs use the rank-1 factors.
    """

    def __init__(self, stage: str, n_tuples: int, n_objects: int,
                 blocks: dict[str, MetricBlock]):
        if stage not in ("pretrain", "finetune"):
            raise ValueError(f"unknown stage {stage!r}")
        self.stage = stage
        self.n_tuples = n_tuples
        self.n_objects = n_objects
        self.n_nodes = n_tuples + n_objects
        self.blocks = blocks

        tt, to, ot, oo = (blocks[s] for s in
                          (PRETRAIN_SCHEMAS if stage == "pretrain" else FINETUNE_SCHEMAS))
        self.C: sp.csr_matrix = sp.bmat(
            [[tt.C, to.C], [ot.C, oo.C]], format="csr", dtype=np.float64
        )
        self.C.sort_indices()
        # Canonicalize the column masses from the same-kind diagonals: both
        # accumulate the identical addend sequence, but through different
        # summation kernels that can disagree by one ulp, and the diagonal
        # identity c[v, v] == S[v] is promised exactly.
        for block in (tt, oo):
            diag = block.C.diagonal()
            snapped = block.colsum.copy()
            has = diag != 0
            snapped[has] = diag[has]
            block.colsum = snapped
        if stage == "pretrain":
            to.colsum = oo.colsum
            ot.colsum = tt.colsum
        self.colsum = np.concatenate([tt.colsum, oo.colsum])
        if stage == "finetune":
            # a[v] = w(deg_Y(v)) row factor, b[v] = u(deg_Y(v)) column factor.
            self.cross_a = np.concatenate([to.factors[0], ot.factors[0]])
            self.cross_b = np.concatenate([ot.factors[1], to.factors[1]])
        else:
            self.cross_a = None
            self.cross_b = None

    def is_tuple(self, v: int) -> bool:
        return v < self.n_tuples

    def consistency(self, v1: int, v2: int) -> float:
        return float(self.C[v1, v2])

    def discrepancy(self, v1: int, v2: int) -> float:
        if v1 == v2:
            return 0.0
        if self.stage == "finetune" and (v1 < self.n_tuples) != (v2 < self.n_tuples):
            return float(self.cross_a[v1] * self.cross_b[v2])
        return max(float(self.colsum[v2] - self.C[v1, v2]), 0.0)

    def discrepancy_row(self, v1: int) -> np.ndarray:
        """Dense discrepancy row, realized on demand in O(N)."""
        row = self.colsum.copy()
        lo, hi = self.C.indptr[v1], self.C.indptr[v1 + 1]
        cols = self.C.indices[lo:hi]
        row[cols] -= self.C.data[lo:hi]
        if self.stage == "finetune":
            nt = self.n_tuples
            if v1 < nt:
                row[nt:] = self.cross_a[v1] * self.cross_b[nt:]
            else:
                row[:nt] = self.cross_a[v1] * self.cross_b[:nt]
        row[v1] = 0.0
        np.maximum(row, 0.0, out=row)
        return row

    def positive_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(v1, v2, c) arrays for every off-diagonal entry with c > 0."""
        coo = self.C.tocoo()
        keep = (coo.row != coo.col) & (coo.data > 0)
        return (coo.row[keep].astype(np.int64), coo.col[keep].astype(np.int64),
                coo.data[keep].astype(np.float64))


def build_member_metrics(graph: TripartiteGraph) -> MetricSet:
    """Pre-training metrics: schemas TMT, TMO, OMT, OMO with member midpoints.

    Midpoint degrees combine member interactions and affiliations; endpoint
    degrees use the relation that ties that endpoint to members.
    """
    if graph.X.edge_count == 0 or graph.Z.edge_count == 0:
        raise ValueError("pre-training metrics need non-empty member "
                         "interactions and affiliations")
    deg = degrees(graph, "pretrain")
    Z, X = graph.Z, graph.X
    Zt, Xt = Z.transpose(), X.transpose()
    blocks = {
        "TMT": MetricBlock("TMT", build_consistency(Z, Zt, deg.members, deg.tuples),
                           colsum=build_colsums(Zt, deg.members, deg.tuples)),
        "TMO": MetricBlock("TMO", build_consistency(Z, X, deg.members, deg.objects),
                           colsum=build_colsums(X, deg.members, deg.objects)),
        "OMT": MetricBlock("OMT", build_consistency(Xt, Zt, deg.members, deg.tuples),
                           colsum=build_colsums(Zt, deg.members, deg.tuples)),
        "OMO": MetricBlock("OMO", build_consistency(Xt, X, deg.members, deg.objects),
                           colsum=build_colsums(X, deg.members, deg.objects)),
    }
    return MetricSet("pretrain", graph.n_tuples, graph.n_objects, blocks)


def build_tuple_metrics(Y_train: Relation) -> MetricSet:
    """Fine-tuning metrics: two-hop TOT/OTO plus one-hop TO/OT.

    One-hop consistency carries delta only on observed interactions; the
    one-hop discrepancy assigns delta to every pair and is kept as rank-1
    factors.  Zero-degree nodes produce zero rows, columns, and factors.
    """
    if Y_train.edge_count == 0:
        raise ValueError("fine-tuning metrics need non-empty tuple interactions")
    Y = Y_train
    Yt = Y.transpose()
    deg_t = Y.out_degrees.astype(np.int64)
    deg_o = Yt.out_degrees.astype(np.int64)

    a_t, b_t = midpoint_weights(deg_t), endpoint_weights(deg_t)
    a_o, b_o = midpoint_weights(deg_o), endpoint_weights(deg_o)

    # One-hop consistency delta * Y: scale Y's rows by a and columns by b.
    def one_hop(rel: Relation, a: np.ndarray, b: np.ndarray) -> sp.csr_matrix:
        vals = np.repeat(a, rel.out_degrees) * b[rel.indices]
        return sp.csr_matrix((vals, rel.indices.copy(), rel.indptr.copy()),
                             shape=(rel.n_src, rel.n_dst))

    blocks = {
        "TOT": MetricBlock("TOT", build_consistency(Y, Yt, deg_o, deg_t),
                           colsum=build_colsums(Yt, deg_o, deg_t)),
        "TO": MetricBlock("TO", one_hop(Y, a_t, b_o), factors=(a_t, b_o)),
        "OT": MetricBlock("OT", one_hop(Yt, a_o, b_t), factors=(a_o, b_t)),
        "OTO": MetricBlock("OTO", build_consistency(Yt, Y, deg_t, deg_o),
                           colsum=build_colsums(Y, deg_t, deg_o)),
    }
    return MetricSet("finetune", Y.n_src, Y.n_dst, blocks)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

def bruteforce_metrics(graph: TripartiteGraph, stage: str,
                       cap: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Dense (C, D) over the joint index space by explicit path enumeration.

    Reachable paths v1 - m - v2 contribute to C; non-reachable paths
    v1 ~ m - v2 (m adjacent to v2 only) contribute to D.  Intended purely as
    a verification oracle: quadratic in node count and independent of the
    sparse builders.
    """
    n = graph.n_tuples + graph.n_objects
    if n > cap:
        raise ValueError(f"{n} joint nodes exceed the brute-force cap {cap}")

    def dlt(dm: int, de: int) -> float:
        return 0.0 if dm <= 0 else (1.0 / dm) * math.sqrt((dm + 1) / (de + 1))

    nt = graph.n_tuples
    C = np.zeros((n, n))
    D = np.zeros((n, n))

    if stage == "pretrain":
        deg = degrees(graph, "pretrain")
        Zt, Xt = graph.Z.transpose(), graph.X.transpose()
        member_nbrs = [set(graph.Z.neighbors(t).tolist()) for t in range(nt)] + \
                      [set(Xt.neighbors(o).tolist()) for o in range(graph.n_objects)]
        end_deg = [int(deg.tuples[t]) for t in range(nt)] + \
                  [int(deg.objects[o]) for o in range(graph.n_objects)]
        for v1 in range(n):
            for v2 in range(n):
                for m in member_nbrs[v2]:
                    val = dlt(int(deg.members[m]), end_deg[v2])
                    if m in member_nbrs[v1]:
                        C[v1, v2] += val
                    else:
                        D[v1, v2] += val
        return C, D

    if stage == "finetune":
        deg = degrees(graph, "finetune")
        Yt = graph.Y.transpose()
        nbrs = [set(graph.Y.neighbors(t).tolist()) for t in range(nt)] + \
               [set(Yt.neighbors(o).tolist()) for o in range(graph.n_objects)]
        end_deg = [int(deg.tuples[t]) for t in range(nt)] + \
                  [int(deg.objects[o]) for o in range(graph.n_objects)]
        for v1 in range(n):
            for v2 in range(n):
                same_kind = (v1 < nt) == (v2 < nt)
                if same_kind:
                    # Midpoints are the other kind; local ids in nbrs sets.
                    for m in nbrs[v2]:
                        mid_joint = m + nt if v1 < nt else m
                        val = dlt(end_deg[mid_joint], end_deg[v2])
                        if m in nbrs[v1]:
                            C[v1, v2] += val
                        else:
                            D[v1, v2] += val
                else:
                    # One-hop: delta over the (v1, v2) degrees themselves.
                    local2 = v2 - nt if v2 >= nt else v2
                    val = dlt(end_deg[v1], end_deg[v2])
                    D[v1, v2] = val
                    if local2 in nbrs[v1]:
                        C[v1, v2] = val
        return C, D

    raise ValueError(f"unknown stage {stage!r}")


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------

_BLOCK_OFFSETS = {
    "T": lambda nt: 0,
    "O": lambda nt: nt,
}


def _block_spans(schema: str, nt: int, no: int) -> tuple[int, int]:
    """(row offset, col offset) of a block inside the joint matrix."""
    row_kind, col_kind = schema[0], schema[-1]
    return (_BLOCK_OFFSETS[row_kind](nt), _BLOCK_OFFSETS[col_kind](nt))


def export_metrics(mset: MetricSet, path: str | Path) -> None:
    """Write a MetricSet as plain-text coordinate files plus a manifest.

    ``metrics.coo`` lines are ``block row col c_value s_or_delta_value`` with
    block-local indices; ``colsums.tsv`` and ``factors.tsv`` carry the dense
    vectors discrepancies are derived from.  Floats are written with repr so
    the round trip is bit-exact.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    schemas = PRETRAIN_SCHEMAS if mset.stage == "pretrain" else FINETUNE_SCHEMAS

    with (path / "metrics.coo").open("w", encoding="utf-8") as fh:
        for schema in schemas:
            block = mset.blocks[schema]
            coo = block.C.tocoo()
            for r, c, v in zip(coo.row, coo.col, coo.data):
                if block.colsum is not None:
                    side = block.colsum[c]
                else:
                    side = block.factors[0][r] * block.factors[1][c]
                fh.write(f"{schema} {r} {c} {float(v)!r} {float(side)!r}\n")

    with (path / "colsums.tsv").open("w", encoding="utf-8") as fh:
        for schema in schemas:
            block = mset.blocks[schema]
            if block.colsum is None:
                continue
            for i, s in enumerate(block.colsum):
                fh.write(f"{schema}\t{i}\t{float(s)!r}\n")

    with (path / "factors.tsv").open("w", encoding="utf-8") as fh:
        for schema in schemas:
            block = mset.blocks[schema]
            if block.factors is None:
                continue
            for name, vec in zip(("a", "b"), block.factors):
                for i, v in enumerate(vec):
                    fh.write(f"{schema}\t{name}\t{i}\t{float(v)!r}\n")

    with (path / "manifest.txt").open("w", encoding="utf-8") as fh:
        fh.write(f"stage={mset.stage}\n")
        fh.write(f"n_tuples={mset.n_tuples}\n")
        fh.write(f"n_objects={mset.n_objects}\n")
        fh.write(f"blocks={','.join(schemas)}\n")


def import_metrics(path: str | Path) -> MetricSet:
    """Reconstruct a MetricSet written by :func:`export_metrics`."""
    path = Path(path)
    manifest: dict[str, str] = {}
    for line in (path / "manifest.txt").read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            manifest[key] = value
    stage = manifest["stage"]
    nt, no = int(manifest["n_tuples"]), int(manifest["n_objects"])
    schemas = manifest["blocks"].split(",")

    shapes = {s: (nt if s[0] == "T" else no, nt if s[-1] == "T" else no)
              for s in schemas}
    entries = {s: ([], [], []) for s in schemas}
    for line in (path / "metrics.coo").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        schema, r, c, v, _ = line.split()
        rows, cols, vals = entries[schema]
        rows.append(int(r))
        cols.append(int(c))
        vals.append(float(v))

    colsums = {s: np.zeros(shapes[s][1]) for s in schemas}
    seen_colsums = set()
    for line in (path / "colsums.tsv").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        schema, i, s = line.split("\t")
        colsums[schema][int(i)] = float(s)
        seen_colsums.add(schema)

    factors = {s: (np.zeros(shapes[s][0]), np.zeros(shapes[s][1])) for s in schemas}
    seen_factors = set()
    factors_file = path / "factors.tsv"
    if factors_file.exists():
        for line in factors_file.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            schema, name, i, v = line.split("\t")
            factors[schema][0 if name == "a" else 1][int(i)] = float(v)
            seen_factors.add(schema)

    blocks = {}
    for schema in schemas:
        rows, cols, vals = entries[schema]
        C = sp.csr_matrix(
            (np.array(vals, dtype=np.float64),
             (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
            shape=shapes[schema],
        )
        C.sort_indices()
        blocks[schema] = MetricBlock(
            schema, C,
            colsum=colsums[schema] if schema in seen_colsums else
            (np.zeros(shapes[schema][1]) if schema not in seen_factors else None),
            factors=factors[schema] if schema in seen_factors else None,
        )
    return MetricSet(stage, nt, no, blocks)
