"""Tripartite interaction graph: loading, validation, splitting, degrees.

The graph connects three node universes -- tuples (groups/bundles), members
(their constituents), and objects (the entities being recommended) -- through
three binary relations:

    Y : tuple  -> object   (tuple interactions; may be empty in cold start)
    X : member -> object   (member interactions)
    Z : tuple  -> member   (affiliations)

Node ids are contiguous 0-based integers per kind.  Relations are stored in
CSR form (indptr/indices) with every row sorted and duplicate-free, which the
metric builders rely on for deterministic accumulation order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class GraphError(ValueError):
    """Raised for malformed edge files or inconsistent relation shapes."""


class NodeKind(Enum):
    TUPLE = "tuple"
    MEMBER = "member"
    OBJECT = "object"


@dataclass(eq=False)
class Relation:
    """One directed binary relation stored as CSR adjacency.

    ``indices[indptr[i]:indptr[i+1]]`` is the sorted, duplicate-free list of
    dst nodes adjacent to src node ``i``.
    """

    src_kind: NodeKind
    dst_kind: NodeKind
    n_src: int
    n_dst: int
    indptr: np.ndarray
    indices: np.ndarray
    _transpose: "Relation | None" = field(default=None, repr=False, compare=False)

    @classmethod
    def from_edges(
        cls,
        edges: np.ndarray,
        src_kind: NodeKind,
        dst_kind: NodeKind,
        n_src: int | None = None,
        n_dst: int | None = None,
    ) -> "Relation":
        """Build a relation from an (E, 2) array of (src, dst) pairs.

        Pairs are deduplicated and sorted; counts default to max index + 1.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and edges.min() < 0:
            raise GraphError("negative node index in edge list")
        if edges.size:
            edges = np.unique(edges, axis=0)  # sorts by (src, dst) and dedups
        inferred_src = int(edges[:, 0].max()) + 1 if edges.size else 0
        inferred_dst = int(edges[:, 1].max()) + 1 if edges.size else 0
        n_src = inferred_src if n_src is None else int(n_src)
        n_dst = inferred_dst if n_dst is None else int(n_dst)
        if inferred_src > n_src or inferred_dst > n_dst:
            raise GraphError(
                f"edge index out of declared range: saw ({inferred_src - 1}, "
                f"{inferred_dst - 1}) with counts ({n_src}, {n_dst})"
            )
        counts = np.bincount(edges[:, 0], minlength=n_src) if edges.size else np.zeros(n_src, dtype=np.int64)
        indptr = np.zeros(n_src + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return cls(src_kind, dst_kind, n_src, n_dst, indptr, edges[:, 1].copy() if edges.size else np.zeros(0, dtype=np.int64))

    @property
    def edge_count(self) -> int:
        return int(self.indices.shape[0])

    @property
    def out_degrees(self) -> np.ndarray:
        return self.indptr[1:] - self.indptr[:-1]

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def edges(self) -> np.ndarray:
        """All (src, dst) pairs in canonical (row-major) order."""
        srcs = np.repeat(np.arange(self.n_src, dtype=np.int64), self.out_degrees)
        return np.column_stack([srcs, self.indices])

    def transpose(self) -> "Relation":
        """Reversed relation; cached, and the cache is symmetric."""
        if self._transpose is None:
            edges = self.edges()
            t = Relation.from_edges(
                edges[:, ::-1], self.dst_kind, self.src_kind, self.n_dst, self.n_src
            )
            t._transpose = self
            self._transpose = t
        return self._transpose

    def has_edge(self, src: int, dst: int) -> bool:
        row = self.neighbors(src)
        j = np.searchsorted(row, dst)
        return bool(j < row.shape[0] and row[j] == dst)

    def same_edges(self, other: "Relation") -> bool:
        return (
            self.n_src == other.n_src
            and self.n_dst == other.n_dst
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def validate(self) -> None:
        if self.indptr.shape[0] != self.n_src + 1 or self.indptr[0] != 0:
            raise GraphError("malformed indptr")
        if self.indptr[-1] != self.indices.shape[0]:
            raise GraphError("indptr does not cover indices")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.n_dst):
            raise GraphError("dst index out of range")
        for i in range(self.n_src):
            row = self.neighbors(i)
            if row.size > 1 and not np.all(np.diff(row) > 0):
                raise GraphError(f"row {i} is not strictly sorted / duplicate-free")


@dataclass
class ParsedEdges:
    """Raw result of reading one edge-list file."""

    edges: np.ndarray            # (E, 2) unique pairs
    header_counts: tuple[int, int, int] | None  # from '#counts T M O', if present
    n_duplicates: int
    empty: bool                  # file had no data lines (warning, not error)


def parse_edge_file(path: str | Path) -> ParsedEdges:
    """Parse a tab-separated edge-list file.

    Lines starting with '#' are comments; the special comment
    ``#counts <tuples> <members> <objects>`` declares universe sizes so that
    isolated nodes survive the round trip.
    """
    path = Path(path)
    pairs: list[tuple[int, int]] = []
    header = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("counts"):
                    parts = body.split()
                    if len(parts) != 4:
                        raise GraphError(f"{path}:{lineno}: bad counts header: {line!r}")
                    try:
                        header = (int(parts[1]), int(parts[2]), int(parts[3]))
                    except ValueError as exc:
                        raise GraphError(f"{path}:{lineno}: bad counts header: {line!r}") from exc
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                raise GraphError(f"{path}:{lineno}: expected 'src<TAB>dst', got {line!r}")
            try:
                src, dst = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: non-integer node id in {line!r}") from exc
            if src < 0 or dst < 0:
                raise GraphError(f"{path}:{lineno}: negative node id in {line!r}")
            pairs.append((src, dst))
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    unique = np.unique(edges, axis=0) if edges.size else edges
    return ParsedEdges(
        edges=unique,
        header_counts=header,
        n_duplicates=len(pairs) - unique.shape[0],
        empty=not pairs,
    )


_KIND_SLOT = {NodeKind.TUPLE: 0, NodeKind.MEMBER: 1, NodeKind.OBJECT: 2}


def load_relation(path: str | Path, expected: tuple[NodeKind, NodeKind]) -> Relation:
    """Load one relation file, dedup it, and report anomalies via logging."""
    parsed = parse_edge_file(path)
    src_kind, dst_kind = expected
    n_src = n_dst = None
    if parsed.header_counts is not None:
        n_src = parsed.header_counts[_KIND_SLOT[src_kind]]
        n_dst = parsed.header_counts[_KIND_SLOT[dst_kind]]
    if parsed.n_duplicates:
        log.warning("%s: removed %d duplicate edges", path, parsed.n_duplicates)
    if parsed.empty:
        log.warning("%s: empty relation (%s -> %s)", path, src_kind.value, dst_kind.value)
    return Relation.from_edges(parsed.edges, src_kind, dst_kind, n_src, n_dst)


@dataclass
class DegreeTable:
    """Per-node degrees for one training regime.

    pretrain : member degrees over X and Z combined, tuple degrees over Z,
               object degrees over X.
    finetune : tuple and object degrees over Y only; members unused (zero).
    """

    regime: str
    tuples: np.ndarray
    members: np.ndarray
    objects: np.ndarray


@dataclass
class TripartiteGraph:
    """Immutable bundle of the three relations plus cached degree tables."""

    n_tuples: int
    n_members: int
    n_objects: int
    Y: Relation
    X: Relation
    Z: Relation

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.n_tuples, self.n_members, self.n_objects)


def build_graph(Y: Relation | None, X: Relation, Z: Relation) -> TripartiteGraph:
    """Assemble and validate a tripartite graph.

    ``Y`` may be None or empty (extreme cold start).  Universe sizes are the
    maximum seen for each kind across relations; a mismatch between two
    relations that both constrain a kind via a header is an error.
    """
    if X.src_kind != NodeKind.MEMBER or X.dst_kind != NodeKind.OBJECT:
        raise GraphError("X must be member -> object")
    if Z.src_kind != NodeKind.TUPLE or Z.dst_kind != NodeKind.MEMBER:
        raise GraphError("Z must be tuple -> member")
    if Y is not None and (Y.src_kind != NodeKind.TUPLE or Y.dst_kind != NodeKind.OBJECT):
        raise GraphError("Y must be tuple -> object")

    def resolve(name: str, *claims: tuple[str, int]) -> int:
        sizes = {n: c for n, c in claims if c > 0}
        if len(set(sizes.values())) > 1:
            raise GraphError(f"{name} count mismatch across relations: {sizes}")
        return max((c for _, c in claims), default=0)

    n_tuples = resolve("tuple", ("Z", Z.n_src), ("Y", Y.n_src if Y else 0))
    n_members = resolve("member", ("Z", Z.n_dst), ("X", X.n_src))
    n_objects = resolve("object", ("X", X.n_dst), ("Y", Y.n_dst if Y else 0))

    def widen(rel: Relation, n_src: int, n_dst: int) -> Relation:
        if rel.n_src == n_src and rel.n_dst == n_dst:
            return rel
        return Relation(rel.src_kind, rel.dst_kind, n_src, n_dst,
                        np.concatenate([rel.indptr, np.full(n_src - rel.n_src, rel.indptr[-1])]),
                        rel.indices)

    if Y is None:
        Y = Relation.from_edges(np.zeros((0, 2), dtype=np.int64), NodeKind.TUPLE,
                                NodeKind.OBJECT, n_tuples, n_objects)
    else:
        Y = widen(Y, n_tuples, n_objects)
    X = widen(X, n_members, n_objects)
    Z = widen(Z, n_tuples, n_members)
    for rel in (Y, X, Z):
        rel.validate()
    return TripartiteGraph(n_tuples, n_members, n_objects, Y=Y, X=X, Z=Z)


def degrees(graph: TripartiteGraph, regime: str) -> DegreeTable:
    """Degree table for one regime; zero degrees are legal and returned as 0."""
    if regime == "pretrain":
        member_deg = graph.X.out_degrees + graph.Z.transpose().out_degrees
        return DegreeTable(
            regime,
            tuples=graph.Z.out_degrees.astype(np.int64),
            members=member_deg.astype(np.int64),
            objects=graph.X.transpose().out_degrees.astype(np.int64),
        )
    if regime == "finetune":
        return DegreeTable(
            regime,
            tuples=graph.Y.out_degrees.astype(np.int64),
            members=np.zeros(graph.n_members, dtype=np.int64),
            objects=graph.Y.transpose().out_degrees.astype(np.int64),
        )
    raise ValueError(f"unknown degree regime {regime!r}")


@dataclass
class SplitSpec:
    """Fractions of the tuple-interaction edge set assigned to each part."""

    train_fraction: float = 0.05
    test_fraction: float = 0.20
    valid_fraction: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        fracs = (self.train_fraction, self.test_fraction, self.valid_fraction)
        if any(f < 0 for f in fracs):
            raise GraphError("split fractions must be non-negative")
        if sum(fracs) > 1.0 + 1e-12:
            raise GraphError(f"split fractions sum to {sum(fracs)} > 1")


def split_interactions(
    Y: Relation, spec: SplitSpec
) -> tuple[Relation, Relation, Relation, Relation]:
    """Globally uniform random partition of Y's edges into
    (train, valid, test, discarded).

    The partition is deterministic for a fixed seed; parts are disjoint and
    their union is Y.  Counts are rounded to the nearest edge.
    """
    spec.validate()
    if Y.edge_count == 0:
        raise GraphError("cannot split an empty tuple-interaction relation")
    edges = Y.edges()
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(edges.shape[0])
    n = edges.shape[0]
    n_train = int(round(spec.train_fraction * n))
    n_test = int(round(spec.test_fraction * n))
    n_valid = int(round(spec.valid_fraction * n))
    if n_train + n_test + n_valid > n:  # rounding overshoot
        n_valid = max(0, n - n_train - n_test)

    def part(idx: np.ndarray) -> Relation:
        return Relation.from_edges(edges[idx], Y.src_kind, Y.dst_kind, Y.n_src, Y.n_dst)

    a, b, c = n_train, n_train + n_valid, n_train + n_valid + n_test
    return (
        part(order[:a]),
        part(order[a:b]),
        part(order[b:c]),
        part(order[c:]),
    )


def write_relation(rel: Relation, path: str | Path, counts: tuple[int, int, int]) -> None:
    """Write a relation as an edge-list file with a counts header."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"#counts {counts[0]} {counts[1]} {counts[2]}\n")
        for src, dst in rel.edges():
            fh.write(f"{src}\t{dst}\n")
