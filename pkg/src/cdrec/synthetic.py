"""Seeded synthetic tripartite datasets.

Three generators:

* ``random_tripartite`` -- unstructured graphs for oracle and property tests.
* ``planted_clusters`` -- a two-community graph with a known embedding
  structure the trainer must recover.
* ``group_travel_like`` -- a latent-topic generator at configurable scale,
  mixing per-object popularity with topic affinity so that member behaviour
  is genuinely predictive of tuple behaviour.  The default preset matches the
  published statistics of a public group-recommendation dataset (995 tuples,
  5275 members, 1513 objects, ~3.6k tuple and ~40k member interactions) and
  serves as its stand-in where the original files cannot be shipped.

Every generator is deterministic per seed.  ``python -m cdrec.synthetic``
writes a dataset to disk in the edge-list format the CLI consumes.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .graph import NodeKind, Relation, TripartiteGraph, build_graph, write_relation


def _to_relation(pairs: set[tuple[int, int]], src_kind, dst_kind,
                 n_src: int, n_dst: int) -> Relation:
    arr = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return Relation.from_edges(arr, src_kind, dst_kind, n_src, n_dst)


def random_tripartite(n_tuples: int, n_members: int, n_objects: int,
                      avg_degree: float, seed: int,
                      with_y: bool = True) -> TripartiteGraph:
    """Uniform random relations with the requested average src degree."""
    rng = np.random.default_rng(seed)

    def rand_rel(n_src, n_dst, kinds):
        n_edges = max(1, int(round(avg_degree * n_src)))
        src = rng.integers(0, n_src, size=n_edges)
        dst = rng.integers(0, n_dst, size=n_edges)
        return _to_relation(set(zip(src.tolist(), dst.tolist())), *kinds,
                            n_src=n_src, n_dst=n_dst)

    X = rand_rel(n_members, n_objects, (NodeKind.MEMBER, NodeKind.OBJECT))
    Z = rand_rel(n_tuples, n_members, (NodeKind.TUPLE, NodeKind.MEMBER))
    if with_y:
        Y = rand_rel(n_tuples, n_objects, (NodeKind.TUPLE, NodeKind.OBJECT))
    else:
        Y = None
    return build_graph(Y, X, Z)


def planted_clusters(n_tuples: int = 20, n_members: int = 40,
                     n_objects: int = 20, seed: int = 0,
                     noise: float = 0.05) -> tuple[TripartiteGraph, np.ndarray]:
    """Two communities; returns the graph and each tuple's cluster label.

    Tuples draw members from their own community's half, members interact
    with the community's objects, plus a small fraction of cross links.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n_tuples) % 2
    half_m, half_o = n_members // 2, n_objects // 2

    z_pairs, x_pairs = set(), set()
    for t in range(n_tuples):
        side = labels[t]
        pool = np.arange(half_m) + side * half_m
        for m in rng.choice(pool, size=min(4, pool.size), replace=False):
            z_pairs.add((t, int(m)))
    for m in range(n_members):
        side = 0 if m < half_m else 1
        pool = np.arange(half_o) + side * half_o
        if rng.random() < noise:
            pool = np.arange(n_objects)
        for o in rng.choice(pool, size=min(5, pool.size), replace=False):
            x_pairs.add((m, int(o)))

    X = _to_relation(x_pairs, NodeKind.MEMBER, NodeKind.OBJECT, n_members, n_objects)
    Z = _to_relation(z_pairs, NodeKind.TUPLE, NodeKind.MEMBER, n_tuples, n_members)
    return build_graph(None, X, Z), labels


def group_travel_like(
    n_tuples: int = 995,
    n_members: int = 5275,
    n_objects: int = 1513,
    n_tuple_edges: int = 3595,
    n_member_edges: int = 39761,
    avg_members_per_tuple: float = 7.19,
    n_topics: int = 24,
    popularity_skew: float = 1.05,
    topic_affinity: float = 0.88,
    tuple_popularity_boost: float = 0.75,
    seed: int = 0,
) -> TripartiteGraph:
    """Latent-topic tripartite dataset at group-travel scale.

    Objects carry a Zipf popularity and a topic; members hold a sparse topic
    mixture that drives their interactions; tuples gather members with a
    shared dominant topic and adopt objects from that topic with an extra
    popularity tilt (popular venues dominate group decisions more than
    individual ones).
    """
    rng = np.random.default_rng(seed)

    obj_topic = rng.integers(0, n_topics, size=n_objects)
    popularity = 1.0 / np.power(np.arange(1, n_objects + 1), popularity_skew)
    rng.shuffle(popularity)

    def topic_object_dist(topic: int, boost: float) -> tuple[np.ndarray, np.ndarray]:
        ids = np.flatnonzero(obj_topic == topic)
        w = popularity[ids] ** (1.0 + boost)
        return ids, w / w.sum()

    topic_dists = [topic_object_dist(k, 0.0) for k in range(n_topics)]
    topic_dists_boosted = [topic_object_dist(k, tuple_popularity_boost)
                           for k in range(n_topics)]
    global_dist = popularity / popularity.sum()
    global_boosted = popularity ** (1.0 + tuple_popularity_boost)
    global_boosted /= global_boosted.sum()

    member_topic = rng.integers(0, n_topics, size=n_members)

    def draw_objects(topic: int, n: int, boosted: bool, affinity: float) -> list[int]:
        ids = []
        for _ in range(n):
            if rng.random() < affinity:
                pool, w = (topic_dists_boosted if boosted else topic_dists)[topic]
                ids.append(int(rng.choice(pool, p=w)))
            else:
                dist = global_boosted if boosted else global_dist
                ids.append(int(rng.choice(n_objects, p=dist)))
        return ids

    # Member interactions: per-member degree is lognormal with the right mean.
    mean_deg = n_member_edges / n_members
    raw = rng.lognormal(mean=0.0, sigma=0.7, size=n_members)
    deg_m = np.maximum(1, np.round(raw * mean_deg / raw.mean()).astype(int))
    x_pairs = set()
    for m in range(n_members):
        for o in draw_objects(int(member_topic[m]), int(deg_m[m]), False,
                              topic_affinity):
            x_pairs.add((m, o))

    # Affiliations: tuples recruit mostly same-topic members.
    n_aff = int(round(avg_members_per_tuple * n_tuples))
    tuple_topic = rng.integers(0, n_topics, size=n_tuples)
    members_by_topic = [np.flatnonzero(member_topic == k) for k in range(n_topics)]
    sizes = np.maximum(2, rng.poisson(avg_members_per_tuple, size=n_tuples))
    sizes = np.round(sizes * n_aff / sizes.sum()).astype(int)
    z_pairs = set()
    for t in range(n_tuples):
        for _ in range(max(2, int(sizes[t]))):
            if rng.random() < 0.9:
                pool = members_by_topic[tuple_topic[t]]
                m = int(rng.choice(pool)) if pool.size else int(rng.integers(n_members))
            else:
                m = int(rng.integers(n_members))
            z_pairs.add((t, m))

    # Tuple interactions: strong popularity tilt within the tuple's topic.
    deg_t = np.maximum(1, rng.poisson(n_tuple_edges / n_tuples, size=n_tuples))
    deg_t = np.round(deg_t * n_tuple_edges / deg_t.sum()).astype(int)
    y_pairs = set()
    for t in range(n_tuples):
        for o in draw_objects(int(tuple_topic[t]), max(1, int(deg_t[t])), True,
                              topic_affinity):
            y_pairs.add((t, o))

    X = _to_relation(x_pairs, NodeKind.MEMBER, NodeKind.OBJECT, n_members, n_objects)
    Z = _to_relation(z_pairs, NodeKind.TUPLE, NodeKind.MEMBER, n_tuples, n_members)
    Y = _to_relation(y_pairs, NodeKind.TUPLE, NodeKind.OBJECT, n_tuples, n_objects)
    return build_graph(Y, X, Z)


def write_dataset(graph: TripartiteGraph, out_dir: str | Path) -> dict[str, Path]:
    """Write Y/X/Z edge lists (with counts headers) for the CLI."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "tuple_object": out / "tuple_object.tsv",
        "member_object": out / "member_object.tsv",
        "tuple_member": out / "tuple_member.tsv",
    }
    write_relation(graph.Y, paths["tuple_object"], graph.counts)
    write_relation(graph.X, paths["member_object"], graph.counts)
    write_relation(graph.Z, paths["tuple_member"], graph.counts)
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="generate a synthetic dataset")
    parser.add_argument("--out", required=True)
    parser.add_argument("--preset", choices=["small", "group-travel"],
                        default="small")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if args.preset == "small":
        graph = group_travel_like(n_tuples=60, n_members=240, n_objects=120,
                                  n_tuple_edges=240, n_member_edges=1800,
                                  avg_members_per_tuple=4.0, n_topics=6,
                                  seed=args.seed)
    else:
        graph = group_travel_like(seed=args.seed)
    paths = write_dataset(graph, args.out)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
