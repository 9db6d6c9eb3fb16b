"""Run orchestration: dataset loading, split persistence, training runs,
checkpoints, and report emission.  The CLI is a thin wrapper around this."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluate as ev
from .graph import (GraphError, NodeKind, Relation, SplitSpec, TripartiteGraph,
                    build_graph, parse_edge_file, split_interactions,
                    write_relation)
from .metrics import build_member_metrics, build_tuple_metrics, export_metrics
from .model import TrainConfig, VariantResult, per_pair_losses, run_variant

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Everything one experiment run depends on."""

    tuple_object: str
    member_object: str
    tuple_member: str
    split: SplitSpec = field(default_factory=SplitSpec)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(tau=3.8))
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(tau=1.0))
    variant: str = "CDR"
    k_list: tuple[int, ...] = (10, 20, 30)
    out_dir: str = "runs/out"
    measure: str = "cosine"
    test_override: str | None = None   # explicit test edge file (cold start)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def canonical(self) -> str:
        lines = []
        lines.append(f"data.tuple_object={self.tuple_object}")
        lines.append(f"data.member_object={self.member_object}")
        lines.append(f"data.tuple_member={self.tuple_member}")
        s = self.split
        lines.append(f"split.train={s.train_fraction!r} split.test={s.test_fraction!r} "
                     f"split.valid={s.valid_fraction!r} split.seed={s.seed}")
        for name, cfg in (("pretrain", self.pretrain), ("finetune", self.finetune)):
            for key in ("dim", "tau", "learning_rate", "batch_size", "patience",
                        "seed", "negatives", "loss", "binarize_c", "binarize_d",
                        "max_epochs"):
                lines.append(f"{name}.{key}={getattr(cfg, key)!r}")
        lines.append(f"run.variant={self.variant}")
        lines.append(f"run.k={','.join(map(str, self.k_list))}")
        lines.append(f"run.measure={self.measure}")
        lines.append(f"run.test_override={self.test_override}")
        return "\n".join(lines) + "\n"


@dataclass
class DatasetBundle:
    """Loaded relations plus split parts (train part replaces Y in the graph)."""

    graph_full: TripartiteGraph
    graph_train: TripartiteGraph
    y_train: Relation
    y_valid: Relation
    y_test: Relation
    y_discarded: Relation


def load_dataset(cfg: RunConfig) -> TripartiteGraph:
    """Load the three edge files with harmonized universe sizes.

    Counts come from '#counts' headers when present (mismatching headers are
    an error); otherwise a kind's count is the maximum index seen for it in
    any file, plus one.
    """
    paths = {
        "Y": Path(cfg.tuple_object),
        "X": Path(cfg.member_object),
        "Z": Path(cfg.tuple_member),
    }
    for name, p in paths.items():
        if not p.exists():
            raise GraphError(f"{name} edge file not found: {p}")
    parsed = {name: parse_edge_file(p) for name, p in paths.items()}

    # slot -> (file, column) pairs contributing indices of that kind
    contributors = {
        0: [("Y", 0), ("Z", 0)],          # tuples
        1: [("Z", 1), ("X", 0)],          # members
        2: [("X", 1), ("Y", 1)],          # objects
    }
    counts = [0, 0, 0]
    for slot in range(3):
        headers = {parsed[f].header_counts[slot]
                   for f, _ in contributors[slot]
                   if parsed[f].header_counts is not None}
        if len(headers) > 1:
            raise GraphError(f"conflicting #counts headers for slot {slot}: {headers}")
        inferred = 0
        for f, col in contributors[slot]:
            edges = parsed[f].edges
            if edges.size:
                inferred = max(inferred, int(edges[:, col].max()) + 1)
        counts[slot] = max(headers.pop() if headers else 0, inferred)

    Y = Relation.from_edges(parsed["Y"].edges, NodeKind.TUPLE, NodeKind.OBJECT,
                            counts[0], counts[2])
    X = Relation.from_edges(parsed["X"].edges, NodeKind.MEMBER, NodeKind.OBJECT,
                            counts[1], counts[2])
    Z = Relation.from_edges(parsed["Z"].edges, NodeKind.TUPLE, NodeKind.MEMBER,
                            counts[0], counts[1])
    return build_graph(Y, X, Z)


def _empty_like_y(graph: TripartiteGraph) -> Relation:
    return Relation.from_edges(np.zeros((0, 2), dtype=np.int64), NodeKind.TUPLE,
                               NodeKind.OBJECT, graph.n_tuples, graph.n_objects)


def prepare_dataset(cfg: RunConfig, reuse_splits: bool = True) -> DatasetBundle:
    """Load, split (or reload a persisted split), and assemble both graphs."""
    graph = load_dataset(cfg)
    split_dir = Path(cfg.out_dir) / "splits"
    if graph.Y.edge_count == 0:
        empty = _empty_like_y(graph)
        return DatasetBundle(graph, graph, empty, empty, empty, empty)
    if reuse_splits and (split_dir / "manifest.txt").exists():
        parts = reload_splits(split_dir, graph)
    else:
        parts = split_interactions(graph.Y, cfg.split)
        write_splits(parts, split_dir, graph, cfg.split)
    y_train, y_valid, y_test, y_disc = parts
    graph_train = build_graph(y_train, graph.X, graph.Z)
    return DatasetBundle(graph, graph_train, y_train, y_valid, y_test, y_disc)


_SPLIT_NAMES = ("train", "valid", "test", "discarded")


def write_splits(parts, split_dir: Path, graph: TripartiteGraph,
                 spec: SplitSpec) -> None:
    split_dir.mkdir(parents=True, exist_ok=True)
    for name, rel in zip(_SPLIT_NAMES, parts):
        write_relation(rel, split_dir / f"{name}.tsv", graph.counts)
    manifest = split_dir / "manifest.txt"
    lines = [
        f"seed={spec.seed}",
        f"train_fraction={spec.train_fraction!r}",
        f"test_fraction={spec.test_fraction!r}",
        f"valid_fraction={spec.valid_fraction!r}",
    ] + [f"n_{name}={rel.edge_count}" for name, rel in zip(_SPLIT_NAMES, parts)]
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")


def reload_splits(split_dir: Path, graph: TripartiteGraph):
    parts = []
    for name in _SPLIT_NAMES:
        parsed = parse_edge_file(split_dir / f"{name}.tsv")
        parts.append(Relation.from_edges(parsed.edges, NodeKind.TUPLE,
                                         NodeKind.OBJECT, graph.n_tuples,
                                         graph.n_objects))
    return tuple(parts)


def make_validator(bundle: DatasetBundle, k: int = 20, measure: str = "cosine"):
    """Early-stopping metric: NDCG@k on the validation split, or None when
    there is no validation data (cold start falls back to loss plateau)."""
    if bundle.y_valid.edge_count == 0:
        return None
    task = ev.RankingTask.from_relations(
        bundle.graph_full.n_tuples, bundle.graph_full.n_objects,
        [bundle.y_train], bundle.y_valid)
    actives = [t for t in range(task.n_tuples) if task.truth[t].size]

    def validator(table) -> float:
        rankings = [ev.score(t, table.vectors, task.n_tuples, task.n_objects,
                             exclude=task.exclusions[t], measure=measure)[:k]
                    for t in actives]
        truths = [task.truth[t] for t in actives]
        return ev.topk_metrics(rankings, truths, k)["ndcg"]

    return validator


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: Path, result: VariantResult, cfg: RunConfig) -> None:
    meta = {
        "role": result.table.role,
        "trainable_cols": result.table.trainable_cols,
        "dim": result.table.dim,
        "variant": result.variant,
        "config_hash": cfg.config_hash(),
        "seed": cfg.pretrain.seed,
    }
    np.savez(path, vectors=result.table.vectors, meta=json.dumps(meta, sort_keys=True))


def load_checkpoint(path: Path):
    from .model import EmbeddingTable

    with np.load(path, allow_pickle=False) as data:
        vectors = data["vectors"]
        meta = json.loads(str(data["meta"]))
    table = EmbeddingTable(vectors, meta["role"], int(meta["trainable_cols"]))
    return table, meta


# ---------------------------------------------------------------------------
# Command bodies
# ---------------------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig) -> dict:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = prepare_dataset(cfg, reuse_splits=False)
    graph = bundle.graph_full
    info = {
        "n_tuples": graph.n_tuples,
        "n_members": graph.n_members,
        "n_objects": graph.n_objects,
        "n_tuple_interactions": graph.Y.edge_count,
        "n_member_interactions": graph.X.edge_count,
        "n_affiliations": graph.Z.edge_count,
        "n_train": bundle.y_train.edge_count,
        "n_valid": bundle.y_valid.edge_count,
        "n_test": bundle.y_test.edge_count,
        "config_hash": cfg.config_hash(),
    }
    export_metrics(build_member_metrics(graph), out / "metrics_pretrain")
    if bundle.y_train.edge_count:
        export_metrics(build_tuple_metrics(bundle.y_train), out / "metrics_finetune")
    write_manifest(out, cfg, info)
    return info


def write_manifest(out: Path, cfg: RunConfig, info: dict) -> None:
    lines = [f"config_hash={cfg.config_hash()}"]
    lines += [f"{k}={v}" for k, v in sorted(info.items()) if k != "config_hash"]
    lines += ["", "[config]"] + cfg.canonical().splitlines()
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_train(cfg: RunConfig, resume: bool = False) -> dict:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = prepare_dataset(cfg)
    validator = make_validator(bundle, measure=cfg.measure)

    pre_ckpt = out / "pretrain_checkpoint.npz"
    pre_table = None
    if resume and pre_ckpt.exists():
        pre_table, meta = load_checkpoint(pre_ckpt)
        if meta["config_hash"] != cfg.config_hash():
            raise GraphError("pretrain checkpoint was produced by a different config")
        log.info("resuming from %s", pre_ckpt)

    result = _run_with_optional_resume(bundle, cfg, validator, pre_table)

    save_checkpoint(out / "checkpoint.npz", result, cfg)
    if result.pretrain_result is not None and result.variant in ("CDR", "w/o-c",
            "w/o-d", "w/o-cd", "Origin", "MSE", "CE"):
        pre_res = result.pretrain_result
        save_checkpoint(pre_ckpt, VariantResult("CDR-P", pre_res.table, pre_res,
                                                None, {}), cfg)

    with (out / "train_log.jsonl").open("w", encoding="utf-8") as fh:
        for stage_name, stage in (("pretrain", result.pretrain_result),
                                  ("finetune", result.finetune_result)):
            if stage is None:
                continue
            for rec in stage.history:
                fh.write(json.dumps({
                    "stage": stage_name, "epoch": rec.epoch,
                    "loss": rec.loss, "val_ndcg20": rec.val_metric,
                    "patience_left": rec.patience_left,
                    "skipped_pairs": rec.skipped_pairs,
                }, sort_keys=True) + "\n")

    _dump_pair_losses(out, bundle, cfg, result)

    info = {
        "n_tuples": bundle.graph_full.n_tuples,
        "n_objects": bundle.graph_full.n_objects,
        "variant": result.variant,
        "n_train": bundle.y_train.edge_count,
        "n_valid": bundle.y_valid.edge_count,
        "n_test": bundle.y_test.edge_count,
    }
    write_manifest(out, cfg, info)
    (out / "provenance.json").write_text(
        json.dumps(result.provenance, sort_keys=True) + "\n", encoding="utf-8")
    return result.provenance


def _run_with_optional_resume(bundle, cfg: RunConfig, validator, pre_table):
    from .model import StageResult, finetune as run_finetune

    if pre_table is not None and cfg.variant == "CDR":
        tuple_metrics = build_tuple_metrics(bundle.y_train)
        fine_res = run_finetune(pre_table, tuple_metrics, cfg.finetune, validator)
        pre_res = StageResult(table=pre_table)  # loaded, no fresh history
        return VariantResult("CDR", fine_res.table, pre_res, fine_res,
                             {"variant": "CDR", "resumed": True,
                              "finetune_epochs": len(fine_res.history),
                              "dim": fine_res.table.dim,
                              "trainable_cols": fine_res.table.trainable_cols})
    return run_variant(bundle.graph_train, cfg.variant, cfg.pretrain,
                       cfg.finetune, validator)


def _dump_pair_losses(out: Path, bundle, cfg: RunConfig,
                      result: VariantResult) -> None:
    """Final-model per-pair CD losses for the correlation analysis.

    The pre-training pair set is scored with the embeddings that stage
    produced; the fine-tuning pair set with the final embeddings.
    """
    arrays = {}
    if result.pretrain_result is not None and cfg.variant != "CDR-R":
        member_metrics = build_member_metrics(bundle.graph_train)
        rec = per_pair_losses(member_metrics, result.pretrain_result.table,
                              cfg.pretrain.tau)
        arrays.update({f"pretrain_{k}": v for k, v in rec.items()})
    if result.finetune_result is not None and bundle.y_train.edge_count:
        tuple_metrics = build_tuple_metrics(bundle.y_train)
        rec = per_pair_losses(tuple_metrics, result.table, cfg.finetune.tau)
        arrays.update({f"finetune_{k}": v for k, v in rec.items()})
    if arrays:
        np.savez(out / "pair_losses.npz", **arrays)


def cmd_evaluate(cfg: RunConfig, checkpoint: str | Path | None = None,
                 allow_hash_mismatch: bool = False) -> ev.EvalReport:
    out = Path(cfg.out_dir)
    ckpt_path = Path(checkpoint) if checkpoint else out / "checkpoint.npz"
    table, meta = load_checkpoint(ckpt_path)
    if meta["config_hash"] != cfg.config_hash() and not allow_hash_mismatch:
        raise GraphError(
            f"checkpoint config hash {meta['config_hash']} does not match the "
            f"current config {cfg.config_hash()}; pass --allow-hash-mismatch "
            "to override")
    expected_dim = cfg.finetune.dim if meta["role"] != "pretrain" else cfg.pretrain.dim
    if meta["role"] == "concat":
        expected_dim = cfg.finetune.dim + cfg.pretrain.dim
    if table.dim != expected_dim:
        raise GraphError(f"checkpoint dimension {table.dim} does not match "
                         f"configured dimension {expected_dim}")

    bundle = prepare_dataset(cfg)
    y_test = bundle.y_test
    if cfg.test_override is not None:
        parsed = parse_edge_file(cfg.test_override)
        y_test = Relation.from_edges(parsed.edges, NodeKind.TUPLE,
                                     NodeKind.OBJECT,
                                     bundle.graph_full.n_tuples,
                                     bundle.graph_full.n_objects)
    if y_test.edge_count == 0:
        raise GraphError("no test split available; run preprocess/train first "
                         "or provide tuple interactions / --test-file")
    task = ev.RankingTask.from_relations(
        bundle.graph_full.n_tuples, bundle.graph_full.n_objects,
        [bundle.y_train, bundle.y_valid], y_test)
    report = ev.evaluate_embeddings(table.vectors, task, cfg.k_list, cfg.measure)

    losses_file = out / "pair_losses.npz"
    if losses_file.exists():
        with np.load(losses_file) as data:
            stage = "pretrain" if "pretrain_loss" in data else "finetune"
            corr = ev.correlation_analysis(data[f"{stage}_c"], data[f"{stage}_d"],
                                           data[f"{stage}_loss"])
            corr["stage"] = stage
            if stage == "pretrain" and "finetune_loss" in data:
                fine = ev.correlation_analysis(data["finetune_c"],
                                               data["finetune_d"],
                                               data["finetune_loss"])
                corr["finetune_r_c"] = fine["r_c"]
                corr["finetune_r_d"] = fine["r_d"]
            report.correlation = corr

    (out / "report.jsonl").write_text(report.to_jsonl(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    return report


def cmd_ablate(cfg: RunConfig, variants: list[str],
               tau_sweep: list[float] | None = None,
               sweep_stage: str = "finetune") -> list[dict]:
    """Run several variants (or a temperature sweep) on one shared split."""
    if not variants and not tau_sweep:
        raise GraphError("ablation needs at least one variant or a tau sweep")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs: list[tuple[str, RunConfig]] = []
    from dataclasses import replace as dc_replace

    if tau_sweep:
        base = variants[0] if variants else "CDR"
        for tau in tau_sweep:
            sub = dc_replace(cfg, variant=base,
                             out_dir=str(out / f"tau_{tau:g}"))
            if sweep_stage == "pretrain":
                sub = dc_replace(sub, pretrain=dc_replace(cfg.pretrain, tau=tau))
            else:
                sub = dc_replace(sub, finetune=dc_replace(cfg.finetune, tau=tau))
            jobs.append((f"{base}@tau={tau:g}", sub))
    else:
        for variant in variants:
            safe = variant.replace("/", "_")
            jobs.append((variant, dc_replace(cfg, variant=variant,
                                             out_dir=str(out / safe))))

    # Share one split across every job for comparability.
    bundle = prepare_dataset(cfg)
    rows = []
    for label, sub in jobs:
        Path(sub.out_dir).mkdir(parents=True, exist_ok=True)
        if bundle.y_train.edge_count:
            write_splits((bundle.y_train, bundle.y_valid, bundle.y_test,
                          bundle.y_discarded), Path(sub.out_dir) / "splits",
                         bundle.graph_full, cfg.split)
        try:
            cmd_train(sub)
            report = cmd_evaluate(sub)
            row = {"variant": label, "status": "ok"}
            for k in sorted(report.per_k):
                for name, val in report.per_k[k].items():
                    row[f"{name}@{k}"] = round(val, 6)
        except Exception as exc:  # keep going; partial failures are reported
            log.error("variant %s failed: %s", label, exc)
            row = {"variant": label, "status": f"error: {exc}"}
        rows.append(row)

    with (out / "ablation.jsonl").open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    (out / "ablation.txt").write_text(_ablation_table(rows), encoding="utf-8")
    return rows


def _ablation_table(rows: list[dict]) -> str:
    cols = ["variant"] + sorted({k for r in rows for k in r if k not in
                                 ("variant", "status")}) + ["status"]
    widths = {c: max(len(c), max((len(str(r.get(c, ""))) for r in rows),
                                 default=0)) for c in cols}
    header = "  ".join(c.ljust(widths[c]) for c in cols)
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append("  ".join(str(r.get(c, "")).ljust(widths[c]) for c in cols))
    return "\n".join(lines) + "\n"


def cmd_export(cfg: RunConfig, stage: str = "both") -> list[Path]:
    """Build metric sets and write their coordinate exports."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = prepare_dataset(cfg)
    written = []
    if stage in ("both", "pretrain"):
        export_metrics(build_member_metrics(bundle.graph_full),
                       out / "metrics_pretrain")
        written.append(out / "metrics_pretrain")
    if stage in ("both", "finetune") and bundle.y_train.edge_count:
        export_metrics(build_tuple_metrics(bundle.y_train),
                       out / "metrics_finetune")
        written.append(out / "metrics_finetune")
    return written
