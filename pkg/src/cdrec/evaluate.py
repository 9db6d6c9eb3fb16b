"""Top-K ranking evaluation and the consistency/discrepancy-loss correlation.

Recommendees are tuples, candidates are all objects.  Scores are cosine by
default (matching the training geometry); dot product is available for
sensitivity checks.  Metrics are macro-averaged over recommendees that have
at least one test positive.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class RankingTask:
    """Who gets ranked against what, and what counts as a hit."""

    n_tuples: int
    n_objects: int
    exclusions: list[np.ndarray]    # per tuple: train+valid positives
    truth: list[np.ndarray]         # per tuple: test positives

    def __post_init__(self) -> None:
        for t in range(self.n_tuples):
            if np.intersect1d(self.exclusions[t], self.truth[t]).size:
                raise ValueError(f"tuple {t}: ground truth overlaps exclusions")

    @classmethod
    def from_relations(cls, n_tuples: int, n_objects: int, exclude_relations,
                       truth_relation) -> "RankingTask":
        exclusions = []
        for t in range(n_tuples):
            parts = [rel.neighbors(t) for rel in exclude_relations if rel is not None]
            exclusions.append(np.unique(np.concatenate(parts)) if parts
                              else np.zeros(0, dtype=np.int64))
        truth = [truth_relation.neighbors(t) for t in range(n_tuples)]
        return cls(n_tuples, n_objects, exclusions, truth)


def score(recommendee: int, vectors: np.ndarray, n_tuples: int, n_objects: int,
          exclude: np.ndarray | None = None, measure: str = "cosine") -> np.ndarray:
    """Objects ranked for one tuple, best first; ties break on ascending id.

    Excluded objects never appear.  Zero-norm candidates are pushed to the
    bottom and logged.
    """
    t_vec = vectors[recommendee]
    obj = vectors[n_tuples : n_tuples + n_objects]
    if measure == "cosine":
        norms = np.linalg.norm(obj, axis=1)
        t_norm = np.linalg.norm(t_vec)
        dead = norms == 0
        if dead.any() or t_norm == 0:
            log.warning("zero-norm embedding encountered while scoring tuple %d",
                        recommendee)
        scores = obj @ t_vec / (np.where(dead, 1.0, norms) * (t_norm or 1.0))
        scores[dead] = -np.inf
    elif measure == "dot":
        scores = obj @ t_vec
    else:
        raise ValueError(f"unknown measure {measure!r}")
    order = np.lexsort((np.arange(n_objects), -scores))
    if exclude is not None and exclude.size:
        keep = np.ones(n_objects, dtype=bool)
        keep[exclude] = False
        order = order[keep[order]]
    return order


def topk_metrics(rankings: list[np.ndarray], truth: list[np.ndarray],
                 k: int) -> dict[str, float]:
    """Macro-averaged Recall/Precision/NDCG/F1 at one cutoff.

    NDCG uses binary gains with log2 discounts and an ideal DCG over
    min(|truth|, k) slots.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    recalls, precisions, ndcgs = [], [], []
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    for ranked, gt in zip(rankings, truth):
        if gt.size == 0:
            continue
        top = ranked[:k]
        hit = np.isin(top, gt)
        n_hit = int(hit.sum())
        recalls.append(n_hit / gt.size)
        precisions.append(n_hit / k)
        ideal = discounts[: min(gt.size, k)].sum()
        ndcgs.append(discounts[: top.size][hit].sum() / ideal)
    if not recalls:
        raise ValueError("no recommendee has test positives")
    r, p, n = float(np.mean(recalls)), float(np.mean(precisions)), float(np.mean(ndcgs))
    f1 = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return {"recall": r, "precision": p, "ndcg": n, "f1": f1}


@dataclass
class EvalReport:
    """Per-K ranking metrics plus the optional correlation block."""

    per_k: dict[int, dict[str, float]]
    n_recommendees: int
    correlation: dict[str, float | None] | None = None
    extra: dict = field(default_factory=dict)

    def to_records(self) -> list[dict]:
        records = []
        for k in sorted(self.per_k):
            rec = {"k": k, "n_recommendees": self.n_recommendees}
            rec.update(self.per_k[k])
            records.append(rec)
        if self.correlation is not None:
            records.append({"correlation": self.correlation})
        return records

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.to_records()) + "\n"

    def to_table(self) -> str:
        """Aligned plain-text table, one row per cutoff."""
        header = f"{'K':>4}  {'Recall':>10}  {'Precision':>10}  {'NDCG':>10}  {'F1':>10}"
        lines = [header, "-" * len(header)]
        for k in sorted(self.per_k):
            m = self.per_k[k]
            lines.append(f"{k:>4}  {m['recall']:>10.4f}  {m['precision']:>10.4f}  "
                         f"{m['ndcg']:>10.4f}  {m['f1']:>10.4f}")
        if self.correlation is not None:
            rc, rd = self.correlation.get("r_c"), self.correlation.get("r_d")
            fmt = lambda v: "undefined" if v is None else f"{v:+.4f}"
            lines.append("")
            lines.append(f"corr(consistency, loss) = {fmt(rc)}")
            lines.append(f"corr(discrepancy, loss) = {fmt(rd)}")
        return "\n".join(lines) + "\n"


def evaluate_embeddings(vectors: np.ndarray, task: RankingTask,
                        k_list: tuple[int, ...] = (10, 20, 30),
                        measure: str = "cosine") -> EvalReport:
    """Rank every recommendee with test positives and aggregate per K."""
    rankings, truth = [], []
    max_k = max(k_list)
    for t in range(task.n_tuples):
        if task.truth[t].size == 0:
            continue
        ranked = score(t, vectors, task.n_tuples, task.n_objects,
                       exclude=task.exclusions[t], measure=measure)
        rankings.append(ranked[:max_k])
        truth.append(task.truth[t])
    per_k = {k: topk_metrics(rankings, truth, k) for k in k_list}
    return EvalReport(per_k=per_k, n_recommendees=len(rankings))


def pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    """Pearson r, or None when either series has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 3:
        raise ValueError("need at least 3 points for a correlation")
    if np.std(x) == 0 or np.std(y) == 0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def correlation_analysis(c_values: np.ndarray, d_values: np.ndarray,
                         losses: np.ndarray) -> dict[str, float | None]:
    """Pearson r of per-pair consistency and discrepancy against the loss."""
    finite = np.isfinite(losses)
    c, d, ell = c_values[finite], d_values[finite], losses[finite]
    return {"r_c": pearson(c, ell), "r_d": pearson(d, ell), "n_pairs": int(ell.size)}
