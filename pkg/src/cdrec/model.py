"""Embedding training: CD contrastive loss, ablation losses, Adam, pipeline.

The training signal comes entirely from precomputed consistency/discrepancy
metrics.  For a positive pair (v1, v2) -- any ordered pair with c > 0 -- the
CD loss is

    -log [ c[v1,v2] * exp(cos(e1, e2)/tau)
           / sum over v~ of d[v1,v~] * exp(cos(e1, e~)/tau) ]

where the candidate sum runs over the whole joint node set (or a sampled
subset).  Discrepancies are realized on demand from the colsum identity and
the rank-1 factors, so no dense discrepancy matrix ever exists.

Gradients are closed-form (no autodiff); every loss has a finite-difference
test in the suite.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import MetricSet

log = logging.getLogger(__name__)

VARIANTS = ("CDR", "CDR-P", "CDR-F", "CDR-R",
            "w/o-c", "w/o-d", "w/o-cd", "Origin", "MSE", "CE")
LOSS_KINDS = ("CD", "Origin", "MSE", "CE")


@dataclass
class TrainConfig:
    dim: int = 64
    tau: float = 1.0
    learning_rate: float = 0.001
    batch_size: int = 1024
    patience: int = 10
    seed: int = 0
    negatives: int | None = None       # None = full candidate set
    loss: str = "CD"
    binarize_c: bool = False
    binarize_d: bool = False
    max_epochs: int = 500

    def validate(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.negatives is not None and self.negatives < 1:
            raise ValueError("sampled negative count must be >= 1")


@dataclass
class EmbeddingTable:
    """Dense per-node embeddings; columns beyond trainable_cols are frozen."""

    vectors: np.ndarray
    role: str                 # 'pretrain' | 'finetune' | 'concat'
    trainable_cols: int

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_rows(self) -> int:
        return self.vectors.shape[0]

    def frozen_slice(self) -> np.ndarray:
        return self.vectors[:, self.trainable_cols:]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.vectors.copy(), self.role, self.trainable_cols)


def init_embeddings(n_rows: int, dim: int, seed: int) -> EmbeddingTable:
    """Uniform init on [-1/sqrt(dim), +1/sqrt(dim)], deterministic per seed."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(dim)
    vectors = rng.uniform(-bound, bound, size=(n_rows, dim)).astype(np.float64)
    # A zero row would make cosine undefined; resample (practically unreachable).
    while True:
        dead = np.flatnonzero(np.linalg.norm(vectors, axis=1) == 0)
        if dead.size == 0:
            break
        vectors[dead] = rng.uniform(-bound, bound, size=(dead.size, dim))
    return EmbeddingTable(vectors, "pretrain", trainable_cols=dim)


@dataclass
class Batch:
    """One slice of the positive-pair set Q plus its candidate universe."""

    anchors: np.ndarray
    positives: np.ndarray
    c_values: np.ndarray
    candidates: np.ndarray | None = None   # None = all nodes


# ---------------------------------------------------------------------------
# Metric row realization
# ---------------------------------------------------------------------------

def consistency_rows(metrics: MetricSet, rows: np.ndarray,
                     cols: np.ndarray | None = None) -> np.ndarray:
    dense = metrics.C[rows].toarray()
    return dense if cols is None else dense[:, cols]


def discrepancy_rows(metrics: MetricSet, rows: np.ndarray,
                     cols: np.ndarray | None = None,
                     binarize: bool = False) -> np.ndarray:
    """Dense discrepancy rows via the colsum identity / rank-1 factors.

    Self pairs are zero; tiny negative residues from the subtraction are
    clamped to keep d >= 0.
    """
    csub = consistency_rows(metrics, rows, cols)
    colsum = metrics.colsum if cols is None else metrics.colsum[cols]
    D = colsum[None, :] - csub
    if metrics.stage == "finetune":
        nt = metrics.n_tuples
        col_ids = np.arange(metrics.n_nodes) if cols is None else cols
        col_is_tuple = col_ids < nt
        row_is_tuple = rows < nt
        cross = row_is_tuple[:, None] != col_is_tuple[None, :]
        rank1 = metrics.cross_a[rows][:, None] * metrics.cross_b[col_ids][None, :]
        D = np.where(cross, rank1, D)
    col_ids = np.arange(metrics.n_nodes) if cols is None else cols
    self_pos = rows[:, None] == col_ids[None, :]
    D[self_pos] = 0.0
    np.maximum(D, 0.0, out=D)
    if binarize:
        D = (D > 0).astype(np.float64)
    return D


def pair_discrepancies(metrics: MetricSet, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    """d for explicit pairs, without realizing whole rows."""
    out = np.empty(v1.shape[0], dtype=np.float64)
    for i, (a, b) in enumerate(zip(v1, v2)):
        out[i] = metrics.discrepancy(int(a), int(b))
    return out


# ---------------------------------------------------------------------------
# CD loss
# ---------------------------------------------------------------------------

@dataclass
class CDLossResult:
    loss: float
    per_pair: np.ndarray      # NaN for skipped pairs
    skipped: int


def _normalized(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(vectors, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return vectors / safe[:, None], safe


def _cd_forward(batch: Batch, metrics: MetricSet, table: EmbeddingTable,
                tau: float, binarize_c: bool, binarize_d: bool):
    """Shared forward pass: cosine rows, candidate weights, denominators."""
    uniq, inv = np.unique(batch.anchors, return_inverse=True)
    cols = batch.candidates
    if cols is not None:
        cols = np.unique(np.concatenate([cols, batch.positives]))
    unit, norms = _normalized(table.vectors)
    cand_unit = unit if cols is None else unit[cols]
    cos = unit[uniq] @ cand_unit.T
    expd = np.exp(cos / tau)
    D = discrepancy_rows(metrics, uniq, cols, binarize=binarize_d)
    den = (D * expd).sum(axis=1)

    if cols is None:
        pos_col = batch.positives
    else:
        pos_col = np.searchsorted(cols, batch.positives)
    pos_cos = cos[inv, pos_col]
    c_num = np.ones_like(batch.c_values) if binarize_c else batch.c_values
    valid_anchor = den > 0.0
    valid = valid_anchor[inv]
    per_pair = np.full(batch.anchors.shape[0], np.nan)
    per_pair[valid] = (-np.log(c_num[valid]) - pos_cos[valid] / tau
                       + np.log(den[inv][valid]))
    ctx = dict(uniq=uniq, inv=inv, cols=cols, unit=unit, norms=norms, cos=cos,
               expd=expd, D=D, den=den, pos_col=pos_col, valid=valid,
               valid_anchor=valid_anchor)
    return per_pair, ctx


def cd_loss(batch: Batch, metrics: MetricSet, table: EmbeddingTable, tau: float,
            binarize_c: bool = False, binarize_d: bool = False) -> CDLossResult:
    """Contrastive loss over the batch; per-pair terms feed the correlation
    analysis.  Anchors whose entire candidate mass is zero are skipped and
    tallied rather than producing -inf."""
    per_pair, ctx = _cd_forward(batch, metrics, table, tau, binarize_c, binarize_d)
    skipped = int(np.isnan(per_pair).sum())
    loss = float(np.nansum(per_pair)) if skipped < per_pair.size else 0.0
    return CDLossResult(loss=loss, per_pair=per_pair, skipped=skipped)


def _cd_backward(ctx: dict, table: EmbeddingTable, tau: float) -> np.ndarray:
    uniq, inv, cols = ctx["uniq"], ctx["inv"], ctx["cols"]
    unit, norms, cos = ctx["unit"], ctx["norms"], ctx["cos"]
    expd, D, den = ctx["expd"], ctx["D"], ctx["den"]
    valid, valid_anchor = ctx["valid"], ctx["valid_anchor"]

    n_cand = cos.shape[1]
    G = np.zeros((uniq.shape[0], n_cand))
    # Denominator softmax term, once per pair sharing the anchor.
    k = np.bincount(inv[valid], minlength=uniq.shape[0]).astype(np.float64)
    safe_den = np.where(valid_anchor, den, 1.0)
    G += (k / safe_den / tau)[:, None] * (D * expd)
    # Positive-cosine term.
    np.add.at(G, (inv[valid], ctx["pos_col"][valid]), -1.0 / tau)

    cand_idx = np.arange(table.n_rows) if cols is None else cols
    cand_unit = unit if cols is None else unit[cand_idx]

    grad = np.zeros_like(table.vectors)
    row_dot = (G * cos).sum(axis=1)
    anchor_part = (G @ cand_unit - row_dot[:, None] * unit[uniq]) / norms[uniq][:, None]
    np.add.at(grad, uniq, anchor_part)
    col_dot = (G * cos).sum(axis=0)
    cand_part = (G.T @ unit[uniq] - col_dot[:, None] * cand_unit) / norms[cand_idx][:, None]
    np.add.at(grad, cand_idx, cand_part)

    grad[:, table.trainable_cols:] = 0.0
    return grad


def cd_loss_grad(batch: Batch, metrics: MetricSet, table: EmbeddingTable,
                 tau: float, binarize_c: bool = False,
                 binarize_d: bool = False) -> np.ndarray:
    """Analytic gradient of the batch CD loss w.r.t. every embedding row.

    Frozen columns come back exactly zero; so do rows that only appear as
    candidates with zero discrepancy weight.
    """
    _, ctx = _cd_forward(batch, metrics, table, tau, binarize_c, binarize_d)
    return _cd_backward(ctx, table, tau)


def cd_loss_and_grad(batch: Batch, metrics: MetricSet, table: EmbeddingTable,
                     tau: float, binarize_c: bool = False,
                     binarize_d: bool = False) -> tuple[CDLossResult, np.ndarray]:
    """Loss and gradient off a single shared forward pass."""
    per_pair, ctx = _cd_forward(batch, metrics, table, tau, binarize_c, binarize_d)
    skipped = int(np.isnan(per_pair).sum())
    loss = float(np.nansum(per_pair)) if skipped < per_pair.size else 0.0
    return CDLossResult(loss, per_pair, skipped), _cd_backward(ctx, table, tau)


# ---------------------------------------------------------------------------
# Ablation losses over explicit pairs (reference forms + gradients)
# ---------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_CE_CLAMP = 1e-7


def _pair_arrays(batch: Batch, metrics: MetricSet):
    v1, v2 = batch.anchors, batch.positives
    c = batch.c_values
    d = pair_discrepancies(metrics, v1, v2)
    return v1, v2, c, d


def origin_loss(batch: Batch, metrics: MetricSet, table: EmbeddingTable) -> float:
    """Sum of (d - c) * sigmoid(e1 . e2) over the pairs."""
    v1, v2, c, d = _pair_arrays(batch, metrics)
    x = (table.vectors[v1] * table.vectors[v2]).sum(axis=1)
    return float(((d - c) * _sigmoid(x)).sum())


def origin_loss_grad(batch: Batch, metrics: MetricSet,
                     table: EmbeddingTable) -> np.ndarray:
    v1, v2, c, d = _pair_arrays(batch, metrics)
    V = table.vectors
    x = (V[v1] * V[v2]).sum(axis=1)
    s = _sigmoid(x)
    coef = (d - c) * s * (1.0 - s)
    grad = np.zeros_like(V)
    np.add.at(grad, v1, coef[:, None] * V[v2])
    np.add.at(grad, v2, coef[:, None] * V[v1])
    grad[:, table.trainable_cols:] = 0.0
    return grad


def ce_loss(batch: Batch, metrics: MetricSet, table: EmbeddingTable) -> float:
    """Weighted binary cross-entropy: c on the positive side, d on the
    negative side, sigmoid clamped away from 0/1 before the log."""
    v1, v2, c, d = _pair_arrays(batch, metrics)
    x = (table.vectors[v1] * table.vectors[v2]).sum(axis=1)
    s = np.clip(_sigmoid(x), _CE_CLAMP, 1.0 - _CE_CLAMP)
    return float((-c * np.log(s) - d * np.log(1.0 - s)).sum())


def ce_loss_grad(batch: Batch, metrics: MetricSet,
                 table: EmbeddingTable) -> np.ndarray:
    v1, v2, c, d = _pair_arrays(batch, metrics)
    V = table.vectors
    x = (V[v1] * V[v2]).sum(axis=1)
    s = _sigmoid(x)
    # In the clamped region the loss is locally constant in x.
    active = (s > _CE_CLAMP) & (s < 1.0 - _CE_CLAMP)
    coef = np.where(active, -c * (1.0 - s) + d * s, 0.0)
    grad = np.zeros_like(V)
    np.add.at(grad, v1, coef[:, None] * V[v2])
    np.add.at(grad, v2, coef[:, None] * V[v1])
    grad[:, table.trainable_cols:] = 0.0
    return grad


def mse_loss(batch: Batch, metrics: MetricSet, table: EmbeddingTable) -> float:
    """Squared error between sigmoid(e1 . e2) and sigmoid(c - d)."""
    v1, v2, c, d = _pair_arrays(batch, metrics)
    x = (table.vectors[v1] * table.vectors[v2]).sum(axis=1)
    target = _sigmoid(c - d)
    return float(((_sigmoid(x) - target) ** 2).sum())


def mse_loss_grad(batch: Batch, metrics: MetricSet,
                  table: EmbeddingTable) -> np.ndarray:
    v1, v2, c, d = _pair_arrays(batch, metrics)
    V = table.vectors
    x = (V[v1] * V[v2]).sum(axis=1)
    s = _sigmoid(x)
    coef = 2.0 * (s - _sigmoid(c - d)) * s * (1.0 - s)
    grad = np.zeros_like(V)
    np.add.at(grad, v1, coef[:, None] * V[v2])
    np.add.at(grad, v2, coef[:, None] * V[v1])
    grad[:, table.trainable_cols:] = 0.0
    return grad


# ---------------------------------------------------------------------------
# Row-vectorized ablation losses used by the training loop
# ---------------------------------------------------------------------------

def _row_loss_grad(kind: str, metrics: MetricSet, table: EmbeddingTable,
                   anchors: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and gradient of sum over v2 of f(c, d, e_a . e_v2) for full rows.

    Mathematically identical to summing the pairwise forms over every
    candidate; realizing c/d rows densely keeps it O(rows * N * dim).
    """
    V = table.vectors
    X = V[anchors] @ V.T
    C = consistency_rows(metrics, anchors)
    D = discrepancy_rows(metrics, anchors)
    keep = anchors[:, None] != np.arange(table.n_rows)[None, :]  # drop self pairs
    C *= keep
    s = _sigmoid(X)
    if kind == "Origin":
        loss = float(((D - C) * s).sum())
        dldx = (D - C) * s * (1.0 - s)
    elif kind == "CE":
        sc = np.clip(s, _CE_CLAMP, 1.0 - _CE_CLAMP)
        loss = float((-C * np.log(sc) - D * np.log(1.0 - sc)).sum())
        active = (s > _CE_CLAMP) & (s < 1.0 - _CE_CLAMP)
        dldx = np.where(active, -C * (1.0 - s) + D * s, 0.0)
    elif kind == "MSE":
        target = _sigmoid(C - D)
        sq = (s - target) ** 2
        loss = float((sq * keep).sum())
        dldx = 2.0 * (s - target) * s * (1.0 - s) * keep
    else:
        raise ValueError(f"row loss does not support {kind!r}")
    grad = np.zeros_like(V)
    np.add.at(grad, anchors, dldx @ V)
    grad += dldx.T @ V[anchors]
    grad[:, table.trainable_cols:] = 0.0
    return loss, grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_shape(cls, shape: tuple[int, ...]) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape))


def adam_step(table: EmbeddingTable, grad: np.ndarray, state: AdamState,
              lr: float) -> tuple[EmbeddingTable, AdamState]:
    """Standard bias-corrected Adam update on the trainable slice only."""
    k = table.trainable_cols
    g = grad[:, :k]
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    table.vectors[:, :k] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return table, state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_metric: float | None
    patience_left: int
    skipped_pairs: int = 0


@dataclass
class StageResult:
    table: EmbeddingTable
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1


def _iter_cd_batches(pairs, cfg: TrainConfig, rng: np.random.Generator,
                     n_nodes: int):
    v1, v2, c = pairs
    order = rng.permutation(v1.shape[0])
    for lo in range(0, order.shape[0], cfg.batch_size):
        idx = order[lo : lo + cfg.batch_size]
        cands = None
        if cfg.negatives is not None:
            cands = rng.choice(n_nodes, size=min(cfg.negatives, n_nodes),
                               replace=False)
        yield Batch(v1[idx], v2[idx], c[idx], candidates=cands)


def train_stage(metrics: MetricSet, table: EmbeddingTable, cfg: TrainConfig,
                validator=None, rng: np.random.Generator | None = None) -> StageResult:
    """Optimize the trainable slice of ``table`` against one metric set.

    Early stopping tracks the validator metric (higher is better) when one is
    given, otherwise the epoch training loss; the best snapshot is returned,
    not the last.
    """
    cfg.validate()
    rng = rng or np.random.default_rng(cfg.seed)
    pairs = metrics.positive_pairs()
    if pairs[0].size == 0:
        raise ValueError("no positive-consistency pairs to train on "
                         "(the consistency matrix is empty off-diagonal)")
    state = AdamState.for_shape((table.n_rows, table.trainable_cols))
    best = table.copy()
    best_score = -np.inf
    best_epoch = -1
    patience_left = cfg.patience
    history: list[EpochRecord] = []

    all_nodes = np.arange(table.n_rows, dtype=np.int64)
    for epoch in range(cfg.max_epochs):
        total = 0.0
        skipped = 0
        if cfg.loss == "CD":
            denom = 0
            for batch in _iter_cd_batches(pairs, cfg, rng, table.n_rows):
                res, grad = cd_loss_and_grad(batch, metrics, table, cfg.tau,
                                             cfg.binarize_c, cfg.binarize_d)
                table, state = adam_step(table, grad, state, cfg.learning_rate)
                total += res.loss
                skipped += res.skipped
                denom += batch.anchors.shape[0] - res.skipped
            mean_loss = total / max(denom, 1)
        else:
            order = rng.permutation(all_nodes)
            for lo in range(0, order.shape[0], cfg.batch_size):
                anchors = order[lo : lo + cfg.batch_size]
                loss, grad = _row_loss_grad(cfg.loss, metrics, table, anchors)
                table, state = adam_step(table, grad, state, cfg.learning_rate)
                total += loss
            mean_loss = total / all_nodes.shape[0]

        val = None if validator is None else float(validator(table))
        score = val if validator is not None else -mean_loss
        if score > best_score:
            best_score = score
            best = table.copy()
            best_epoch = epoch
            patience_left = cfg.patience
        else:
            patience_left -= 1
        history.append(EpochRecord(epoch, mean_loss, val, patience_left, skipped))
        log.debug("epoch %d loss %.6f val %s patience %d",
                  epoch, mean_loss, val, patience_left)
        if patience_left <= 0:
            break
    return StageResult(table=best, history=history, best_epoch=best_epoch)


# ---------------------------------------------------------------------------
# Two-stage pipeline
# ---------------------------------------------------------------------------

def pretrain(metrics: MetricSet, cfg: TrainConfig,
             validator=None) -> StageResult:
    """Stage one: train fresh embeddings against the member metrics."""
    table = init_embeddings(metrics.n_nodes, cfg.dim, cfg.seed)
    return train_stage(metrics, table, cfg, validator=validator,
                       rng=np.random.default_rng(cfg.seed))


def finetune(pre_table: EmbeddingTable | None, metrics: MetricSet,
             cfg: TrainConfig, validator=None) -> StageResult:
    """Stage two: adapt to the tuple-interaction metrics.

    With a pre-trained table, the trainable half starts as a copy of it and
    the original is concatenated as a frozen feature block; without one the
    embeddings are randomly initialized (interaction-only mode).
    """
    if pre_table is not None:
        vectors = np.hstack([pre_table.vectors.copy(), pre_table.vectors.copy()])
        table = EmbeddingTable(vectors, role="concat",
                               trainable_cols=pre_table.vectors.shape[1])
    else:
        table = init_embeddings(metrics.n_nodes, cfg.dim, cfg.seed)
        table = EmbeddingTable(table.vectors, role="finetune",
                               trainable_cols=cfg.dim)
    # Offset the stream so stage two does not replay stage-one randomness.
    rng = np.random.default_rng(cfg.seed + 0x5EED)
    return train_stage(metrics, table, cfg, validator=validator, rng=rng)


@dataclass
class VariantResult:
    variant: str
    table: EmbeddingTable
    pretrain_result: StageResult | None
    finetune_result: StageResult | None
    provenance: dict


def run_variant(graph, variant: str, pre_cfg: TrainConfig, fine_cfg: TrainConfig,
                validator=None) -> VariantResult:
    """Run one pipeline variant end to end on an already-split graph.

    ``graph.Y`` must hold the training portion of the tuple interactions.
    Binarization and loss-swap variants reuse the full pipeline with the
    corresponding config overrides in both stages.
    """
    from .metrics import build_member_metrics, build_tuple_metrics

    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    overrides = {}
    if variant == "w/o-c":
        overrides = {"binarize_c": True}
    elif variant == "w/o-d":
        overrides = {"binarize_d": True}
    elif variant == "w/o-cd":
        overrides = {"binarize_c": True, "binarize_d": True}
    elif variant in ("Origin", "MSE", "CE"):
        overrides = {"loss": variant}
    pre_cfg = replace(pre_cfg, **overrides)
    fine_cfg = replace(fine_cfg, **overrides)

    needs_member = variant not in ("CDR-F",)
    needs_tuple = variant not in ("CDR-P",)
    if needs_member and (graph.X.edge_count == 0 or graph.Z.edge_count == 0):
        raise ValueError(f"variant {variant} needs member interactions and "
                         "affiliations")
    if needs_tuple and graph.Y.edge_count == 0:
        raise ValueError(f"variant {variant} needs tuple interactions "
                         "(use CDR-P in extreme cold start)")

    member_metrics = build_member_metrics(graph) if needs_member else None
    tuple_metrics = build_tuple_metrics(graph.Y) if needs_tuple else None

    start = time.perf_counter()
    pre_res = fine_res = None
    if variant == "CDR-P":
        pre_res = pretrain(member_metrics, pre_cfg, validator)
        table = pre_res.table
    elif variant == "CDR-F":
        fine_res = finetune(None, tuple_metrics, fine_cfg, validator)
        table = fine_res.table
    elif variant == "CDR-R":
        # Stages swap their data, not their roles.
        pre_res = pretrain(tuple_metrics, pre_cfg, validator)
        fine_res = finetune(pre_res.table, member_metrics, fine_cfg, validator)
        table = fine_res.table
    else:  # CDR and its binarization / loss ablations
        pre_res = pretrain(member_metrics, pre_cfg, validator)
        fine_res = finetune(pre_res.table, tuple_metrics, fine_cfg, validator)
        table = fine_res.table

    provenance = {
        "variant": variant,
        "pretrain_epochs": len(pre_res.history) if pre_res else 0,
        "finetune_epochs": len(fine_res.history) if fine_res else 0,
        "wall_clock_s": round(time.perf_counter() - start, 3),
        "dim": table.dim,
        "trainable_cols": table.trainable_cols,
    }
    return VariantResult(variant, table, pre_res, fine_res, provenance)


def per_pair_losses(metrics: MetricSet, table: EmbeddingTable, tau: float,
                    batch_size: int = 8192) -> dict[str, np.ndarray]:
    """Final-model CD loss per positive pair, with that pair's c and d.

    Feeds the consistency/discrepancy-vs-loss correlation analysis.
    """
    v1, v2, c = metrics.positive_pairs()
    losses = np.empty(v1.shape[0])
    for lo in range(0, v1.shape[0], batch_size):
        sl = slice(lo, lo + batch_size)
        res = cd_loss(Batch(v1[sl], v2[sl], c[sl]), metrics, table, tau)
        losses[sl] = res.per_pair
    d = np.empty(v1.shape[0])
    for lo in range(0, v1.shape[0], batch_size):
        sl = slice(lo, lo + batch_size)
        rows_u, inv = np.unique(v1[sl], return_inverse=True)
        # d looked up via the identity, column-sliced per pair.
        D = discrepancy_rows(metrics, rows_u)
        d[sl] = D[inv, v2[sl]]
    return {"v1": v1, "v2": v2, "c": c, "d": d, "loss": losses}
