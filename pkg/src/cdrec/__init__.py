"""Tripartite-graph recommender driven by precomputed consistency and
discrepancy metrics and a contrastive CD loss."""

from .graph import (
    DegreeTable,
    GraphError,
    NodeKind,
    Relation,
    SplitSpec,
    TripartiteGraph,
    build_graph,
    degrees,
    load_relation,
    split_interactions,
)
from .metrics import (
    MetricBlock,
    MetricSet,
    bruteforce_metrics,
    build_colsums,
    build_consistency,
    build_member_metrics,
    build_tuple_metrics,
    delta,
    export_metrics,
    import_metrics,
)
from .model import (
    AdamState,
    Batch,
    EmbeddingTable,
    TrainConfig,
    VariantResult,
    adam_step,
    cd_loss,
    cd_loss_grad,
    ce_loss,
    finetune,
    init_embeddings,
    mse_loss,
    origin_loss,
    per_pair_losses,
    pretrain,
    run_variant,
    train_stage,
)
from .evaluate import (
    EvalReport,
    RankingTask,
    correlation_analysis,
    evaluate_embeddings,
    score,
    topk_metrics,
)

__version__ = "0.1.0"
