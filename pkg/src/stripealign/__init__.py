"""Sliding-alignment distances and metric-learning tools for stripe embeddings.

The package covers everything downstream of a stripe-partitioned feature
extractor: windowed local alignment distances, the training loss suite
with analytic gradients, identity-balanced batch sampling, cross-camera
retrieval evaluation with k-reciprocal re-ranking, parameter sweeps, and a
synthetic misalignment benchmark, all exposed both as a library and
through the ``stripealign`` command.
"""

__version__ = "0.1.0"

from .core import (
    AlignmentConfig,
    DimensionMismatchError,
    DistanceMatrix,
    EmbeddingRecord,
    EmbeddingSet,
    FormatError,
    NonFiniteValueError,
    RankingResult,
    ValidationError,
    load_embeddings,
    pool_stripes,
    save_embeddings,
    validate_set,
)
from .alignment import (
    AlignmentBreakdown,
    WindowBounds,
    combined_distance,
    directed_align,
    global_distance,
    hard_align_distance,
    lsa_distance,
    pairwise_matrix,
    stripe_distance,
    window_bounds,
)
from .losses import (
    CenterTable,
    LossBatchView,
    LossConfig,
    center_loss,
    center_update,
    gradient_check_report,
    id_loss,
    total_loss,
    triplethard_loss,
    triplethard_prehinge,
)
from .sampling import BatchSpec, sample_batch
from .evaluation import (
    SweepRow,
    cmc_at,
    evaluate_sets,
    rank_queries,
    rerank,
    sweep,
)
from .synth import SynthSpec, corrupt_partial, generate

__all__ = [
    "__version__",
    "AlignmentBreakdown",
    "AlignmentConfig",
    "BatchSpec",
    "CenterTable",
    "DimensionMismatchError",
    "DistanceMatrix",
    "EmbeddingRecord",
    "EmbeddingSet",
    "FormatError",
    "LossBatchView",
    "LossConfig",
    "NonFiniteValueError",
    "RankingResult",
    "SweepRow",
    "SynthSpec",
    "ValidationError",
    "WindowBounds",
    "center_loss",
    "center_update",
    "cmc_at",
    "combined_distance",
    "corrupt_partial",
    "directed_align",
    "evaluate_sets",
    "generate",
    "global_distance",
    "gradient_check_report",
    "hard_align_distance",
    "id_loss",
    "load_embeddings",
    "lsa_distance",
    "pairwise_matrix",
    "pool_stripes",
    "rank_queries",
    "rerank",
    "sample_batch",
    "save_embeddings",
    "stripe_distance",
    "sweep",
    "total_loss",
    "triplethard_loss",
    "triplethard_prehinge",
    "validate_set",
    "window_bounds",
]
