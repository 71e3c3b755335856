"""Diversity-aware re-ranking with multi-source determinantal point processes.

Given precomputed relevance scores and per-item attributes (appearance
features, time of day, location, arbitrary vectors), the engine produces a
top-K ranking that raises or lowers the diversity of each attribute
according to user weights and directions, by unifying per-attribute
similarity kernels on the SPD manifold's tangent space.
"""

from .attributes import (
    AttributeSpec,
    ImageRecord,
    SimilarityBundle,
    build_bundle,
    embed_geo,
    embed_time,
    inverse_distance_similarity,
    normalize_weights,
    relevance_alpha,
    similarity_matrix,
)
from .baselines import BaselineConfig, clustering_rerank, kdpp_rerank, kmeans, mmr_rerank
from .core import (
    RankedList,
    RerankConfig,
    StepDiagnostic,
    f_ms_log,
    f_ms_log_fast,
    greedy_rerank,
    unified_tangent,
)
from .dataio import (
    Query,
    SyntheticData,
    TaskConfig,
    gen_synthetic,
    load_gallery,
    load_queries,
    load_task_config,
    save_gallery,
    save_queries,
)
from .errors import DomainError, NumericalError, ValidationError
from .metrics import (
    EvalReport,
    diversity_metric,
    harmonic_mean,
    harmonic_mean_many,
    mean_average_precision,
    ncs_at_k,
    prs,
    vendi_score,
)
from .spdlinalg import (
    EigDecomp,
    ensure_spd,
    frobenius_norm,
    log_det,
    matrix_exp,
    matrix_log,
    sym_eig,
)

__version__ = "0.1.0"

__all__ = [
    "AttributeSpec",
    "BaselineConfig",
    "DomainError",
    "EigDecomp",
    "EvalReport",
    "ImageRecord",
    "NumericalError",
    "Query",
    "RankedList",
    "RerankConfig",
    "SimilarityBundle",
    "StepDiagnostic",
    "SyntheticData",
    "TaskConfig",
    "ValidationError",
    "build_bundle",
    "clustering_rerank",
    "diversity_metric",
    "embed_geo",
    "embed_time",
    "ensure_spd",
    "f_ms_log",
    "f_ms_log_fast",
    "frobenius_norm",
    "gen_synthetic",
    "greedy_rerank",
    "harmonic_mean",
    "harmonic_mean_many",
    "inverse_distance_similarity",
    "kdpp_rerank",
    "kmeans",
    "load_gallery",
    "load_queries",
    "load_task_config",
    "log_det",
    "matrix_exp",
    "matrix_log",
    "mean_average_precision",
    "mmr_rerank",
    "ncs_at_k",
    "normalize_weights",
    "prs",
    "relevance_alpha",
    "save_gallery",
    "save_queries",
    "sym_eig",
    "similarity_matrix",
    "unified_tangent",
    "vendi_score",
]
