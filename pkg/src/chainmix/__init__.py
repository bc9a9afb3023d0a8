"""chainmix: soft clustering of weekly check-in sequences with a mixture of Markov chains."""

from .analysis import (
    ClusterReport,
    ClusterSummary,
    assign_user,
    build_report,
    cluster_sizes_sequences,
    cluster_sizes_users,
    forecast_user,
    popularity_vector,
    render_report_text,
    report_to_json,
    top_categories,
    top_transitions,
)
from .em import (
    DegeneracyError,
    EmConfig,
    FitResult,
    PosteriorMatrix,
    e_step,
    fit,
    initialize,
    m_step,
)
from .ingest import (
    WEEPLACES_CATEGORIES,
    CheckinRecord,
    IngestConfig,
    ParseError,
    build_sequences,
    downsample_per_user,
    median_sequences_per_user,
    parse_checkins,
    read_sequences,
    write_sequences,
)
from .model import (
    CategorySet,
    ChainParams,
    ConvergenceError,
    MixtureModel,
    Sequence,
    SequenceDataset,
    corpus_log_likelihood,
    log_prob_matrix,
    mixture_log_prob,
    sequence_log_prob,
    stationary_distribution,
)
from .synth import SynthConfig, read_labels, sample, write_labels

__version__ = "0.1.0"

__all__ = [
    "CategorySet",
    "ChainParams",
    "CheckinRecord",
    "ClusterReport",
    "ClusterSummary",
    "ConvergenceError",
    "DegeneracyError",
    "EmConfig",
    "FitResult",
    "IngestConfig",
    "MixtureModel",
    "ParseError",
    "PosteriorMatrix",
    "Sequence",
    "SequenceDataset",
    "SynthConfig",
    "WEEPLACES_CATEGORIES",
    "assign_user",
    "build_report",
    "build_sequences",
    "cluster_sizes_sequences",
    "cluster_sizes_users",
    "corpus_log_likelihood",
    "downsample_per_user",
    "e_step",
    "fit",
    "forecast_user",
    "initialize",
    "log_prob_matrix",
    "m_step",
    "median_sequences_per_user",
    "mixture_log_prob",
    "parse_checkins",
    "popularity_vector",
    "read_labels",
    "read_sequences",
    "render_report_text",
    "report_to_json",
    "sample",
    "sequence_log_prob",
    "stationary_distribution",
    "top_categories",
    "top_transitions",
    "write_labels",
    "write_sequences",
]
