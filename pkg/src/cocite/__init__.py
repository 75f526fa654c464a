"""Co-citation sentence similarity: datasets from citation graphs, a
compact contrastively trained encoder, and mixture-of-experts extension."""

from .config import (
    Activation,
    ConfigError,
    Granularity,
    MoEConfig,
    ModelConfig,
    RoutingStrategy,
    Scheduler,
    TrainConfig,
    middle_block,
)
from .encoder import Model, ShapeError
from .evaluation import (
    EvalMode,
    EvalReport,
    EvaluationError,
    ScoredPair,
    cosine_similarity,
    distance_and_accuracy,
    evaluate_model,
    f1max_search,
    tfidf_baseline,
)
from .checkpoint import CheckpointError, load_model, save_model
from .moe import extend_model, route
from .pipeline import (
    CitationGraph,
    DataError,
    PairDataset,
    PaperRecord,
    build_dataset,
    build_splits,
    extract_cocitations,
    ingest,
    sample_negatives,
)
from .trainer import TemperatureParam, TrainBatch, Trainer
from .vocab import UnknownDomainError, Vocabulary, build_vocabulary, tokenize

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "CheckpointError",
    "CitationGraph",
    "ConfigError",
    "DataError",
    "EvalMode",
    "EvalReport",
    "EvaluationError",
    "Granularity",
    "Model",
    "ModelConfig",
    "MoEConfig",
    "PairDataset",
    "PaperRecord",
    "RoutingStrategy",
    "Scheduler",
    "ScoredPair",
    "ShapeError",
    "TemperatureParam",
    "TrainBatch",
    "TrainConfig",
    "Trainer",
    "UnknownDomainError",
    "Vocabulary",
    "build_dataset",
    "build_splits",
    "build_vocabulary",
    "cosine_similarity",
    "distance_and_accuracy",
    "evaluate_model",
    "extend_model",
    "extract_cocitations",
    "f1max_search",
    "ingest",
    "load_model",
    "middle_block",
    "route",
    "sample_negatives",
    "save_model",
    "tfidf_baseline",
    "tokenize",
    "__version__",
]
