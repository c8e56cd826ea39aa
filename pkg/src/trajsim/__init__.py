"""Trajectory distance oracles, Lorentz-hyperboloid embeddings, triangle-violation
analysis, and a small embedding trainer with retrieval evaluation."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DataError,
    DimensionError,
    DivergenceError,
    TrajsimError,
)
from .evaluation import EvalReport, evaluate, hit_rate, knn, ndcg  # noqa: E402
from .fusion import FactorEmbedding, FusionPair, alpha_lo, fusion_backward, fusion_distance  # noqa: E402
from .lorentz import (  # noqa: E402
    HyperbolicPoint,
    ProjectionConfig,
    cosh_lorentz_distance,
    cosh_project,
    cosh_project_backward,
    euclidean_distance,
    lorentz_distance,
    lorentz_inner,
    vanilla_project,
)
from .metrics import (  # noqa: E402
    DistanceMatrix,
    MetricKind,
    discrete_frechet,
    distance_matrix,
    dtw,
    edr,
    hausdorff,
    sspd,
)
from .synth import gen_metric_dataset, gen_violating_dataset  # noqa: E402
from .trainer import EmbeddingModel, EncoderKind, TrainConfig, init_model, model_distance, train  # noqa: E402
from .trajectory import Dataset, Point, Trajectory, grid_cell, load_trajectories  # noqa: E402
from .violation import TripleDistances, ViolationStats, rvs, rvs_of_predicted, sample_violations, tvf  # noqa: E402

__all__ = [name for name in dir() if not name.startswith("_")]
