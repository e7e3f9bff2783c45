"""Knowledge- and content-aware recommendation for strict cold-start and warm-start items."""

from .config import ExperimentConfig, load_config, parse_config
from .data import (FeatureMatrix, InteractionDataset, SplitSpec, build_normal_cold_splits,
                   build_strict_cold_splits, dataset_from_pairs, k_core_filter, load_features,
                   load_interactions)
from .errors import (AlignmentError, CheckpointError, ConfigError, DataError, EmptyDatasetError,
                     FirzenError, ParseError, TrainingError)
from .evaluation import MetricsReport, evaluate_embeddings, harmonic_mean, metrics_at_k, rank_candidates
from .graphs import FrozenGraphBundle, build_frozen_graphs, item_item_knn, sym_normalize
from .kg import KnowledgeGraph, construct_kg_from_metadata, inject_kg_noise
from .model import Ablation, FirzenModel, make_operators
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import Trainer, TrainingConfig, restore_checkpoint, save_checkpoint

__version__ = "0.1.0"
