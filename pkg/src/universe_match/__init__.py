"""Partial graph matching through a learned universe of anchor points."""
from .core import (FEATURE_MERGED, NODE_MERGED, OUTLIER, GraphInstance, MatchingError, NodeType,
                   UniverseSpec, as_matching, universe_targets)
from .affinity import UniverseAffinity, UniverseMetric, build_ku, forward, pairwise_affinity, qap_score
from .loss import PairBatchItem, bce_loss, pair_loss
from .solver import (UniverseAssignment, brute_force_assignment, hungarian, infer_universe, outlier_filter,
                     reconstruct_pairwise)
from .multigraph import MatchSession, match_universe, mixture_pipeline, spectral_cluster
from .metrics import accuracy, clustering_metrics, f1, match_types
from .datagen import GenConfig, InstanceSet, derive_pairwise_gt, generate, load_instance_set, save_instance_set
from .train import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
