"""Adaptive experience selection: priorities, fragment selection and the prioritized store."""

from .buffer import FragmentBuffer, TransitionRing
from .episode import Episode, EpisodeFragment, EpisodeRecorder
from .lof import FeaturePoint, feature_distance, lof_from_distances, lof_scores, pairwise_distances
from .priority import (
    PrioritySignals,
    composite_priority,
    compute_priorities,
    compute_priority_arrays,
    episode_lof,
    extract_fragments,
    normalize_losses,
    select_windows,
)
from .sumtree import SumTree

__all__ = [
    "Episode", "EpisodeFragment", "EpisodeRecorder", "FeaturePoint", "FragmentBuffer", "PrioritySignals",
    "SumTree", "TransitionRing", "composite_priority", "compute_priorities", "compute_priority_arrays",
    "episode_lof", "extract_fragments", "feature_distance", "lof_from_distances", "lof_scores",
    "normalize_losses", "pairwise_distances", "select_windows",
]
