"""Desk-scale collaborative-filtering benchmark for the blending engine.

Synthetic ratings with heavy-tailed user/item activity, three classic base
recommenders, support-style meta-features, and an end-to-end comparison of
blending strategies.
"""

from .generator import GeneratorConfig, RatingDataset, generate
from .metafeatures import META_FEATURES, MetaFeatureSpec, compute_meta_features
from .models import train_global_effects, train_item_knn, train_mf
from .runner import BenchmarkConfig, BenchmarkReport, run_benchmark

__all__ = [
    "GeneratorConfig", "RatingDataset", "generate",
    "MetaFeatureSpec", "META_FEATURES", "compute_meta_features",
    "train_global_effects", "train_mf", "train_item_knn",
    "BenchmarkConfig", "BenchmarkReport", "run_benchmark",
]
