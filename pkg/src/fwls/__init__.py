"""Feature-weighted linear stacking.

Blend L model prediction streams with weights that are linear in M
per-example meta-features: the combined predictor is a ridge regression
over all M*L prediction/meta-feature products.  The package accumulates
the normal equations in one pass over the data (parallelizable, mergeable,
persistable bit-exactly), solves them, updates them incrementally for new
rows, models, or meta-features, and ships a cross-validation harness with
greedy meta-feature selection plus a collaborative-filtering benchmark.
"""

from .core import (BlendCoefficients, DesignMapping, MetaFeatureScaler,
                   StackedDataset, augment_constants, blend_predict,
                   design_matrix, design_row)
from .cv import CvReport, FoldPlan, cv_rmse, forward_select, make_folds, \
    merged_baseline_rmse
from .errors import FwlsError
from .gram import GramState, accumulate, from_dataset, merge, \
    parallel_accumulate
from .kernels import BACKEND
from .solver import (DEFAULT_LAMBDA, LAMBDA_GRID, InverseState, SolvedBlend,
                     extend_columns, solve, training_rmse)
from .store import (dataset_fingerprint, extend_with_feature,
                    extend_with_model, load, save)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DEFAULT_LAMBDA", "LAMBDA_GRID", "__version__",
    "BlendCoefficients", "CvReport", "DesignMapping", "FoldPlan",
    "FwlsError", "GramState", "InverseState", "MetaFeatureScaler",
    "SolvedBlend", "StackedDataset",
    "accumulate", "augment_constants", "blend_predict", "cv_rmse",
    "dataset_fingerprint", "design_matrix", "design_row", "extend_columns",
    "extend_with_feature", "extend_with_model", "forward_select",
    "from_dataset", "load", "make_folds", "merge", "merged_baseline_rmse",
    "parallel_accumulate", "save", "solve", "training_rmse",
]
