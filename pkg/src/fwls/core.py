"""Domain types and row-level expansion for feature-weighted linear stacking.

A blend of L model prediction streams g_i weighted by M per-example
meta-features f_j is a linear model over the M*L product columns
f_j(x)*g_i(x).  This module fixes the column layout of that implied design
matrix and provides the row-level expansion and prediction primitives; the
heavy single-pass accumulation lives in :mod:`fwls.gram`.
"""

import numpy as np

from .errors import DimensionMismatch, NonFiniteData

__all__ = [
    "StackedDataset",
    "DesignMapping",
    "BlendCoefficients",
    "MetaFeatureScaler",
    "design_row",
    "design_matrix",
    "blend_predict",
    "augment_constants",
]


def _as_float_matrix(arr, name):
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-d, got shape {out.shape}")
    return out


def _check_finite(arr, name, row_ids=None):
    if np.isfinite(arr).all():
        return
    bad = np.where(~np.isfinite(arr))
    row = int(bad[0][0])
    label = row_ids[row] if row_ids is not None else str(row)
    raise NonFiniteData(
        f"non-finite value in {name} at row {label}"
        + (f", column {int(bad[1][0])}" if arr.ndim == 2 else "")
    )


class DesignMapping:
    """Bijection between (model i, meta-feature j) pairs and design columns.

    Column ``j*L + i`` holds the product f_j*g_i: columns group by
    meta-feature with models varying fastest.  This ordering is canonical —
    it is also the on-disk layout of saved accumulator state.
    """

    __slots__ = ("n_models", "n_features")

    def __init__(self, n_models: int, n_features: int):
        if n_models < 1 or n_features < 1:
            raise DimensionMismatch(
                f"need at least one model and one meta-feature, "
                f"got L={n_models}, M={n_features}"
            )
        self.n_models = int(n_models)
        self.n_features = int(n_features)

    @property
    def dim(self) -> int:
        return self.n_models * self.n_features

    def column_index(self, model_i: int, feat_j: int) -> int:
        if not (0 <= model_i < self.n_models and 0 <= feat_j < self.n_features):
            raise DimensionMismatch(
                f"index ({model_i}, {feat_j}) out of range for "
                f"L={self.n_models}, M={self.n_features}"
            )
        return feat_j * self.n_models + model_i

    def column_pair(self, col: int):
        """Inverse of :meth:`column_index`."""
        if not 0 <= col < self.dim:
            raise DimensionMismatch(f"column {col} out of range for D={self.dim}")
        return col % self.n_models, col // self.n_models

    def __eq__(self, other):
        return (isinstance(other, DesignMapping)
                and self.n_models == other.n_models
                and self.n_features == other.n_features)

    def __repr__(self):
        return f"DesignMapping(n_models={self.n_models}, n_features={self.n_features})"


def column_index(model_i, feat_j, n_models):
    """Module-level convenience for the canonical column formula j*L + i."""
    return feat_j * n_models + model_i


class StackedDataset:
    """Aligned per-row targets, model predictions, and meta-features.

    Immutable after construction; arrays are validated finite on ingestion
    and any offending row is reported by its id (or index when ids are
    absent).
    """

    __slots__ = ("n_rows", "n_models", "n_features", "targets",
                 "model_preds", "meta_feats", "row_ids")

    def __init__(self, targets, model_preds, meta_feats, row_ids=None):
        y = np.ascontiguousarray(targets, dtype=np.float64)
        if y.ndim != 1:
            raise DimensionMismatch(f"targets must be 1-d, got shape {y.shape}")
        g = _as_float_matrix(model_preds, "model_preds")
        f = _as_float_matrix(meta_feats, "meta_feats")
        n = y.shape[0]
        if n < 1:
            raise DimensionMismatch("dataset must have at least one row")
        if g.shape[0] != n or f.shape[0] != n:
            raise DimensionMismatch(
                f"row counts disagree: targets {n}, model_preds {g.shape[0]}, "
                f"meta_feats {f.shape[0]}"
            )
        if g.shape[1] < 1 or f.shape[1] < 1:
            raise DimensionMismatch("need at least one model and one meta-feature")
        if row_ids is not None:
            row_ids = list(row_ids)
            if len(row_ids) != n:
                raise DimensionMismatch(
                    f"row_ids length {len(row_ids)} != n_rows {n}"
                )
        _check_finite(y, "targets", row_ids)
        _check_finite(g, "model_preds", row_ids)
        _check_finite(f, "meta_feats", row_ids)
        y.setflags(write=False)
        g.setflags(write=False)
        f.setflags(write=False)
        self.targets = y
        self.model_preds = g
        self.meta_feats = f
        self.row_ids = row_ids
        self.n_rows = n
        self.n_models = g.shape[1]
        self.n_features = f.shape[1]

    @property
    def mapping(self) -> DesignMapping:
        return DesignMapping(self.n_models, self.n_features)

    def subset_features(self, feat_indices):
        """Dataset restricted to the given meta-feature columns (in order)."""
        idx = list(feat_indices)
        if not idx:
            raise DimensionMismatch("feature subset must be non-empty")
        return StackedDataset(self.targets, self.model_preds,
                              self.meta_feats[:, idx], self.row_ids)

    def take_rows(self, row_indices):
        ids = None
        if self.row_ids is not None:
            ids = [self.row_ids[int(r)] for r in row_indices]
        return StackedDataset(self.targets[row_indices],
                              self.model_preds[row_indices],
                              self.meta_feats[row_indices], ids)

    def __repr__(self):
        return (f"StackedDataset(n_rows={self.n_rows}, "
                f"n_models={self.n_models}, n_features={self.n_features})")


class MetaFeatureScaler:
    """Optional affine standardization of meta-feature columns.

    Off by default everywhere — blending uses raw meta-feature values.
    Constant columns (e.g. an injected all-ones feature) are passed through
    unchanged so intercept structure survives scaling.
    """

    __slots__ = ("mean", "scale")

    def __init__(self, mean, scale):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, meta_feats):
        f = np.asarray(meta_feats, dtype=np.float64)
        mean = f.mean(axis=0)
        sd = f.std(axis=0)
        constant = sd < 1e-12
        mean[constant] = 0.0
        sd[constant] = 1.0
        return cls(mean, sd)

    def transform(self, meta_feats):
        return (np.asarray(meta_feats, dtype=np.float64) - self.mean) / self.scale


class BlendCoefficients:
    """Fitted product-column weights, evaluable as a predictor.

    ``v[j, i]`` weighs meta-feature j applied to model i; the flat vector
    ``v.ravel()`` is in canonical design-column order.
    """

    __slots__ = ("v", "lam", "n_models", "n_features", "scaler")

    def __init__(self, v, lam, scaler=None):
        v = _as_float_matrix(v, "coefficients")
        if not np.isfinite(v).all():
            raise NonFiniteData("non-finite blend coefficient")
        if lam < 0:
            raise ValueError(f"ridge penalty must be nonnegative, got {lam}")
        v.setflags(write=False)
        self.v = v
        self.lam = float(lam)
        self.n_features, self.n_models = v.shape
        self.scaler = scaler

    @classmethod
    def from_flat(cls, flat, mapping, lam, scaler=None):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (mapping.dim,):
            raise DimensionMismatch(
                f"flat coefficient length {flat.shape} != D={mapping.dim}"
            )
        return cls(flat.reshape(mapping.n_features, mapping.n_models),
                   lam, scaler)

    @property
    def flat(self):
        return self.v.ravel()

    def predict(self, model_preds, meta_feats):
        """Blend predictions for a batch: rows of g against rows of f."""
        g = np.atleast_2d(np.asarray(model_preds, dtype=np.float64))
        f = np.atleast_2d(np.asarray(meta_feats, dtype=np.float64))
        if g.shape[1] != self.n_models or f.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"expected L={self.n_models}, M={self.n_features}; "
                f"got {g.shape[1]}, {f.shape[1]}"
            )
        if self.scaler is not None:
            f = self.scaler.transform(f)
        # sum_j f_j * (g @ v[j]) == design-row dot flat coefficients
        return np.einsum("nj,ni,ji->n", f, g, self.v)

    def __repr__(self):
        return (f"BlendCoefficients(n_models={self.n_models}, "
                f"n_features={self.n_features}, lambda={self.lam})")


def design_row(g, f):
    """Expand one example into its M*L product features, canonical order."""
    g = np.asarray(g, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if g.ndim != 1 or f.ndim != 1:
        raise DimensionMismatch("design_row expects 1-d g and f")
    return np.outer(f, g).ravel()


def design_matrix(model_preds, meta_feats):
    """Materialize the full N x (M*L) product design (testing/small N only).

    Production paths accumulate normal equations without this matrix; it
    exists as the brute-force reference.
    """
    g = _as_float_matrix(model_preds, "model_preds")
    f = _as_float_matrix(meta_feats, "meta_feats")
    if g.shape[0] != f.shape[0]:
        raise DimensionMismatch("model_preds/meta_feats row mismatch")
    n = g.shape[0]
    return np.einsum("nj,ni->nji", f, g).reshape(n, f.shape[1] * g.shape[1])


def blend_predict(coeffs: BlendCoefficients, g, f) -> float:
    """Single-example blend: exactly dot(design_row(g, f), flat v)."""
    g = np.asarray(g, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if g.shape != (coeffs.n_models,) or f.shape != (coeffs.n_features,):
        raise DimensionMismatch(
            f"expected g length {coeffs.n_models} and f length "
            f"{coeffs.n_features}, got {g.shape} and {f.shape}"
        )
    if coeffs.scaler is not None:
        f = coeffs.scaler.transform(f)
    return float(np.dot(design_row(g, f), coeffs.flat))


def augment_constants(ds: StackedDataset, add_f0=True, add_g0=False):
    """Prepend an all-ones meta-feature and/or model column.

    The ones meta-feature makes the blend contain plain model stacking as a
    sub-model; the ones model column gives meta-features a direct additive
    path into the prediction.  Not idempotent — apply once at ingestion.
    """
    if not add_f0 and not add_g0:
        return ds
    g = ds.model_preds
    f = ds.meta_feats
    ones = np.ones((ds.n_rows, 1))
    if add_g0:
        g = np.hstack([ones, g])
    if add_f0:
        f = np.hstack([ones, f])
    return StackedDataset(ds.targets, g, f, ds.row_ids)
