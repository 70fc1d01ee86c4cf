"""K-fold out-of-sample evaluation and greedy meta-feature selection.

Every fit inside a fold sees only the fold's complement; held-out
predictions from all folds are pooled into a single RMSE.  Forward
selection walks the candidate meta-features in caller order and keeps each
one only if it lowers that pooled RMSE by more than an acceptance
tolerance, producing a cumulative report (set size, feature, RMSE per
accepted feature).  The merged baseline answers the obvious "why not just
add the meta-features as regressors?" question under the identical
protocol.
"""

import numpy as np

from .core import StackedDataset
from .errors import DimensionMismatch
from .gram import from_dataset
from .solver import DEFAULT_LAMBDA, solve

ACCEPT_TOL = 1e-7

__all__ = ["FoldPlan", "CvReport", "make_folds", "cv_rmse",
           "forward_select", "merged_baseline_rmse", "ACCEPT_TOL"]


class FoldPlan:
    """Deterministic balanced assignment of rows to folds."""

    __slots__ = ("n_rows", "k", "seed", "assignment")

    def __init__(self, n_rows, k, seed, assignment):
        self.n_rows = int(n_rows)
        self.k = int(k)
        self.seed = int(seed)
        self.assignment = np.asarray(assignment, dtype=np.int64)
        counts = np.bincount(self.assignment, minlength=k)
        if counts.size != k or counts.max() - counts.min() > 1:
            raise ValueError("fold sizes must differ by at most one")

    def fold_rows(self, fold):
        return np.nonzero(self.assignment == fold)[0]

    def complement_rows(self, fold):
        return np.nonzero(self.assignment != fold)[0]


def make_folds(n, k, seed=0) -> FoldPlan:
    """Balanced k-fold partition, a pure function of (n, k, seed)."""
    if not 2 <= k <= n:
        raise ValueError(f"fold count must satisfy 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    assignment[rng.permutation(n)] = np.arange(n) % k
    return FoldPlan(n, k, seed, assignment)


class CvReport:
    """Cumulative forward-selection trace, one row per accepted feature.

    ``rows`` holds (feature-set size m, feature name, pooled OOS RMSE);
    ``selected`` the meta-feature column indices in acceptance order.
    """

    __slots__ = ("rows", "lam", "seed", "k", "selected")

    def __init__(self, rows, lam, seed, k, selected):
        self.rows = list(rows)
        self.lam = float(lam)
        self.seed = int(seed)
        self.k = int(k)
        self.selected = list(selected)
        rmses = [r[2] for r in self.rows]
        if any(r < 0 for r in rmses):
            raise ValueError("negative RMSE in report")
        if any(b >= a for a, b in zip(rmses, rmses[1:])):
            raise ValueError("cumulative RMSE must be strictly decreasing")

    def to_csv(self) -> str:
        lines = ["m,feature,oos_rmse"]
        for m, name, rmse in self.rows:
            lines.append(f"{m},{name},{rmse!r}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        name_w = max([len("feature")] + [len(r[1]) for r in self.rows])
        header = f"{'m':>3}  {'feature':<{name_w}}  {'oos_rmse':>10}"
        rule = "-" * len(header)
        lines = [header, rule]
        for m, name, rmse in self.rows:
            lines.append(f"{m:>3}  {name:<{name_w}}  {rmse:>10.6f}")
        return "\n".join(lines) + "\n"

    def __repr__(self):
        return (f"CvReport(k={self.k}, lambda={self.lam}, "
                f"selected={self.selected})")


def _check_plan(ds, plan):
    if plan.n_rows != ds.n_rows:
        raise DimensionMismatch(
            f"fold plan covers {plan.n_rows} rows, dataset has {ds.n_rows}")


def cv_rmse(ds: StackedDataset, feature_subset, lam=DEFAULT_LAMBDA,
            plan: FoldPlan = None) -> float:
    """Pooled out-of-sample RMSE of the blend over the given meta-features.

    Each fold's coefficients are fit on the complement only; the guard
    below fails loudly if the bookkeeping ever lets a row into its own fit.
    """
    if plan is None:
        raise ValueError("a FoldPlan is required")
    _check_plan(ds, plan)
    sub = ds.subset_features(feature_subset)
    sse = 0.0
    seen = 0
    for fold in range(plan.k):
        held = plan.fold_rows(fold)
        train = plan.complement_rows(fold)
        # out-of-sample discipline: fit rows and predicted rows are disjoint
        # and together cover the dataset exactly once
        assert held.shape[0] + train.shape[0] == ds.n_rows
        assert not np.intersect1d(held, train).size
        fit = solve(from_dataset(sub.take_rows(train)), lam)
        preds = fit.coeffs.predict(sub.model_preds[held], sub.meta_feats[held])
        sse += float(np.sum((preds - sub.targets[held]) ** 2))
        seen += held.shape[0]
    assert seen == ds.n_rows
    return float(np.sqrt(sse / seen))


def forward_select(ds: StackedDataset, candidates, lam=DEFAULT_LAMBDA,
                   plan: FoldPlan = None, names=None,
                   base=(0,), tol=ACCEPT_TOL) -> CvReport:
    """Greedy single-pass forward selection over meta-feature columns.

    Starts from ``base`` (the constant feature by convention), walks
    ``candidates`` in the given order, and keeps a candidate iff it lowers
    the pooled OOS RMSE by more than ``tol``.  The path is order-dependent
    on purpose; the report records the cumulative RMSE after each accepted
    feature.
    """
    if plan is None:
        raise ValueError("a FoldPlan is required")
    if names is None:
        names = [f"f{j}" for j in range(ds.n_features)]
    selected = list(base)
    if not selected:
        raise ValueError("base feature set must be non-empty")
    for c in candidates:
        if c in selected:
            raise ValueError(f"candidate {c} already in the base set")
    current = cv_rmse(ds, selected, lam, plan)
    rows = [(len(selected), names[selected[-1]], current)]
    for c in candidates:
        trial = cv_rmse(ds, selected + [int(c)], lam, plan)
        if current - trial > tol:
            selected.append(int(c))
            current = trial
            rows.append((len(selected), names[int(c)], current))
    return CvReport(rows, lam, plan.seed, plan.k, selected)


def merged_baseline_rmse(ds: StackedDataset, feature_subset,
                         lam=DEFAULT_LAMBDA, plan: FoldPlan = None) -> float:
    """OOS RMSE with meta-features as additive inputs, not weight modifiers.

    The design is the plain concatenation [g_1..g_L | f_j for j in subset]:
    every selected meta-feature becomes one extra regression column.  With
    an empty subset this is exactly standard stacking on the model columns.
    """
    if plan is None:
        raise ValueError("a FoldPlan is required")
    _check_plan(ds, plan)
    cols = [ds.model_preds]
    subset = list(feature_subset)
    if subset:
        cols.append(ds.meta_feats[:, subset])
    merged = StackedDataset(ds.targets, np.hstack(cols),
                            np.ones((ds.n_rows, 1)), ds.row_ids)
    return cv_rmse(merged, [0], lam, plan)
