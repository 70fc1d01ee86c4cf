"""Support-style meta-features computed from the train split only.

Each feature maps a (user, item) pair to a finite real using train-split
statistics exclusively, so downstream blend/test evaluation never leaks.
The set mirrors the classic blending side-information family: a constant,
log activity counts for both sides, their product, rating dispersions, and
the average popularity of what the user rates.
"""

import numpy as np

__all__ = ["MetaFeatureSpec", "META_FEATURES", "compute_meta_features",
           "feature_names"]


class MetaFeatureSpec:
    """Name plus formula id; the id picks one of the implementations below."""

    __slots__ = ("name", "formula")

    def __init__(self, name, formula):
        if formula not in _FORMULAS:
            raise KeyError(f"unknown meta-feature formula {formula!r}")
        self.name = name
        self.formula = formula

    def __repr__(self):
        return f"MetaFeatureSpec({self.name!r}, {self.formula!r})"


class _TrainStats:
    """Per-user / per-item train-split summaries shared by the formulas."""

    def __init__(self, users, items, values, n_users, n_items):
        self.user_count = np.bincount(users, minlength=n_users)
        self.item_count = np.bincount(items, minlength=n_items)
        self.user_log = np.log1p(self.user_count.astype(np.float64))
        self.item_log = np.log1p(self.item_count.astype(np.float64))
        self.user_sd = _group_sd(users, values, n_users)
        self.item_sd = _group_sd(items, values, n_items)
        # mean over the user's rated items of log item support; 0 for users
        # with no train ratings
        sums = np.bincount(users, weights=self.item_log[items],
                           minlength=n_users)
        self.user_avg_item_log = sums / np.maximum(self.user_count, 1)
        self.user_avg_item_log[self.user_count == 0] = 0.0


def _group_sd(idx, vals, size):
    """Sample standard deviation per group; 0 whenever fewer than 2 values."""
    n = np.bincount(idx, minlength=size)
    s = np.bincount(idx, weights=vals, minlength=size)
    ss = np.bincount(idx, weights=vals * vals, minlength=size)
    out = np.zeros(size)
    ok = n >= 2
    var = (ss[ok] - s[ok] ** 2 / n[ok]) / (n[ok] - 1)
    out[ok] = np.sqrt(np.maximum(var, 0.0))
    return out


_FORMULAS = {
    "const": lambda st, u, i: np.ones(u.shape[0]),
    "log_item_support": lambda st, u, i: st.item_log[i],
    "log_user_support": lambda st, u, i: st.user_log[u],
    "support_product": lambda st, u, i: st.item_log[i] * st.user_log[u],
    "user_rating_sd": lambda st, u, i: st.user_sd[u],
    "item_rating_sd": lambda st, u, i: st.item_sd[i],
    "avg_rated_item_support": lambda st, u, i: st.user_avg_item_log[u],
}

# default feature set, constant first so it can serve as the base feature
META_FEATURES = tuple(MetaFeatureSpec(name, name) for name in (
    "const",
    "log_item_support",
    "log_user_support",
    "support_product",
    "user_rating_sd",
    "item_rating_sd",
    "avg_rated_item_support",
))


def feature_names(specs=META_FEATURES):
    return [s.name for s in specs]


def compute_meta_features(train_users, train_items, train_values,
                          n_users, n_items, pair_users, pair_items,
                          specs=META_FEATURES):
    """Meta-feature matrix for the given pairs, one column per spec."""
    stats = _TrainStats(train_users, train_items, train_values,
                        n_users, n_items)
    pu = np.asarray(pair_users, dtype=np.int64)
    pi = np.asarray(pair_items, dtype=np.int64)
    cols = [_FORMULAS[s.formula](stats, pu, pi) for s in specs]
    return np.column_stack(cols)
