"""Three classic recommenders used as blend inputs.

All of them train on the train split only and expose
``predict(users, items) -> values``; predictions are clipped to the rating
scale.  Their error profiles differ by construction — the baseline is
uniform-ish, matrix factorization degrades on low-activity users, and the
item-neighbour model degrades on unpopular items — which is what gives a
support-aware blend something to work with.
"""

import numpy as np

from .. import kernels
from ..errors import TrainingDiverged

RATING_MIN, RATING_MAX = 1.0, 5.0

__all__ = ["GlobalEffects", "MatrixFactorization", "ItemKnn",
           "train_global_effects", "train_mf", "train_item_knn"]


def _clip(x):
    return np.clip(x, RATING_MIN, RATING_MAX)


def _group_sums(idx, vals, size):
    return (np.bincount(idx, weights=vals, minlength=size),
            np.bincount(idx, minlength=size))


class GlobalEffects:
    """Overall mean plus shrunken user and item offsets, fit in succession.

    The item offset is estimated on the residual after the user offset, and
    both are shrunk by n/(n + alpha); a user or item absent from training
    simply contributes a zero offset.
    """

    __slots__ = ("mu", "user_offset", "item_offset", "alpha")

    def __init__(self, mu, user_offset, item_offset, alpha):
        self.mu = mu
        self.user_offset = user_offset
        self.item_offset = item_offset
        self.alpha = alpha

    @classmethod
    def fit(cls, users, items, values, n_users, n_items, alpha=25.0):
        mu = float(values.mean())
        sums, counts = _group_sums(users, values - mu, n_users)
        user_offset = sums / (counts + alpha)
        resid = values - mu - user_offset[users]
        sums, counts = _group_sums(items, resid, n_items)
        item_offset = sums / (counts + alpha)
        return cls(mu, user_offset, item_offset, alpha)

    def predict(self, users, items):
        return _clip(self.mu + self.user_offset[users]
                     + self.item_offset[items])


class MatrixFactorization:
    """Biased matrix factorization trained by plain SGD.

    One pass per epoch in a freshly shuffled (seeded) order; a fixed epoch
    count with a global learning rate means sparsely observed users keep
    noisy factors — deliberately so.
    """

    __slots__ = ("mu", "bu", "bi", "p", "q")

    def __init__(self, mu, bu, bi, p, q):
        self.mu = mu
        self.bu = bu
        self.bi = bi
        self.p = p
        self.q = q

    @classmethod
    def fit(cls, users, items, values, n_users, n_items, n_factors=8,
            lr=0.01, reg=0.02, epochs=20, seed=7):
        rng = np.random.default_rng(seed)
        mu = float(values.mean())
        bu = np.zeros(n_users)
        bi = np.zeros(n_items)
        scale = 0.1 / np.sqrt(max(n_factors, 1))
        p = rng.normal(0.0, scale, (n_users, n_factors))
        q = rng.normal(0.0, scale, (n_items, n_factors))
        n = values.shape[0]
        for epoch in range(epochs):
            order = rng.permutation(n)
            kernels.sgd_epoch(users, items, values, order, mu, bu, bi,
                              p, q, lr, reg)
            if not (np.isfinite(bu).all() and np.isfinite(bi).all()
                    and np.isfinite(p).all() and np.isfinite(q).all()):
                raise TrainingDiverged(
                    f"non-finite factorization parameter after epoch {epoch}")
        return cls(mu, bu, bi, p, q)

    def predict(self, users, items):
        dots = np.einsum("nf,nf->n", self.p[users], self.q[items])
        return _clip(self.mu + self.bu[users] + self.bi[items] + dots)


class ItemKnn:
    """Item-neighbour predictor with shrunk Pearson similarities.

    Similarities come from exact co-rater Pearson correlations shrunk by
    n/(n + beta), zeroed under a minimum overlap.  A prediction anchors at
    the user's training mean and averages mean-offset ratings over the k
    most similar items the user has rated; with no positive-similarity
    neighbour it falls back to the global-effects prediction.
    """

    __slots__ = ("sims", "user_indptr", "user_items", "user_vals",
                 "user_means", "fallback", "k")

    def __init__(self, sims, user_indptr, user_items, user_vals, user_means,
                 fallback, k):
        self.sims = sims
        self.user_indptr = user_indptr
        self.user_items = user_items
        self.user_vals = user_vals
        self.user_means = user_means
        self.fallback = fallback
        self.k = k

    @classmethod
    def fit(cls, users, items, values, n_users, n_items, k=30,
            min_overlap=3, beta=100.0, mean_shrink=12.0, fallback=None):
        if fallback is None:
            fallback = GlobalEffects.fit(users, items, values,
                                         n_users, n_items)
        # anchor at the user's mean, shrunk toward the global mean so the
        # anchor is not pure noise for barely-active users
        mu = float(values.mean())
        sums, counts = _group_sums(users, values - mu, n_users)
        user_means = mu + sums / (counts + mean_shrink)
        # correlations are computed on user-mean-centered ratings;
        # otherwise the shared user-bias component swamps every pair with
        # the same uniform positive correlation and neighbour ranking
        # carries no item information
        centered = values - user_means[users]
        # item-major CSR with user ids sorted inside each item, so the
        # similarity kernel can merge-intersect co-rater lists
        order = np.lexsort((users, items))
        it_sorted = items[order]
        indptr = np.searchsorted(it_sorted, np.arange(n_items + 1))
        sims = kernels.item_sims(indptr.astype(np.int64),
                                 users[order].astype(np.int64),
                                 centered[order], n_users,
                                 min_overlap, float(beta))
        # user-major CSR for prediction-time lookups
        order_u = np.lexsort((items, users))
        u_sorted = users[order_u]
        user_indptr = np.searchsorted(u_sorted, np.arange(n_users + 1))
        return cls(sims, user_indptr.astype(np.int64),
                   items[order_u].astype(np.int64), values[order_u],
                   user_means, fallback, int(k))

    def predict(self, users, items):
        fb = self.fallback.predict(users, items)
        preds = kernels.knn_predict(self.sims, self.user_indptr,
                                    self.user_items, self.user_vals,
                                    self.user_means,
                                    users.astype(np.int64),
                                    items.astype(np.int64),
                                    np.asarray(fb, dtype=np.float64), self.k)
        return _clip(preds)


def train_global_effects(ds, alpha=25.0) -> GlobalEffects:
    u, i, v = ds.train_arrays()
    return GlobalEffects.fit(u, i, v, ds.n_users, ds.n_items, alpha)


def train_mf(ds, n_factors=8, lr=0.01, reg=0.02, epochs=20,
             seed=7) -> MatrixFactorization:
    u, i, v = ds.train_arrays()
    return MatrixFactorization.fit(u, i, v, ds.n_users, ds.n_items,
                                   n_factors, lr, reg, epochs, seed)


def train_item_knn(ds, k=30, min_overlap=3, beta=100.0,
                   mean_shrink=12.0) -> ItemKnn:
    u, i, v = ds.train_arrays()
    return ItemKnn.fit(u, i, v, ds.n_users, ds.n_items, k, min_overlap,
                       beta, mean_shrink)
