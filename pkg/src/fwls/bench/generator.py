"""Synthetic rating data with support-dependent model reliability.

Ratings follow a latent-factor model

    r = clip(mu + b_u + b_i + p_u . q_i + eps, 1, 5)

with per-user rating counts drawn from a lognormal, so user activity spans
orders of magnitude.  That skew is the point of the benchmark: models that
estimate per-user structure are systematically worse on low-activity users
(and per-item structure on unpopular items), which is exactly the signal a
support-aware blend can exploit.  A small count-linked component of the
user bias gives activity a mild direct effect on rating level, so additive
use of support features is worth a little — but far less than letting them
steer the blend weights.

Everything is a pure function of the config (seeded generator); the same
config yields byte-identical datasets.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch

__all__ = ["GeneratorConfig", "RatingDataset", "generate"]


@dataclass(frozen=True)
class GeneratorConfig:
    n_users: int = 2000
    n_items: int = 500
    n_factors: int = 8
    mu: float = 3.2
    user_bias_sd: float = 0.35
    item_bias_sd: float = 0.35
    # standard deviation of the factor term p_u . q_i
    factor_signal_sd: float = 0.35
    noise_sd: float = 0.30
    target_ratings: int = 100_000
    min_per_user: int = 3
    # lognormal sigmas controlling the activity / popularity skew
    count_sigma: float = 1.2
    item_pop_sigma: float = 1.0
    # coupling between log user activity and user bias (see module docstring)
    count_bias_coef: float = 0.10
    # >0 clusters item factors, planting strong item-item correlations
    n_item_clusters: int = 40
    # sd of per-(user, item-cluster) taste offsets; local structure with
    # rank n_item_clusters that neighborhood models can exploit but a
    # low-rank factor model cannot (requires n_item_clusters > 0)
    cluster_affinity_sd: float = 0.30
    blend_frac: float = 0.10
    test_frac: float = 0.10
    seed: int = 1234

    def __post_init__(self):
        if self.n_users < 1 or self.n_items < 1:
            raise ValueError("need positive user and item counts")
        if self.n_factors < 0:
            raise ValueError("n_factors must be >= 0")
        if not 0 < self.blend_frac + self.test_frac < 1:
            raise ValueError("split fractions must leave room for train")


class RatingDataset:
    """Flat (user, item, value) triples with a train/blend/test label each."""

    TRAIN, BLEND, TEST = 0, 1, 2

    __slots__ = ("n_users", "n_items", "users", "items", "values", "split")

    def __init__(self, n_users, n_items, users, items, values, split):
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.users = np.ascontiguousarray(users, dtype=np.int64)
        self.items = np.ascontiguousarray(items, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.split = np.ascontiguousarray(split, dtype=np.int8)
        n = self.users.shape[0]
        if not (self.items.shape[0] == self.values.shape[0]
                == self.split.shape[0] == n):
            raise DimensionMismatch("rating arrays must be the same length")
        keys = self.users * self.n_items + self.items
        if np.unique(keys).shape[0] != n:
            raise ValueError("duplicate (user, item) rating")
        if not np.isin(self.split, (0, 1, 2)).all():
            raise ValueError("split labels must be 0 (train), 1 (blend), 2 (test)")

    def _arrays(self, label):
        sel = self.split == label
        return self.users[sel], self.items[sel], self.values[sel]

    def train_arrays(self):
        return self._arrays(self.TRAIN)

    def blend_arrays(self):
        return self._arrays(self.BLEND)

    def test_arrays(self):
        return self._arrays(self.TEST)

    @property
    def n_ratings(self):
        return self.users.shape[0]

    def __repr__(self):
        return (f"RatingDataset(n_users={self.n_users}, n_items={self.n_items}, "
                f"n_ratings={self.n_ratings})")


def _draw_counts(rng, cfg):
    raw = rng.lognormal(mean=0.0, sigma=cfg.count_sigma, size=cfg.n_users)
    counts = np.rint(raw * cfg.target_ratings / raw.sum()).astype(np.int64)
    return np.clip(counts, cfg.min_per_user, cfg.n_items)


def _item_factors(rng, cfg, factor_sd, labels):
    if cfg.n_factors == 0:
        return np.zeros((cfg.n_items, 0))
    if labels is not None:
        centroids = rng.normal(0.0, factor_sd,
                               (cfg.n_item_clusters, cfg.n_factors))
        jitter = rng.normal(0.0, 0.15 * factor_sd,
                            (cfg.n_items, cfg.n_factors))
        return centroids[labels] + jitter
    return rng.normal(0.0, factor_sd, (cfg.n_items, cfg.n_factors))


def generate(cfg: GeneratorConfig) -> RatingDataset:
    """Sample a dataset and its train/blend/test partition from the config."""
    rng = np.random.default_rng(cfg.seed)
    counts = _draw_counts(rng, cfg)
    log_counts = np.log1p(counts)
    centered = (log_counts - log_counts.mean()) / max(log_counts.std(), 1e-12)

    b_u = rng.normal(0.0, cfg.user_bias_sd, cfg.n_users) \
        + cfg.count_bias_coef * centered
    b_i = rng.normal(0.0, cfg.item_bias_sd, cfg.n_items)
    if cfg.n_factors > 0:
        # per-coordinate sd so that sd(p . q) ~= factor_signal_sd
        factor_sd = (cfg.factor_signal_sd ** 2 / cfg.n_factors) ** 0.25
    else:
        factor_sd = 0.0
    labels = None
    if cfg.n_item_clusters > 0:
        labels = rng.integers(0, cfg.n_item_clusters, cfg.n_items)
    p = rng.normal(0.0, factor_sd, (cfg.n_users, cfg.n_factors))
    q = _item_factors(rng, cfg, factor_sd, labels)
    affinity = None
    if labels is not None and cfg.cluster_affinity_sd > 0:
        affinity = rng.normal(0.0, cfg.cluster_affinity_sd,
                              (cfg.n_users, cfg.n_item_clusters))

    popularity = rng.lognormal(mean=0.0, sigma=cfg.item_pop_sigma,
                               size=cfg.n_items)
    popularity /= popularity.sum()

    log_pop = np.log(popularity)
    users = np.empty(int(counts.sum()), dtype=np.int64)
    items = np.empty_like(users)
    pos = 0
    for u in range(cfg.n_users):
        c = counts[u]
        # Gumbel-max top-c == weighted sampling without replacement
        keys = log_pop + rng.gumbel(0.0, 1.0, cfg.n_items)
        chosen = np.argpartition(keys, cfg.n_items - c)[cfg.n_items - c:]
        users[pos:pos + c] = u
        items[pos:pos + c] = np.sort(chosen)
        pos += c

    # give never-sampled items one rating each so every item can be trained on
    missing = np.setdiff1d(np.arange(cfg.n_items), np.unique(items))
    if missing.size:
        heavy = np.argsort(counts)[::-1][:missing.size]
        users = np.concatenate([users, heavy])
        items = np.concatenate([items, missing])

    signal = cfg.mu + b_u[users] + b_i[items]
    if cfg.n_factors > 0:
        signal = signal + np.einsum("nf,nf->n", p[users], q[items])
    if affinity is not None:
        signal = signal + affinity[users, labels[items]]
    if cfg.noise_sd > 0:
        signal = signal + rng.normal(0.0, cfg.noise_sd, users.shape[0])
    values = np.clip(signal, 1.0, 5.0)

    split = _assign_splits(rng, users, items, cfg)
    return RatingDataset(cfg.n_users, cfg.n_items, users, items, values, split)


def _assign_splits(rng, users, items, cfg):
    """Per-user stratified train/blend/test labels; train keeps every user
    and every rated item."""
    n = users.shape[0]
    split = np.zeros(n, dtype=np.int8)
    order = np.argsort(users, kind="stable")
    bounds = np.searchsorted(users[order], np.arange(cfg.n_users + 1))
    for u in range(cfg.n_users):
        rows = order[bounds[u]:bounds[u + 1]]
        c = rows.shape[0]
        n_blend = int(round(cfg.blend_frac * c))
        n_test = int(round(cfg.test_frac * c))
        overflow = n_blend + n_test - (c - 1)  # keep >= 1 train rating
        if overflow > 0:
            cut = min(overflow, n_test)
            n_test -= cut
            n_blend -= overflow - cut
        picked = rng.permutation(rows)
        split[picked[:n_blend]] = RatingDataset.BLEND
        split[picked[n_blend:n_blend + n_test]] = RatingDataset.TEST
    # any item whose ratings all landed outside train gets one promoted back
    train_items = np.unique(items[split == RatingDataset.TRAIN])
    rated_items = np.unique(items)
    for it in np.setdiff1d(rated_items, train_items):
        rows = np.nonzero(items == it)[0]
        split[rows[0]] = RatingDataset.TRAIN
    return split
