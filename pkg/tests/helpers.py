"""Dense brute-force oracles and instance builders shared by the tests.

Everything here recomputes results from first principles (explicit loops,
QR factorizations) so library output is checked against an independent
arithmetic path, never against itself.
"""

import numpy as np


def dense_design(g, f):
    """Expand product columns by explicit loops, models fastest-varying."""
    n, n_models = g.shape
    n_feats = f.shape[1]
    out = np.empty((n, n_feats * n_models))
    for j in range(n_feats):
        for i in range(n_models):
            out[:, j * n_models + i] = f[:, j] * g[:, i]
    return out


def dense_gram(g, f, y):
    """Brute-force A'A, A'y, y'y from the fully materialized design."""
    a = dense_design(g, f)
    return a.T @ a, a.T @ y, float(y @ y)


def ridge_qr(x, y, lam):
    """Ridge coefficients via QR on the augmented least-squares system."""
    d = x.shape[1]
    aug = np.vstack([x, np.sqrt(lam) * np.eye(d)])
    rhs = np.concatenate([y, np.zeros(d)])
    q, r = np.linalg.qr(aug)
    return np.linalg.solve(r, q.T @ rhs)


def random_instance(rng, n, n_models, n_feats):
    g = rng.normal(0.0, 1.0, (n, n_models))
    f = rng.normal(0.0, 1.0, (n, n_feats))
    y = rng.normal(0.0, 1.0, n)
    return g, f, y


def rel_l2(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)
