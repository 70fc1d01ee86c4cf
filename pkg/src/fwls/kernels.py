"""Hot numeric kernels, JIT-compiled with numba when available.

Every kernel has two implementations with identical signatures: a numba
``@njit`` version and a pure-numpy fallback. The active backend is chosen
once at import time from the ``FWLS_BACKEND`` environment variable
("numba" or "numpy"); unset means numba when importable, numpy otherwise.

``benchmarks/kernel_bench.py`` compares the two paths head to head.
"""

import os

import numpy as np

ENV_VAR = "FWLS_BACKEND"


def _pick_backend():
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise ImportError(f"{ENV_VAR}=numba but numba is not importable")
        return "numpy"
    return "numba"


BACKEND = _pick_backend()

_tril_cache = {}


def _tril(dim):
    if dim not in _tril_cache:
        _tril_cache[dim] = np.tril_indices(dim)
    return _tril_cache[dim]


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _expand_products(g, f):
    """Row-wise products f[j]*g[i] laid out so column j*L+i holds them."""
    n, n_models = g.shape
    n_feats = f.shape[1]
    out = np.einsum("nj,ni->nji", f, g)
    return out.reshape(n, n_feats * n_models)


def _gram_chunk_numpy(g, f, y, tri, xty):
    a = _expand_products(g, f)
    gram = a.T @ a
    tri += gram[_tril(a.shape[1])]
    xty += a.T @ y
    return float(y @ y)


def _cross_chunk_numpy(g, f, new_cols, y, cross, corner, new_xty):
    n, n_models = g.shape
    n_feats = f.shape[1]
    d_new = new_cols.shape[1]
    # contract through the (f x new_cols) Khatri-Rao product: the n x (M*C)
    # slab is far smaller than the full n x D design expansion
    k = np.einsum("nj,nc->njc", f, new_cols).reshape(n, n_feats * d_new)
    part = (k.T @ g).reshape(n_feats, d_new, n_models)
    cross += part.transpose(0, 2, 1).reshape(n_feats * n_models, d_new)
    corner += new_cols.T @ new_cols
    new_xty += new_cols.T @ y


def _sgd_epoch_numpy(users, items, ratings, order, mu, bu, bi, p, q, lr, reg):
    for t in order:
        u = users[t]
        i = items[t]
        pu = p[u].copy()
        qi = q[i]
        err = ratings[t] - (mu + bu[u] + bi[i] + pu @ qi)
        bu[u] += lr * (err - reg * bu[u])
        bi[i] += lr * (err - reg * bi[i])
        p[u] += lr * (err * qi - reg * pu)
        q[i] += lr * (err * pu - reg * qi)


def _item_sims_numpy(indptr, sim_users, sim_vals, n_users, min_overlap, beta):
    """Shrunk per-pair Pearson over co-rating users, from item-major CSR."""
    n_items = indptr.shape[0] - 1
    dense = np.zeros((n_items, n_users))
    mask = np.zeros((n_items, n_users))
    for a in range(n_items):
        lo, hi = indptr[a], indptr[a + 1]
        dense[a, sim_users[lo:hi]] = sim_vals[lo:hi]
        mask[a, sim_users[lo:hi]] = 1.0
    n = mask @ mask.T
    sxy = dense @ dense.T
    sx = dense @ mask.T          # sx[a, b] = sum of a's ratings over co-raters with b
    sxx = (dense * dense) @ mask.T
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = sxy - sx * sx.T / n
        var_a = sxx - sx * sx / n
        var_b = sxx.T - sx.T * sx.T / n
        corr = cov / np.sqrt(var_a * var_b)
    corr[~np.isfinite(corr)] = 0.0
    corr = np.clip(corr, -1.0, 1.0)
    sims = corr * (n / (n + beta))
    sims[n < min_overlap] = 0.0
    np.fill_diagonal(sims, 0.0)
    return sims


def _knn_predict_numpy(sims, user_indptr, user_items, user_vals, user_means,
                       pair_users, pair_items, fallback, k):
    n_pairs = pair_users.shape[0]
    preds = np.empty(n_pairs)
    for t in range(n_pairs):
        u = pair_users[t]
        lo, hi = user_indptr[u], user_indptr[u + 1]
        rated = user_items[lo:hi]
        s = sims[pair_items[t], rated]
        pos = s > 0.0
        if not pos.any():
            preds[t] = fallback[t]
            continue
        s = s[pos]
        resid = user_vals[lo:hi][pos] - user_means[u]
        if s.shape[0] > k:
            top = np.argpartition(s, -k)[-k:]
            s = s[top]
            resid = resid[top]
        preds[t] = user_means[u] + float(s @ resid) / float(s.sum())
    return preds


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    from numba import njit

    @njit(nogil=True, cache=True)
    def _gram_chunk_numba(g, f, y, tri, xty):
        n, n_models = g.shape
        n_feats = f.shape[1]
        dim = n_feats * n_models
        a = np.empty(dim)
        yty = 0.0
        for t in range(n):
            for j in range(n_feats):
                fv = f[t, j]
                base = j * n_models
                for i in range(n_models):
                    a[base + i] = fv * g[t, i]
            yv = y[t]
            yty += yv * yv
            idx = 0
            for r in range(dim):
                ar = a[r]
                xty[r] += ar * yv
                for c in range(r + 1):
                    tri[idx] += ar * a[c]
                    idx += 1
        return yty

    @njit(nogil=True, cache=True)
    def _cross_chunk_numba(g, f, new_cols, y, cross, corner, new_xty):
        n, n_models = g.shape
        n_feats = f.shape[1]
        d_old = n_feats * n_models
        d_new = new_cols.shape[1]
        a = np.empty(d_old)
        for t in range(n):
            for j in range(n_feats):
                fv = f[t, j]
                base = j * n_models
                for i in range(n_models):
                    a[base + i] = fv * g[t, i]
            yv = y[t]
            for c in range(d_new):
                nc = new_cols[t, c]
                for r in range(d_old):
                    cross[r, c] += a[r] * nc
                for r in range(c + 1):
                    prod = new_cols[t, r] * nc
                    corner[r, c] += prod
                    if r != c:
                        corner[c, r] += prod
                new_xty[c] += nc * yv

    @njit(nogil=True, cache=True)
    def _sgd_epoch_numba(users, items, ratings, order, mu, bu, bi, p, q, lr, reg):
        n_factors = p.shape[1]
        for idx in range(order.shape[0]):
            t = order[idx]
            u = users[t]
            i = items[t]
            dot = 0.0
            for a in range(n_factors):
                dot += p[u, a] * q[i, a]
            err = ratings[t] - (mu + bu[u] + bi[i] + dot)
            bu[u] += lr * (err - reg * bu[u])
            bi[i] += lr * (err - reg * bi[i])
            for a in range(n_factors):
                pu = p[u, a]
                qi = q[i, a]
                p[u, a] = pu + lr * (err * qi - reg * pu)
                q[i, a] = qi + lr * (err * pu - reg * qi)

    @njit(nogil=True, cache=True)
    def _item_sims_numba(indptr, sim_users, sim_vals, n_users, min_overlap, beta):
        n_items = indptr.shape[0] - 1
        sims = np.zeros((n_items, n_items))
        for a in range(n_items):
            alo, ahi = indptr[a], indptr[a + 1]
            for b in range(a + 1, n_items):
                blo, bhi = indptr[b], indptr[b + 1]
                ia, ib = alo, blo
                n = 0
                sx = 0.0
                sy = 0.0
                sxx = 0.0
                syy = 0.0
                sxy = 0.0
                while ia < ahi and ib < bhi:
                    ua = sim_users[ia]
                    ub = sim_users[ib]
                    if ua == ub:
                        x = sim_vals[ia]
                        yv = sim_vals[ib]
                        n += 1
                        sx += x
                        sy += yv
                        sxx += x * x
                        syy += yv * yv
                        sxy += x * yv
                        ia += 1
                        ib += 1
                    elif ua < ub:
                        ia += 1
                    else:
                        ib += 1
                if n < min_overlap:
                    continue
                cov = sxy - sx * sy / n
                var_a = sxx - sx * sx / n
                var_b = syy - sy * sy / n
                if var_a <= 0.0 or var_b <= 0.0:
                    continue
                corr = cov / np.sqrt(var_a * var_b)
                if corr > 1.0:
                    corr = 1.0
                elif corr < -1.0:
                    corr = -1.0
                s = corr * (n / (n + beta))
                sims[a, b] = s
                sims[b, a] = s
        return sims

    @njit(nogil=True, cache=True)
    def _knn_predict_numba(sims, user_indptr, user_items, user_vals, user_means,
                           pair_users, pair_items, fallback, k):
        n_pairs = pair_users.shape[0]
        preds = np.empty(n_pairs)
        best_s = np.empty(k)
        best_r = np.empty(k)
        for t in range(n_pairs):
            u = pair_users[t]
            tgt = pair_items[t]
            lo, hi = user_indptr[u], user_indptr[u + 1]
            n_kept = 0
            for idx in range(lo, hi):
                s = sims[tgt, user_items[idx]]
                if s <= 0.0:
                    continue
                r = user_vals[idx]
                if n_kept < k:
                    pos = n_kept
                    n_kept += 1
                elif s > best_s[0]:
                    pos = 0
                else:
                    continue
                # keep best_s as a min-first sorted buffer via insertion
                best_s[pos] = s
                best_r[pos] = r
                while pos + 1 < n_kept and best_s[pos] > best_s[pos + 1]:
                    best_s[pos], best_s[pos + 1] = best_s[pos + 1], best_s[pos]
                    best_r[pos], best_r[pos + 1] = best_r[pos + 1], best_r[pos]
                    pos += 1
                while pos > 0 and best_s[pos] < best_s[pos - 1]:
                    best_s[pos], best_s[pos - 1] = best_s[pos - 1], best_s[pos]
                    best_r[pos], best_r[pos - 1] = best_r[pos - 1], best_r[pos]
                    pos -= 1
            if n_kept == 0:
                preds[t] = fallback[t]
                continue
            num = 0.0
            den = 0.0
            um = user_means[u]
            for idx in range(n_kept):
                num += best_s[idx] * (best_r[idx] - um)
                den += best_s[idx]
            preds[t] = um + num / den
        return preds

    gram_chunk = _gram_chunk_numba
    cross_chunk = _cross_chunk_numba
    sgd_epoch = _sgd_epoch_numba
    item_sims = _item_sims_numba
    knn_predict = _knn_predict_numba
else:
    gram_chunk = _gram_chunk_numpy
    cross_chunk = _cross_chunk_numpy
    sgd_epoch = _sgd_epoch_numpy
    item_sims = _item_sims_numpy
    knn_predict = _knn_predict_numpy


def backend_implementations(name):
    """Both implementations of a kernel, for equivalence tests and benchmarks."""
    table = {
        "gram_chunk": (_gram_chunk_numpy, None),
        "cross_chunk": (_cross_chunk_numpy, None),
        "sgd_epoch": (_sgd_epoch_numpy, None),
        "item_sims": (_item_sims_numpy, None),
        "knn_predict": (_knn_predict_numpy, None),
    }
    np_impl, _ = table[name]
    nb_impl = globals().get(f"_{name}_numba")
    return np_impl, nb_impl


def warm_up():
    """Run every active kernel once on tiny inputs.

    With the numba backend this forces JIT compilation (cached on disk), so
    timing-sensitive callers never pay compile cost inside a measured section.
    """
    g = np.ones((2, 2))
    f = np.ones((2, 2))
    y = np.ones(2)
    tri = np.zeros(10)
    xty = np.zeros(4)
    gram_chunk(g, f, y, tri, xty)
    cross = np.zeros((4, 1))
    corner = np.zeros((1, 1))
    nxty = np.zeros(1)
    cross_chunk(g, f, np.ones((2, 1)), y, cross, corner, nxty)
    idx = np.zeros(2, dtype=np.int64)
    sgd_epoch(idx, idx, y, np.arange(2), 0.0, np.zeros(2), np.zeros(2),
              np.zeros((2, 1)), np.zeros((2, 1)), 0.0, 0.0)
    indptr = np.array([0, 1, 2], dtype=np.int64)
    item_sims(indptr, idx, y, 2, 1, 1.0)
    knn_predict(np.zeros((2, 2)), indptr, idx, y, np.zeros(2),
                idx, idx, np.zeros(2), 1)
