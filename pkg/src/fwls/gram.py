"""Single-pass accumulation of the blend normal equations.

The product design matrix A (one column per meta-feature/model pair) is
never materialized: rows are expanded on the fly and folded into A'A, A'y,
and y'y.  Memory is O(D^2) for D = M*L regardless of row count, and partial
states from disjoint row sets merge additively, so accumulation
parallelizes over contiguous row blocks.

Within a chunk, sums are plain left-to-right; across chunks, partials are
combined by a deterministic pairwise (binary-tree) reduction to bound
floating-point drift on long streams.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels
from .core import DesignMapping, StackedDataset
from .errors import DimensionMismatch, NonFiniteData, SingularSystem

DEFAULT_CHUNK_ROWS = 4096

# The pure-numpy chunk kernel materializes its chunk's product rows, so cap
# the slab it hands to BLAS; the numba kernel expands one row at a time and
# ignores this.
_NUMPY_SLAB_BYTES = 4 * 1024 * 1024

__all__ = ["GramState", "accumulate", "merge", "parallel_accumulate",
           "from_dataset", "DEFAULT_CHUNK_ROWS"]


def tri_length(dim):
    return dim * (dim + 1) // 2


def pack_lower(full):
    """Dense symmetric matrix -> packed lower triangle, row-major."""
    full = np.asarray(full, dtype=np.float64)
    return full[np.tril_indices(full.shape[0])].copy()


def unpack_lower(tri, dim):
    """Packed lower triangle -> dense symmetric matrix."""
    out = np.zeros((dim, dim))
    rows, cols = np.tril_indices(dim)
    out[rows, cols] = tri
    out[cols, rows] = tri
    return out


class GramState:
    """Sufficient statistics (A'A, A'y, y'y, N) for one column layout.

    ``tri`` stores the lower triangle of A'A row-major: entry (r, c), c <= r,
    lives at index r*(r+1)/2 + c.  That packed order is also the on-disk
    layout (see :mod:`fwls.store`).
    """

    __slots__ = ("mapping", "tri", "xty", "yty", "n_rows")

    def __init__(self, mapping, tri=None, xty=None, yty=0.0, n_rows=0):
        if not isinstance(mapping, DesignMapping):
            mapping = DesignMapping(*mapping)
        d = mapping.dim
        self.mapping = mapping
        self.tri = np.zeros(tri_length(d)) if tri is None else \
            np.ascontiguousarray(tri, dtype=np.float64)
        self.xty = np.zeros(d) if xty is None else \
            np.ascontiguousarray(xty, dtype=np.float64)
        if self.tri.shape != (tri_length(d),):
            raise DimensionMismatch(
                f"packed triangle length {self.tri.shape[0]} != "
                f"D(D+1)/2 = {tri_length(d)}")
        if self.xty.shape != (d,):
            raise DimensionMismatch(f"xty length {self.xty.shape[0]} != D={d}")
        self.yty = float(yty)
        self.n_rows = int(n_rows)

    @property
    def dim(self):
        return self.mapping.dim

    def gram_dense(self):
        """Symmetric D x D expansion of the packed triangle."""
        return unpack_lower(self.tri, self.dim)

    def copy(self):
        return GramState(self.mapping, self.tri.copy(), self.xty.copy(),
                         self.yty, self.n_rows)

    def validate(self):
        """Cheap positive-semidefiniteness sanity checks."""
        d = self.dim
        diag_idx = np.arange(d) * (np.arange(d) + 3) // 2  # r*(r+1)/2 + r
        diag = self.tri[diag_idx]
        if (diag < 0).any():
            raise SingularSystem("accumulated gram has a negative diagonal entry")
        eps = 1e-8 * max(diag.max(initial=0.0), 1.0)
        try:
            np.linalg.cholesky(self.gram_dense() + eps * np.eye(d))
        except np.linalg.LinAlgError:
            raise SingularSystem(
                "accumulated gram is not positive semidefinite "
                f"(Cholesky failed at jitter {eps:.3e})")
        return self

    def __repr__(self):
        return (f"GramState(D={self.dim}, n_rows={self.n_rows}, "
                f"mapping={self.mapping!r})")


def _check_chunk(g, f, y, mapping):
    if g.ndim != 2 or f.ndim != 2 or y.ndim != 1:
        raise DimensionMismatch("expected 2-d model_preds/meta_feats and 1-d targets")
    if g.shape[1] != mapping.n_models or f.shape[1] != mapping.n_features:
        raise DimensionMismatch(
            f"row width ({g.shape[1]} models, {f.shape[1]} features) does not "
            f"match mapping L={mapping.n_models}, M={mapping.n_features}")
    if not (g.shape[0] == f.shape[0] == y.shape[0]):
        raise DimensionMismatch("model_preds/meta_feats/targets row mismatch")
    if not (np.isfinite(g).all() and np.isfinite(f).all() and np.isfinite(y).all()):
        raise NonFiniteData("non-finite value in accumulation input")


def _chunk_partial(g, f, y, mapping):
    """Fresh partial sums (tri, xty, yty, n) for one chunk."""
    d = mapping.dim
    tri = np.zeros(tri_length(d))
    xty = np.zeros(d)
    if kernels.BACKEND == "numba":
        yty = kernels.gram_chunk(g, f, y, tri, xty)
    else:
        # slab the chunk so the materialized product rows stay small
        slab = max(1, _NUMPY_SLAB_BYTES // (8 * d))
        yty = 0.0
        for lo in range(0, g.shape[0], slab):
            hi = lo + slab
            yty += kernels.gram_chunk(g[lo:hi], f[lo:hi], y[lo:hi], tri, xty)
    return tri, xty, yty, g.shape[0]


def _merge_parts(a, b):
    return a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]


def _accumulate_parts(g, f, y, mapping, chunk_rows):
    """Pairwise-merged partial sums over the row range."""
    stack = []  # (level, partial)
    for lo in range(0, g.shape[0], chunk_rows):
        part = _chunk_partial(g[lo:lo + chunk_rows], f[lo:lo + chunk_rows],
                              y[lo:lo + chunk_rows], mapping)
        level = 0
        while stack and stack[-1][0] == level:
            part = _merge_parts(stack.pop()[1], part)
            level += 1
        stack.append((level, part))
    if not stack:
        d = mapping.dim
        return np.zeros(tri_length(d)), np.zeros(d), 0.0, 0
    part = stack.pop()[1]
    while stack:
        part = _merge_parts(stack.pop()[1], part)
    return part


def accumulate(state, model_preds, meta_feats, targets,
               chunk_rows=DEFAULT_CHUNK_ROWS):
    """Fold rows into the state in one pass; returns the mutated state."""
    g = np.ascontiguousarray(model_preds, dtype=np.float64)
    f = np.ascontiguousarray(meta_feats, dtype=np.float64)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    if y.shape[0] == 0:
        return state
    _check_chunk(g, f, y, state.mapping)
    tri, xty, yty, n = _accumulate_parts(g, f, y, state.mapping, chunk_rows)
    state.tri += tri
    state.xty += xty
    state.yty += yty
    state.n_rows += n
    return state


def merge(a, b):
    """Combine states accumulated over disjoint row sets."""
    if a.mapping != b.mapping:
        raise DimensionMismatch(
            f"cannot merge states with mappings {a.mapping!r} and {b.mapping!r}")
    return GramState(a.mapping, a.tri + b.tri, a.xty + b.xty,
                     a.yty + b.yty, a.n_rows + b.n_rows)


def parallel_accumulate(model_preds, meta_feats, targets, mapping,
                        n_workers=1, chunk_rows=DEFAULT_CHUNK_ROWS):
    """Accumulate over contiguous worker blocks and merge in block order.

    The partition depends only on (row count, n_workers), never on thread
    scheduling, so results are reproducible; with one worker the path is
    exactly the sequential one.
    """
    if n_workers < 1:
        raise ValueError(f"n_workers must be >= 1, got {n_workers}")
    g = np.ascontiguousarray(model_preds, dtype=np.float64)
    f = np.ascontiguousarray(meta_feats, dtype=np.float64)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    if not isinstance(mapping, DesignMapping):
        mapping = DesignMapping(*mapping)
    state = GramState(mapping)
    n = y.shape[0]
    if n == 0:
        return state
    _check_chunk(g, f, y, mapping)
    if n_workers == 1:
        return accumulate(state, g, f, y, chunk_rows)
    bounds = [n * w // n_workers for w in range(n_workers + 1)]

    def job(w):
        lo, hi = bounds[w], bounds[w + 1]
        return _accumulate_parts(g[lo:hi], f[lo:hi], y[lo:hi], mapping,
                                 chunk_rows)

    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        parts = list(pool.map(job, range(n_workers)))
    total = parts[0]
    for part in parts[1:]:
        total = _merge_parts(total, part)
    state.tri += total[0]
    state.xty += total[1]
    state.yty += total[2]
    state.n_rows += total[3]
    return state


def from_dataset(ds: StackedDataset, n_workers=1,
                 chunk_rows=DEFAULT_CHUNK_ROWS) -> GramState:
    """Accumulate a whole StackedDataset into a fresh state."""
    return parallel_accumulate(ds.model_preds, ds.meta_feats, ds.targets,
                               ds.mapping, n_workers, chunk_rows)
