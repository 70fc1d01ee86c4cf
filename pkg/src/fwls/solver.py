"""Ridge solve over accumulated normal equations, plus incremental updates.

Two update regimes are supported without revisiting the training stream:

* new data rows — rank-1 Sherman-Morrison updates of an explicit inverse
  (``InverseState``), O(D^2) per row;
* new models or meta-features — the expanded gram entries come from a
  single pass over the new columns only (see :mod:`fwls.store`), and the
  cached inverse is enlarged one bordered column at a time, O(D^2) per new
  column rather than a fresh O(D^3) factorization.

The batch path factorizes A'A + lambda*I (SPD Cholesky via scipy) instead
of inverting; the explicit inverse exists only for the update formulas.
"""

from bisect import bisect_left

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .core import BlendCoefficients, DesignMapping, design_row
from .errors import (DegenerateUpdate, DimensionMismatch, FwlsError,
                     SingularSystem)
from .gram import GramState, pack_lower

DEFAULT_LAMBDA = 0.01
LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)

# escalating diagonal jitter, as multiples of trace(A'A)/D
_JITTER_STEPS = (0.0, 1e-10, 1e-8, 1e-6)
_RESIDUAL_RTOL = 1e-8

__all__ = ["SolvedBlend", "InverseState", "solve", "training_rmse",
           "extend_columns", "DEFAULT_LAMBDA", "LAMBDA_GRID"]


class SolvedBlend:
    """Fitted coefficients plus the factorization they came from.

    ``lam`` is the penalty actually applied; when jitter escalation was
    needed it exceeds the requested value by ``jitter``.
    """

    __slots__ = ("coeffs", "lam", "train_rmse", "factor_cache", "jitter")

    def __init__(self, coeffs, lam, train_rmse, factor_cache=None, jitter=0.0):
        self.coeffs = coeffs
        self.lam = float(lam)
        self.train_rmse = float(train_rmse)
        self.factor_cache = factor_cache
        self.jitter = float(jitter)

    def __repr__(self):
        return (f"SolvedBlend(lambda={self.lam}, "
                f"train_rmse={self.train_rmse:.6f})")


def _dense_system(gs, lam):
    k = gs.gram_dense()
    k[np.diag_indices(gs.dim)] += lam
    return k


def solve(gs: GramState, lam=DEFAULT_LAMBDA) -> SolvedBlend:
    """Solve (A'A + lambda*I) v = A'y from accumulated statistics.

    Tries an SPD factorization at the requested penalty; if that fails (or
    leaves a linear-system residual above 1e-8 relative), retries with
    escalating diagonal jitter scaled by trace(A'A)/D and reports the
    penalty actually used.  Exhausting the ladder raises ``SingularSystem``.
    """
    if lam < 0:
        raise ValueError(f"ridge penalty must be nonnegative, got {lam}")
    if gs.n_rows < 1:
        raise ValueError("cannot solve an empty accumulation")
    d = gs.dim
    diag_idx = np.arange(d) * (np.arange(d) + 3) // 2
    trace = float(gs.tri[diag_idx].sum())
    xty_norm = float(np.linalg.norm(gs.xty))
    lam_eff = lam
    for step in _JITTER_STEPS:
        lam_eff = lam + step * trace / d
        k = _dense_system(gs, lam_eff)
        try:
            factor = cho_factor(k, lower=True, check_finite=False)
        except LinAlgError:
            continue
        flat = cho_solve(factor, gs.xty, check_finite=False)
        resid = float(np.linalg.norm(k @ flat - gs.xty))
        if resid > _RESIDUAL_RTOL * max(xty_norm, 1e-300):
            continue
        coeffs = BlendCoefficients.from_flat(flat, gs.mapping, lam_eff)
        rmse = training_rmse(gs, coeffs)
        return SolvedBlend(coeffs, lam_eff, rmse, factor_cache=factor,
                           jitter=lam_eff - lam)
    raise SingularSystem(
        f"normal equations not solvable at lambda={lam} "
        f"(last attempted effective lambda={lam_eff})")


def training_rmse(gs: GramState, coeffs: BlendCoefficients):
    """Training RMSE from sufficient statistics alone.

    mean square = (y'y - 2 v.A'y + v.A'A.v) / N; tiny negative values from
    floating-point drift (>= -1e-10) clamp to zero, anything lower is an
    inconsistency and raises.
    """
    if coeffs.n_models != gs.mapping.n_models or \
            coeffs.n_features != gs.mapping.n_features:
        raise DimensionMismatch(
            f"coefficients {coeffs!r} do not match state {gs.mapping!r}")
    v = coeffs.flat
    quad = float(v @ gs.gram_dense() @ v)
    msq = (gs.yty - 2.0 * float(v @ gs.xty) + quad) / gs.n_rows
    if msq < 0:
        if msq < -1e-10:
            raise FwlsError(
                f"negative training mean square {msq:.3e} exceeds "
                "floating-point slack; statistics and coefficients disagree")
        msq = 0.0
    return float(np.sqrt(msq))


# ---------------------------------------------------------------------------
# incremental: new data rows (rank-1) and new columns (bordered)
# ---------------------------------------------------------------------------

class InverseState:
    """Explicit inverse of (A'A + lambda*I) maintained under updates.

    Single-owner mutable: callers serialize updates.  The inverse is
    symmetrized once at construction; rank-1 and bordered updates preserve
    symmetry exactly after that.
    """

    __slots__ = ("inv", "xty", "lam", "n_rows", "mapping")

    def __init__(self, inv, xty, lam, n_rows, mapping):
        self.inv = np.ascontiguousarray(inv, dtype=np.float64)
        self.xty = np.ascontiguousarray(xty, dtype=np.float64)
        self.lam = float(lam)
        self.n_rows = int(n_rows)
        self.mapping = mapping

    @classmethod
    def from_gram(cls, gs: GramState, lam=DEFAULT_LAMBDA):
        k = _dense_system(gs, lam)
        try:
            factor = cho_factor(k, lower=True, check_finite=False)
        except LinAlgError:
            raise SingularSystem(
                f"cannot invert normal equations at lambda={lam}; "
                "increase the penalty")
        inv = cho_solve(factor, np.eye(gs.dim), check_finite=False)
        inv = (inv + inv.T) / 2.0
        return cls(inv, gs.xty.copy(), lam, gs.n_rows, gs.mapping)

    @property
    def dim(self):
        return self.inv.shape[0]

    def coefficients(self) -> BlendCoefficients:
        return BlendCoefficients.from_flat(self.inv @ self.xty,
                                           self.mapping, self.lam)

    def add_datapoint(self, g, f, y):
        """Fold one new row in via the rank-1 inverse update.

        With a = design_row(g, f):  inv -= (inv a)(inv a)' / (1 + a.inv.a).
        A zero row is a no-op; a denominator at or below 1e-12 means the
        update is numerically meaningless and a full re-solve is required.
        """
        a = design_row(g, f)
        if a.shape != (self.dim,):
            raise DimensionMismatch(
                f"design row length {a.shape[0]} != D={self.dim}")
        u = self.inv @ a
        denom = 1.0 + float(a @ u)
        if denom <= 1e-12:
            raise DegenerateUpdate(
                f"rank-1 update denominator {denom:.3e} <= 1e-12; "
                "re-solve from the accumulated state instead")
        self.inv -= np.outer(u, u) / denom
        self.xty += a * float(y)
        self.n_rows += 1
        return self

    def extend(self, extended: GramState, lam=None):
        """Enlarge the inverse to cover an extended state's columns.

        ``extended`` must come from :func:`extend_columns` on the state this
        inverse was built from: same rows, same penalty, columns a superset
        of the current ones under the canonical remap.  Each new column is
        absorbed by a bordered (Schur-complement) update in O(D^2), so
        adding one model costs ~M updates and adding one meta-feature ~L,
        versus a fresh O(D^3) factorization.
        """
        if lam is not None and abs(lam - self.lam) > 0:
            raise ValueError(
                f"inverse was built at lambda={self.lam}, got {lam}")
        old, new = self.mapping, extended.mapping
        if new.n_models == old.n_models and new.n_features > old.n_features:
            old_cols = list(range(old.dim))
        elif new.n_features == old.n_features and new.n_models > old.n_models:
            lp = new.n_models
            old_cols = [j * lp + i for j in range(old.n_features)
                        for i in range(old.n_models)]
        else:
            raise DimensionMismatch(
                f"extension must grow models or features (not both): "
                f"{old!r} -> {new!r}")
        if self.n_rows != extended.n_rows:
            raise DimensionMismatch(
                f"row count changed during extension: "
                f"{self.n_rows} != {extended.n_rows}")
        k = _dense_system(extended, self.lam)
        new_cols = sorted(set(range(new.dim)) - set(old_cols))
        cols = list(old_cols)
        inv = self.inv
        for c in new_cols:
            b = k[cols, c]
            kcc = k[c, c]
            u = inv @ b
            schur = kcc - float(b @ u)
            if schur <= 1e-12 * max(kcc, 1.0):
                raise SingularSystem(
                    f"bordered update for column {c} has Schur complement "
                    f"{schur:.3e}; system too ill-conditioned to extend")
            d = inv.shape[0]
            grown = np.empty((d + 1, d + 1))
            grown[:d, :d] = inv + np.outer(u, u) / schur
            grown[:d, d] = -u / schur
            grown[d, :d] = grown[:d, d]
            grown[d, d] = 1.0 / schur
            pos = bisect_left(cols, c)
            if pos != d:
                perm = list(range(d + 1))
                perm.insert(pos, perm.pop())
                grown = grown[np.ix_(perm, perm)]
            cols.insert(pos, c)
            inv = grown
        self.inv = inv
        self.xty = extended.xty.copy()
        self.mapping = new
        return self


def extend_columns(gs: GramState, cross, corner, new_xty, kind, n_new=1):
    """Expand a state with gram blocks for new models or meta-features.

    ``cross`` (D_old x D_new), ``corner`` (D_new x D_new) and ``new_xty``
    (D_new) must be accumulated over exactly the rows already in ``gs``;
    :mod:`fwls.store` computes them in one pass over the new columns only.
    New-column order: adding models, column b = j*n_new + a is meta-feature
    j times new model a; adding features, b = j_new*L + i.  The returned
    state is laid out canonically for the enlarged (L, M), so it is
    indistinguishable (up to rounding) from a fresh accumulation.
    """
    old = gs.mapping
    l_old, m_old = old.n_models, old.n_features
    if kind == "model":
        d_new = m_old * n_new
        mapping = DesignMapping(l_old + n_new, m_old)
        lp = mapping.n_models
        old_pos = [j * lp + i for j in range(m_old) for i in range(l_old)]
        new_pos = [j * lp + l_old + a for j in range(m_old)
                   for a in range(n_new)]
    elif kind == "feature":
        d_new = l_old * n_new
        mapping = DesignMapping(l_old, m_old + n_new)
        old_pos = list(range(old.dim))
        new_pos = list(range(old.dim, mapping.dim))
    else:
        raise ValueError(f"kind must be 'model' or 'feature', got {kind!r}")
    cross = np.asarray(cross, dtype=np.float64)
    corner = np.asarray(corner, dtype=np.float64)
    new_xty = np.asarray(new_xty, dtype=np.float64)
    if cross.shape != (old.dim, d_new):
        raise DimensionMismatch(
            f"cross block shape {cross.shape} != ({old.dim}, {d_new})")
    if corner.shape != (d_new, d_new):
        raise DimensionMismatch(
            f"corner block shape {corner.shape} != ({d_new}, {d_new})")
    if new_xty.shape != (d_new,):
        raise DimensionMismatch(
            f"new xty length {new_xty.shape} != {d_new}")
    corner = (corner + corner.T) / 2.0
    dense = np.zeros((mapping.dim, mapping.dim))
    dense[np.ix_(old_pos, old_pos)] = gs.gram_dense()
    dense[np.ix_(old_pos, new_pos)] = cross
    dense[np.ix_(new_pos, old_pos)] = cross.T
    dense[np.ix_(new_pos, new_pos)] = corner
    xty = np.zeros(mapping.dim)
    xty[old_pos] = gs.xty
    xty[new_pos] = new_xty
    return GramState(mapping, pack_lower(dense), xty, gs.yty, gs.n_rows)
