"""Bit-exact persistence and streaming extension of accumulated blend state.

File layout (little-endian, extension ``.fwls``)::

    magic    4 bytes  b"FWLS"
    version  u32      currently 1
    L        u32      model count
    M        u32      meta-feature count
    N        u64      accumulated row count
    lam_hint f64      penalty hint for later solves (not a model parameter)
    tri      f64 * D(D+1)/2   lower triangle of A'A, row-major, D = M*L
    xty      f64 * D          A'y in canonical column order
    yty      f64
    crc32    u32      zlib crc32 of all preceding bytes

Extending with a new model or meta-feature re-streams the original rows but
only forms products involving the new columns — O(N * M^2 * L) work for a
model, O(N * M * L^2) for a feature — then splices the blocks into an
enlarged state with the canonical layout.  New files are written to a
temporary sibling and renamed into place, so readers never see a partial
file.
"""

import hashlib
import os
import struct
import tempfile
import zlib

import numpy as np

from . import kernels
from .core import StackedDataset
from .errors import (AlignmentError, BadMagic, ChecksumMismatch,
                     DimensionMismatch, NonFiniteData, StateFileError,
                     TruncatedFile, UnsupportedVersion)
from .gram import DEFAULT_CHUNK_ROWS, GramState, tri_length
from .solver import extend_columns

MAGIC = b"FWLS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQd")

__all__ = ["save", "load", "load_with_hint", "extend_with_model",
           "extend_with_feature", "dataset_fingerprint", "expected_size",
           "MAGIC", "VERSION"]


def expected_size(n_models, n_features):
    d = n_models * n_features
    return _HEADER.size + 8 * (tri_length(d) + d + 1) + 4


def _encode(gs: GramState, lambda_hint):
    body = _HEADER.pack(MAGIC, VERSION, gs.mapping.n_models,
                        gs.mapping.n_features, gs.n_rows, float(lambda_hint))
    body += gs.tri.astype("<f8").tobytes()
    body += gs.xty.astype("<f8").tobytes()
    body += struct.pack("<d", gs.yty)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save(gs: GramState, path, lambda_hint=0.0):
    """Write the state atomically (temp file + rename)."""
    blob = _encode(gs, lambda_hint)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".fwls-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_with_hint(path):
    """Decode a state file; returns (GramState, lambda_hint)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagic(f"{path}: not a blend state file (bad magic)")
    if len(blob) < _HEADER.size:
        raise TruncatedFile(
            f"{path}: {len(blob)} bytes is too short for the header")
    magic, version, n_models, n_features, n_rows, lam_hint = \
        _HEADER.unpack_from(blob)
    if version != VERSION:
        raise UnsupportedVersion(
            f"{path}: file version {version}, this build reads {VERSION}")
    if n_models < 1 or n_features < 1:
        raise StateFileError(
            f"{path}: header has L={n_models}, M={n_features}")
    want = expected_size(n_models, n_features)
    if len(blob) < want:
        raise TruncatedFile(
            f"{path}: {len(blob)} bytes, layout for L={n_models} "
            f"M={n_features} needs {want}")
    if len(blob) > want:
        raise StateFileError(
            f"{path}: {len(blob) - want} trailing bytes beyond the layout")
    (crc,) = struct.unpack_from("<I", blob, want - 4)
    if zlib.crc32(blob[:want - 4]) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch(f"{path}: crc32 mismatch, file is corrupt")
    d = n_models * n_features
    floats = np.frombuffer(blob, dtype="<f8", count=tri_length(d) + d + 1,
                           offset=_HEADER.size).astype(np.float64)
    tri = floats[:tri_length(d)]
    xty = floats[tri_length(d):tri_length(d) + d]
    yty = float(floats[-1])
    if not np.isfinite(floats).all():
        raise NonFiniteData(f"{path}: stored statistics contain non-finite values")
    state = GramState((n_models, n_features), tri.copy(), xty.copy(),
                      yty, n_rows)
    state.validate()
    return state, float(lam_hint)


def load(path) -> GramState:
    """Decode and validate a state file."""
    return load_with_hint(path)[0]


def dataset_fingerprint(row_ids):
    """64-bit digest of a row-id stream, for alignment checks.

    Extension re-streams the original rows; comparing fingerprints between
    the stream fed to the original accumulation and the one paired with the
    new column catches silent misalignment.
    """
    h = hashlib.blake2b(digest_size=8)
    n = 0
    for rid in row_ids:
        h.update(str(rid).encode("utf-8"))
        h.update(b"\x1f")
        n += 1
    h.update(struct.pack("<Q", n))
    return int.from_bytes(h.digest(), "little")


def _extend_blocks(ds: StackedDataset, new_stream, kind, chunk_rows):
    """One pass over the rows: cross, corner and A'y blocks for new columns.

    Work per row touches only (old column, new column) and (new, new)
    pairs; chunk partials combine by the same pairwise reduction as plain
    accumulation.  ``new_stream`` holds raw new-model predictions or new
    meta-feature values; product columns are expanded chunk by chunk.
    """
    d_old = ds.mapping.dim
    n_new = new_stream.shape[1]
    d_new = n_new * (ds.n_features if kind == "model" else ds.n_models)
    g, f, y = ds.model_preds, ds.meta_feats, ds.targets
    stack = []
    for lo in range(0, ds.n_rows, chunk_rows):
        hi = lo + chunk_rows
        if kind == "model":
            # new product columns ordered (feature j, new model a)
            new_cols = np.einsum("nj,na->nja", f[lo:hi], new_stream[lo:hi])
        else:
            # new product columns ordered (new feature j, model i)
            new_cols = np.einsum("nj,ni->nji", new_stream[lo:hi], g[lo:hi])
        new_cols = np.ascontiguousarray(
            new_cols.reshape(new_cols.shape[0], d_new))
        cross = np.zeros((d_old, d_new))
        corner = np.zeros((d_new, d_new))
        new_xty = np.zeros(d_new)
        kernels.cross_chunk(g[lo:hi], f[lo:hi], new_cols, y[lo:hi],
                            cross, corner, new_xty)
        part = (cross, corner, new_xty)
        level = 0
        while stack and stack[-1][0] == level:
            prev = stack.pop()[1]
            part = tuple(a + b for a, b in zip(prev, part))
            level += 1
        stack.append((level, part))
    part = stack.pop()[1]
    while stack:
        part = tuple(a + b for a, b in zip(stack.pop()[1], part))
    return part


def _check_alignment(gs, ds, expect_fingerprint):
    if ds.n_rows != gs.n_rows:
        raise AlignmentError(
            f"state was accumulated over {gs.n_rows} rows but the stream "
            f"has {ds.n_rows}; extension would corrupt the statistics")
    if expect_fingerprint is not None:
        if ds.row_ids is None:
            raise AlignmentError(
                "alignment fingerprint given but the stream has no row ids")
        got = dataset_fingerprint(ds.row_ids)
        if got != expect_fingerprint:
            raise AlignmentError(
                f"row-id fingerprint {got:#018x} != expected "
                f"{expect_fingerprint:#018x}; the stream is not the one "
                "originally accumulated (order or content differs)")


def extend_with_model(gs: GramState, new_preds, ds: StackedDataset,
                      expect_fingerprint=None,
                      chunk_rows=DEFAULT_CHUNK_ROWS) -> GramState:
    """Fold one or more new models' prediction streams into the state.

    ``ds`` must replay exactly the rows behind ``gs`` (checked by count and,
    when given, by row-id fingerprint).  Only products involving the new
    columns are computed.
    """
    if ds.n_models != gs.mapping.n_models or \
            ds.n_features != gs.mapping.n_features:
        raise DimensionMismatch(
            f"replayed stream has L={ds.n_models}, M={ds.n_features}; "
            f"state expects {gs.mapping!r}")
    _check_alignment(gs, ds, expect_fingerprint)
    preds = np.ascontiguousarray(new_preds, dtype=np.float64)
    if preds.ndim == 1:
        preds = preds[:, None]
    if preds.ndim != 2:
        raise DimensionMismatch(
            f"new model stream must be 1-d or 2-d, got shape {preds.shape}")
    if preds.shape[0] != gs.n_rows:
        raise AlignmentError(
            f"new model stream covers {preds.shape[0]} rows; "
            f"state was accumulated over {gs.n_rows}")
    if not np.isfinite(preds).all():
        raise NonFiniteData("non-finite value in new model stream")
    cross, corner, new_xty = _extend_blocks(ds, preds, "model", chunk_rows)
    return extend_columns(gs, cross, corner, new_xty, "model",
                          n_new=preds.shape[1])


def extend_with_feature(gs: GramState, new_feats, ds: StackedDataset,
                        expect_fingerprint=None,
                        chunk_rows=DEFAULT_CHUNK_ROWS) -> GramState:
    """Fold one or more new meta-feature streams into the state."""
    if ds.n_models != gs.mapping.n_models or \
            ds.n_features != gs.mapping.n_features:
        raise DimensionMismatch(
            f"replayed stream has L={ds.n_models}, M={ds.n_features}; "
            f"state expects {gs.mapping!r}")
    _check_alignment(gs, ds, expect_fingerprint)
    feats = np.ascontiguousarray(new_feats, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    if feats.ndim != 2:
        raise DimensionMismatch(
            f"new feature stream must be 1-d or 2-d, got shape {feats.shape}")
    if feats.shape[0] != gs.n_rows:
        raise AlignmentError(
            f"new feature stream covers {feats.shape[0]} rows; "
            f"state was accumulated over {gs.n_rows}")
    if not np.isfinite(feats).all():
        raise NonFiniteData("non-finite value in new feature stream")
    cross, corner, new_xty = _extend_blocks(ds, feats, "feature", chunk_rows)
    return extend_columns(gs, cross, corner, new_xty, "feature",
                          n_new=feats.shape[1])
