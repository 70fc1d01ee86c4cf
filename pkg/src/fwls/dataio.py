"""CSV interchange for stacked datasets, coefficients, and predictions.

The stacked format is one row per example with a self-describing header::

    id,y,g:<model-name>...,f:<feature-name>...

All ``g:`` columns precede all ``f:`` columns; cell values are decimal
floats, and any missing or non-finite cell is rejected with the line and
column where it happened.
"""

import csv
import math

import numpy as np

from .core import BlendCoefficients, StackedDataset, augment_constants
from .errors import CsvFormatError

__all__ = ["read_stacked_csv", "read_column_csv", "build_dataset",
           "write_coeffs_csv", "read_coeffs_csv", "write_predictions_csv"]

CONST_FEATURE = "f0"
CONST_MODEL = "g0"


def _parse_cell(raw, lineno, colname, path):
    try:
        val = float(raw)
    except (TypeError, ValueError):
        raise CsvFormatError(
            f"{path}: line {lineno}, column {colname}: "
            f"not a number: {raw!r}") from None
    if not math.isfinite(val):
        raise CsvFormatError(
            f"{path}: line {lineno}, column {colname}: non-finite value {raw}")
    return val


def _split_header(header, path, require_y):
    if not header or header[0] != "id":
        raise CsvFormatError(
            f"{path}: header must start with 'id', got {header[:1]}")
    has_y = len(header) > 1 and header[1] == "y"
    if require_y and not has_y:
        raise CsvFormatError(
            f"{path}: header must start with 'id,y', got {header[:2]}")
    g_names, f_names = [], []
    for col in header[2 if has_y else 1:]:
        if col.startswith("g:"):
            if f_names:
                raise CsvFormatError(
                    f"{path}: model column {col!r} appears after "
                    "meta-feature columns")
            g_names.append(col[2:])
        elif col.startswith("f:"):
            f_names.append(col[2:])
        else:
            raise CsvFormatError(
                f"{path}: column {col!r} must be prefixed 'g:' or 'f:'")
    if not g_names:
        raise CsvFormatError(f"{path}: no 'g:' model columns in header")
    return g_names, f_names, has_y


def read_stacked_csv(path, require_y=True):
    """Parse a stacked csv; returns (ids, y, g, f, g_names, f_names).

    ``f`` may have zero columns — constant injection happens later in
    :func:`build_dataset`.  With ``require_y=False`` the target column may
    be absent (prediction inputs), in which case ``y`` comes back None.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        g_names, f_names, has_y = _split_header(header, path, require_y)
        skip = 2 if has_y else 1
        width = skip + len(g_names) + len(f_names)
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise CsvFormatError(
                    f"{path}: line {lineno}: expected {width} cells, "
                    f"got {len(row)}")
            ids.append(row[0])
            rows.append([_parse_cell(raw, lineno, header[k + 1], path)
                         for k, raw in enumerate(row[1:])])
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    y = data[:, 0] if has_y else None
    g = data[:, skip - 1:skip - 1 + len(g_names)]
    f = data[:, skip - 1 + len(g_names):]
    return ids, y, g, f, g_names, f_names


def read_column_csv(path, prefix):
    """Parse an id + value-columns csv (new model/feature streams).

    Header: ``id,<prefix>:<name>...``; returns (ids, matrix, names).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if not header or header[0] != "id":
            raise CsvFormatError(f"{path}: header must start with 'id'")
        names = []
        for col in header[1:]:
            if not col.startswith(prefix + ":"):
                raise CsvFormatError(
                    f"{path}: column {col!r} must be prefixed '{prefix}:'")
            names.append(col[len(prefix) + 1:])
        if not names:
            raise CsvFormatError(f"{path}: no '{prefix}:' columns")
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}: line {lineno}: expected {len(header)} cells, "
                    f"got {len(row)}")
            ids.append(row[0])
            rows.append([_parse_cell(raw, lineno, header[k + 1], path)
                         for k, raw in enumerate(row[1:])])
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    return ids, np.asarray(rows, dtype=np.float64), names


def build_dataset(ids, y, g, f, g_names, f_names, add_f0=True, add_g0=False):
    """Assemble a StackedDataset, injecting constant columns as asked.

    With no ``f:`` columns in the file, the injected constant is the only
    meta-feature (plain stacking).
    """
    if f.shape[1] == 0 and not add_f0:
        raise CsvFormatError(
            "no meta-feature columns and constant injection disabled")
    names_g = list(g_names)
    names_f = list(f_names)
    if f.shape[1] == 0:
        ds = StackedDataset(y, g, np.ones((g.shape[0], 1)), ids)
        names_f = [CONST_FEATURE]
        if add_g0:
            ds = augment_constants(ds, add_f0=False, add_g0=True)
            names_g = [CONST_MODEL] + names_g
        return ds, names_g, names_f
    ds = StackedDataset(y, g, f, ids)
    ds = augment_constants(ds, add_f0=add_f0, add_g0=add_g0)
    if add_f0:
        names_f = [CONST_FEATURE] + names_f
    if add_g0:
        names_g = [CONST_MODEL] + names_g
    return ds, names_g, names_f


def write_coeffs_csv(path, coeffs: BlendCoefficients, g_names, f_names):
    """Coefficients in canonical order: feature-major, models fastest."""
    if len(g_names) != coeffs.n_models or len(f_names) != coeffs.n_features:
        raise CsvFormatError(
            f"name lists ({len(g_names)} models, {len(f_names)} features) "
            f"do not match coefficients {coeffs!r}")
    lines = ["model,feature,v_ij"]
    for j, fname in enumerate(f_names):
        for i, gname in enumerate(g_names):
            lines.append(f"{gname},{fname},{float(coeffs.v[j, i])!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_coeffs_csv(path, lam=0.0):
    """Inverse of :func:`write_coeffs_csv`.

    Returns (BlendCoefficients, g_names, f_names); row order in the file
    must be canonical (feature-major), which is how they are written.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["model", "feature", "v_ij"]:
            raise CsvFormatError(
                f"{path}: expected header 'model,feature,v_ij', got {header}")
        triples = [(row[0], row[1],
                    _parse_cell(row[2], lineno, "v_ij", path))
                   for lineno, row in enumerate(reader, start=2) if row]
    if not triples:
        raise CsvFormatError(f"{path}: no coefficient rows")
    f_names = list(dict.fromkeys(t[1] for t in triples))
    g_names = list(dict.fromkeys(t[0] for t in triples))
    n_models, n_features = len(g_names), len(f_names)
    if len(triples) != n_models * n_features:
        raise CsvFormatError(
            f"{path}: {len(triples)} rows for {n_models} models x "
            f"{n_features} features")
    v = np.empty((n_features, n_models))
    for idx, (gname, fname, val) in enumerate(triples):
        j, i = divmod(idx, n_models)
        if gname != g_names[i] or fname != f_names[j]:
            raise CsvFormatError(
                f"{path}: coefficient rows are not in canonical "
                f"(feature-major) order at row {idx + 2}")
        v[j, i] = val
    return BlendCoefficients(v, lam), g_names, f_names


def write_predictions_csv(path, ids, preds):
    lines = ["id,prediction"]
    lines.extend(f"{rid},{float(val)!r}" for rid, val in zip(ids, preds))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
