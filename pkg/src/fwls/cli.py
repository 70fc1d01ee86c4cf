"""Command-line front end: fit, cv, extend, bench, predict.

Every command is deterministic given its flags and seeds, never mutates
its inputs, and exits nonzero with a diagnostic on any failure.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import dataio, store
from .bench.runner import BenchmarkConfig, run_benchmark
from .cv import cv_rmse, forward_select, make_folds, merged_baseline_rmse
from .errors import AlignmentError, CsvFormatError, FwlsError
from .gram import from_dataset
from .solver import DEFAULT_LAMBDA, LAMBDA_GRID, solve

__all__ = ["entry", "main"]


def _default_threads():
    return os.cpu_count() or 1


def _load_dataset(args, require_y=True):
    ids, y, g, f, g_names, f_names = dataio.read_stacked_csv(
        args.input, require_y=require_y)
    if y is None:
        y = np.zeros(g.shape[0])
    return dataio.build_dataset(ids, y, g, f, g_names, f_names,
                                add_f0=not args.no_add_constant,
                                add_g0=args.add_g0)


def _stem(path, suffix):
    root, _ = os.path.splitext(path)
    return root + suffix


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fit(args):
    ds, g_names, f_names = _load_dataset(args)
    gs = from_dataset(ds, n_workers=args.threads)
    fit = solve(gs, args.lam)
    coeffs_out = args.coeffs_out or _stem(args.input, ".coeffs.csv")
    dataio.write_coeffs_csv(coeffs_out, fit.coeffs, g_names, f_names)
    print(f"rows {ds.n_rows}  models {ds.n_models}  features {ds.n_features}")
    print(f"lambda {fit.lam!r}  train_rmse {fit.train_rmse!r}")
    if fit.jitter > 0:
        print(f"note: jitter escalation raised lambda by {fit.jitter!r}")
    print(f"coefficients written to {coeffs_out}")
    if args.state_out:
        store.save(gs, args.state_out, lambda_hint=fit.lam)
        print(f"state written to {args.state_out}")
    return 0


def _parse_subset(spec, f_names):
    subset = []
    for tok in spec.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok in f_names:
            subset.append(f_names.index(tok))
        else:
            try:
                idx = int(tok)
            except ValueError:
                raise FwlsError(
                    f"unknown meta-feature {tok!r}; file has {f_names}"
                    ) from None
            if not 0 <= idx < len(f_names):
                raise FwlsError(
                    f"meta-feature index {idx} out of range "
                    f"(0..{len(f_names) - 1})")
            subset.append(idx)
    if not subset:
        raise FwlsError("empty meta-feature subset")
    return subset


def cmd_cv(args):
    ds, g_names, f_names = _load_dataset(args)
    plan = make_folds(ds.n_rows, args.k, args.seed)
    grid = args.lam.strip().lower() == "grid"
    lam = None if grid else float(args.lam)
    if lam is not None and lam < 0:
        raise FwlsError(f"lambda must be nonnegative, got {lam}")

    if args.features == "forward":
        if grid:
            scores = [(cv_rmse(ds, [0], l, plan), l) for l in LAMBDA_GRID]
            _, lam = min(scores)
            print(f"grid-selected lambda {lam!r} on the base feature set")
        report = forward_select(ds, range(1, ds.n_features), lam, plan,
                                f_names)
        out = args.report_out or _stem(args.input, ".cvreport.csv")
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_csv())
        print(report.to_text(), end="")
        print(f"report written to {out}")
        subset = report.selected
    else:
        subset = _parse_subset(args.features, f_names)
        if grid:
            scores = [(cv_rmse(ds, subset, l, plan), l) for l in LAMBDA_GRID]
            for rmse, l in scores:
                print(f"lambda {l!r}  oos_rmse {rmse!r}")
            best, lam = min(scores)
            print(f"grid-selected lambda {lam!r}  oos_rmse {best!r}")
        else:
            rmse = cv_rmse(ds, subset, lam, plan)
            print(f"oos_rmse {rmse!r}  (lambda {lam!r}, k {args.k})")
    if args.baseline == "merged":
        merged = merged_baseline_rmse(ds, subset, lam, plan)
        print(f"merged_baseline_rmse {merged!r}")
    return 0


def cmd_extend(args):
    gs, lam_hint = store.load_with_hint(args.state)
    args.input = args.data
    ds, g_names, f_names = _load_dataset(args)
    if args.new_model:
        ids, matrix, names = dataio.read_column_csv(args.new_model, "g")
        kind = "model"
    else:
        ids, matrix, names = dataio.read_column_csv(args.new_feature, "f")
        kind = "feature"
    if ds.row_ids != ids:
        got = store.dataset_fingerprint(ids)
        want = store.dataset_fingerprint(ds.row_ids)
        raise AlignmentError(
            f"row ids in the new-{kind} file (fingerprint {got:#018x}) do "
            f"not match the dataset ({want:#018x}); the streams are "
            "misaligned and extending would silently corrupt the statistics")
    if kind == "model":
        extended = store.extend_with_model(gs, matrix, ds)
    else:
        extended = store.extend_with_feature(gs, matrix, ds)
    store.save(extended, args.out, lambda_hint=lam_hint)
    print(f"extended with {len(names)} new {kind}(s): {', '.join(names)}")
    print(f"columns {gs.dim} -> {extended.dim}  rows {extended.n_rows}")
    print(f"state written to {args.out}")
    return 0


def cmd_bench(args):
    if args.config:
        mapping = {}
        with open(args.config, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise FwlsError(
                        f"{args.config}: line {lineno}: expected key=value")
                key, val = line.split("=", 1)
                mapping[key.strip()] = val.strip()
        cfg = BenchmarkConfig.from_mapping(mapping)
    elif args.quick:
        cfg = BenchmarkConfig.quick()
    else:
        cfg = BenchmarkConfig()
    if args.seed is not None:
        cfg = replace(cfg, generator=replace(cfg.generator, seed=args.seed))
    report = run_benchmark(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = {
        "report.csv": report.to_csv(),
        "report.txt": report.to_text(),
        "selection.csv": report.cv_report.to_csv(),
    }
    for name, text in paths.items():
        with open(os.path.join(args.out_dir, name), "w",
                  encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    print(report.to_text(), end="")
    print(f"reports written to {args.out_dir}")
    return 0


def cmd_predict(args):
    coeffs, cg_names, cf_names = dataio.read_coeffs_csv(args.coeffs)
    ids, y, g, f, g_names, f_names = dataio.read_stacked_csv(
        args.input, require_y=False)
    # inject constants iff the coefficients were fit with them
    add_f0 = bool(cf_names) and cf_names[0] == dataio.CONST_FEATURE \
        and (not f_names or f_names[0] != dataio.CONST_FEATURE)
    add_g0 = bool(cg_names) and cg_names[0] == dataio.CONST_MODEL \
        and (not g_names or g_names[0] != dataio.CONST_MODEL)
    ds, g_names, f_names = dataio.build_dataset(
        ids, y if y is not None else np.zeros(g.shape[0]), g, f,
        g_names, f_names, add_f0=add_f0, add_g0=add_g0)
    if g_names != cg_names or f_names != cf_names:
        raise FwlsError(
            f"column names do not match the coefficients: input has models "
            f"{g_names} / features {f_names}, coefficients expect "
            f"{cg_names} / {cf_names}")
    preds = coeffs.predict(ds.model_preds, ds.meta_feats)
    out = args.out or _stem(args.input, ".preds.csv")
    dataio.write_predictions_csv(out, ids, preds)
    print(f"{len(ids)} predictions written to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_dataset_flags(p):
    p.add_argument("input", help="stacked csv (header id,y,g:...,f:...)")
    p.add_argument("--no-add-constant", action="store_true",
                   help="do not inject the constant meta-feature f0")
    p.add_argument("--add-g0", action="store_true",
                   help="also inject a constant model column g0")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fwls",
        description="Blend model predictions with weights that vary with "
                    "per-example meta-features.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit blend coefficients from a csv")
    _add_dataset_flags(p)
    p.add_argument("--lambda", dest="lam", type=float,
                   default=DEFAULT_LAMBDA, help="ridge penalty")
    p.add_argument("--coeffs-out", help="coefficients csv path")
    p.add_argument("--state-out", help="also save accumulated state (.fwls)")
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help="accumulation worker count")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="k-fold evaluation / forward selection")
    _add_dataset_flags(p)
    p.add_argument("--lambda", dest="lam", default=str(DEFAULT_LAMBDA),
                   help="ridge penalty, or 'grid' to pick from "
                        f"{list(LAMBDA_GRID)}")
    p.add_argument("--k", type=int, default=10, help="fold count")
    p.add_argument("--seed", type=int, default=0, help="fold shuffle seed")
    p.add_argument("--features", default="forward",
                   help="'forward' or comma-separated names/indices")
    p.add_argument("--report-out", help="forward-selection report csv path")
    p.add_argument("--baseline", choices=["merged"],
                   help="also report the merged-inputs baseline")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("extend",
                       help="extend a saved state with new columns")
    p.add_argument("--state", required=True, help="existing .fwls file")
    p.add_argument("--data", required=True,
                   help="original dataset csv (replayed row-for-row)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--new-model", help="csv with id,g:<name> columns")
    group.add_argument("--new-feature", help="csv with id,f:<name> columns")
    p.add_argument("--out", required=True, help="output .fwls path")
    p.add_argument("--no-add-constant", action="store_true",
                   help="original fit did not inject f0")
    p.add_argument("--add-g0", action="store_true",
                   help="original fit injected g0")
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("bench", help="run the blending benchmark")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--quick", action="store_true",
                   help="small profile (< 1 minute)")
    p.add_argument("--out-dir", default="bench_out")
    p.add_argument("--seed", type=int, help="override the generator seed")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("predict",
                       help="apply saved coefficients to a csv")
    p.add_argument("input", help="csv with id[,y],g:...,f:... columns")
    p.add_argument("--coeffs", required=True, help="coefficients csv")
    p.add_argument("--out", help="predictions csv path")
    p.set_defaults(func=cmd_predict)
    return parser


def entry(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FwlsError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():  # console-script hook
    sys.exit(entry())


if __name__ == "__main__":
    main()
