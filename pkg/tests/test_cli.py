"""End-to-end command-line checks, each in a fresh subprocess."""

import subprocess
import sys

import numpy as np
import pytest

from fwls import dataio, store
from fwls.gram import from_dataset
from fwls.solver import solve

from helpers import dense_design, ridge_qr


def run_cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "fwls", *map(str, args)],
                          capture_output=True, text=True, cwd=cwd)


def write_stacked(path, y, g, f=None, g_names=None, f_names=None, ids=None):
    n = g.shape[0]
    g_names = g_names or [f"m{i}" for i in range(g.shape[1])]
    f_names = f_names or ([] if f is None else
                          [f"x{j}" for j in range(f.shape[1])])
    ids = ids or [f"r{t}" for t in range(n)]
    header = ["id"] + (["y"] if y is not None else []) \
        + [f"g:{s}" for s in g_names] + [f"f:{s}" for s in f_names]
    lines = [",".join(header)]
    for t in range(n):
        row = [ids[t]]
        if y is not None:
            row.append(repr(float(y[t])))
        row += [repr(float(v)) for v in g[t]]
        if f is not None:
            row += [repr(float(v)) for v in f[t]]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _toy(seed=0, n=80):
    rng = np.random.default_rng(seed)
    g = rng.normal(0.0, 1.0, (n, 2))
    y = g[:, 0].copy()
    return y, g


def test_fit_recovers_exact_coefficients(tmp_path):
    y, g = _toy()
    csv = write_stacked(tmp_path / "toy.csv", y, g)
    proc = run_cli("fit", csv, "--lambda", "0")
    assert proc.returncode == 0, proc.stderr
    coeffs, g_names, f_names = dataio.read_coeffs_csv(
        tmp_path / "toy.coeffs.csv")
    assert g_names == ["m0", "m1"] and f_names == ["f0"]
    assert abs(coeffs.v[0, 0] - 1.0) <= 1e-8
    assert abs(coeffs.v[0, 1]) <= 1e-8
    rmse = float(proc.stdout.split("train_rmse")[1].split()[0])
    assert rmse <= 1e-7


def test_fit_huge_lambda_shrinks_everything(tmp_path):
    rng = np.random.default_rng(1)
    g = rng.normal(0.0, 1.0, (60, 2))
    y = g @ np.array([0.4, 0.6]) + rng.normal(0.0, 0.1, 60)
    csv = write_stacked(tmp_path / "d.csv", y, g)
    proc = run_cli("fit", csv, "--lambda", "1e9")
    assert proc.returncode == 0, proc.stderr
    coeffs, _, _ = dataio.read_coeffs_csv(tmp_path / "d.coeffs.csv")
    assert np.max(np.abs(coeffs.v)) <= 1e-3
    rmse = float(proc.stdout.split("train_rmse")[1].split()[0])
    rms_y = float(np.sqrt(np.mean(y ** 2)))
    assert abs(rmse - rms_y) <= 1e-3 * rms_y


def test_fit_matches_qr_oracle(tmp_path):
    rng = np.random.default_rng(2)
    n = 100
    g = rng.normal(0.0, 1.0, (n, 2))
    f = rng.uniform(0.0, 1.0, (n, 2))
    y = rng.normal(0.0, 1.0, n)
    csv = write_stacked(tmp_path / "r.csv", y, g, f)
    lam = 0.37
    proc = run_cli("fit", csv, "--lambda", lam)
    assert proc.returncode == 0, proc.stderr
    coeffs, _, _ = dataio.read_coeffs_csv(tmp_path / "r.coeffs.csv")

    f_aug = np.column_stack([np.ones(n), f])     # injected constant first
    oracle = ridge_qr(dense_design(g, f_aug), y, lam)
    got = coeffs.v.ravel()
    assert np.linalg.norm(got - oracle) <= 1e-8 * max(1.0,
                                                      np.linalg.norm(oracle))


def test_fit_state_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    g = rng.normal(0.0, 1.0, (50, 2))
    f = rng.uniform(0.0, 1.0, (50, 1))
    y = rng.normal(0.0, 1.0, 50)
    csv = write_stacked(tmp_path / "s.csv", y, g, f)
    state = tmp_path / "s.fwls"
    proc = run_cli("fit", csv, "--state-out", state, "--lambda", "0.05")
    assert proc.returncode == 0, proc.stderr

    gs, hint = store.load_with_hint(state)
    assert hint == 0.05
    assert gs.n_rows == 50
    assert gs.mapping.n_models == 2 and gs.mapping.n_features == 2
    refit = solve(gs, 0.05)
    ids, yy, gg, ff, gn, fn = dataio.read_stacked_csv(csv)
    ds, _, _ = dataio.build_dataset(ids, yy, gg, ff, gn, fn)
    fresh = solve(from_dataset(ds), 0.05)
    assert np.allclose(refit.coeffs.v, fresh.coeffs.v, rtol=0, atol=1e-12)


def _interaction_csv(path, seed=10, n=300):
    rng = np.random.default_rng(seed)
    t = rng.normal(0.0, 1.0, n)
    raw = t[:, None] + rng.normal(0.0, 0.6, (n, 2))
    f1 = rng.uniform(0.0, 1.0, n)
    f2 = rng.uniform(0.0, 1.0, n)
    y = (0.2 + 1.2 * f1) * raw[:, 0] + (1.0 - 1.2 * f1) * raw[:, 1] \
        + rng.normal(0.0, 0.25, n)
    g = np.column_stack([np.ones(n), raw])
    f = np.column_stack([f1, f2])
    return write_stacked(path, y, g, f, g_names=["c", "a", "b"],
                         f_names=["shift", "noisef"])


def test_cv_forward_selection_report(tmp_path):
    csv = _interaction_csv(tmp_path / "i.csv")
    out = tmp_path / "rep.csv"
    proc = run_cli("cv", csv, "--k", "5", "--report-out", out)
    assert proc.returncode == 0, proc.stderr
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "m,feature,oos_rmse"
    rmses = [float(l.split(",")[2]) for l in lines[1:]]
    assert all(b < a for a, b in zip(rmses, rmses[1:]))
    assert "shift" in proc.stdout

    rerun = tmp_path / "rep2.csv"
    proc2 = run_cli("cv", csv, "--k", "5", "--report-out", rerun)
    assert proc2.returncode == 0
    assert rerun.read_bytes() == out.read_bytes()


def test_cv_rejects_oversized_k(tmp_path):
    y, g = _toy(n=20)
    csv = write_stacked(tmp_path / "t.csv", y, g)
    proc = run_cli("cv", csv, "--k", "50")
    assert proc.returncode == 2
    assert "fold" in proc.stderr


def test_cv_merged_baseline_flag(tmp_path):
    csv = _interaction_csv(tmp_path / "i.csv")
    proc = run_cli("cv", csv, "--k", "5", "--features", "0,shift",
                   "--baseline", "merged")
    assert proc.returncode == 0, proc.stderr
    assert "oos_rmse" in proc.stdout
    assert "merged_baseline_rmse" in proc.stdout


def test_extend_then_solve_matches_scratch(tmp_path):
    rng = np.random.default_rng(5)
    n = 120
    g = rng.normal(0.0, 1.0, (n, 2))
    extra = rng.normal(0.0, 1.0, n)
    f = rng.uniform(0.0, 1.0, (n, 1))
    y = rng.normal(0.0, 1.0, n)
    ids = [f"row{t}" for t in range(n)]

    base = write_stacked(tmp_path / "base.csv", y, g, f,
                         g_names=["a", "b"], f_names=["u"], ids=ids)
    full = write_stacked(tmp_path / "full.csv", y,
                         np.column_stack([g, extra]), f,
                         g_names=["a", "b", "c"], f_names=["u"], ids=ids)
    new_csv = tmp_path / "new.csv"
    new_csv.write_text(
        "id,g:c\n" + "".join(f"{ids[t]},{float(extra[t])!r}\n"
                             for t in range(n)),
        encoding="utf-8")

    s1, s2 = tmp_path / "s1.fwls", tmp_path / "s2.fwls"
    assert run_cli("fit", base, "--state-out", s1).returncode == 0
    proc = run_cli("extend", "--state", s1, "--data", base,
                   "--new-model", new_csv, "--out", s2)
    assert proc.returncode == 0, proc.stderr

    gs, _ = store.load_with_hint(s2)
    got = solve(gs, 0.01).coeffs.v
    ids2, yy, gg, ff, gn, fn = dataio.read_stacked_csv(full)
    ds, _, _ = dataio.build_dataset(ids2, yy, gg, ff, gn, fn)
    want = solve(from_dataset(ds), 0.01).coeffs.v
    assert np.allclose(got, want, rtol=1e-8, atol=1e-12)


def test_extend_rejects_misaligned_ids(tmp_path):
    rng = np.random.default_rng(6)
    n = 40
    g = rng.normal(0.0, 1.0, (n, 2))
    y = rng.normal(0.0, 1.0, n)
    base = write_stacked(tmp_path / "base.csv", y, g)
    s1 = tmp_path / "s1.fwls"
    assert run_cli("fit", base, "--state-out", s1).returncode == 0

    new_csv = tmp_path / "new.csv"
    new_csv.write_text(
        "id,g:c\n" + "".join(f"other{t},1.0\n" for t in range(n)),
        encoding="utf-8")
    proc = run_cli("extend", "--state", s1, "--data", base,
                   "--new-model", new_csv, "--out", tmp_path / "s2.fwls")
    assert proc.returncode == 2
    assert "misaligned" in proc.stderr or "fingerprint" in proc.stderr


def test_predict_applies_saved_coefficients(tmp_path):
    rng = np.random.default_rng(7)
    n = 60
    g = rng.normal(0.0, 1.0, (n, 2))
    f = rng.uniform(0.0, 1.0, (n, 1))
    y = g[:, 0] * (1.0 + f[:, 0])
    train = write_stacked(tmp_path / "train.csv", y, g, f, f_names=["w"])
    assert run_cli("fit", train, "--lambda", "1e-6").returncode == 0
    coeffs_path = tmp_path / "train.coeffs.csv"

    g2 = rng.normal(0.0, 1.0, (10, 2))
    f2 = rng.uniform(0.0, 1.0, (10, 1))
    newdata = write_stacked(tmp_path / "new.csv", None, g2, f2,
                            f_names=["w"])
    proc = run_cli("predict", newdata, "--coeffs", coeffs_path)
    assert proc.returncode == 0, proc.stderr

    coeffs, _, _ = dataio.read_coeffs_csv(coeffs_path)
    # the constant meta-feature is injected to match the fit layout
    expected = coeffs.predict(g2, np.column_stack([np.ones(10), f2]))
    out_lines = (tmp_path / "new.preds.csv").read_text().strip().split("\n")
    assert out_lines[0] == "id,prediction"
    got = np.array([float(l.split(",")[1]) for l in out_lines[1:]])
    assert np.allclose(got, expected, rtol=0, atol=1e-12)


def test_bench_quick_writes_reports(tmp_path):
    out = tmp_path / "bench"
    proc = run_cli("bench", "--quick", "--out-dir", out)
    assert proc.returncode == 0, proc.stderr
    for name in ("report.csv", "report.txt", "selection.csv"):
        assert (out / name).is_file()
    lines = (out / "report.csv").read_text().strip().split("\n")
    assert lines[0] == "strategy,split,rmse"
    assert any(l.startswith("feature_weighted,test,") for l in lines)


def test_parse_error_names_the_line(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,y,g:a\nr0,1.0,2.0\nr1,oops,2.0\n", encoding="utf-8")
    proc = run_cli("fit", bad)
    assert proc.returncode == 2
    assert "line 3" in proc.stderr
