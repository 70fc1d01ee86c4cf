"""End-to-end blending benchmark: generate, train, blend, compare.

Five strategies are evaluated on a held-out test split after fitting on
the blend split: (a) the single best base model, (b) their uniform
average, (c) plain stacking (constant meta-feature only), (d) the merged
baseline (meta-features as extra additive regressors), and (e) the
feature-weighted blend with forward-selected meta-features.  A cumulative
forward-selection report over the blend split comes along for the ride.
"""

import time
from dataclasses import dataclass, field, fields

import numpy as np

from ..core import StackedDataset
from ..cv import cv_rmse, forward_select, make_folds, merged_baseline_rmse
from ..gram import from_dataset
from ..solver import solve
from .generator import GeneratorConfig, generate
from .metafeatures import compute_meta_features, feature_names
from .models import train_global_effects, train_item_knn, train_mf

__all__ = ["BenchmarkConfig", "BenchmarkReport", "run_benchmark"]

STRATEGIES = ("best_single", "uniform_average", "standard_stacking",
              "merged_inputs", "feature_weighted")


@dataclass(frozen=True)
class BenchmarkConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    ge_alpha: float = 25.0
    mf_factors: int = 8
    mf_lr: float = 0.01
    mf_reg: float = 0.02
    mf_epochs: int = 20
    mf_seed: int = 7
    knn_k: int = 12
    knn_min_overlap: int = 3
    knn_beta: float = 100.0
    lam: float = 0.01
    cv_folds: int = 10
    cv_seed: int = 77

    @classmethod
    def quick(cls):
        """Small profile for smoke runs; finishes well under a minute."""
        return cls(generator=GeneratorConfig(n_users=500, n_items=160,
                                             target_ratings=20_000),
                   mf_epochs=10, cv_folds=5)

    @classmethod
    def from_mapping(cls, mapping):
        """Build a config from flat string key/value pairs.

        Keys are field names of this class or of the generator config;
        unknown keys raise.
        """
        gen_fields = {f.name: f for f in fields(GeneratorConfig)}
        own_fields = {f.name: f for f in fields(cls) if f.name != "generator"}
        gen_kwargs, own_kwargs = {}, {}
        for key, raw in mapping.items():
            if key in gen_fields:
                target, spec = gen_kwargs, gen_fields[key]
            elif key in own_fields:
                target, spec = own_kwargs, own_fields[key]
            else:
                raise KeyError(f"unknown benchmark config key {key!r}")
            caster = spec.type if callable(spec.type) else {
                "int": int, "float": float}[spec.type]
            target[key] = caster(raw)
        return cls(generator=GeneratorConfig(**gen_kwargs), **own_kwargs)


class BenchmarkReport:
    """Per-strategy RMSEs plus the forward-selection trace."""

    __slots__ = ("config", "blend_rmse", "test_rmse", "base_blend_rmse",
                 "cv_report", "cv_blend", "selected_names", "elapsed")

    def __init__(self, config, blend_rmse, test_rmse, base_blend_rmse,
                 cv_report, cv_blend, selected_names, elapsed):
        self.config = config
        self.blend_rmse = dict(blend_rmse)
        self.test_rmse = dict(test_rmse)
        self.base_blend_rmse = dict(base_blend_rmse)
        self.cv_report = cv_report
        self.cv_blend = dict(cv_blend)
        self.selected_names = list(selected_names)
        self.elapsed = float(elapsed)

    @property
    def fwls_gain(self):
        """Test-split improvement of the weighted blend over plain stacking."""
        return self.test_rmse["standard_stacking"] \
            - self.test_rmse["feature_weighted"]

    @property
    def merged_gain(self):
        return self.test_rmse["standard_stacking"] \
            - self.test_rmse["merged_inputs"]

    def to_csv(self) -> str:
        lines = ["strategy,split,rmse"]
        for name in STRATEGIES:
            if name in self.blend_rmse:
                lines.append(f"{name},blend,{self.blend_rmse[name]!r}")
            if name in self.cv_blend:
                lines.append(f"{name},blend_cv,{self.cv_blend[name]!r}")
            lines.append(f"{name},test,{self.test_rmse[name]!r}")
        for name, rmse in self.base_blend_rmse.items():
            lines.append(f"base:{name},blend,{rmse!r}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(s) for s in STRATEGIES) + 2
        lines = [f"{'strategy':<{width}} {'blend':>10} {'test':>10}"]
        lines.append("-" * (width + 22))
        for name in STRATEGIES:
            blend = self.blend_rmse.get(name, self.cv_blend.get(name))
            blend_s = f"{blend:10.6f}" if blend is not None else " " * 10
            lines.append(f"{name:<{width}} {blend_s} "
                         f"{self.test_rmse[name]:10.6f}")
        lines.append("")
        lines.append(f"selected meta-features: {', '.join(self.selected_names)}")
        lines.append(f"fwls gain over stacking (test): {self.fwls_gain:.6f}")
        lines.append(f"merged-inputs share of that gain: "
                     f"{self.merged_share():.3f}")
        lines.append(f"elapsed: {self.elapsed:.1f}s")
        return "\n".join(lines) + "\n"

    def merged_share(self):
        gain = self.fwls_gain
        return self.merged_gain / gain if gain > 0 else float("inf")

    def __repr__(self):
        return (f"BenchmarkReport(fwls_gain={self.fwls_gain:.6f}, "
                f"merged_share={self.merged_share():.3f})")


def _rmse(pred, truth):
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def run_benchmark(config: BenchmarkConfig = None) -> BenchmarkReport:
    """Run the full pipeline; pure function of the config and its seeds."""
    cfg = config or BenchmarkConfig()
    started = time.perf_counter()
    ds = generate(cfg.generator)
    tu, ti, tv = ds.train_arrays()

    base_models = [
        ("global_effects", train_global_effects(ds, cfg.ge_alpha)),
        ("matrix_factorization",
         train_mf(ds, cfg.mf_factors, cfg.mf_lr, cfg.mf_reg,
                  cfg.mf_epochs, cfg.mf_seed)),
        ("item_knn",
         train_item_knn(ds, cfg.knn_k, cfg.knn_min_overlap, cfg.knn_beta)),
    ]

    bu, bi, by = ds.blend_arrays()
    xu, xi, xy = ds.test_arrays()
    raw_blend = np.column_stack([m.predict(bu, bi) for _, m in base_models])
    raw_test = np.column_stack([m.predict(xu, xi) for _, m in base_models])
    # a constant model column gives every strategy an intercept, so the
    # merged-vs-weighted comparison is about the meta-features themselves
    g_blend = np.column_stack([np.ones(by.shape[0]), raw_blend])
    g_test = np.column_stack([np.ones(xy.shape[0]), raw_test])
    f_blend = compute_meta_features(tu, ti, tv, ds.n_users, ds.n_items, bu, bi)
    f_test = compute_meta_features(tu, ti, tv, ds.n_users, ds.n_items, xu, xi)
    names = feature_names()

    blend_ds = StackedDataset(by, g_blend, f_blend)
    plan = make_folds(blend_ds.n_rows, cfg.cv_folds, cfg.cv_seed)
    cv_report = forward_select(blend_ds, range(1, blend_ds.n_features),
                               cfg.lam, plan, names)
    selected = cv_report.selected

    base_blend_rmse = {name: _rmse(raw_blend[:, idx], by)
                       for idx, (name, _) in enumerate(base_models)}
    best_idx = int(np.argmin([base_blend_rmse[name]
                              for name, _ in base_models]))

    blend_rmse, test_rmse, cv_blend = {}, {}, {}
    blend_rmse["best_single"] = base_blend_rmse[base_models[best_idx][0]]
    test_rmse["best_single"] = _rmse(raw_test[:, best_idx], xy)
    blend_rmse["uniform_average"] = _rmse(raw_blend.mean(axis=1), by)
    test_rmse["uniform_average"] = _rmse(raw_test.mean(axis=1), xy)

    # plain stacking: constant meta-feature only
    stack_fit = solve(from_dataset(blend_ds.subset_features([0])), cfg.lam)
    preds = stack_fit.coeffs.predict(g_test, f_test[:, [0]])
    test_rmse["standard_stacking"] = _rmse(preds, xy)
    cv_blend["standard_stacking"] = cv_rmse(blend_ds, [0], cfg.lam, plan)

    # merged baseline: same meta-features, as additive columns (the
    # constant model column already provides the intercept)
    extra = [j for j in selected if j != 0]
    merged_blend = StackedDataset(
        by, np.hstack([g_blend, f_blend[:, extra]]),
        np.ones((by.shape[0], 1)))
    merged_fit = solve(from_dataset(merged_blend), cfg.lam)
    preds = merged_fit.coeffs.predict(
        np.hstack([g_test, f_test[:, extra]]),
        np.ones((xy.shape[0], 1)))
    test_rmse["merged_inputs"] = _rmse(preds, xy)
    cv_blend["merged_inputs"] = merged_baseline_rmse(blend_ds, extra,
                                                     cfg.lam, plan)

    # the feature-weighted blend on its selected meta-features
    fwls_fit = solve(from_dataset(blend_ds.subset_features(selected)),
                     cfg.lam)
    preds = fwls_fit.coeffs.predict(g_test, f_test[:, selected])
    test_rmse["feature_weighted"] = _rmse(preds, xy)
    cv_blend["feature_weighted"] = cv_report.rows[-1][2]

    return BenchmarkReport(cfg, blend_rmse, test_rmse, base_blend_rmse,
                           cv_report, cv_blend,
                           [names[j] for j in selected],
                           time.perf_counter() - started)
