"""Higher-level workflows: multi-seed training, ablations, inference timing
and the canned gradient-check configurations."""

from __future__ import annotations

import time
from statistics import median

import numpy as np
from threadpoolctl import threadpool_limits

from .data import Batch, Dataset, FeatureSchema
from .errors import ConfigError
from .metrics import evaluate
from .model import HierRecConfig, HierRecModel
from .nn.gradcheck import GradCheckReport, grad_check
from .nn.layers import FcStackConfig
from .runconfig import RunConfig
from .shared_bottom import SharedBottomConfig, SharedBottomModel
from .training import TrainResult, train_model

ABLATION_VARIANTS = ("full", "-MI", "-I", "-E")


def run_seed(seed: int, run_index: int) -> int:
    """Per-run seed; all run randomness derives from (seed, run index)."""
    state = np.random.SeedSequence([seed & (2**64 - 1), 3, run_index]).generate_state(1)
    return int(state[0])


def train_run(
    rc: RunConfig,
    datasets,
    run_index: int = 0,
    vocab=None,
    log_fn=None,
):
    """Train one model for one run index; returns (model, TrainResult)."""
    train_ds, val_ds, _ = datasets
    seed = run_seed(rc.seed, run_index)
    model = rc.build_model(seed=seed, vocab=vocab)
    result = train_model(
        model,
        train_ds,
        val_ds,
        learning_rate=rc.learning_rate,
        batch_size=rc.batch_size,
        max_epochs=rc.max_epochs,
        patience=rc.early_stop_patience,
        seed=seed,
        log_fn=log_fn,
    )
    return model, result


def _variant_model_dict(raw: dict | None, variant: str) -> dict:
    d = dict(raw or {})
    if variant == "-MI":
        d["ablate_multi_head"] = True
        d.pop("attention_fc", None)  # head count changes the stack width
    elif variant == "-I":
        d["ablate_implicit"] = True
    elif variant == "-E":
        d["ablate_explicit"] = True
    return d


def run_ablation(rc: RunConfig, log_fn=None) -> dict:
    """Train the full model and its -MI/-I/-E variants under shared seeds."""
    if rc.model_kind != "hierrec":
        raise ConfigError("ablation runs require model_kind 'hierrec'")
    train_ds, val_ds, test_ds, vocab = rc.load_datasets()
    schema = rc.schema()
    report: dict = {"num_runs": rc.num_runs, "variants": {}}
    for variant in ABLATION_VARIANTS:
        cfg = HierRecConfig.from_dict(_variant_model_dict(rc.model, variant))
        runs = []
        for r in range(rc.num_runs):
            seed = run_seed(rc.seed, r)
            model = HierRecModel(cfg, schema, vocab, seed=seed)
            train_model(
                model,
                train_ds,
                val_ds,
                learning_rate=rc.learning_rate,
                batch_size=rc.batch_size,
                max_epochs=rc.max_epochs,
                patience=rc.early_stop_patience,
                seed=seed,
            )
            test_report = evaluate(model, test_ds)
            runs.append(
                {
                    "run": r,
                    "test_auc": test_report.overall_auc,
                    "test_logloss": test_report.overall_logloss,
                }
            )
            if log_fn is not None:
                log_fn({"variant": variant, **runs[-1]})
        report["variants"][variant] = {
            "runs": runs,
            "mean_auc": float(np.mean([x["test_auc"] for x in runs])),
            "mean_logloss": float(np.mean([x["test_logloss"] for x in runs])),
        }
    return report


def time_inference(models: list[tuple[str, object]], ds: Dataset, repetitions: int) -> dict:
    """Median single-threaded full-dataset scoring time per model.

    The increase row reports how much slower the slowest model is relative
    to the slowest of the remaining ones.
    """
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    results: dict = {"repetitions": repetitions, "models": {}}
    with threadpool_limits(limits=1):
        for name, model in models:
            model.predict_scores(ds)  # warm-up pass outside the timings
            times = []
            for _ in range(repetitions):
                t0 = time.perf_counter()
                model.predict_scores(ds)
                times.append(time.perf_counter() - t0)
            med = float(median(times))
            results["models"][name] = {
                "times_s": times,
                "median_s": med,
                "per_sample_us": med / len(ds) * 1e6,
            }
    if len(models) >= 2:
        medians = {n: results["models"][n]["median_s"] for n, _ in models}
        slowest = max(medians, key=medians.get)
        others = max(v for n, v in medians.items() if n != slowest)
        results["slowest"] = slowest
        results["increase_percent"] = (medians[slowest] - others) / others * 100.0
    return results


def _tiny_schema() -> FeatureSchema:
    return FeatureSchema(
        scenario_field_name="scenario",
        common_field_names=("f0", "f1", "f2", "f3"),
        scenario_cardinality=3,
        common_cardinalities=(5, 4, 6, 3),
    )


def tiny_hierrec_config(activation: str = "relu") -> HierRecConfig:
    """Gradient-check configuration: d=3, I=4, two heads, no BN/dropout."""
    d, g_dim, e_out, i_out, r = 3, 6, 4, 3, 2
    flat = 4 * d
    return HierRecConfig(
        embedding_dim=d,
        num_heads=2,
        global_dim=g_dim,
        explicit_out_dim=e_out,
        implicit_out_dim=i_out,
        bottleneck_r=r,
        global_fc=FcStackConfig([flat, g_dim], activation),
        explicit_condition_fc=FcStackConfig([d, 26], "identity"),
        attention_fc=FcStackConfig([d, 8], "identity"),
        implicit_condition_fc=FcStackConfig([flat, 19], "identity"),
    )


def tiny_shared_bottom_config(activation: str = "relu") -> SharedBottomConfig:
    return SharedBottomConfig(
        embedding_dim=3,
        bottom_fc=FcStackConfig([15, 6], activation),
        tower_fc=FcStackConfig([6, 1], "identity"),
        num_scenarios=3,
    )


def tiny_batch(schema: FeatureSchema, n: int = 8, seed: int = 11) -> Batch:
    rng = np.random.default_rng(seed)
    common = np.column_stack(
        [rng.integers(0, c, size=n) for c in schema.common_cardinalities]
    )
    return Batch(
        scenario_ids=rng.integers(0, schema.scenario_cardinality, size=n),
        common_ids=common,
        labels=rng.integers(0, 2, size=n),
    )


def _boost_embeddings(model, scale: float = 50.0) -> None:
    # Default embedding init is N(0, 0.01); at that scale some gradients sit
    # near the FD noise floor and relative error is meaningless. The check
    # fixtures use unit-scale embeddings instead.
    for name, entry in model.store.entries.items():
        if name.startswith("embed."):
            entry.value *= scale


def run_gradcheck(
    tolerance: float = 1e-4, smooth_tolerance: float = 1e-6
) -> list[tuple[str, GradCheckReport]]:
    """FD-verify every parameter of the canned tiny configurations."""
    schema = _tiny_schema()
    batch = tiny_batch(schema)
    checks = []
    # Smooth configurations tolerate a larger FD step: truncation is tiny
    # for them while a larger h pushes the roundoff floor well below the
    # tighter tolerance.
    for name, activation, tol, h in (
        ("hierrec", "relu", tolerance, 1e-5),
        ("hierrec_smooth", "identity", smooth_tolerance, 3e-4),
    ):
        model = HierRecModel(tiny_hierrec_config(activation), schema, seed=5)
        _boost_embeddings(model)
        checks.append((name, grad_check(model.grad_check_target(batch), tol, h=h)))
    for name, activation, tol, h in (
        ("shared_bottom", "relu", tolerance, 1e-5),
        ("shared_bottom_smooth", "identity", smooth_tolerance, 1e-3),
    ):
        sb = SharedBottomModel(tiny_shared_bottom_config(activation), schema, seed=5)
        _boost_embeddings(sb)
        checks.append((name, grad_check(sb.grad_check_target(batch), tol, h=h)))
    return checks
