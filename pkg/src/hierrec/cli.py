"""Command-line interface.

Verbs: gen-data, train, eval, ablate, bench, gradcheck, dump-attention.
Exit codes: 0 ok, 2 config/contract violation, 3 I/O failure, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import Vocabulary, generate_synthetic, parse_csv
from .errors import ConfigError, HierRecError, NumericError, SchemaError
from .experiments import run_ablation, run_gradcheck, run_seed, time_inference, train_run
from .metrics import evaluate
from .runconfig import RunConfig

EXIT_OK = 0
EXIT_CONTRACT = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _ensure_out(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    rc = _load_runconfig(args)
    if rc.synthetic is None:
        raise ConfigError("gen-data requires a 'synthetic' data section")
    train, val, test, report = generate_synthetic(rc.synthetic)
    out = _ensure_out(args.out)
    for tag, ds in (("train", train), ("val", val), ("test", test)):
        ds.to_csv(out / f"{tag}.csv")
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(f"wrote {len(train)}/{len(val)}/{len(test)} samples to {out}")
    return EXIT_OK


def _raw_config(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON: {err}") from err


def _load_runconfig(args) -> RunConfig:
    raw = _raw_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    return RunConfig.from_dict(raw)


def cmd_train(args) -> int:
    rc = _load_runconfig(args)
    datasets = rc.load_datasets()
    train_ds, val_ds, test_ds, vocab = datasets
    out = _ensure_out(args.out)
    summary = []
    for r in range(rc.num_runs):
        suffix = f"_run{r}" if rc.num_runs > 1 else ""
        log_path = out / f"train_log{suffix}.jsonl"
        with log_path.open("w") as log_fh:

            def log_fn(entry: dict) -> None:
                log_fh.write(json.dumps(entry, sort_keys=True) + "\n")

            model, result = train_run(
                rc, (train_ds, val_ds, test_ds), run_index=r, vocab=vocab, log_fn=log_fn
            )
        ckpt_path = out / f"checkpoint{suffix}.json"
        save_checkpoint(model, ckpt_path)
        summary.append(
            {
                "run": r,
                "best_epoch": result.best_epoch,
                "best_val_auc": result.best_val_auc,
                "best_val_logloss": result.best_val_logloss,
                "checkpoint": str(ckpt_path),
            }
        )
        print(
            f"run {r}: best epoch {result.best_epoch} "
            f"val AUC {result.best_val_auc:.4f} "
            f"val logloss {result.best_val_logloss:.4f}"
        )
    (out / "runs_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True)
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    vocab = model.vocab if model.vocab.tables else None
    ds = parse_csv(args.data, model.schema, vocab, split_tag="eval")
    baseline_auc = None
    if args.baseline:
        baseline = load_checkpoint(args.baseline)
        baseline_ds = parse_csv(
            args.data,
            baseline.schema,
            baseline.vocab if baseline.vocab.tables else None,
            split_tag="eval",
        )
        baseline_auc = evaluate(baseline, baseline_ds).overall_auc
    report = evaluate(model, ds, baseline_auc=baseline_auc)
    print(report.table())
    print(report.to_json())
    if args.out:
        out = _ensure_out(args.out)
        (out / "eval_report.json").write_text(report.to_json())
    return EXIT_OK


def cmd_ablate(args) -> int:
    rc = _load_runconfig(args)
    report = run_ablation(rc, log_fn=lambda e: print(json.dumps(e, sort_keys=True)))
    out = _ensure_out(args.out)
    (out / "ablation_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True)
    )
    print(f"{'variant':>8}  {'mean AUC':>9}  {'mean logloss':>12}")
    for variant, stats in report["variants"].items():
        print(
            f"{variant:>8}  {stats['mean_auc']:>9.4f}  {stats['mean_logloss']:>12.4f}"
        )
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    models = []
    for path in args.checkpoints:
        model = load_checkpoint(path)
        name = f"{model.kind}:{Path(path).stem}"
        models.append((name, model))
    first = models[0][1]
    vocab = first.vocab if first.vocab.tables else None
    ds = parse_csv(args.data, first.schema, vocab, split_tag="bench")
    results = time_inference(models, ds, args.repetitions)
    print(f"{'model':>32}  {'median (s)':>10}  {'us/sample':>10}")
    for name, stats in results["models"].items():
        print(
            f"{name:>32}  {stats['median_s']:>10.4f}  {stats['per_sample_us']:>10.2f}"
        )
    if "increase_percent" in results:
        print(
            f"increase: {results['slowest']} is "
            f"{results['increase_percent']:.2f}% slower than the next slowest"
        )
    if args.out:
        out = _ensure_out(args.out)
        (out / "bench_report.json").write_text(
            json.dumps(results, indent=2, sort_keys=True)
        )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    failed = False
    for name, report in run_gradcheck():
        print(f"[{name}] {report.summary()}")
        failed = failed or not report.passed()
    if failed:
        raise NumericError("gradient check failed")
    return EXIT_OK


def cmd_dump_attention(args) -> int:
    from .model import HierRecModel, export_attention_weights

    model = load_checkpoint(args.checkpoint)
    if not isinstance(model, HierRecModel):
        raise ConfigError("attention export requires a hierrec checkpoint")
    export_attention_weights(model, args.out)
    print(f"wrote attention weights to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierrec",
        description="Multi-scenario CTR models with scenario-conditioned dynamic layers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model with early stopping")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a CSV dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--baseline", default=None, help="baseline checkpoint for RelaImpr")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train full/-MI/-I/-E variants and compare")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("bench", help="time single-threaded inference")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("dump-attention", help="export per-scenario attention weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_dump_attention)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except HierRecError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
