"""eval and the ablate-* commands: view-count sweeps over the test split."""

import argparse

from app.cli.runs import parse_float_list, parse_int_list, resolve_config, start_run
from app.models.schemas import AblateRatioConfig, AblateStage2Config, AblateTrainRatioConfig, EvalConfig
from app.services.checkpoint import load_bundle
from app.services.dataset import load_manifest
from app.services.evaluation import (
    comparison_rows,
    evaluate_checkpoint,
    format_comparison,
    format_table,
    ratio_ablation,
    train_ratio_ablation,
    write_comparison_csv,
    write_ratio_csv,
    write_report_csv,
)
from app.utils.logger import log


def _sweep_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with the subcommand's config fields")
    parser.add_argument("--data", help="dataset manifest")
    parser.add_argument("--views", type=parse_int_list, help="comma-separated view counts, e.g. 1,2,3,4")
    parser.add_argument("--targets", type=int, help="target poses per test scene")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--steps", type=int, help="sampler steps (default: T)")
    parser.add_argument("--sampling-mode", choices=["pooled", "per_view"])
    parser.add_argument("--zero-cond", action="store_true", default=None, help="condition on a 0-tensor")
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--fusion", choices=["crossformer", "pooled", "global"], help="condition fusion override")
    parser.add_argument("--output-dir")


def _sweep_overrides(args: argparse.Namespace) -> dict:
    return {
        "dataset": args.data,
        "view_counts": args.views,
        "n_targets": args.targets,
        "seed": args.seed,
        "sampler_steps": args.steps,
        "sampling_mode": args.sampling_mode,
        "zero_cond": args.zero_cond,
        "batch_size": args.batch_size,
        "fusion": args.fusion,
    }


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="PSNR/SSIM per source view count")
    _sweep_arguments(parser)
    parser.add_argument("--checkpoint", help="trained checkpoint")
    parser.add_argument("--ratio", type=float, help="inference token sample ratio")
    parser.set_defaults(handler=cmd_eval)

    parser = subparsers.add_parser("ablate-stage2", help="stage-1 against stage-2 checkpoints")
    _sweep_arguments(parser)
    parser.add_argument("--stage1", help="stage-1 checkpoint")
    parser.add_argument("--stage2", help="stage-2 checkpoint")
    parser.set_defaults(handler=cmd_ablate_stage2)

    parser = subparsers.add_parser("ablate-ratio", help="inference token ratio sweep")
    _sweep_arguments(parser)
    parser.add_argument("--checkpoint", help="trained checkpoint")
    parser.add_argument("--ratios", type=parse_float_list, help="comma-separated ratios")
    parser.add_argument("--runs", type=int, help="repetitions per ratio")
    parser.set_defaults(handler=cmd_ablate_ratio)

    parser = subparsers.add_parser("ablate-train-ratio", help="stage-2 retraining per token ratio")
    _sweep_arguments(parser)
    parser.add_argument("--checkpoint", help="stage-1 checkpoint every ratio starts from")
    parser.add_argument("--ratios", type=parse_float_list, help="comma-separated training ratios")
    parser.add_argument("--ratio", type=float, help="inference token sample ratio")
    parser.add_argument("--train-steps", type=int)
    parser.add_argument("--train-batch-size", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--max-views", type=int)
    parser.add_argument("--train-seed", type=int)
    parser.set_defaults(handler=cmd_ablate_train_ratio)


def cmd_eval(args: argparse.Namespace) -> int:
    overrides = {
        **_sweep_overrides(args),
        "checkpoint": args.checkpoint,
        "inference_ratio": args.ratio,
    }
    config = resolve_config(EvalConfig, args.config, overrides)
    run_dir = start_run("eval", args, config, overrides)
    report = evaluate_checkpoint(config.checkpoint, config.dataset, fusion=config.fusion, **config.sweep_kwargs())
    write_report_csv(report, run_dir / "metrics.csv")
    (run_dir / "metrics.json").write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    print(format_table(report))
    return 0


def cmd_ablate_stage2(args: argparse.Namespace) -> int:
    overrides = {
        **_sweep_overrides(args),
        "stage1_checkpoint": args.stage1,
        "checkpoint": args.stage2,
    }
    config = resolve_config(AblateStage2Config, args.config, overrides)
    run_dir = start_run("ablate-stage2", args, config, overrides)
    kwargs = config.sweep_kwargs()
    reports = [
        ("stage1", evaluate_checkpoint(config.stage1_checkpoint, config.dataset, fusion=config.fusion, **kwargs)),
        ("stage2", evaluate_checkpoint(config.checkpoint, config.dataset, fusion=config.fusion, **kwargs)),
        ("stage2 pooled", evaluate_checkpoint(config.checkpoint, config.dataset, fusion="pooled", **kwargs)),
    ]
    rows = comparison_rows(reports)
    write_comparison_csv(rows, run_dir / "ablate_stage2.csv")
    print(format_comparison(rows))
    return 0


def cmd_ablate_ratio(args: argparse.Namespace) -> int:
    overrides = {
        **_sweep_overrides(args),
        "checkpoint": args.checkpoint,
        "ratios": args.ratios,
        "runs": args.runs,
    }
    config = resolve_config(AblateRatioConfig, args.config, overrides)
    run_dir = start_run("ablate-ratio", args, config, overrides)
    bundle, checkpoint = load_bundle(config.checkpoint, fusion=config.fusion)
    manifest = load_manifest(config.dataset)
    kwargs = config.sweep_kwargs()
    kwargs.pop("inference_ratio")
    seed = kwargs.pop("seed")
    rows = ratio_ablation(
        bundle, manifest, ratios=config.ratios, runs=config.runs, seed=seed, fusion=config.fusion,
        metadata={"checkpoint_id": checkpoint.checkpoint_id}, **kwargs,
    )
    write_ratio_csv(rows, run_dir / "ablate_ratio.csv")
    for row in rows:
        print(
            f"ratio {row.ratio:.2f} k={row.view_count}: "
            f"PSNR {row.psnr_mean:.3f} ± {row.psnr_std:.3f}  SSIM {row.ssim_mean:.4f} ± {row.ssim_std:.4f}"
        )
    log.info(f"Ratio ablation written to {run_dir / 'ablate_ratio.csv'}")
    return 0


def cmd_ablate_train_ratio(args: argparse.Namespace) -> int:
    overrides = {
        **_sweep_overrides(args),
        "checkpoint": args.checkpoint,
        "inference_ratio": args.ratio,
        "ratios": args.ratios,
        "train_steps": args.train_steps,
        "train_batch_size": args.train_batch_size,
        "learning_rate": args.lr,
        "max_views": args.max_views,
        "train_seed": args.train_seed,
    }
    config = resolve_config(AblateTrainRatioConfig, args.config, overrides)
    run_dir = start_run("ablate-train-ratio", args, config, overrides)
    reports = train_ratio_ablation(
        config.checkpoint,
        config.dataset,
        run_dir,
        ratios=config.ratios,
        train_steps=config.train_steps,
        train_batch_size=config.train_batch_size,
        learning_rate=config.learning_rate,
        max_views=config.max_views,
        train_seed=config.train_seed,
        fusion=config.fusion,
        **config.sweep_kwargs(),
    )
    rows = comparison_rows(reports)
    write_comparison_csv(rows, run_dir / "ablate_train_ratio.csv")
    print(format_comparison(rows))
    return 0
