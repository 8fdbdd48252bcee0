"""train: run stage 1 or stage 2 of the training protocol."""

import argparse

from app.cli.runs import create_run_dir, freeze_config, resolve_config, run_config
from app.models.schemas import TrainConfig
from app.services.trainer import run_stage


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train one stage")
    parser.add_argument("--config", help="JSON file with TrainConfig fields")
    parser.add_argument("--stage", type=int, choices=[1, 2], help="training stage")
    parser.add_argument("--init", help="stage-1 checkpoint to start stage 2 from")
    parser.add_argument("--resume", help="checkpoint of the same stage to continue")
    parser.add_argument("--data", help="dataset manifest")
    parser.add_argument("--steps", type=int, help="total optimization steps")
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--lr", type=float, help="learning rate")
    parser.add_argument("--max-views", type=int, help="largest stage-2 view count")
    parser.add_argument("--ratio", type=float, help="stage-2 token sample ratio")
    parser.add_argument("--ratio-range", type=float, nargs=2, metavar=("LOW", "HIGH"),
                        help="draw the stage-2 ratio uniformly per batch")
    parser.add_argument("--sampling-mode", choices=["pooled", "per_view"])
    parser.add_argument("--fusion", choices=["crossformer", "pooled", "global"])
    parser.add_argument("--attention-only", action="store_true", default=None,
                        help="stage 1 trains only the U-Net cross-attention layers")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--checkpoint-every", type=int)
    parser.add_argument("--log-every", type=int)
    parser.add_argument("--output-dir", help="run directory (default: timestamped under VALID_OUT_DIR)")
    parser.set_defaults(handler=cmd_train)


def cmd_train(args: argparse.Namespace) -> int:
    overrides = {
        "stage": args.stage,
        "init_checkpoint": args.init,
        "resume": args.resume,
        "dataset": args.data,
        "steps": args.steps,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "max_views": args.max_views,
        "sample_ratio": args.ratio,
        "sample_ratio_range": args.ratio_range,
        "sampling_mode": args.sampling_mode,
        "model.fusion": args.fusion,
        "full_unet": False if args.attention_only else None,
        "seed": args.seed,
        "checkpoint_every": args.checkpoint_every,
        "log_every": args.log_every,
    }
    config = resolve_config(TrainConfig, args.config, overrides)
    run_dir = create_run_dir("train", args.output_dir)
    config = config.model_copy(update={"output_dir": str(run_dir)})
    freeze_config(run_dir, run_config("train", args, config, overrides), config)
    checkpoint = run_stage(config)
    print(f"stage {config.stage} checkpoint: {run_dir / f'stage{config.stage}_final.ckpt'} (id {checkpoint.checkpoint_id})")
    return 0
