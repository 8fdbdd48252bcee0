"""gen-data: render the procedural multi-view dataset."""

import argparse
from pathlib import Path

from app.cli.runs import resolve_config, start_run
from app.config import settings
from app.models.schemas import DatasetConfig
from app.services.dataset import MANIFEST_NAME, generate_dataset


def register(subparsers) -> None:
    parser = subparsers.add_parser("gen-data", help="render a procedural multi-view dataset")
    parser.add_argument("--config", help="JSON file with DatasetConfig fields")
    parser.add_argument("--scenes", type=int, help="number of scenes")
    parser.add_argument("--views", type=int, help="views per scene")
    parser.add_argument("--res", type=int, help="image resolution")
    parser.add_argument("--seed", type=int, help="dataset seed")
    parser.add_argument("--test-fraction", type=float, help="share of scenes in the test split")
    parser.add_argument("--radius", type=float, help="camera distance")
    parser.add_argument("--out", help="dataset directory (default: <run dir>/data)")
    parser.add_argument("--output-dir", help="run directory for logs and the resolved config")
    parser.set_defaults(handler=cmd_gen_data)


def cmd_gen_data(args: argparse.Namespace) -> int:
    overrides = {
        "n_scenes": args.scenes,
        "views_per_scene": args.views,
        "resolution": args.res,
        "seed": args.seed,
        "test_fraction": args.test_fraction,
        "radius": args.radius,
        "out": args.out,
    }
    config = resolve_config(DatasetConfig, args.config, overrides)
    run_dir = start_run("gen-data", args, config, overrides)
    out = Path(config.out) if config.out else run_dir / "data"
    manifest = generate_dataset(
        out,
        n_scenes=config.n_scenes,
        views_per_scene=config.views_per_scene,
        resolution=config.resolution,
        seed=config.seed,
        test_fraction=config.test_fraction,
        radius=config.radius,
        num_workers=settings.num_workers,
    )
    print(f"{manifest.dataset_id}: {out / MANIFEST_NAME}")
    return 0
