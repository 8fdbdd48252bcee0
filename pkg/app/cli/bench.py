"""bench-macs: closed-form MAC grid over view counts and token ratios."""

import argparse
import csv

from app.cli.runs import parse_float_list, resolve_config, start_run
from app.models.schemas import BenchConfig
from app.services.macs import mac_grid

MAC_COLUMNS = ["n_views", "ratio", "kv_tokens", "crossformer_macs", "crossformer_kv_macs", "unet_macs"]


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench-macs", help="MACs of the fusion path and U-Net cross-attention")
    parser.add_argument("--config", help="JSON file with BenchConfig fields")
    parser.add_argument("--max-views", type=int, help="largest view count (default 8)")
    parser.add_argument("--ratios", type=parse_float_list, help="comma-separated token ratios")
    parser.add_argument("--output-dir")
    parser.set_defaults(handler=cmd_bench_macs)


def cmd_bench_macs(args: argparse.Namespace) -> int:
    overrides = {"max_views": args.max_views, "ratios": args.ratios}
    config = resolve_config(BenchConfig, args.config, overrides)
    run_dir = start_run("bench-macs", args, config, overrides)
    reports = mac_grid(config.model, range(1, config.max_views + 1), config.ratios)
    path = run_dir / "macs.csv"
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(MAC_COLUMNS)
        for r in reports:
            writer.writerow([
                r.n_views, r.ratio, r.kv_tokens,
                r.crossformer_macs, r.crossformer_kv_macs, r.unet_crossattn_macs,
            ])
    print(f"{'views':>5} {'ratio':>6} {'kv':>6} {'crossformer':>14} {'unet xattn':>14}")
    for r in reports:
        print(f"{r.n_views:>5} {r.ratio:>6.2f} {r.kv_tokens:>6} {r.crossformer_macs:>14} {r.unet_crossattn_macs:>14}")
    return 0
