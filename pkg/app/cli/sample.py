"""sample: generate an orbit of novel views around one scene."""

import argparse
import csv

import torch

from app.cli.runs import resolve_config, start_run
from app.models.schemas import SampleConfig, SceneRecord
from app.services.checkpoint import load_bundle
from app.services.dataset import derive_seed, evaluation_seeds, load_manifest, relative_pose_tensor
from app.services.diffusion import p_sample_loop
from app.services.evaluation import schedule_for
from app.services.geometry import MAX_SOURCE_VIEWS, camera_trajectory, sample_source_views
from app.services.renderer import render
from app.utils.exceptions import InvalidArgumentError
from app.utils.images import image_strip, save_png, to_array, to_tensor
from app.utils.logger import log

TRACE_COLUMNS = ["step", "t", "mean_abs_eps", "std_z"]


def register(subparsers) -> None:
    parser = subparsers.add_parser("sample", help="generate a trajectory strip for one scene")
    parser.add_argument("--config", help="JSON file with SampleConfig fields")
    parser.add_argument("--checkpoint", help="trained checkpoint")
    parser.add_argument("--data", help="dataset manifest")
    parser.add_argument("--scene", type=int, help="scene id (default: first test scene)")
    parser.add_argument("--views", type=int, help="source views to condition on (1-4)")
    parser.add_argument("--trajectory", type=int, help="frames on the orbit")
    parser.add_argument("--polar", type=float, help="orbit polar angle in degrees")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--steps", type=int, help="sampler steps (default: T)")
    parser.add_argument("--ratio", type=float, help="inference token sample ratio")
    parser.add_argument("--zero-cond", action="store_true", default=None, help="condition on a 0-tensor")
    parser.add_argument("--fusion", choices=["crossformer", "pooled", "global"])
    parser.add_argument("--verbose", action="store_true", default=None, help="write a per-step sampler trace")
    parser.add_argument("--output-dir")
    parser.set_defaults(handler=cmd_sample)


def _pick_scene(scenes, scene_id) -> SceneRecord:
    if scene_id is None:
        tests = [s for s in scenes if s.split == "test"]
        return (tests or scenes)[0]
    for scene in scenes:
        if scene.scene_id == scene_id:
            return scene
    raise InvalidArgumentError(f"scene {scene_id} is not in the dataset")


def cmd_sample(args: argparse.Namespace) -> int:
    overrides = {
        "checkpoint": args.checkpoint,
        "dataset": args.data,
        "scene_id": args.scene,
        "view_count": args.views,
        "trajectory": args.trajectory,
        "polar_deg": args.polar,
        "seed": args.seed,
        "sampler_steps": args.steps,
        "inference_ratio": args.ratio,
        "zero_cond": args.zero_cond,
        "fusion": args.fusion,
        "verbose": args.verbose,
    }
    config = resolve_config(SampleConfig, args.config, overrides)
    bundle, _ = load_bundle(config.checkpoint, fusion=config.fusion)
    manifest = load_manifest(config.dataset)
    scene = _pick_scene(manifest.scenes, config.scene_id)
    run_dir = start_run("sample", args, config, overrides)

    resolution = manifest.resolution
    radius = scene.views[0].radius
    source_seed, _ = evaluation_seeds(config.seed, scene.scene_id)
    sources = sample_source_views(source_seed, MAX_SOURCE_VIEWS, radius)[:config.view_count]
    orbit = camera_trajectory(config.trajectory, config.polar_deg, radius)
    source_images = torch.stack([to_tensor(render(scene.spec, p, resolution)) for p in sources])

    batch = len(orbit)
    rel = torch.stack([relative_pose_tensor(sources, target) for target in orbit])
    generator = torch.Generator().manual_seed(derive_seed(config.seed, scene.scene_id, 4, 0))
    with torch.no_grad():
        cond = bundle.condition(
            source_images.unsqueeze(0).expand(batch, -1, -1, -1, -1), rel,
            ratio=config.inference_ratio,
            generator=generator,
            fusion=config.fusion,
            zero=config.zero_cond,
        )

    trace_rows = []

    def trace(step: int, t: int, eps_hat: torch.Tensor, z: torch.Tensor) -> None:
        trace_rows.append([step, t, repr(float(eps_hat.abs().mean())), repr(float(z.std()))])

    frames = p_sample_loop(
        cond, bundle.unet, schedule_for(bundle),
        rng_seed=derive_seed(config.seed, scene.scene_id, 5, 0),
        steps=config.sampler_steps,
        image_shape=(3, resolution, resolution),
        trace=trace if config.verbose else None,
    )

    generated = [to_array(f) for f in frames]
    truth = [render(scene.spec, p, resolution) for p in orbit]
    save_png(run_dir / "trajectory.png", image_strip(generated))
    save_png(run_dir / "trajectory_truth.png", image_strip(truth))
    save_png(run_dir / "sources.png", image_strip([to_array(s) for s in source_images]))
    if config.verbose:
        with open(run_dir / "sample_trace.csv", "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(TRACE_COLUMNS)
            writer.writerows(trace_rows)
    log.info(f"Sampled {batch} frames of scene {scene.scene_id} from {config.view_count} views")
    print(run_dir / "trajectory.png")
    return 0
