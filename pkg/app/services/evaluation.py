"""View-count evaluation sweeps, ablations and report formatting."""

import csv
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import torch

from app.models.bundle import ModelBundle
from app.models.schemas import (
    CameraPose,
    ComparisonRow,
    MetricCell,
    MetricsReport,
    RatioAblationRow,
    SamplingMode,
    SceneManifest,
    SceneRecord,
    TrainConfig,
    ViewCountSummary,
)
from app.services.checkpoint import bundle_config, load_bundle, load_checkpoint
from app.services.dataset import derive_seed, evaluation_seeds, load_manifest, relative_pose_tensor
from app.services.diffusion import DiffusionSchedule, make_schedule, p_sample_loop
from app.services.geometry import (
    DEFAULT_RADIUS,
    MAX_SOURCE_VIEWS,
    sample_source_views,
    sample_target_views,
)
from app.services.metrics import psnr, ssim
from app.services.renderer import render
from app.services.trainer import run_stage
from app.utils.exceptions import InvalidArgumentError
from app.utils.images import to_array, to_tensor
from app.utils.logger import log

DEFAULT_VIEW_COUNTS = (1, 2, 3, 4)
DEFAULT_EVAL_TARGETS = 8
ABLATION_RATIOS = (0.25, 0.5, 0.75, 1.0)

REPORT_COLUMNS = [
    "row_type", "view_count", "scene_id", "target_index", "count",
    "psnr", "psnr_std", "ssim", "ssim_std",
]

# Sub-seed tags so every random stream of a scene is independent.
_TOKEN_STREAM = 4
_SAMPLER_STREAM = 5


def schedule_for(bundle: ModelBundle) -> DiffusionSchedule:
    config = bundle.config
    return make_schedule(config.timesteps, config.beta_start, config.beta_end)


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def _scene_radius(scene: SceneRecord) -> float:
    return scene.views[0].radius if scene.views else DEFAULT_RADIUS


def _render_views(scene: SceneRecord, poses: List[CameraPose], resolution: int) -> torch.Tensor:
    return torch.stack([to_tensor(render(scene.spec, p, resolution)) for p in poses])


def summarize(cells: Iterable[MetricCell], view_counts: Sequence[int]) -> List[ViewCountSummary]:
    """Per-view-count mean and population std, summed with compensation."""
    by_count: Dict[int, List[MetricCell]] = {k: [] for k in view_counts}
    for cell in cells:
        by_count.setdefault(cell.view_count, []).append(cell)
    summaries = []
    for k in view_counts:
        group = by_count[k]
        if not group:
            log.warning(f"No evaluation cells for view count {k}")
        psnr_mean, psnr_std = _mean_std([c.psnr for c in group])
        ssim_mean, ssim_std = _mean_std([c.ssim for c in group])
        summaries.append(ViewCountSummary(
            view_count=k, count=len(group),
            psnr_mean=psnr_mean, psnr_std=psnr_std,
            ssim_mean=ssim_mean, ssim_std=ssim_std,
        ))
    return summaries


def evaluate_sweep(
    bundle: ModelBundle,
    manifest: SceneManifest,
    view_counts: Sequence[int] = DEFAULT_VIEW_COUNTS,
    n_targets: int = DEFAULT_EVAL_TARGETS,
    seed: int = 0,
    schedule: Optional[DiffusionSchedule] = None,
    sampler_steps: Optional[int] = None,
    inference_ratio: float = 1.0,
    sampling_mode: SamplingMode = "pooled",
    zero_cond: bool = False,
    fusion: Optional[str] = None,
    batch_size: int = 8,
    metadata: Optional[Dict] = None,
) -> MetricsReport:
    """Score generated target views for every (view count, test scene, target).

    Sources follow the 60° polar / 90° azimuth-step protocol and targets are
    drawn from the polar band, both seeded per scene. The sampler noise of a
    target is the same for every view count, so differences between columns
    come from the conditioning alone.

    Args:
        bundle: Trained model.
        manifest: Dataset whose test split is evaluated; ground truth is re-rendered.
        view_counts: Source view counts k, each at most 4.
        n_targets: Target poses per scene.
        seed: Root seed of poses, token sampling and sampler noise.
        schedule: Diffusion constants (derived from the model config if omitted).
        sampler_steps: Reverse steps (defaults to T).
        inference_ratio: Token sample ratio before fusion.
        sampling_mode: ``pooled`` or ``per_view`` token sampling.
        zero_cond: Replace the condition with a 0-tensor.
        fusion: Fusion mode override.
        batch_size: Targets generated per sampler call.
        metadata: Extra entries for the report metadata.

    Returns:
        Cells ordered by (k, scene, target) plus one summary per k.
    """
    view_counts = list(view_counts)
    if not view_counts:
        raise InvalidArgumentError("at least one view count is required")
    for k in view_counts:
        if not 1 <= k <= MAX_SOURCE_VIEWS:
            raise InvalidArgumentError(
                f"view count {k} exceeds the {MAX_SOURCE_VIEWS} rendered source views"
            )
    if n_targets < 1 or batch_size < 1:
        raise InvalidArgumentError(f"n_targets and batch_size must be positive, got {n_targets}, {batch_size}")
    scenes = manifest.split("test")
    if not scenes:
        raise InvalidArgumentError(f"dataset {manifest.dataset_id} has no test scenes")

    schedule = schedule or schedule_for(bundle)
    resolution = manifest.resolution
    bundle.eval()
    cells: Dict[Tuple[int, int, int], MetricCell] = {}

    for scene in scenes:
        source_seed, target_seed = evaluation_seeds(seed, scene.scene_id)
        radius = _scene_radius(scene)
        source_poses = sample_source_views(source_seed, MAX_SOURCE_VIEWS, radius)
        target_poses = sample_target_views(target_seed, n_targets, radius=radius)
        source_images = _render_views(scene, source_poses, resolution)
        target_images = _render_views(scene, target_poses, resolution)

        for k in view_counts:
            for start in range(0, n_targets, batch_size):
                chunk = list(range(start, min(start + batch_size, n_targets)))
                sources = source_images[:k].unsqueeze(0).expand(len(chunk), -1, -1, -1, -1)
                rel = torch.stack([relative_pose_tensor(source_poses[:k], target_poses[j]) for j in chunk])
                generator = torch.Generator().manual_seed(derive_seed(seed, scene.scene_id, _TOKEN_STREAM, start))
                with torch.no_grad():
                    cond = bundle.condition(
                        sources, rel,
                        ratio=inference_ratio,
                        generator=generator,
                        sampling_mode=sampling_mode,
                        fusion=fusion,
                        zero=zero_cond,
                    )
                generated = p_sample_loop(
                    cond, bundle.unet, schedule,
                    rng_seed=derive_seed(seed, scene.scene_id, _SAMPLER_STREAM, start),
                    steps=sampler_steps,
                    image_shape=(3, resolution, resolution),
                )
                for offset, j in enumerate(chunk):
                    truth = to_array(target_images[j])
                    image = to_array(generated[offset])
                    cells[(k, scene.scene_id, j)] = MetricCell(
                        view_count=k, scene_id=scene.scene_id, target_index=j,
                        psnr=psnr(image, truth), ssim=ssim(image, truth),
                    )
        log.info(f"Evaluated scene {scene.scene_id} for view counts {view_counts}")

    ordered = [cells[key] for key in sorted(cells)]
    report = MetricsReport(
        cells=ordered,
        summaries=summarize(ordered, view_counts),
        metadata={
            "dataset_id": manifest.dataset_id,
            "seed": seed,
            "n_targets": n_targets,
            "sampler_steps": sampler_steps or schedule.T,
            "inference_ratio": inference_ratio,
            "sampling_mode": sampling_mode,
            "zero_cond": zero_cond,
            "fusion": fusion or bundle.config.fusion,
            **(metadata or {}),
        },
    )
    for summary in report.summaries:
        log.info(
            f"k={summary.view_count}: PSNR {summary.psnr_mean:.3f} ± {summary.psnr_std:.3f} dB, "
            f"SSIM {summary.ssim_mean:.4f} ± {summary.ssim_std:.4f} over {summary.count} cells"
        )
    return report


def evaluate_checkpoint(
    checkpoint_path: Union[str, Path],
    manifest_path: Union[str, Path],
    fusion: Optional[str] = None,
    **kwargs,
) -> MetricsReport:
    """Load a checkpoint and dataset, then run :func:`evaluate_sweep`."""
    bundle, checkpoint = load_bundle(checkpoint_path, fusion=fusion)
    manifest = load_manifest(manifest_path)
    metadata = {
        "checkpoint": str(checkpoint_path),
        "checkpoint_id": checkpoint.checkpoint_id,
        "stage": checkpoint.stage,
        "global_step": checkpoint.global_step,
    }
    return evaluate_sweep(bundle, manifest, fusion=fusion, metadata=metadata, **kwargs)


def write_report_csv(report: MetricsReport, path: Union[str, Path]) -> Path:
    """One row per cell followed by one summary row per view count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(REPORT_COLUMNS)
        for c in report.cells:
            writer.writerow(["cell", c.view_count, c.scene_id, c.target_index, 1, repr(c.psnr), "", repr(c.ssim), ""])
        for s in report.summaries:
            writer.writerow([
                "summary", s.view_count, "", "", s.count,
                repr(s.psnr_mean), repr(s.psnr_std), repr(s.ssim_mean), repr(s.ssim_std),
            ])
    return path


def format_table(report: MetricsReport) -> str:
    """Human-readable PSNR/SSIM table with one column per view count."""
    counts = [s.view_count for s in report.summaries]
    header = f"{'View num':<10}" + "".join(f"{k:>10}" for k in counts)
    psnr_row = f"{'PSNR':<10}" + "".join(f"{s.psnr_mean:>10.3f}" for s in report.summaries)
    ssim_row = f"{'SSIM':<10}" + "".join(f"{s.ssim_mean:>10.4f}" for s in report.summaries)
    return "\n".join([header, psnr_row, ssim_row])


def comparison_rows(reports: Sequence[Tuple[str, MetricsReport]]) -> List[ComparisonRow]:
    """Flatten labelled reports into per-view-count comparison rows."""
    return [
        ComparisonRow(label=label, **summary.model_dump())
        for label, report in reports
        for summary in report.summaries
    ]


def write_comparison_csv(rows: Sequence[ComparisonRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(ComparisonRow.model_fields)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([getattr(row, c) for c in columns])
    return path


def format_comparison(rows: Sequence[ComparisonRow]) -> str:
    """PSNR table with one line per label and one column per view count."""
    counts = sorted({r.view_count for r in rows})
    labels = list(dict.fromkeys(r.label for r in rows))
    lookup = {(r.label, r.view_count): r for r in rows}
    width = max(len("View num"), *(len(label) for label in labels)) + 2
    lines = [f"{'View num':<{width}}" + "".join(f"{k:>10}" for k in counts)]
    for label in labels:
        cells = "".join(
            f"{lookup[(label, k)].psnr_mean:>10.3f}" if (label, k) in lookup else f"{'-':>10}"
            for k in counts
        )
        lines.append(f"{label:<{width}}" + cells)
    return "\n".join(lines)


def ratio_ablation(
    bundle: ModelBundle,
    manifest: SceneManifest,
    ratios: Sequence[float] = ABLATION_RATIOS,
    view_counts: Sequence[int] = DEFAULT_VIEW_COUNTS,
    runs: int = 5,
    seed: int = 0,
    **kwargs,
) -> List[RatioAblationRow]:
    """Repeat the sweep per inference ratio; spread is taken across run means.

    Run r of every ratio shares the seed, so ratios are compared on the same
    poses and sampler noise.
    """
    if runs < 1:
        raise InvalidArgumentError(f"runs must be at least 1, got {runs}")
    rows = []
    for ratio in ratios:
        per_run: Dict[int, List[Tuple[float, float]]] = {k: [] for k in view_counts}
        for run in range(runs):
            report = evaluate_sweep(
                bundle, manifest, view_counts=view_counts,
                seed=derive_seed(seed, run), inference_ratio=ratio, **kwargs,
            )
            for summary in report.summaries:
                per_run[summary.view_count].append((summary.psnr_mean, summary.ssim_mean))
        for k in view_counts:
            psnr_mean, psnr_std = _mean_std([p for p, _ in per_run[k]])
            ssim_mean, ssim_std = _mean_std([s for _, s in per_run[k]])
            rows.append(RatioAblationRow(
                ratio=ratio, view_count=k, runs=runs,
                psnr_mean=psnr_mean, psnr_std=psnr_std,
                ssim_mean=ssim_mean, ssim_std=ssim_std,
            ))
        log.info(f"Ratio {ratio}: {runs} runs over view counts {list(view_counts)}")
    return rows


def train_ratio_ablation(
    stage1_checkpoint: Union[str, Path],
    manifest_path: Union[str, Path],
    output_dir: Union[str, Path],
    ratios: Sequence[float] = ABLATION_RATIOS,
    train_steps: int = 2000,
    train_batch_size: int = 16,
    learning_rate: float = 2e-4,
    max_views: int = 4,
    train_seed: int = 0,
    fusion: Optional[str] = None,
    **kwargs,
) -> List[Tuple[str, MetricsReport]]:
    """Retrain stage 2 once per token ratio and sweep each result.

    Every run starts from the same stage-1 weights with the same seed, so
    the token ratio is the only training difference between rows.

    Returns:
        (label, report) pairs labelled ``ratio <r>``, ready for
        :func:`comparison_rows`.
    """
    model = bundle_config(load_checkpoint(stage1_checkpoint))
    manifest = load_manifest(manifest_path)
    results = []
    for ratio in ratios:
        run_dir = Path(output_dir) / f"ratio_{ratio:g}"
        config = TrainConfig(
            stage=2,
            steps=train_steps,
            batch_size=train_batch_size,
            learning_rate=learning_rate,
            max_views=max_views,
            sample_ratio=ratio,
            seed=train_seed,
            dataset=str(manifest_path),
            init_checkpoint=str(stage1_checkpoint),
            output_dir=str(run_dir),
            model=model,
        )
        log.info(f"Training stage 2 at token ratio {ratio:g} into {run_dir}")
        trained = run_stage(config)
        bundle, _ = load_bundle(run_dir / "stage2_final.ckpt", fusion=fusion)
        metadata = {
            "train_ratio": ratio,
            "checkpoint_id": trained.checkpoint_id,
            "global_step": trained.global_step,
        }
        report = evaluate_sweep(bundle, manifest, fusion=fusion, metadata=metadata, **kwargs)
        results.append((f"ratio {ratio:g}", report))
    return results


def write_ratio_csv(rows: Sequence[RatioAblationRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(RatioAblationRow.model_fields)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([getattr(row, c) for c in columns])
    return path
