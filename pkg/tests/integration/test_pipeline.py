"""End-to-end runs: dataset, both training stages, evaluation and sampling."""

import csv
import json

import pytest

from app.main import EXIT_OK, EXIT_RUNTIME, main
from app.models.schemas import TrainConfig
from app.services.checkpoint import load_checkpoint
from app.services.dataset import MANIFEST_NAME, generate_dataset
from app.services.evaluation import comparison_rows, evaluate_checkpoint
from app.services.trainer import run_stage
from tests.conftest import requires_long_run, tiny_model_config


@pytest.fixture(scope="module")
def two_stage_run(toy_dataset, tmp_path_factory):
    """Tiny stage-1 and stage-2 checkpoints on the toy dataset."""
    manifest_path, _ = toy_dataset
    root = tmp_path_factory.mktemp("pipeline")
    base = dict(batch_size=2, steps=3, seed=4, dataset=str(manifest_path), checkpoint_every=10, log_every=1)
    stage1 = run_stage(TrainConfig(stage=1, output_dir=str(root / "s1"), model=tiny_model_config(), **base))
    stage2 = run_stage(TrainConfig(
        stage=2, init_checkpoint=str(root / "s1" / "stage1_final.ckpt"), output_dir=str(root / "s2"),
        sample_ratio_range=(0.5, 1.0), **base,
    ))
    return root / "s1" / "stage1_final.ckpt", root / "s2" / "stage2_final.ckpt", stage1, stage2


# ============================================
# Short Pipeline
# ============================================

def test_stage2_inherits_model_config(two_stage_run):
    """Test stage 2 keeps the stage-1 dimensions and restarts the step count."""
    stage1_path, stage2_path, stage1, stage2 = two_stage_run
    assert stage1.config["model"] == stage2.config["model"]
    assert stage2.stage == 2
    assert stage2.global_step == 3
    assert load_checkpoint(stage2_path).checkpoint_id == stage2.checkpoint_id


def test_stage_comparison(two_stage_run, toy_dataset):
    stage1_path, stage2_path, _, _ = two_stage_run
    manifest_path, _ = toy_dataset
    kwargs = dict(view_counts=[1, 4], n_targets=2, sampler_steps=2, seed=3)
    reports = [
        ("stage1", evaluate_checkpoint(stage1_path, manifest_path, **kwargs)),
        ("stage2", evaluate_checkpoint(stage2_path, manifest_path, **kwargs)),
        ("stage2 pooled", evaluate_checkpoint(stage2_path, manifest_path, fusion="pooled", **kwargs)),
    ]
    rows = comparison_rows(reports)
    assert len(rows) == 6
    assert reports[2][1].metadata["fusion"] == "pooled"
    assert reports[1][1].metadata["stage"] == 2


def test_ablate_stage2_cli(two_stage_run, toy_dataset, tmp_path, capsys):
    stage1_path, stage2_path, _, _ = two_stage_run
    manifest_path, _ = toy_dataset
    code = main([
        "ablate-stage2", "--stage1", str(stage1_path), "--stage2", str(stage2_path),
        "--data", str(manifest_path), "--views", "1,2", "--targets", "1", "--steps", "2",
        "--output-dir", str(tmp_path),
    ])
    assert code == EXIT_OK
    lines = (tmp_path / "ablate_stage2.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * 2
    assert "stage2 pooled" in capsys.readouterr().out


def test_ablate_ratio_cli(two_stage_run, toy_dataset, tmp_path):
    _, stage2_path, _, _ = two_stage_run
    manifest_path, _ = toy_dataset
    code = main([
        "ablate-ratio", "--checkpoint", str(stage2_path), "--data", str(manifest_path),
        "--views", "2", "--targets", "1", "--steps", "2", "--ratios", "0.5,1", "--runs", "2",
        "--output-dir", str(tmp_path),
    ])
    assert code == EXIT_OK
    assert len((tmp_path / "ablate_ratio.csv").read_text().splitlines()) == 3


@pytest.mark.parametrize("command", ["ablate-ratio", "ablate-stage2"])
def test_ablations_forward_fusion(two_stage_run, toy_dataset, tmp_path, capsys, command):
    """Test --fusion reaches the checkpoint loader of every ablation."""
    stage1_path, stage2_path, _, _ = two_stage_run
    manifest_path, _ = toy_dataset
    checkpoints = (
        ["--checkpoint", str(stage2_path)] if command == "ablate-ratio"
        else ["--stage1", str(stage1_path), "--stage2", str(stage2_path)]
    )
    code = main([
        command, *checkpoints, "--data", str(manifest_path), "--views", "1", "--targets", "1",
        "--steps", "2", "--fusion", "global", "--output-dir", str(tmp_path),
    ])
    assert code == EXIT_RUNTIME
    assert "fusion" in capsys.readouterr().err


def test_ablate_train_ratio_cli(two_stage_run, toy_dataset, tmp_path, capsys):
    """Test one stage-2 model is trained and scored per training ratio."""
    stage1_path, _, _, _ = two_stage_run
    manifest_path, _ = toy_dataset
    code = main([
        "ablate-train-ratio", "--checkpoint", str(stage1_path), "--data", str(manifest_path),
        "--ratios", "0.5,1", "--train-steps", "2", "--train-batch-size", "2",
        "--views", "2", "--targets", "1", "--steps", "2", "--output-dir", str(tmp_path),
    ])
    assert code == EXIT_OK
    with open(tmp_path / "ablate_train_ratio.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["label"] for r in rows] == ["ratio 0.5", "ratio 1"]
    assert all(r["view_count"] == "2" for r in rows)
    half = load_checkpoint(tmp_path / "ratio_0.5" / "stage2_final.ckpt")
    full = load_checkpoint(tmp_path / "ratio_1" / "stage2_final.ckpt")
    assert half.stage == full.stage == 2
    assert half.config["train"]["sample_ratio"] == 0.5
    assert "ratio 0.5" in capsys.readouterr().out


def test_reruns_are_byte_identical(two_stage_run, toy_dataset, tmp_path):
    """Test eval and sample artifacts repeat exactly with one config and seed."""
    _, stage2_path, _, _ = two_stage_run
    manifest_path, _ = toy_dataset
    for name in ("a", "b"):
        assert main([
            "eval", "--checkpoint", str(stage2_path), "--data", str(manifest_path),
            "--views", "1,3", "--targets", "2", "--steps", "2", "--seed", "9",
            "--output-dir", str(tmp_path / name / "eval"),
        ]) == EXIT_OK
        assert main([
            "sample", "--checkpoint", str(stage2_path), "--data", str(manifest_path),
            "--trajectory", "2", "--steps", "2", "--seed", "9", "--output-dir", str(tmp_path / name / "sample"),
        ]) == EXIT_OK
    for artifact in ("eval/metrics.csv", "eval/metrics.json", "sample/trajectory.png"):
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()


# ============================================
# Long Acceptance Runs
# ============================================

@pytest.fixture(scope="module")
def trained_models(tmp_path_factory):
    """64 scenes at 32px, 8k stage-1 steps and 4k stage-2 steps."""
    root = tmp_path_factory.mktemp("acceptance")
    generate_dataset(root / "data", n_scenes=64, views_per_scene=12, resolution=32, seed=7)
    manifest_path = root / "data" / MANIFEST_NAME
    base = dict(batch_size=16, seed=0, dataset=str(manifest_path), checkpoint_every=2000, log_every=200)
    run_stage(TrainConfig(stage=1, steps=8000, output_dir=str(root / "s1"), **base))
    run_stage(TrainConfig(
        stage=2, steps=4000, init_checkpoint=str(root / "s1" / "stage1_final.ckpt"),
        output_dir=str(root / "s2"), **base,
    ))
    return manifest_path, root / "s1" / "stage1_final.ckpt", root / "s2" / "stage2_final.ckpt"


@requires_long_run
def test_more_views_improve_quality(trained_models):
    manifest_path, _, stage2_path = trained_models
    report = evaluate_checkpoint(stage2_path, manifest_path, seed=0)
    one, four = report.summary_for(1), report.summary_for(4)
    assert four.psnr_mean - one.psnr_mean >= 0.3
    assert four.ssim_mean >= one.ssim_mean


@requires_long_run
def test_stage2_is_necessary(trained_models):
    """Test multi-view input without stage 2 does not beat stage-2 multi-view."""
    manifest_path, stage1_path, stage2_path = trained_models
    stage1 = evaluate_checkpoint(stage1_path, manifest_path, view_counts=[1, 4], seed=0)
    stage2 = evaluate_checkpoint(stage2_path, manifest_path, view_counts=[4], seed=0)
    stage1_four = stage1.summary_for(4).psnr_mean
    assert (
        stage1_four <= stage1.summary_for(1).psnr_mean - 0.3
        or stage1_four <= stage2.summary_for(4).psnr_mean - 0.3
    )


@requires_long_run
def test_condition_is_used(trained_models):
    """Test zero-conditioned sampling scores below conditioned sampling."""
    manifest_path, _, stage2_path = trained_models
    conditioned = evaluate_checkpoint(stage2_path, manifest_path, view_counts=[4], seed=0)
    zeroed = evaluate_checkpoint(stage2_path, manifest_path, view_counts=[4], seed=0, zero_cond=True)
    assert len(conditioned.cells) >= 64
    assert zeroed.summary_for(4).psnr_mean < conditioned.summary_for(4).psnr_mean
    assert json.loads(zeroed.model_dump_json())["metadata"]["zero_cond"] is True
