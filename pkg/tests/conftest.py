"""Pytest configuration and fixtures."""

import os

import pytest
import torch

from app.models.bundle import ModelBundle
from app.models.schemas import ModelConfig, TrainConfig
from app.services.dataset import MANIFEST_NAME, generate_dataset


# Long acceptance runs (full two-stage training, 2,000-step loss curves)
RUN_LONG = os.getenv("VALID_RUN_LONG") == "1"

requires_long_run = pytest.mark.skipif(
    not RUN_LONG,
    reason="long run; set VALID_RUN_LONG=1 to enable"
)


def tiny_model_config(**overrides) -> ModelConfig:
    """Smallest configuration that still exercises every module."""
    values = dict(
        resolution=16,
        patch_size=8,
        d_model=8,
        vit_layers=1,
        vit_heads=2,
        ffw_mult=2,
        d_pose=4,
        pose_hidden=8,
        d_seed=8,
        crossformer_layers=1,
        crossformer_heads=2,
        unet_channels=(8,),
        unet_heads=2,
        time_dim=8,
        timesteps=20,
    )
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def tiny_config():
    """Tiny model configuration (16px, one level everywhere)."""
    return tiny_model_config()


@pytest.fixture
def tiny_bundle(tiny_config):
    """Seeded tiny model with a live output layer."""
    torch.manual_seed(0)
    bundle = ModelBundle(tiny_config.model_copy(update={"zero_init_output": False}))
    return bundle


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Four 16px scenes with six views each; the last one is the test split."""
    root = tmp_path_factory.mktemp("toy_data")
    manifest = generate_dataset(
        root, n_scenes=4, views_per_scene=6, resolution=16, seed=3, test_fraction=0.25, num_workers=2
    )
    return root / MANIFEST_NAME, manifest


@pytest.fixture
def stage1_config(toy_dataset, tmp_path, tiny_config):
    """Short stage-1 run on the toy dataset."""
    manifest_path, _ = toy_dataset
    return TrainConfig(
        stage=1,
        batch_size=2,
        steps=4,
        seed=11,
        dataset=str(manifest_path),
        output_dir=str(tmp_path / "stage1"),
        checkpoint_every=2,
        log_every=1,
        model=tiny_config,
    )
