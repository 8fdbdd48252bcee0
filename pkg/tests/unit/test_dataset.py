"""Unit tests for dataset generation, manifests and training batches."""

import json

import numpy as np
import pytest

from app.services.dataset import (
    MANIFEST_NAME,
    TrainingViews,
    derive_seed,
    evaluation_seeds,
    generate_dataset,
    load_manifest,
    save_manifest,
    scene_from_seed,
)
from app.utils.exceptions import DatasetUnderflowError, InvalidArgumentError, ManifestError
from app.utils.images import save_png


def test_scene_from_seed_is_reproducible():
    """Test scene specs derive from the generator seed only."""
    a = scene_from_seed(3, 1234)
    assert a == scene_from_seed(3, 1234)
    assert 1 <= len(a.primitives) <= 4
    assert all(p.bounding_radius() <= 1.0 for p in a.primitives)


def test_derive_seed_is_stable():
    """Test seed derivation."""
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)
    assert evaluation_seeds(0, 5)[0] != evaluation_seeds(0, 5)[1]


def test_generate_dataset_layout(toy_dataset):
    """Test image count, splits and manifest contents."""
    manifest_path, manifest = toy_dataset
    root = manifest_path.parent
    assert manifest_path.exists()
    assert len(manifest.scenes) == 4
    assert len(list((root / "images").rglob("*.png"))) == 4 * 6
    assert [s.split for s in manifest.scenes] == ["train", "train", "train", "test"]
    assert manifest.resolution == 16


def test_generate_dataset_is_byte_identical(tmp_path):
    """Test regeneration with the same seed."""
    first = generate_dataset(tmp_path / "a", n_scenes=2, views_per_scene=3, resolution=16, seed=7, num_workers=2)
    second = generate_dataset(tmp_path / "b", n_scenes=2, views_per_scene=3, resolution=16, seed=7, num_workers=1)
    assert first == second
    assert (tmp_path / "a" / MANIFEST_NAME).read_bytes() == (tmp_path / "b" / MANIFEST_NAME).read_bytes()
    for view in (v for s in first.scenes for v in s.views):
        assert (tmp_path / "a" / view.image_relpath).read_bytes() == (tmp_path / "b" / view.image_relpath).read_bytes()


def test_generate_dataset_rejects_empty(tmp_path):
    """Test the scene-count precondition."""
    with pytest.raises(InvalidArgumentError):
        generate_dataset(tmp_path, n_scenes=0)


def test_manifest_round_trip(toy_dataset, tmp_path):
    """Test save then load."""
    manifest_path, manifest = toy_dataset
    copy_path = manifest_path.parent / "copy.json"
    save_manifest(manifest, copy_path)
    assert load_manifest(copy_path) == manifest


def test_manifest_missing_image(toy_dataset, tmp_path):
    """Test that a missing image is reported by path."""
    manifest_path, manifest = toy_dataset
    broken = manifest.model_copy(deep=True)
    broken.scenes[0].views[0].image_relpath = "images/missing.png"
    path = manifest_path.parent / "broken.json"
    save_manifest(broken, path)
    with pytest.raises(ManifestError, match="missing.png"):
        load_manifest(path)


def test_manifest_wrong_resolution(tmp_path):
    """Test that a mis-sized image is rejected."""
    manifest = generate_dataset(tmp_path, n_scenes=1, views_per_scene=2, resolution=16, seed=1, test_fraction=0.0)
    save_png(tmp_path / manifest.scenes[0].views[1].image_relpath, np.zeros((32, 32, 3)))
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / MANIFEST_NAME)


def test_manifest_malformed_json(tmp_path):
    """Test malformed manifests."""
    path = tmp_path / MANIFEST_NAME
    path.write_text("{not json")
    with pytest.raises(ManifestError):
        load_manifest(path)
    path.write_text(json.dumps({"dataset_id": "x"}))
    with pytest.raises(ManifestError):
        load_manifest(path)
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "absent.json")


def test_training_views_batch(toy_dataset):
    """Test batch shapes and distinct source/target views."""
    manifest_path, manifest = toy_dataset
    views = TrainingViews(manifest, manifest_path.parent)
    batch = views.sample_batch(np.random.default_rng(0), batch_size=3, n_views=2)
    assert batch.sources.shape == (3, 2, 3, 16, 16)
    assert batch.rel_poses.shape == (3, 2, 4)
    assert batch.targets.shape == (3, 3, 16, 16)
    sin_cos = batch.rel_poses[..., 1] ** 2 + batch.rel_poses[..., 2] ** 2
    assert np.allclose(sin_cos.numpy(), 1.0, atol=1e-6)


def test_training_views_deterministic(toy_dataset):
    """Test the batch order depends only on the rng state."""
    manifest_path, manifest = toy_dataset
    views = TrainingViews(manifest, manifest_path.parent)
    a = views.sample_batch(np.random.default_rng(4), batch_size=2, n_views=3)
    b = views.sample_batch(np.random.default_rng(4), batch_size=2, n_views=3)
    assert (a.sources == b.sources).all() and (a.targets == b.targets).all()


def test_training_views_underflow(toy_dataset):
    """Test scenes with too few views."""
    manifest_path, manifest = toy_dataset
    views = TrainingViews(manifest, manifest_path.parent)
    with pytest.raises(DatasetUnderflowError):
        views.sample_batch(np.random.default_rng(0), batch_size=1, n_views=6)
