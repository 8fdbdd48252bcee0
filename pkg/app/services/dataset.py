"""Procedural multi-view dataset generation, manifests and training batches."""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import torch
from pydantic import ValidationError

from app.config import settings
from app.models.schemas import (
    CameraPose,
    Primitive,
    SceneManifest,
    SceneRecord,
    SceneSpec,
    ViewRecord,
)
from app.services.geometry import (
    DEFAULT_RADIUS,
    DEFAULT_TARGET_POLAR_BAND_DEG,
    relative_pose,
    sample_target_views,
)
from app.services.renderer import render
from app.utils.exceptions import (
    DatasetUnderflowError,
    DatasetWriteError,
    InvalidArgumentError,
    ManifestError,
)
from app.utils.images import load_png, png_size, save_png, to_tensor
from app.utils.logger import log

MANIFEST_NAME = "manifest.json"
MAX_PRIMITIVES = 4
# Primitives stay strictly inside the unit ball.
SCENE_EXTENT = 0.95


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def scene_from_seed(scene_id: int, generator_seed: int) -> SceneSpec:
    """Draw 1–4 primitives; bit-identical for equal ``generator_seed``."""
    rng = np.random.default_rng(generator_seed)
    primitives = []
    for _ in range(int(rng.integers(1, MAX_PRIMITIVES + 1))):
        shape = "sphere" if rng.random() < 0.5 else "box"
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        center = direction * rng.uniform(0.0, 0.5)
        room = SCENE_EXTENT - float(np.linalg.norm(center))
        color = tuple(float(c) for c in rng.uniform(0.1, 0.9, size=3))
        if shape == "sphere":
            # room >= 0.45 because centers stay within 0.5 of the origin
            radius = float(rng.uniform(0.15, 0.45))
            size = (radius, radius, radius)
        else:
            half = rng.uniform(0.1, 0.35, size=3)
            diagonal = float(np.linalg.norm(half))
            if diagonal > room:
                half *= room / diagonal
            size = tuple(float(h) for h in half)
        primitives.append(
            Primitive(
                shape=shape,
                center=tuple(float(c) for c in center),
                size=size,
                color=color,
            )
        )
    return SceneSpec(scene_id=scene_id, generator_seed=generator_seed, primitives=primitives)


def _render_scene(
    root: Path,
    spec: SceneSpec,
    split: str,
    views_per_scene: int,
    resolution: int,
    view_seed: int,
    radius: float,
) -> SceneRecord:
    """Render and write every view of one scene."""
    scene_dir = root / "images" / f"scene_{spec.scene_id:04d}"
    try:
        scene_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetWriteError(scene_dir, str(e)) from e

    poses = sample_target_views(
        view_seed, views_per_scene, DEFAULT_TARGET_POLAR_BAND_DEG, radius
    )
    views = []
    for index, pose in enumerate(poses):
        relpath = f"images/scene_{spec.scene_id:04d}/view_{index:02d}.png"
        image = render(spec, pose, resolution)
        try:
            save_png(root / relpath, image)
        except OSError as e:
            raise DatasetWriteError(root / relpath, str(e)) from e
        views.append(
            ViewRecord(
                polar_deg=pose.polar_deg,
                azimuth_deg=pose.azimuth_deg,
                radius=pose.radius,
                image_relpath=relpath,
            )
        )
    return SceneRecord(spec=spec, split=split, views=views)


def generate_dataset(
    out_dir: Union[str, Path],
    n_scenes: int,
    views_per_scene: int = 12,
    resolution: int = 32,
    seed: int = 0,
    test_fraction: float = 0.25,
    radius: float = DEFAULT_RADIUS,
    num_workers: int = None,
) -> SceneManifest:
    """Render a procedural multi-view dataset and write its manifest.

    Args:
        out_dir: Dataset root; created if missing.
        n_scenes: Number of scenes (at least 1).
        views_per_scene: Random views per scene (at least 2).
        resolution: Square image side.
        seed: Dataset seed; every scene and pose derives from it.
        test_fraction: Share of scenes (rounded) labelled ``test``; the last ones.
        radius: Camera distance.
        num_workers: Rendering threads (defaults to settings.num_workers).

    Returns:
        The manifest that was written to ``out_dir/manifest.json``.
    """
    if n_scenes < 1:
        raise InvalidArgumentError(f"n_scenes must be at least 1, got {n_scenes}")
    if views_per_scene < 2:
        raise InvalidArgumentError(f"views_per_scene must be at least 2, got {views_per_scene}")
    if not 0.0 <= test_fraction < 1.0:
        raise InvalidArgumentError(f"test_fraction must lie in [0, 1), got {test_fraction}")

    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetWriteError(root, str(e)) from e

    n_test = int(round(n_scenes * test_fraction))
    if n_test >= n_scenes:
        n_test = n_scenes - 1
    specs = [scene_from_seed(i, derive_seed(seed, i)) for i in range(n_scenes)]
    splits = ["test" if i >= n_scenes - n_test else "train" for i in range(n_scenes)]

    log.info(
        f"Rendering {n_scenes} scenes x {views_per_scene} views at {resolution}px "
        f"({n_test} test scenes) into {root}"
    )
    workers = num_workers or settings.num_workers
    # Results come back in submission order, so the manifest is scheduling-independent.
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        scenes = list(
            pool.map(
                lambda i: _render_scene(
                    root, specs[i], splits[i], views_per_scene, resolution,
                    derive_seed(seed, i, 1), radius,
                ),
                range(n_scenes),
            )
        )

    manifest = SceneManifest(
        dataset_id=f"procedural-s{seed}-n{n_scenes}-v{views_per_scene}-r{resolution}",
        resolution=resolution,
        seed=seed,
        scenes=scenes,
    )
    save_manifest(manifest, root / MANIFEST_NAME)
    log.info(f"Dataset {manifest.dataset_id} written with {n_scenes * views_per_scene} images")
    return manifest


def save_manifest(manifest: SceneManifest, path: Union[str, Path]) -> None:
    """Write the manifest as an indented JSON document."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise DatasetWriteError(path, str(e)) from e


def load_manifest(path: Union[str, Path], check_images: bool = True) -> SceneManifest:
    """Read and validate a manifest.

    Raises:
        ManifestError: Missing or malformed manifest, missing image, or an
            image whose size differs from the declared resolution.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(path, "manifest file does not exist")
    try:
        manifest = SceneManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except (ValidationError, json.JSONDecodeError) as e:
        raise ManifestError(path, f"malformed manifest: {e}") from e

    if check_images:
        root = path.parent
        expected = (manifest.resolution, manifest.resolution)
        for scene in manifest.scenes:
            for view in scene.views:
                image_path = root / view.image_relpath
                if not image_path.is_file():
                    raise ManifestError(image_path, "image file does not exist")
                size = png_size(image_path)
                if size != expected:
                    raise ManifestError(
                        image_path, f"image is {size[0]}x{size[1]}, manifest declares {manifest.resolution}"
                    )
    return manifest


@dataclass
class ViewBatch:
    """Source views, relative poses and targets for one optimization step."""
    sources: torch.Tensor     # (B, V, 3, H, W) in [0, 1]
    rel_poses: torch.Tensor   # (B, V, 4)
    targets: torch.Tensor     # (B, 3, H, W) in [0, 1]


class TrainingViews:
    """In-memory view of one dataset split for batch sampling."""

    def __init__(self, manifest: SceneManifest, root: Union[str, Path], split: str = "train"):
        """Load every image of ``split`` into memory."""
        self.manifest = manifest
        self.scenes = manifest.split(split)
        if not self.scenes:
            raise ManifestError(Path(root), f"split '{split}' has no scenes")
        root = Path(root)
        self.images: List[torch.Tensor] = []
        self.poses: List[List[CameraPose]] = []
        for scene in self.scenes:
            self.images.append(
                torch.stack([to_tensor(load_png(root / v.image_relpath)) for v in scene.views])
            )
            self.poses.append([v.pose for v in scene.views])
        log.info(f"Loaded {len(self.scenes)} {split} scenes from {root}")

    @property
    def min_views(self) -> int:
        return min(len(p) for p in self.poses)

    def sample_batch(self, rng: np.random.Generator, batch_size: int, n_views: int) -> ViewBatch:
        """Draw ``batch_size`` items of ``n_views`` sources plus one distinct target."""
        required = n_views + 1
        if self.min_views < required:
            scene_index = min(range(len(self.poses)), key=lambda i: len(self.poses[i]))
            raise DatasetUnderflowError(
                self.scenes[scene_index].scene_id, len(self.poses[scene_index]), required
            )
        sources, rels, targets = [], [], []
        for _ in range(batch_size):
            s = int(rng.integers(len(self.scenes)))
            picks = rng.choice(len(self.poses[s]), size=required, replace=False)
            target_idx, source_idx = int(picks[0]), [int(i) for i in picks[1:]]
            target_pose = self.poses[s][target_idx]
            sources.append(self.images[s][source_idx])
            rels.append(
                torch.tensor(
                    [relative_pose(self.poses[s][i], target_pose).as_tuple() for i in source_idx],
                    dtype=torch.float32,
                )
            )
            targets.append(self.images[s][target_idx])
        return ViewBatch(
            sources=torch.stack(sources),
            rel_poses=torch.stack(rels),
            targets=torch.stack(targets),
        )


def relative_pose_tensor(sources: List[CameraPose], target: CameraPose) -> torch.Tensor:
    """(V, 4) relative-pose encodings of ``target`` against each source."""
    return torch.tensor(
        [relative_pose(s, target).as_tuple() for s in sources], dtype=torch.float32
    )


def evaluation_seeds(seed: int, scene_id: int) -> Tuple[int, int]:
    """Seeds for the evaluation source and target poses of a scene."""
    return derive_seed(seed, scene_id, 2), derive_seed(seed, scene_id, 3)
