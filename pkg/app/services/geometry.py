"""Camera geometry: relative poses and view-sampling protocols."""

import math
from typing import List, Tuple

import numpy as np

from app.models.schemas import CameraPose, RelativePose
from app.utils.exceptions import InvalidArgumentError

# Evaluation protocol for source views.
SOURCE_POLAR_DEG = 60.0
SOURCE_AZIMUTH_STEP_DEG = 90.0
MAX_SOURCE_VIEWS = 4

DEFAULT_RADIUS = 1.5
DEFAULT_TARGET_POLAR_BAND_DEG = (30.0, 90.0)
DEFAULT_TARGET_COUNT = 24


def relative_pose(source: CameraPose, target: CameraPose) -> RelativePose:
    """Express ``target`` relative to ``source``.

    The azimuth difference enters only through its sine and cosine, so the
    encoding is invariant to 2π wrap-around.
    """
    d_azimuth = target.azimuth - source.azimuth
    return RelativePose(
        d_polar=target.polar - source.polar,
        sin_d_azimuth=math.sin(d_azimuth),
        cos_d_azimuth=math.cos(d_azimuth),
        d_radius=target.radius - source.radius,
    )


def sample_source_views(
    rng_seed: int,
    count: int,
    radius: float = DEFAULT_RADIUS,
    polar_deg: float = SOURCE_POLAR_DEG,
) -> List[CameraPose]:
    """Reference view at 60° polar with random azimuth, then clockwise 90° steps.

    Args:
        rng_seed: Seed for the reference azimuth.
        count: Number of source views, 1 to 4.
        radius: Camera distance shared by every view.
        polar_deg: Polar angle of every source view.

    Returns:
        ``count`` poses differing only in azimuth.
    """
    if not 1 <= count <= MAX_SOURCE_VIEWS:
        raise InvalidArgumentError(
            f"source view count must lie in [1, {MAX_SOURCE_VIEWS}], got {count}"
        )
    rng = np.random.default_rng(rng_seed)
    reference_deg = float(rng.uniform(0.0, 360.0))
    return [
        CameraPose.from_degrees(
            polar_deg, (reference_deg - k * SOURCE_AZIMUTH_STEP_DEG) % 360.0, radius
        )
        for k in range(count)
    ]


def sample_target_views(
    rng_seed: int,
    count: int = DEFAULT_TARGET_COUNT,
    polar_band_deg: Tuple[float, float] = DEFAULT_TARGET_POLAR_BAND_DEG,
    radius: float = DEFAULT_RADIUS,
) -> List[CameraPose]:
    """Sample target poses uniformly: polar in a band, azimuth in [0, 2π).

    Args:
        rng_seed: Seed of the sampler.
        count: Number of poses (at least 1).
        polar_band_deg: Inclusive polar range in degrees.
        radius: Camera distance shared by every view.

    Returns:
        ``count`` reproducible poses.
    """
    if count < 1:
        raise InvalidArgumentError(f"target view count must be at least 1, got {count}")
    low, high = polar_band_deg
    if not 0.0 <= low <= high <= 180.0:
        raise InvalidArgumentError(f"invalid polar band {polar_band_deg}")
    rng = np.random.default_rng(rng_seed)
    polars = rng.uniform(low, high, size=count)
    azimuths = rng.uniform(0.0, 360.0, size=count)
    return [
        CameraPose.from_degrees(float(p), float(a), radius)
        for p, a in zip(polars, azimuths)
    ]


def camera_trajectory(
    count: int,
    polar_deg: float = SOURCE_POLAR_DEG,
    radius: float = DEFAULT_RADIUS,
    start_azimuth_deg: float = 0.0,
) -> List[CameraPose]:
    """Evenly spaced orbit at a fixed polar angle."""
    if count < 1:
        raise InvalidArgumentError(f"trajectory length must be at least 1, got {count}")
    step = 360.0 / count
    return [
        CameraPose.from_degrees(polar_deg, (start_azimuth_deg + k * step) % 360.0, radius)
        for k in range(count)
    ]


def camera_frame(pose: CameraPose) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Camera position and orthonormal (forward, right, up) basis looking at the origin."""
    sin_p, cos_p = math.sin(pose.polar), math.cos(pose.polar)
    sin_a, cos_a = math.sin(pose.azimuth), math.cos(pose.azimuth)
    position = pose.radius * np.array([sin_p * cos_a, sin_p * sin_a, cos_p])
    forward = -position / np.linalg.norm(position)

    world_up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, world_up)
    if np.linalg.norm(right) < 1e-9:
        # Looking straight up or down: the azimuth fixes the roll.
        right = np.array([-sin_a, cos_a, 0.0])
    right = right / np.linalg.norm(right)
    up = np.cross(right, forward)
    return position, forward, right, up
