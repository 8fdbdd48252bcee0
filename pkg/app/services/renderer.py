"""Deterministic raycasting renderer for procedural sphere/box scenes."""

import math
from typing import Tuple

import numpy as np

from app.models.schemas import CameraPose, Primitive, SceneSpec
from app.services.geometry import camera_frame
from app.utils.exceptions import InvalidArgumentError

SUPPORTED_RESOLUTIONS = (16, 32, 64)

FIELD_OF_VIEW_DEG = 90.0
AMBIENT = 0.35
DIFFUSE = 0.65
# Single fixed light direction; aligned with the world up axis so shading is
# invariant to camera azimuth.
LIGHT_DIRECTION = np.array([0.0, 0.0, 1.0])


def _primary_rays(pose: CameraPose, resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel ray origin and unit directions, shape (H*W, 3), row-major."""
    position, forward, right, up = camera_frame(pose)
    half = math.tan(math.radians(FIELD_OF_VIEW_DEG) / 2.0)
    centers = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    u = centers * half          # left to right
    v = -centers * half         # top to bottom
    vv, uu = np.meshgrid(v, u, indexing="ij")
    directions = (
        forward[None, :]
        + uu.reshape(-1, 1) * right[None, :]
        + vv.reshape(-1, 1) * up[None, :]
    )
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return position, directions


def _intersect_sphere(origin: np.ndarray, directions: np.ndarray, prim: Primitive):
    center = np.asarray(prim.center)
    radius = prim.size[0]
    oc = origin - center
    b = directions @ oc
    c = oc @ oc - radius * radius
    disc = b * b - c
    hit = disc >= 0.0
    sqrt_disc = np.sqrt(np.where(hit, disc, 0.0))
    t_near = -b - sqrt_disc
    t_far = -b + sqrt_disc
    t = np.where(t_near > 1e-9, t_near, t_far)
    hit &= t > 1e-9
    points = origin[None, :] + t[:, None] * directions
    normals = (points - center[None, :]) / radius
    return np.where(hit, t, np.inf), normals


def _intersect_box(origin: np.ndarray, directions: np.ndarray, prim: Primitive):
    center = np.asarray(prim.center)
    half = np.asarray(prim.size)
    lo = center - half
    hi = center + half
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t0 = (lo[None, :] - origin[None, :]) * inv
        t1 = (hi[None, :] - origin[None, :]) * inv
    t_min = np.minimum(t0, t1)
    t_max = np.maximum(t0, t1)
    t_min = np.where(np.isnan(t_min), -np.inf, t_min)
    t_max = np.where(np.isnan(t_max), np.inf, t_max)
    t_enter = t_min.max(axis=1)
    t_exit = t_max.min(axis=1)
    hit = (t_enter <= t_exit) & (t_enter > 1e-9)

    # Entry face normal: the slab that determined t_enter.
    axis = t_min.argmax(axis=1)
    normals = np.zeros_like(directions)
    rows = np.arange(directions.shape[0])
    normals[rows, axis] = -np.sign(directions[rows, axis])
    return np.where(hit, t_enter, np.inf), normals


def render(spec: SceneSpec, pose: CameraPose, resolution: int) -> np.ndarray:
    """Render a scene from ``pose`` looking at the origin.

    Args:
        spec: Scene primitives.
        pose: Camera pose.
        resolution: Square image side, one of 16, 32 or 64.

    Returns:
        Float64 array (H, W, 3) in [0, 1]; misses are exactly white.
    """
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise InvalidArgumentError(
            f"resolution must be one of {SUPPORTED_RESOLUTIONS}, got {resolution}"
        )
    origin, directions = _primary_rays(pose, resolution)
    n_rays = directions.shape[0]

    depth = np.full(n_rays, np.inf)
    color = np.ones((n_rays, 3))
    for prim in spec.primitives:
        if prim.shape == "sphere":
            t, normals = _intersect_sphere(origin, directions, prim)
        else:
            t, normals = _intersect_box(origin, directions, prim)
        closer = t < depth
        if not closer.any():
            continue
        depth = np.where(closer, t, depth)
        # Hemisphere lighting keeps every face lit from the same fixed direction.
        shade = AMBIENT + DIFFUSE * (0.5 + 0.5 * (normals[closer] @ LIGHT_DIRECTION))
        color[closer] = np.clip(shade[:, None] * np.asarray(prim.color)[None, :], 0.0, 1.0)

    return color.reshape(resolution, resolution, 3)
