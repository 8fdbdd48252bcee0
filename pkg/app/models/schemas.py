"""Pydantic schemas for poses, scenes, configuration and reports."""

import math
from typing import Dict, List, Literal, Optional, Tuple, Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

TWO_PI = 2.0 * math.pi

# Tolerance for the sin/cos identity of relative poses.
UNIT_CIRCLE_TOL = 1e-9


# Pose Schemas

class CameraPose(BaseModel):
    """Spherical camera parameters; the camera looks at the origin.

    Angles are radians. ``polar`` is measured from the +z axis and
    ``azimuth`` is normalized into [0, 2π).
    """
    model_config = ConfigDict(frozen=True)

    polar: float = Field(ge=0.0, le=math.pi)
    azimuth: float
    radius: float = Field(gt=0.0)

    @field_validator("azimuth")
    @classmethod
    def normalize_azimuth(cls, value: float) -> float:
        wrapped = value % TWO_PI
        # fmod rounding can land exactly on 2π for tiny negative inputs
        return 0.0 if wrapped >= TWO_PI else wrapped

    @classmethod
    def from_degrees(cls, polar_deg: float, azimuth_deg: float, radius: float) -> "CameraPose":
        """Build a pose from angles given in degrees."""
        return cls(
            polar=math.radians(polar_deg),
            azimuth=math.radians(azimuth_deg),
            radius=radius,
        )

    @property
    def polar_deg(self) -> float:
        return math.degrees(self.polar)

    @property
    def azimuth_deg(self) -> float:
        return math.degrees(self.azimuth)


class RelativePose(BaseModel):
    """Target pose expressed relative to a source pose.

    Encoded as (Δpolar, sin Δazimuth, cos Δazimuth, Δradius).
    """
    model_config = ConfigDict(frozen=True)

    d_polar: float
    sin_d_azimuth: float
    cos_d_azimuth: float
    d_radius: float

    @model_validator(mode="after")
    def check_unit_circle(self) -> "RelativePose":
        norm = self.sin_d_azimuth ** 2 + self.cos_d_azimuth ** 2
        if abs(norm - 1.0) > UNIT_CIRCLE_TOL:
            raise ValueError(f"sin²+cos² of the azimuth difference is {norm}, expected 1")
        return self

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.d_polar, self.sin_d_azimuth, self.cos_d_azimuth, self.d_radius)


# Scene Schemas

class Primitive(BaseModel):
    """A sphere or an axis-aligned box inside the unit ball."""
    model_config = ConfigDict(frozen=True)

    shape: Literal["sphere", "box"]
    center: Tuple[float, float, float]
    # Sphere: (radius, radius, radius). Box: half-extents along x, y, z.
    size: Tuple[float, float, float]
    color: Tuple[float, float, float]

    @field_validator("color")
    @classmethod
    def check_color(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(c < 0.0 or c > 1.0 for c in value):
            raise ValueError(f"color components must lie in [0, 1], got {value}")
        return value

    @model_validator(mode="after")
    def check_extent(self) -> "Primitive":
        if any(s <= 0.0 for s in self.size):
            raise ValueError(f"primitive size must be positive, got {self.size}")
        if self.shape == "sphere" and len(set(self.size)) != 1:
            raise ValueError("sphere size must repeat its radius on all three axes")
        if self.bounding_radius() > 1.0:
            raise ValueError("primitive does not fit inside the unit ball")
        return self

    def bounding_radius(self) -> float:
        """Distance from the origin to the farthest point of the primitive."""
        center_norm = math.sqrt(sum(c * c for c in self.center))
        if self.shape == "sphere":
            return center_norm + self.size[0]
        return center_norm + math.sqrt(sum(s * s for s in self.size))


class SceneSpec(BaseModel):
    """Procedural scene: up to four primitives, fully determined by its seed."""
    model_config = ConfigDict(frozen=True)

    scene_id: int
    generator_seed: int
    primitives: List[Primitive] = Field(default_factory=list, max_length=4)


class ViewRecord(BaseModel):
    """One rendered view: pose in degrees plus the image path relative to the manifest."""
    polar_deg: float
    azimuth_deg: float
    radius: float
    image_relpath: str

    @property
    def pose(self) -> CameraPose:
        return CameraPose.from_degrees(self.polar_deg, self.azimuth_deg, self.radius)


class SceneRecord(BaseModel):
    """A scene of the dataset with its split label and rendered views."""
    spec: SceneSpec
    split: Literal["train", "test"]
    views: List[ViewRecord] = Field(default_factory=list)

    @property
    def scene_id(self) -> int:
        return self.spec.scene_id


class SceneManifest(BaseModel):
    """Dataset description written next to the rendered images."""
    dataset_id: str
    resolution: int
    seed: int
    scenes: List[SceneRecord] = Field(default_factory=list)

    def split(self, name: str) -> List[SceneRecord]:
        """Scenes carrying the given split label, in manifest order."""
        return [scene for scene in self.scenes if scene.split == name]


# Configuration Schemas

FusionMode = Literal["crossformer", "pooled", "global"]
SamplingMode = Literal["pooled", "per_view"]


class ModelConfig(BaseModel):
    """Architecture dimensions and diffusion constants."""
    resolution: int = 32
    patch_size: int = 8

    # Source view tokenization
    d_model: int = 64
    vit_layers: int = 2
    vit_heads: int = 4
    ffw_mult: int = 4
    d_pose: int = 16
    pose_hidden: int = 64
    pose_embedding: Literal["mlp", "raw"] = "mlp"

    # Multi-view fusion
    d_seed: int = 64
    crossformer_layers: int = 4
    crossformer_heads: int = 4
    normalize_condition: bool = False
    fusion: FusionMode = "crossformer"
    seed_init: int = 0

    # Denoiser
    unet_channels: Tuple[int, ...] = (32, 64)
    unet_heads: int = 4
    time_dim: int = 64
    context_dim: Optional[int] = None  # defaults to d_seed
    zero_init_output: bool = True

    # Diffusion schedule
    timesteps: int = 400
    beta_start: float = 1e-4
    beta_end: float = 0.02

    @model_validator(mode="after")
    def check_dims(self) -> "ModelConfig":
        if self.resolution % self.patch_size != 0:
            raise ValueError(
                f"patch_size {self.patch_size} does not divide resolution {self.resolution}"
            )
        if self.d_model % self.vit_heads != 0:
            raise ValueError("d_model must be divisible by vit_heads")
        if self.d_seed % self.crossformer_heads != 0:
            raise ValueError("d_seed must be divisible by crossformer_heads")
        if self.crossformer_layers < 1:
            raise ValueError("crossformer_layers must be at least 1")
        if not self.unet_channels:
            raise ValueError("unet_channels must name at least one level")
        if any(c % self.unet_heads != 0 for c in self.unet_channels):
            raise ValueError("every unet channel count must be divisible by unet_heads")
        if self.resolution % (2 ** (len(self.unet_channels) - 1)) != 0:
            raise ValueError("resolution must be divisible by the U-Net downsampling factor")
        return self

    @property
    def n_patches(self) -> int:
        return (self.resolution // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def pose_width(self) -> int:
        """Width of the pose suffix appended to every image token."""
        return 4 if self.pose_embedding == "raw" else self.d_pose

    @property
    def d_kv(self) -> int:
        return self.d_model + self.pose_width

    @property
    def condition_dim(self) -> int:
        return self.context_dim if self.context_dim is not None else self.d_seed


class TrainConfig(BaseModel):
    """Every knob of one training stage."""
    stage: Literal[1, 2] = 1
    learning_rate: float = Field(default=2e-4, gt=0.0)
    weight_decay: float = Field(default=0.01, ge=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    batch_size: int = Field(default=16, ge=1)
    steps: int = Field(default=2000, ge=1)
    max_views: int = Field(default=4, ge=1)
    # Stage-2 distribution over view counts 1..max_views (uniform when omitted)
    view_weights: Optional[List[float]] = None
    sample_ratio: float = 0.5
    sample_ratio_range: Optional[Tuple[float, float]] = None
    sampling_mode: SamplingMode = "pooled"
    full_unet: bool = True  # False reproduces attention-only stage-1 masking
    seed: int = 0
    dataset: str = "data/manifest.json"
    init_checkpoint: Optional[str] = None
    resume: Optional[str] = None
    output_dir: str = "."
    checkpoint_every: int = Field(default=500, ge=1)
    log_every: int = Field(default=50, ge=1)
    model: ModelConfig = Field(default_factory=ModelConfig)

    @model_validator(mode="after")
    def check_stage(self) -> "TrainConfig":
        if not 0.0 < self.sample_ratio <= 1.0:
            raise ValueError(f"sample_ratio must lie in (0, 1], got {self.sample_ratio}")
        if self.sample_ratio_range is not None:
            low, high = self.sample_ratio_range
            if not 0.0 < low <= high <= 1.0:
                raise ValueError(f"sample_ratio_range must satisfy 0 < low <= high <= 1, got {self.sample_ratio_range}")
        if self.stage == 2 and not self.init_checkpoint and not self.resume:
            raise ValueError("stage 2 requires a stage-1 checkpoint (init_checkpoint)")
        if self.stage == 1 and not self.full_unet and not self.init_checkpoint and not self.resume:
            raise ValueError("attention-only stage 1 requires a pretrained init_checkpoint")
        if self.view_weights is not None:
            if len(self.view_weights) != self.max_views:
                raise ValueError("view_weights must list one weight per view count 1..max_views")
            if any(w < 0 for w in self.view_weights) or sum(self.view_weights) <= 0:
                raise ValueError("view_weights must be non-negative with a positive sum")
        return self

    def view_distribution(self) -> List[float]:
        """Normalized probabilities for view counts 1..max_views."""
        weights = self.view_weights or [1.0] * self.max_views
        total = sum(weights)
        return [w / total for w in weights]


class RunConfig(BaseModel):
    """Resolved invocation of one CLI subcommand."""
    subcommand: str
    config_path: Optional[str] = None
    overrides: Dict[str, Any] = Field(default_factory=dict)
    output_dir: str
    seed: int = 0


# Report Schemas

class MetricCell(BaseModel):
    """Score of one (view count, scene, target) evaluation cell."""
    view_count: int
    scene_id: int
    target_index: int
    psnr: float
    ssim: float


class ViewCountSummary(BaseModel):
    """Aggregate over every cell sharing a view count."""
    view_count: int
    count: int
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float


class MetricsReport(BaseModel):
    """Per-view-count PSNR/SSIM sweep results."""
    cells: List[MetricCell] = Field(default_factory=list)
    summaries: List[ViewCountSummary] = Field(default_factory=list)
    metadata: Dict[str, Any] = Field(default_factory=dict)

    def summary_for(self, view_count: int) -> ViewCountSummary:
        for summary in self.summaries:
            if summary.view_count == view_count:
                return summary
        raise KeyError(view_count)


class MacReport(BaseModel):
    """Closed-form multiply-accumulate totals for one configuration."""
    n_views: int
    ratio: float
    kv_tokens: int
    crossformer_macs: int
    crossformer_kv_macs: int
    unet_crossattn_macs: int


class ComparisonRow(BaseModel):
    """One labelled view-count summary of an ablation comparison."""
    label: str
    view_count: int
    count: int
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float


class RatioAblationRow(BaseModel):
    """Inference token ratio result aggregated over repeated sweeps."""
    ratio: float
    view_count: int
    runs: int
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float


# Command Schemas

class DatasetConfig(BaseModel):
    """Procedural dataset generation parameters."""
    n_scenes: int = Field(default=64, ge=1)
    views_per_scene: int = Field(default=12, ge=2)
    resolution: int = 32
    seed: int = 0
    test_fraction: float = Field(default=0.25, ge=0.0, lt=1.0)
    radius: float = Field(default=1.5, gt=0.0)
    out: Optional[str] = None  # dataset directory; defaults to <run dir>/data


class EvalConfig(BaseModel):
    """View-count sweep over the test split of a dataset."""
    checkpoint: str
    dataset: str = "data/manifest.json"
    view_counts: List[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    n_targets: int = Field(default=8, ge=1)
    seed: int = 0
    sampler_steps: Optional[int] = Field(default=None, ge=1)
    inference_ratio: float = Field(default=1.0, gt=0.0, le=1.0)
    sampling_mode: SamplingMode = "pooled"
    zero_cond: bool = False
    fusion: Optional[FusionMode] = None
    batch_size: int = Field(default=8, ge=1)

    def sweep_kwargs(self) -> Dict[str, Any]:
        """Keyword arguments of evaluate_sweep other than the model and data."""
        return self.model_dump(include={
            "view_counts", "n_targets", "seed", "sampler_steps",
            "inference_ratio", "sampling_mode", "zero_cond", "batch_size",
        })


class AblateStage2Config(EvalConfig):
    """Stage-1 against stage-2 comparison; ``checkpoint`` is the stage-2 model."""
    stage1_checkpoint: str


def _check_ratios(value: List[float]) -> List[float]:
    if not value or any(not 0.0 < r <= 1.0 for r in value):
        raise ValueError(f"ratios must be non-empty and lie in (0, 1], got {value}")
    return value


class AblateRatioConfig(EvalConfig):
    """Inference token-ratio sweep repeated over several seeds."""
    ratios: List[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    runs: int = Field(default=5, ge=1)

    @field_validator("ratios")
    @classmethod
    def check_ratios(cls, value: List[float]) -> List[float]:
        return _check_ratios(value)


class AblateTrainRatioConfig(EvalConfig):
    """Stage-2 retraining per token ratio; ``checkpoint`` is the stage-1 model.

    Every ratio starts from the same stage-1 weights and seed, and each
    resulting model is evaluated at full inference ratio unless
    ``inference_ratio`` says otherwise.
    """
    ratios: List[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    train_steps: int = Field(default=2000, ge=1)
    train_batch_size: int = Field(default=16, ge=1)
    learning_rate: float = Field(default=2e-4, gt=0.0)
    max_views: int = Field(default=4, ge=1)
    train_seed: int = 0

    @field_validator("ratios")
    @classmethod
    def check_ratios(cls, value: List[float]) -> List[float]:
        return _check_ratios(value)


class SampleConfig(BaseModel):
    """Generation along an orbit around one scene."""
    checkpoint: str
    dataset: str = "data/manifest.json"
    scene_id: Optional[int] = None  # first test scene when omitted
    view_count: int = Field(default=4, ge=1, le=4)
    trajectory: int = Field(default=12, ge=1)
    polar_deg: float = Field(default=60.0, ge=0.0, le=180.0)
    seed: int = 0
    sampler_steps: Optional[int] = Field(default=None, ge=1)
    inference_ratio: float = Field(default=1.0, gt=0.0, le=1.0)
    zero_cond: bool = False
    fusion: Optional[FusionMode] = None
    verbose: bool = False


class BenchConfig(BaseModel):
    """MAC grid over view counts 1..max_views and token ratios."""
    max_views: int = Field(default=8, ge=1)
    ratios: List[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    model: ModelConfig = Field(default_factory=ModelConfig)
