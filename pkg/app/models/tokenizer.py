"""Source view tokenization: patchify, ViT-encode, pose-embed and entangle."""

from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import torch
from torch import nn

from app.models.attention import FeedForward, MultiHeadAttention
from app.models.schemas import ModelConfig, RelativePose
from app.utils.exceptions import InvalidArgumentError, ShapeMismatchError

POSE_INPUT_DIM = 4


@dataclass(frozen=True)
class PoseImageTokens:
    """Tokens of one view with the pose suffix appended to every row."""
    tokens: torch.Tensor  # (N_p, d_model + d_pose)
    view_index: int


def patchify(image: torch.Tensor, patch_size: int) -> torch.Tensor:
    """Split (..., C, H, W) images into raster-ordered flattened patches.

    Returns:
        (..., N_p, patch_size * patch_size * C); each row is one patch in
        (row, column, channel) order.
    """
    *lead, channels, height, width = image.shape
    if patch_size < 1 or height % patch_size or width % patch_size:
        raise InvalidArgumentError(
            f"patch size {patch_size} does not divide image size {height}x{width}"
        )
    gh, gw = height // patch_size, width // patch_size
    x = image.reshape(*lead, channels, gh, patch_size, gw, patch_size)
    n = len(lead)
    # (..., gh, gw, p, p, C)
    x = x.permute(*range(n), n + 1, n + 3, n + 2, n + 4, n)
    return x.reshape(*lead, gh * gw, patch_size * patch_size * channels)


def unpatchify(patches: torch.Tensor, patch_size: int, height: int, width: int) -> torch.Tensor:
    """Inverse of :func:`patchify`."""
    *lead, n_patches, patch_dim = patches.shape
    gh, gw = height // patch_size, width // patch_size
    if gh * gw != n_patches or patch_dim % (patch_size * patch_size):
        raise ShapeMismatchError("patch sequence", (gh * gw, patch_dim), (n_patches, patch_dim))
    channels = patch_dim // (patch_size * patch_size)
    x = patches.reshape(*lead, gh, gw, patch_size, patch_size, channels)
    n = len(lead)
    # (..., C, gh, p, gw, p)
    x = x.permute(*range(n), n + 4, n, n + 2, n + 1, n + 3)
    return x.reshape(*lead, channels, height, width)


class EncoderBlock(nn.Module):
    """Pre-norm transformer encoder block."""

    def __init__(self, dim: int, heads: int, ffw_mult: int):
        super().__init__()
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads=heads)
        self.ffw_norm = nn.LayerNorm(dim)
        self.ffw = FeedForward(dim, ffw_mult)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.attn_norm(x))
        return x + self.ffw(self.ffw_norm(x))


class VitEncoder(nn.Module):
    """Patch projection, learned positional table and encoder blocks; no class token."""

    def __init__(self, patch_dim: int, n_patches: int, d_model: int, layers: int, heads: int, ffw_mult: int = 4):
        super().__init__()
        self.patch_dim = patch_dim
        self.n_patches = n_patches
        self.patch_proj = nn.Linear(patch_dim, d_model)
        self.pos_embed = nn.Parameter(torch.randn(n_patches, d_model) * 0.02)
        self.blocks = nn.ModuleList([EncoderBlock(d_model, heads, ffw_mult) for _ in range(layers)])
        self.out_norm = nn.LayerNorm(d_model)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        """(..., N_p, patch_dim) -> (..., N_p, d_model)."""
        if patches.shape[-2:] != (self.n_patches, self.patch_dim):
            raise ShapeMismatchError("patch sequence", (self.n_patches, self.patch_dim), patches.shape[-2:])
        x = self.patch_proj(patches) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return self.out_norm(x)


class PoseMlp(nn.Module):
    """Affine -> SiLU -> affine map from the 4-vector relative pose to d_pose."""

    def __init__(self, d_pose: int, hidden: int = 64):
        super().__init__()
        self.fc_in = nn.Linear(POSE_INPUT_DIM, hidden)
        self.act = nn.SiLU()
        self.fc_out = nn.Linear(hidden, d_pose)

    def forward(self, rel: torch.Tensor) -> torch.Tensor:
        return self.fc_out(self.act(self.fc_in(rel)))


def encode(patches: torch.Tensor, vit: VitEncoder) -> torch.Tensor:
    """Image tokens M = Φ(χ)."""
    return vit(patches)


def _pose_tensor(rel: Union[RelativePose, torch.Tensor], like: torch.Tensor) -> torch.Tensor:
    if isinstance(rel, RelativePose):
        return torch.tensor(rel.as_tuple(), dtype=like.dtype, device=like.device)
    return rel.to(dtype=like.dtype, device=like.device)


def pose_embed(rel: Union[RelativePose, torch.Tensor], pose_mlp: PoseMlp) -> torch.Tensor:
    """Embed a relative pose (or a (..., 4) batch of them) into d_pose."""
    return pose_mlp(_pose_tensor(rel, pose_mlp.fc_in.weight))


def entangle(tokens: torch.Tensor, pose_vec: torch.Tensor) -> torch.Tensor:
    """Append the same pose vector to every token row.

    Args:
        tokens: (..., N_p, d_model) image tokens.
        pose_vec: (..., d_pose) pose vector.

    Returns:
        (..., N_p, d_model + d_pose).
    """
    if tokens.shape[:-2] != pose_vec.shape[:-1]:
        raise ShapeMismatchError("pose vector batch", tokens.shape[:-2], pose_vec.shape[:-1])
    suffix = pose_vec.unsqueeze(-2).expand(*tokens.shape[:-1], pose_vec.shape[-1])
    return torch.cat([tokens, suffix], dim=-1)


class SourceViewTokenizer(nn.Module):
    """Per-view tokenization of (image, relative pose) pairs."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.patch_size = config.patch_size
        self.resolution = config.resolution
        self.raw_pose = config.pose_embedding == "raw"
        self.vit = VitEncoder(
            patch_dim=config.patch_dim,
            n_patches=config.n_patches,
            d_model=config.d_model,
            layers=config.vit_layers,
            heads=config.vit_heads,
            ffw_mult=config.ffw_mult,
        )
        # The raw-pose variant appends the 4-vector itself.
        self.pose_mlp = None if self.raw_pose else PoseMlp(config.d_pose, config.pose_hidden)

    def embed_pose(self, rel: torch.Tensor) -> torch.Tensor:
        if self.pose_mlp is None:
            return rel
        return pose_embed(rel, self.pose_mlp)

    def forward(self, images: torch.Tensor, rel_poses: torch.Tensor) -> torch.Tensor:
        """(B, V, 3, H, W) images and (B, V, 4) poses -> (B, V, N_p, d_model + d_pose).

        Views are flattened into the batch so no token ever sees another view.
        """
        if images.shape[-2:] != (self.resolution, self.resolution):
            raise ShapeMismatchError(
                "source image", (self.resolution, self.resolution), images.shape[-2:]
            )
        lead = images.shape[:-3]
        flat = images.reshape(-1, *images.shape[-3:])
        tokens = encode(patchify(flat * 2.0 - 1.0, self.patch_size), self.vit)
        pose = self.embed_pose(rel_poses.reshape(-1, POSE_INPUT_DIM).to(tokens.dtype))
        entangled = entangle(tokens, pose)
        return entangled.reshape(*lead, *entangled.shape[-2:])


def tokenize_views(
    views: Sequence[Tuple[torch.Tensor, Union[RelativePose, torch.Tensor]]],
    tokenizer: SourceViewTokenizer,
) -> List[PoseImageTokens]:
    """Tokenize each (image (3, H, W), relative pose) pair independently, preserving order."""
    if not views:
        raise InvalidArgumentError("at least one source view is required")
    sizes = {tuple(image.shape) for image, _ in views}
    if len(sizes) > 1:
        raise InvalidArgumentError(f"source views have mixed resolutions: {sorted(sizes)}")
    reference = tokenizer.vit.patch_proj.weight
    result = []
    for index, (image, rel) in enumerate(views):
        pose = _pose_tensor(rel, reference)
        tokens = tokenizer(image.to(reference.dtype)[None, None], pose[None, None])
        result.append(PoseImageTokens(tokens=tokens[0, 0], view_index=index))
    return result
