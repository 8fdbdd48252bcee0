"""Multi-view Cross Former: fixed learnable seeds attending to a variable token union."""

import math
from typing import List, Optional, Sequence, Union

import torch
from torch import nn

from app.models.attention import FeedForward, MultiHeadAttention
from app.models.schemas import ModelConfig
from app.models.tokenizer import PoseImageTokens
from app.utils.exceptions import InvalidArgumentError, ShapeMismatchError

# Number of seed tokens; independent of the number of views and patches.
NUM_SEEDS = 64

# Guards floor(ratio * M) against products like 0.29 * 100 = 28.999999999999996.
_FLOOR_EPS = 1e-9

TokenSet = Union[PoseImageTokens, torch.Tensor]


def init_seeds(seed: int, d_seed: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Draw S_0 ~ N(0, 1) of shape (64, d_seed)."""
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(NUM_SEEDS, d_seed, generator=generator, dtype=dtype)


class CrossBlock(nn.Module):
    """Seed cross-attention with residual, then pre-norm feed-forward with residual."""

    def __init__(self, d_seed: int, d_kv: int, heads: int, ffw_mult: int = 4):
        super().__init__()
        self.q_norm = nn.LayerNorm(d_seed)
        self.kv_norm = nn.LayerNorm(d_kv)
        self.attn = MultiHeadAttention(d_seed, d_kv, heads=heads)
        self.ffw_norm = nn.LayerNorm(d_seed)
        self.ffw = FeedForward(d_seed, ffw_mult)

    def attend(self, seeds: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        """S'_l = Attn(S_{l-1}, M, M) + S_{l-1}."""
        if kv.shape[-2] == 0:
            raise InvalidArgumentError("cross attention needs at least one key/value token")
        return self.attn(self.q_norm(seeds), self.kv_norm(kv)) + seeds

    def forward(self, seeds: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        """S_l = FFW(S'_l) + S'_l."""
        s = self.attend(seeds, kv)
        return self.ffw(self.ffw_norm(s)) + s


def cross_block(s_prev: torch.Tensor, kv: torch.Tensor, layer: CrossBlock) -> torch.Tensor:
    """One fusion layer applied to (..., 64, d_seed) seeds and (..., M, d_kv) tokens."""
    return layer(s_prev, kv)


class CrossFormer(nn.Module):
    """L cross blocks mapping any number of pose-image tokens to 64 condition tokens."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.crossformer_layers < 1:
            raise InvalidArgumentError("the cross former needs at least one layer")
        self.d_kv = config.d_kv
        self.seeds = nn.Parameter(init_seeds(config.seed_init, config.d_seed))
        self.layers = nn.ModuleList([
            CrossBlock(config.d_seed, config.d_kv, config.crossformer_heads, config.ffw_mult)
            for _ in range(config.crossformer_layers)
        ])
        self.out_norm = nn.LayerNorm(config.d_seed) if config.normalize_condition else nn.Identity()
        if config.condition_dim != config.d_seed:
            self.out_proj: nn.Module = nn.Linear(config.d_seed, config.condition_dim)
        else:
            self.out_proj = nn.Identity()

    def forward(self, kv: torch.Tensor, seeds: Optional[torch.Tensor] = None) -> torch.Tensor:
        """(..., M, d_kv) token union -> (..., 64, condition_dim)."""
        if kv.shape[-1] != self.d_kv:
            raise ShapeMismatchError("key/value tokens", (self.d_kv,), kv.shape[-1:])
        s = self.seeds if seeds is None else seeds
        s = s.expand(*kv.shape[:-2], *s.shape[-2:])
        for layer in self.layers:
            s = cross_block(s, kv, layer)
        return self.out_proj(self.out_norm(s))


def _as_matrix(token_set: TokenSet) -> torch.Tensor:
    return token_set.tokens if isinstance(token_set, PoseImageTokens) else token_set


def token_union(token_sets: Sequence[TokenSet]) -> torch.Tensor:
    """Concatenate per-view token matrices in view order."""
    if not token_sets:
        raise InvalidArgumentError("at least one token set is required")
    matrices = [_as_matrix(t) for t in token_sets]
    widths = {m.shape[-1] for m in matrices}
    if len(widths) > 1:
        raise ShapeMismatchError("token set width", (matrices[0].shape[-1],), (sorted(widths)[-1],))
    return torch.cat(matrices, dim=-2)


def fuse(
    token_sets: Sequence[TokenSet],
    crossformer: CrossFormer,
    seeds: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Fuse a variable number of views into a (64, condition_dim) condition."""
    return crossformer(token_union(token_sets), seeds=seeds)


def sample_count(total: int, ratio: float) -> int:
    """floor(ratio * total), at least 1."""
    if not 0.0 < ratio <= 1.0:
        raise InvalidArgumentError(f"sample ratio must lie in (0, 1], got {ratio}")
    return max(1, min(total, math.floor(ratio * total + _FLOOR_EPS)))


def sample_token_indices(
    n_views: int,
    n_patches: int,
    ratio: float,
    generator: torch.Generator,
    mode: str = "pooled",
) -> torch.Tensor:
    """Sorted row indices into the concatenated union, drawn without replacement.

    ``pooled`` samples from the whole union; ``per_view`` takes the same quota
    from every view.
    """
    total = n_views * n_patches
    if ratio >= 1.0:
        sample_count(total, ratio)
        return torch.arange(total)
    if mode == "pooled":
        picks = torch.randperm(total, generator=generator)[:sample_count(total, ratio)]
    elif mode == "per_view":
        quota = sample_count(n_patches, ratio)
        picks = torch.cat([
            torch.randperm(n_patches, generator=generator)[:quota] + v * n_patches
            for v in range(n_views)
        ])
    else:
        raise InvalidArgumentError(f"unknown sampling mode '{mode}'")
    return picks.sort().values


def sample_tokens(
    token_sets: Sequence[TokenSet],
    ratio: float,
    rng_seed: int,
    mode: str = "pooled",
) -> torch.Tensor:
    """Uniformly subsample rows of the token union; ratio 1 returns it unchanged."""
    union = token_union(token_sets)
    n_views = len(token_sets)
    n_patches = union.shape[-2] // n_views
    if mode == "per_view" and n_views * n_patches != union.shape[-2]:
        raise InvalidArgumentError("per-view sampling needs equally sized token sets")
    if mode == "pooled":
        n_views, n_patches = 1, union.shape[-2]
    generator = torch.Generator().manual_seed(rng_seed)
    index = sample_token_indices(n_views, n_patches, ratio, generator, mode)
    return union.index_select(-2, index.to(union.device))


def sample_batch_tokens(
    tokens: torch.Tensor,
    ratio: float,
    generator: torch.Generator,
    mode: str = "pooled",
) -> torch.Tensor:
    """Per-item token sampling of (B, V, N_p, D) tokens -> (B, M_kv, D)."""
    batch, n_views, n_patches, width = tokens.shape
    union = tokens.reshape(batch, n_views * n_patches, width)
    if ratio >= 1.0:
        return union
    if mode == "pooled":
        rows: List[torch.Tensor] = [
            sample_token_indices(1, n_views * n_patches, ratio, generator, mode) for _ in range(batch)
        ]
    else:
        rows = [sample_token_indices(n_views, n_patches, ratio, generator, mode) for _ in range(batch)]
    index = torch.stack(rows).to(tokens.device)
    return torch.gather(union, 1, index.unsqueeze(-1).expand(-1, -1, width))
