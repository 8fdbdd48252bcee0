"""Fusion baselines: per-view pooling and a single global token."""

from typing import Optional, Sequence

import torch
from torch import nn

from app.models.crossformer import CrossFormer, TokenSet, fuse, token_union
from app.utils.exceptions import InvalidArgumentError


def pool_fuse(
    token_sets: Sequence[TokenSet],
    crossformer: CrossFormer,
    seeds: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Fuse every view on its own, then average the (64, d) conditions."""
    if not token_sets:
        raise InvalidArgumentError("at least one token set is required")
    if len(token_sets) == 1:
        return fuse(token_sets, crossformer, seeds)
    per_view = torch.stack([fuse([t], crossformer, seeds) for t in token_sets])
    return per_view.mean(dim=0)


def pool_fuse_batch(tokens: torch.Tensor, crossformer: CrossFormer) -> torch.Tensor:
    """(B, V, N_p, D) tokens -> (B, 64, d) mean of per-view conditions."""
    per_view = crossformer(tokens)  # views act as an extra batch axis
    return per_view.mean(dim=1)


class GlobalTokenCondition(nn.Module):
    """Mean of all pose-image tokens projected to a single condition token."""

    def __init__(self, d_kv: int, d_out: int):
        super().__init__()
        self.proj = nn.Linear(d_kv, d_out)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """(..., M, d_kv) -> (..., 1, d_out)."""
        return self.proj(tokens.mean(dim=-2, keepdim=True))


def global_token_condition(token_sets: Sequence[TokenSet], head: GlobalTokenCondition) -> torch.Tensor:
    """(1, d_out) coarse condition from every token of every view."""
    return head(token_union(token_sets))
