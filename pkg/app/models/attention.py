"""Multi-head scaled dot-product attention shared by every transformer block."""

from typing import Optional

import torch
from torch import nn


class MultiHeadAttention(nn.Module):
    """Self- or cross-attention with separate query and key/value widths."""

    def __init__(self, query_dim: int, kv_dim: Optional[int] = None, heads: int = 4, inner_dim: Optional[int] = None):
        super().__init__()
        kv_dim = kv_dim if kv_dim is not None else query_dim
        inner_dim = inner_dim if inner_dim is not None else query_dim
        if inner_dim % heads != 0:
            raise ValueError(f"inner width {inner_dim} is not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = inner_dim // heads
        self.scale = self.head_dim ** -0.5

        self.q_proj = nn.Linear(query_dim, inner_dim)
        self.k_proj = nn.Linear(kv_dim, inner_dim)
        self.v_proj = nn.Linear(kv_dim, inner_dim)
        self.o_proj = nn.Linear(inner_dim, query_dim)

    def forward(self, x: torch.Tensor, context: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Attend from ``x`` (..., Nq, Dq) to ``context`` (..., Nk, Dkv)."""
        context = x if context is None else context
        lead = x.shape[:-2]
        n_q, n_k = x.shape[-2], context.shape[-2]

        qry = self.q_proj(x).reshape(*lead, n_q, self.heads, self.head_dim).transpose(-3, -2)
        key = self.k_proj(context).reshape(*lead, n_k, self.heads, self.head_dim).transpose(-3, -2)
        val = self.v_proj(context).reshape(*lead, n_k, self.heads, self.head_dim).transpose(-3, -2)

        attn = (qry @ key.transpose(-2, -1)) * self.scale  # [..., heads, Nq, Nk]
        attn = attn.softmax(dim=-1)
        out = (attn @ val).transpose(-3, -2).reshape(*lead, n_q, self.heads * self.head_dim)
        return self.o_proj(out)


class FeedForward(nn.Module):
    """Linear -> GELU -> Linear."""

    def __init__(self, dim: int, mult: int = 4):
        super().__init__()
        self.fc_in = nn.Linear(dim, dim * mult)
        self.act = nn.GELU()
        self.fc_out = nn.Linear(dim * mult, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc_out(self.act(self.fc_in(x)))
