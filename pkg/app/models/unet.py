"""Conditional U-Net noise predictor with cross-attention on the fused condition."""

import math
from typing import List, Sequence

import torch
from torch import nn
from torch.nn import functional as F

from app.models.attention import MultiHeadAttention
from app.models.schemas import ModelConfig
from app.utils.exceptions import ShapeMismatchError


def _groups(channels: int) -> int:
    return math.gcd(8, channels)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64, device=t.device) / half
    )
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class TimeEmbedding(nn.Module):
    """Sinusoid followed by a two-layer MLP."""

    def __init__(self, time_dim: int):
        super().__init__()
        self.time_dim = time_dim
        self.fc_in = nn.Linear(time_dim, 4 * time_dim)
        self.fc_out = nn.Linear(4 * time_dim, 4 * time_dim)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        emb = timestep_embedding(t, self.time_dim).to(self.fc_in.weight.dtype)
        return self.fc_out(F.silu(self.fc_in(emb)))


class ResidualBlock(nn.Module):
    """GroupNorm/SiLU/conv pair with the timestep embedding added in between."""

    def __init__(self, in_channels: int, out_channels: int, t_dim: int):
        super().__init__()
        self.norm_in = nn.GroupNorm(_groups(in_channels), in_channels)
        self.conv_in = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(t_dim, out_channels)
        self.norm_out = nn.GroupNorm(_groups(out_channels), out_channels)
        self.conv_out = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        if in_channels == out_channels:
            self.skip: nn.Module = nn.Identity()
        else:
            self.skip = nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv_in(F.silu(self.norm_in(x)))
        h = h + self.time_proj(F.silu(t_emb))[:, :, None, None]
        h = self.conv_out(F.silu(self.norm_out(h)))
        return h + self.skip(x)


class CrossAttentionBlock(nn.Module):
    """Spatial features attend to the condition tokens; residual output."""

    def __init__(self, channels: int, context_dim: int, heads: int):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(channels), channels)
        self.token_norm = nn.LayerNorm(channels)
        self.attn = MultiHeadAttention(channels, context_dim, heads=heads)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        out = self.attn(self.token_norm(tokens), context)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class Denoiser(nn.Module):
    """ε_θ(z_t, condition, t) over a configurable number of resolution levels.

    Each level on the way down runs a residual block and a cross-attention
    layer, and stores a skip; the way up mirrors it with concatenated skips.
    """

    def __init__(
        self,
        channels: Sequence[int] = (32, 64),
        context_dim: int = 64,
        heads: int = 4,
        time_dim: int = 64,
        image_channels: int = 3,
        zero_init_output: bool = True,
    ):
        super().__init__()
        self.channels = tuple(channels)
        self.context_dim = context_dim
        t_dim = 4 * time_dim
        self.time_embed = TimeEmbedding(time_dim)
        self.in_conv = nn.Conv2d(image_channels, self.channels[0], 3, padding=1)

        self.down_res = nn.ModuleList()
        self.down_cross_attn = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = self.channels[0]
        for level, ch in enumerate(self.channels):
            self.down_res.append(ResidualBlock(prev, ch, t_dim))
            self.down_cross_attn.append(CrossAttentionBlock(ch, context_dim, heads))
            if level < len(self.channels) - 1:
                self.downsample.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
            prev = ch

        self.mid_res = ResidualBlock(prev, prev, t_dim)

        self.up_res = nn.ModuleList()
        self.up_cross_attn = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for level in reversed(range(len(self.channels))):
            ch = self.channels[level]
            self.up_res.append(ResidualBlock(prev + ch, ch, t_dim))
            self.up_cross_attn.append(CrossAttentionBlock(ch, context_dim, heads))
            if level > 0:
                self.upsample.append(nn.Conv2d(ch, self.channels[level - 1], 3, padding=1))
                prev = self.channels[level - 1]
            else:
                prev = ch

        self.out_norm = nn.GroupNorm(_groups(prev), prev)
        self.out_conv = nn.Conv2d(prev, image_channels, 3, padding=1)
        if zero_init_output:
            nn.init.zeros_(self.out_conv.weight)
            nn.init.zeros_(self.out_conv.bias)

    @classmethod
    def from_config(cls, config: ModelConfig) -> "Denoiser":
        return cls(
            channels=config.unet_channels,
            context_dim=config.condition_dim,
            heads=config.unet_heads,
            time_dim=config.time_dim,
            zero_init_output=config.zero_init_output,
        )

    def forward(self, z: torch.Tensor, t: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        """Predict the noise in ``z`` (B, 3, H, W) at timesteps ``t`` (B,)."""
        if context.shape[-1] != self.context_dim:
            raise ShapeMismatchError("condition tokens", (self.context_dim,), context.shape[-1:])
        if context.shape[0] != z.shape[0]:
            raise ShapeMismatchError("condition batch", (z.shape[0],), (context.shape[0],))
        t_emb = self.time_embed(t)
        h = self.in_conv(z)
        skips: List[torch.Tensor] = []
        for level in range(len(self.channels)):
            h = self.down_res[level](h, t_emb)
            h = self.down_cross_attn[level](h, context)
            skips.append(h)
            if level < len(self.downsample):
                h = self.downsample[level](h)

        h = self.mid_res(h, t_emb)

        for i in range(len(self.channels)):
            h = torch.cat([h, skips.pop()], dim=1)
            h = self.up_res[i](h, t_emb)
            h = self.up_cross_attn[i](h, context)
            if i < len(self.upsample):
                h = self.upsample[i](F.interpolate(h, scale_factor=2, mode="nearest"))
        return self.out_conv(F.silu(self.out_norm(h)))


def denoise(z: torch.Tensor, t: torch.Tensor, cond: torch.Tensor, unet: Denoiser) -> torch.Tensor:
    """Predicted noise with the shape of ``z``."""
    if z.dim() == 3:
        return unet(z[None], t.reshape(1), cond[None])[0]
    return unet(z, t, cond)
