"""The full model: tokenizer, fusion, optional global head and denoiser."""

from typing import Dict, Optional

import torch
from torch import nn

from app.models.baseline import GlobalTokenCondition, pool_fuse_batch
from app.models.crossformer import CrossFormer, sample_batch_tokens
from app.models.schemas import ModelConfig
from app.models.tokenizer import SourceViewTokenizer
from app.models.unet import Denoiser
from app.utils.exceptions import InvalidArgumentError

# Top-level parameter namespaces.
TOKENIZER = "tokenizer"
CROSSFORMER = "crossformer"
GLOBAL_HEAD = "global_head"
UNET = "unet"


class ModelBundle(nn.Module):
    """Every trainable parameter, addressable by a stable dotted name."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.tokenizer = SourceViewTokenizer(config)
        self.crossformer = CrossFormer(config)
        # Only present when trained with the global-token baseline.
        self.global_head: Optional[GlobalTokenCondition] = (
            GlobalTokenCondition(config.d_kv, config.condition_dim)
            if config.fusion == "global" else None
        )
        self.unet = Denoiser.from_config(config)

    def named_parameter_dict(self) -> Dict[str, nn.Parameter]:
        return dict(self.named_parameters())

    def condition(
        self,
        sources: torch.Tensor,
        rel_poses: torch.Tensor,
        ratio: float = 1.0,
        generator: Optional[torch.Generator] = None,
        sampling_mode: str = "pooled",
        fusion: Optional[str] = None,
        zero: bool = False,
    ) -> torch.Tensor:
        """Condition tokens for (B, V, 3, H, W) sources and (B, V, 4) poses.

        Args:
            sources: Source images in [0, 1].
            rel_poses: Target pose relative to each source.
            ratio: Token sample ratio before fusion (1 keeps every token).
            generator: Randomness for token sampling.
            sampling_mode: ``pooled`` or ``per_view``; pooled fusion always
                samples per view so every view keeps the same token count.
            fusion: Override of the configured fusion mode.
            zero: Replace the condition with a 0-tensor of the same shape.

        Returns:
            (B, 64, condition_dim), or (B, 1, condition_dim) for global fusion.
        """
        mode = fusion or self.config.fusion
        if mode not in ("crossformer", "pooled", "global"):
            raise InvalidArgumentError(f"unknown fusion mode '{mode}'")
        tokens = self.tokenizer(sources, rel_poses)
        batch, n_views, _, width = tokens.shape
        if ratio < 1.0:
            if generator is None:
                raise InvalidArgumentError("token sampling needs a generator")
            # Pooled fusion needs an equal quota from every view.
            kv = sample_batch_tokens(tokens, ratio, generator, "per_view" if mode == "pooled" else sampling_mode)
        else:
            kv = tokens.reshape(batch, -1, width)
        if mode == "pooled":
            cond = pool_fuse_batch(kv.reshape(batch, n_views, -1, width), self.crossformer)
        elif mode == "crossformer":
            cond = self.crossformer(kv)
        elif self.global_head is None:
            raise InvalidArgumentError("this model was not built with a global-token head")
        else:
            cond = self.global_head(kv)
        return torch.zeros_like(cond) if zero else cond

    def predict_noise(self, z: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return self.unet(z, t, cond)
