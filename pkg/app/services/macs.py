"""Closed-form multiply-accumulate counts for the fusion path."""

from typing import Iterable, List

from app.models.crossformer import NUM_SEEDS, sample_count
from app.models.schemas import MacReport, ModelConfig
from app.utils.exceptions import InvalidArgumentError


def crossformer_layer_macs(d_seed: int, d_kv: int, kv_tokens: int, ffw_mult: int, n_queries: int = NUM_SEEDS):
    """(kv-dependent, kv-independent) MACs of one cross block.

    Only matrix products count; biases, norms and softmax are ignored.
    """
    inner = d_seed  # heads * head_dim
    kv_proj = 2 * kv_tokens * d_kv * inner
    scores = n_queries * kv_tokens * inner
    weighted_values = n_queries * kv_tokens * inner
    q_proj = n_queries * d_seed * inner
    o_proj = n_queries * inner * d_seed
    ffw = 2 * n_queries * d_seed * (ffw_mult * d_seed)
    return kv_proj + scores + weighted_values, q_proj + o_proj + ffw


def unet_crossattn_macs(config: ModelConfig, context_tokens: int = NUM_SEEDS) -> int:
    """MACs of every U-Net cross-attention site (one down, one up per level)."""
    total = 0
    ctx = config.condition_dim
    for level, ch in enumerate(config.unet_channels):
        n_q = (config.resolution // (2 ** level)) ** 2
        site = (
            n_q * ch * ch                       # query projection
            + 2 * context_tokens * ctx * ch     # key/value projections
            + 2 * n_q * context_tokens * ch     # scores and weighted values
            + n_q * ch * ch                     # output projection
        )
        total += 2 * site
    return total


def mac_count(config: ModelConfig, n_views: int, n_patches: int, ratio: float) -> MacReport:
    """Cross former and U-Net cross-attention MACs for one conditioning pass.

    Args:
        config: Model dimensions.
        n_views: Source views fed to the model.
        n_patches: Tokens per view.
        ratio: Token sample ratio in (0, 1].

    Returns:
        Totals; the U-Net term always sees exactly 64 condition tokens.
    """
    if n_views < 1 or n_patches < 1:
        raise InvalidArgumentError(f"n_views and n_patches must be positive, got {n_views}, {n_patches}")
    kv_tokens = sample_count(n_views * n_patches, ratio)
    kv_part, fixed_part = crossformer_layer_macs(
        config.d_seed, config.d_kv, kv_tokens, config.ffw_mult
    )
    layers = config.crossformer_layers
    out_proj = NUM_SEEDS * config.d_seed * config.condition_dim if config.condition_dim != config.d_seed else 0
    return MacReport(
        n_views=n_views,
        ratio=ratio,
        kv_tokens=kv_tokens,
        crossformer_macs=layers * (kv_part + fixed_part) + out_proj,
        crossformer_kv_macs=layers * kv_part,
        unet_crossattn_macs=unet_crossattn_macs(config),
    )


def mac_grid(config: ModelConfig, view_counts: Iterable[int], ratios: Iterable[float]) -> List[MacReport]:
    """mac_count over every (n_views, ratio) pair, views outermost."""
    ratios = list(ratios)
    return [
        mac_count(config, n, config.n_patches, r)
        for n in view_counts
        for r in ratios
    ]
