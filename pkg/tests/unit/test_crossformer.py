"""Unit tests for the multi-view cross former and token sampling."""

import math

import pytest
import torch
from torch import nn

from app.models.crossformer import (
    NUM_SEEDS,
    CrossBlock,
    CrossFormer,
    cross_block,
    fuse,
    init_seeds,
    sample_batch_tokens,
    sample_count,
    sample_token_indices,
    sample_tokens,
)
from app.models.tokenizer import PoseImageTokens
from app.utils.exceptions import InvalidArgumentError
from tests.conftest import tiny_model_config
from tests.gradients import check_parameter_gradients


def token_sets(n_views, n_patches=16, width=12, seed=0, dtype=torch.float32):
    generator = torch.Generator().manual_seed(seed)
    return [
        PoseImageTokens(tokens=torch.randn(n_patches, width, generator=generator, dtype=dtype), view_index=v)
        for v in range(n_views)
    ]


@pytest.fixture
def crossformer():
    torch.manual_seed(0)
    return CrossFormer(tiny_model_config(crossformer_layers=2))


def test_init_seeds():
    """Test seed shape, determinism and centering."""
    seeds = init_seeds(3, 32)
    assert seeds.shape == (NUM_SEEDS, 32)
    assert torch.equal(seeds, init_seeds(3, 32))
    bound = 4.0 / math.sqrt(NUM_SEEDS * 32)
    means = [float(init_seeds(s, 32, torch.float64).mean()) for s in range(100)]
    assert sum(abs(m) <= bound for m in means) >= 99


def test_cross_block_zero_values_pass_through():
    """Test the residual passthrough when the value projection is zero."""
    torch.manual_seed(1)
    block = CrossBlock(d_seed=8, d_kv=12, heads=2)
    nn.init.zeros_(block.attn.v_proj.weight)
    nn.init.zeros_(block.attn.v_proj.bias)
    nn.init.zeros_(block.attn.o_proj.bias)
    seeds = torch.randn(NUM_SEEDS, 8)
    torch.testing.assert_close(block.attend(seeds, torch.randn(5, 12)), seeds, rtol=0, atol=0)


def test_cross_block_duplicated_keys():
    """Test duplicating every kv row leaves the output unchanged."""
    torch.manual_seed(2)
    block = CrossBlock(d_seed=8, d_kv=12, heads=2).double()
    seeds = torch.randn(NUM_SEEDS, 8, dtype=torch.float64)
    kv = torch.randn(7, 12, dtype=torch.float64)
    torch.testing.assert_close(cross_block(seeds, torch.cat([kv, kv]), block), cross_block(seeds, kv, block), rtol=1e-6, atol=1e-9)


def test_cross_block_hand_oracle():
    """Test a single-head, width-2 block against scalar arithmetic."""
    block = CrossBlock(d_seed=2, d_kv=2, heads=1, ffw_mult=1).double()
    for norm in (block.q_norm, block.kv_norm, block.ffw_norm):
        nn.init.ones_(norm.weight)
        nn.init.zeros_(norm.bias)
    with torch.no_grad():
        for lin in (block.attn.q_proj, block.attn.k_proj, block.attn.o_proj):
            lin.weight.copy_(torch.eye(2, dtype=torch.float64))
            lin.bias.zero_()
        block.attn.v_proj.weight.copy_(torch.tensor([[2.0, 0.0], [0.0, 3.0]], dtype=torch.float64))
        block.attn.v_proj.bias.copy_(torch.tensor([0.5, -0.5], dtype=torch.float64))
        block.ffw.fc_in.weight.zero_()
        block.ffw.fc_in.bias.fill_(1.0)
        block.ffw.fc_out.weight.copy_(torch.tensor([[1.0, 0.0], [2.0, 0.0]], dtype=torch.float64))
        block.ffw.fc_out.bias.zero_()

    seed = torch.tensor([[0.3, -0.7]], dtype=torch.float64)
    kv = torch.tensor([[2.0, 4.0]], dtype=torch.float64)

    # One key: softmax weight is exactly 1, so the attention output is the value.
    eps = 1e-5
    mean, var = (2.0 + 4.0) / 2, ((2.0 - 3.0) ** 2 + (4.0 - 3.0) ** 2) / 2
    kn = [(2.0 - mean) / math.sqrt(var + eps), (4.0 - mean) / math.sqrt(var + eps)]
    value = [2.0 * kn[0] + 0.5, 3.0 * kn[1] - 0.5]
    s_prime = [0.3 + value[0], -0.7 + value[1]]
    gelu_one = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
    expected = [s_prime[0] + gelu_one, s_prime[1] + 2.0 * gelu_one]
    out = cross_block(seed, kv, block)
    assert out[0].tolist() == pytest.approx(expected, abs=1e-12)


def test_fuse_fixed_output_shape(crossformer):
    """Test that any view count yields 64 condition tokens."""
    for n_views in range(1, 9):
        assert fuse(token_sets(n_views), crossformer).shape == (NUM_SEEDS, 8)


def test_fuse_view_permutation(crossformer):
    """Test fusion is a set operation over views."""
    crossformer = crossformer.double()
    sets = token_sets(4, dtype=torch.float64)
    reordered = [sets[2], sets[0], sets[3], sets[1]]
    torch.testing.assert_close(fuse(reordered, crossformer), fuse(sets, crossformer), rtol=1e-6, atol=1e-9)


def test_fuse_empty_kv_rejected(crossformer):
    """Test that fusion needs tokens."""
    with pytest.raises(InvalidArgumentError):
        fuse([], crossformer)
    with pytest.raises(InvalidArgumentError):
        crossformer(torch.zeros(0, 12))


def test_crossformer_requires_layers():
    """Test L = 0 is disallowed."""
    with pytest.raises(ValueError):
        CrossFormer(tiny_model_config(crossformer_layers=0))


def test_sample_tokens_counts_and_subset():
    """Test counts and that rows are distinct rows of the union."""
    sets = token_sets(2)
    union = torch.cat([s.tokens for s in sets])
    picked = sample_tokens(sets, 0.5, rng_seed=7)
    assert picked.shape == (16, 12)
    matches = [(union == row).all(dim=1).nonzero().flatten().tolist() for row in picked]
    assert all(len(m) == 1 for m in matches)
    assert len({m[0] for m in matches}) == 16
    assert torch.equal(sample_tokens(sets, 1.0, rng_seed=7), union)
    assert sample_tokens(token_sets(4), 0.25, rng_seed=1).shape == (16, 12)


def test_sample_count():
    """Test flooring, the minimum and the ratio range."""
    assert sample_count(100, 0.29) == 29
    assert sample_count(3, 0.1) == 1
    assert sample_count(32, 1.0) == 32
    with pytest.raises(InvalidArgumentError):
        sample_count(10, 0.0)
    with pytest.raises(InvalidArgumentError):
        sample_count(10, 1.5)


def test_sample_token_indices_uniform():
    """Test each token is kept with probability ratio (within 3 sigma)."""
    generator = torch.Generator().manual_seed(0)
    trials, total, ratio = 10_000, 32, 0.25
    counts = torch.zeros(total)
    for _ in range(trials):
        counts[sample_token_indices(1, total, ratio, generator)] += 1
    p = 8 / total
    sigma = math.sqrt(trials * p * (1 - p))
    assert ((counts - trials * p).abs() <= 3 * sigma + 1).float().mean() >= 0.97


def test_per_view_sampling_quota():
    """Test the per-view mode takes the same number of tokens from every view."""
    generator = torch.Generator().manual_seed(0)
    index = sample_token_indices(4, 16, 0.5, generator, mode="per_view")
    assert index.shape == (32,)
    assert torch.bincount(index // 16, minlength=4).tolist() == [8, 8, 8, 8]
    with pytest.raises(InvalidArgumentError):
        sample_token_indices(4, 16, 0.5, generator, mode="bogus")


def test_sample_batch_tokens():
    """Test per-item sampling shapes and rows."""
    tokens = torch.randn(3, 2, 16, 12)
    generator = torch.Generator().manual_seed(0)
    picked = sample_batch_tokens(tokens, 0.5, generator)
    assert picked.shape == (3, 16, 12)
    union = tokens.reshape(3, 32, 12)
    for b in range(3):
        assert all((union[b] == row).all(dim=1).any() for row in picked[b])
    assert sample_batch_tokens(tokens, 1.0, generator).shape == (3, 32, 12)


def test_crossformer_gradients():
    """Test analytic gradients of every cross former parameter, seeds included."""
    torch.manual_seed(6)
    config = tiny_model_config(d_seed=4, crossformer_heads=2, crossformer_layers=2, ffw_mult=1, d_model=2, vit_heads=1, d_pose=2)
    crossformer = CrossFormer(config)
    kv = torch.randn(5, config.d_kv, dtype=torch.float64)
    assert check_parameter_gradients(crossformer, (kv,))
