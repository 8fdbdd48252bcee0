"""Unit tests for source view tokenization."""

import pytest
import torch
from torch import nn

from app.models.schemas import RelativePose
from app.models.tokenizer import (
    PoseMlp,
    SourceViewTokenizer,
    VitEncoder,
    encode,
    entangle,
    patchify,
    pose_embed,
    tokenize_views,
    unpatchify,
)
from app.utils.exceptions import InvalidArgumentError
from tests.conftest import tiny_model_config
from tests.gradients import check_parameter_gradients


def test_patchify_shapes():
    """Test N_p and patch width for 32px images."""
    patches = patchify(torch.rand(3, 32, 32), 8)
    assert patches.shape == (16, 192)


def test_patchify_order():
    """Test raster patch order and (row, column, channel) layout."""
    image = torch.arange(3 * 4 * 4, dtype=torch.float64).reshape(3, 4, 4)
    patches = patchify(image, 2)
    # second patch of the first patch row, pixel (0, 0), all channels
    assert patches[1, :3].tolist() == [image[0, 0, 2].item(), image[1, 0, 2].item(), image[2, 0, 2].item()]
    # third patch starts at row 2, column 0
    assert patches[2, 0].item() == image[0, 2, 0].item()


def test_patchify_rejects_non_divisor():
    """Test the patch-size precondition."""
    with pytest.raises(InvalidArgumentError):
        patchify(torch.rand(3, 32, 32), 5)


def test_patchify_inverse():
    """Test unpatchify restores the image exactly."""
    image = torch.rand(2, 3, 16, 16)
    assert torch.equal(unpatchify(patchify(image, 4), 4, 16, 16), image)


def test_encode_shape_and_zero_weights():
    """Test row count and the all-zero fixed point."""
    torch.manual_seed(0)
    vit = VitEncoder(patch_dim=12, n_patches=5, d_model=8, layers=2, heads=2)
    assert encode(torch.rand(5, 12), vit).shape == (5, 8)
    for p in vit.parameters():
        nn.init.zeros_(p)
    out = encode(torch.rand(5, 12), vit)
    assert torch.isfinite(out).all()


def test_encode_mixes_every_token():
    """Test one perturbed patch changes every output row."""
    torch.manual_seed(1)
    vit = VitEncoder(patch_dim=12, n_patches=6, d_model=8, layers=1, heads=2)
    patches = torch.rand(6, 12)
    perturbed = patches.clone()
    perturbed[2] += 0.5
    diff = (encode(patches, vit) - encode(perturbed, vit)).abs().sum(dim=-1)
    assert (diff > 0).all()


def test_pose_embed():
    """Test zero weights, distinctness and determinism."""
    torch.manual_seed(2)
    mlp = PoseMlp(d_pose=4, hidden=8)
    a = RelativePose(d_polar=0.1, sin_d_azimuth=0.0, cos_d_azimuth=1.0, d_radius=0.0)
    b = RelativePose(d_polar=-0.3, sin_d_azimuth=1.0, cos_d_azimuth=0.0, d_radius=0.0)
    assert not torch.equal(pose_embed(a, mlp), pose_embed(b, mlp))
    assert torch.equal(pose_embed(a, mlp), pose_embed(a, mlp))
    for p in mlp.parameters():
        nn.init.zeros_(p)
    assert torch.equal(pose_embed(a, mlp), torch.zeros(4))


def test_entangle():
    """Test suffix width and layout."""
    tokens = torch.rand(16, 32)
    pose = torch.rand(8)
    out = entangle(tokens, pose)
    assert out.shape == (16, 40)
    assert torch.equal(out[:, :32], tokens)
    assert torch.equal(out[:, 32:], pose.expand(16, 8))


def test_tokenize_views_shapes_and_independence():
    """Test per-view token sets are independent of the other views."""
    torch.manual_seed(3)
    config = tiny_model_config()
    tokenizer = SourceViewTokenizer(config)
    rel = RelativePose(d_polar=0.2, sin_d_azimuth=0.0, cos_d_azimuth=1.0, d_radius=0.0)
    views = [(torch.rand(3, 16, 16), rel) for _ in range(3)]
    sets = tokenize_views(views, tokenizer)
    assert len(sets) == 3
    assert all(s.tokens.shape == (config.n_patches, config.d_kv) for s in sets)
    assert [s.view_index for s in sets] == [0, 1, 2]
    alone = tokenize_views(views[:1], tokenizer)[0]
    torch.testing.assert_close(alone.tokens, sets[0].tokens, rtol=0, atol=0)
    with pytest.raises(InvalidArgumentError):
        tokenize_views([], tokenizer)


def test_batched_tokenizer_matches_per_view():
    """Test the batched path against tokenize_views."""
    torch.manual_seed(4)
    tokenizer = SourceViewTokenizer(tiny_model_config())
    images = torch.rand(1, 2, 3, 16, 16)
    rel = torch.tensor([[[0.1, 0.0, 1.0, 0.0], [0.2, 1.0, 0.0, 0.0]]])
    batched = tokenizer(images, rel)
    single = tokenize_views([(images[0, v], rel[0, v]) for v in range(2)], tokenizer)
    for v in range(2):
        torch.testing.assert_close(batched[0, v], single[v].tokens, rtol=1e-6, atol=1e-6)


def test_raw_pose_variant():
    """Test the raw 4-vector pose suffix."""
    tokenizer = SourceViewTokenizer(tiny_model_config(pose_embedding="raw"))
    rel = torch.tensor([[[0.1, 0.0, 1.0, 0.0]]])
    tokens = tokenizer(torch.rand(1, 1, 3, 16, 16), rel)
    assert tokens.shape[-1] == 8 + 4
    assert torch.equal(tokens[0, 0, :, 8:], rel[0, 0].expand(4, 4))


def test_tokenizer_gradients():
    """Test analytic gradients of every tokenizer parameter."""
    torch.manual_seed(5)
    config = tiny_model_config(resolution=8, patch_size=4, d_model=4, d_pose=2, pose_hidden=4, ffw_mult=1)
    tokenizer = SourceViewTokenizer(config)
    images = torch.rand(1, 2, 3, 8, 8, dtype=torch.float64)
    rel = torch.tensor([[[0.1, 0.0, 1.0, 0.0], [0.3, 0.6, 0.8, 0.0]]], dtype=torch.float64)
    assert check_parameter_gradients(tokenizer, (images, rel))
