"""Unit tests for the conditional U-Net noise predictor."""

import pytest
import torch

from app.models.unet import Denoiser, denoise, timestep_embedding
from app.utils.exceptions import ShapeMismatchError
from tests.conftest import tiny_model_config
from tests.gradients import check_parameter_gradients


@pytest.fixture
def unet():
    torch.manual_seed(0)
    return Denoiser(channels=(8, 16), context_dim=8, heads=2, time_dim=8, zero_init_output=False)


def test_timestep_embedding():
    """Test shape and the sin/cos halves at t = 0."""
    emb = timestep_embedding(torch.tensor([0, 5, 400]), 8)
    assert emb.shape == (3, 8)
    assert torch.equal(emb[0], torch.tensor([0.0] * 4 + [1.0] * 4, dtype=torch.float64))


def test_output_shape(unet):
    """Test the prediction has the shape of z."""
    z = torch.randn(2, 3, 16, 16)
    out = unet(z, torch.tensor([1, 20]), torch.randn(2, 64, 8))
    assert out.shape == z.shape
    assert torch.isfinite(out).all()


def test_zero_init_output():
    """Test a freshly built model predicts zero noise."""
    model = Denoiser.from_config(tiny_model_config())
    out = model(torch.randn(1, 3, 16, 16), torch.tensor([3]), torch.randn(1, 64, 8))
    assert torch.equal(out, torch.zeros_like(out))


def test_condition_sensitivity(unet):
    """Test different conditions (and a zeroed one) change the prediction."""
    z = torch.randn(1, 3, 16, 16)
    t = torch.tensor([7])
    cond = torch.randn(1, 64, 8)
    base = unet(z, t, cond)
    assert not torch.allclose(base, unet(z, t, torch.randn(1, 64, 8)))
    assert not torch.allclose(base, unet(z, t, torch.zeros_like(cond)))
    assert torch.equal(base, unet(z, t, cond.clone()))


def test_timestep_sensitivity(unet):
    z = torch.randn(1, 3, 16, 16)
    cond = torch.randn(1, 64, 8)
    assert not torch.allclose(unet(z, torch.tensor([1]), cond), unet(z, torch.tensor([300]), cond))


def test_shape_validation(unet):
    """Test mismatched condition width and batch."""
    z = torch.randn(2, 3, 16, 16)
    with pytest.raises(ShapeMismatchError):
        unet(z, torch.tensor([1, 1]), torch.randn(2, 64, 4))
    with pytest.raises(ShapeMismatchError):
        unet(z, torch.tensor([1, 1]), torch.randn(1, 64, 8))


def test_denoise_single_image(unet):
    """Test the unbatched form matches the batched one."""
    z = torch.randn(3, 16, 16)
    cond = torch.randn(64, 8)
    single = denoise(z, torch.tensor(4), cond, unet)
    batched = unet(z[None], torch.tensor([4]), cond[None])[0]
    assert single.shape == z.shape
    torch.testing.assert_close(single, batched)


def test_gradients():
    """Test analytic parameter gradients against finite differences."""
    torch.manual_seed(2)
    model = Denoiser(channels=(4,), context_dim=4, heads=1, time_dim=4, zero_init_output=False)
    generator = torch.Generator().manual_seed(5)
    inputs = (
        torch.randn(1, 3, 8, 8, generator=generator, dtype=torch.float64),
        torch.tensor([9]),
        torch.randn(1, 6, 4, generator=generator, dtype=torch.float64),
    )
    assert check_parameter_gradients(model, inputs)
