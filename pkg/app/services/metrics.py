"""Image quality metrics: PSNR and windowed SSIM on images in [0, 1]."""

from typing import Union

import numpy as np
import torch
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from app.utils.exceptions import InvalidArgumentError, ShapeMismatchError
from app.utils.images import to_array

Image = Union[np.ndarray, torch.Tensor]

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_C1 = SSIM_K1 ** 2
SSIM_C2 = SSIM_K2 ** 2


def _as_array(image: Image) -> np.ndarray:
    """(H, W, C) float64; tensors are taken as channel-first."""
    if isinstance(image, torch.Tensor):
        return to_array(image)
    return np.asarray(image, dtype=np.float64)


def _pair(a: Image, b: Image):
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ShapeMismatchError("compared image", a.shape, b.shape)
    return a, b


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB for a unit dynamic range, capped at 100."""
    a, b = _pair(a, b)
    if np.array_equal(a, b):
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(peak_signal_noise_ratio(a, b, data_range=1.0)))


def _grayscale(image: np.ndarray) -> np.ndarray:
    return image.mean(axis=-1) if image.ndim == 3 else image


def ssim(a: Image, b: Image) -> float:
    """Mean SSIM over every valid 11x11 Gaussian window of the channel-mean grayscale.

    sigma = 1.5 gives the 11-tap window; windows touching the border are
    cropped from the mean.
    """
    a, b = _pair(a, b)
    x, y = _grayscale(a), _grayscale(b)
    if min(x.shape) < SSIM_WINDOW:
        raise InvalidArgumentError(
            f"image of size {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    return float(structural_similarity(
        x, y,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        data_range=1.0,
        K1=SSIM_K1,
        K2=SSIM_K2,
    ))
