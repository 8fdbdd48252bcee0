"""PNG encoding and image/tensor conversion helpers."""

from pathlib import Path
from typing import Sequence, Union

import numpy as np
import torch
from PIL import Image


def save_png(path: Union[str, Path], image: np.ndarray) -> None:
    """Quantize a float (H, W, 3) image in [0, 1] to RGB8 and write it as PNG."""
    quantized = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized).save(path, format="PNG", optimize=False)


def load_png(path: Union[str, Path]) -> np.ndarray:
    """Read a PNG as a float64 (H, W, 3) array in [0, 1]."""
    with Image.open(path) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.float64)
    return data / 255.0


def png_size(path: Union[str, Path]) -> tuple:
    """(width, height) of an image file without decoding its pixels."""
    with Image.open(path) as img:
        return img.size


def to_tensor(image: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(H, W, 3) array to a (3, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).to(dtype)


def to_array(image: torch.Tensor) -> np.ndarray:
    """(3, H, W) tensor to a float64 (H, W, 3) array."""
    return image.detach().cpu().to(torch.float64).permute(1, 2, 0).numpy()


def image_strip(images: Sequence[np.ndarray], rows: int = 1) -> np.ndarray:
    """Tile equally sized images into a grid with ``rows`` rows."""
    if not images:
        raise ValueError("image_strip needs at least one image")
    cols = -(-len(images) // rows)
    height, width, channels = images[0].shape
    grid = np.ones((rows * height, cols * width, channels))
    for index, image in enumerate(images):
        r, c = divmod(index, cols)
        grid[r * height:(r + 1) * height, c * width:(c + 1) * width] = image
    return grid
