"""Image loading and model-declared preprocessing."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConvadError
from .kernels import DTYPE, Tensor


def load_image(path: str | Path, input_shape: tuple[int, int, int],
               preprocessing: dict | None = None) -> Tensor:
    """Read a PNG/PPM image into a (C,H,W) float32 tensor in [0, 1].

    The image is resized to the model's spatial dims when needed, and
    channel mean/std from the manifest preprocessing block are applied
    if present.
    """
    c, h, w = input_shape
    try:
        with Image.open(path) as im:
            im = im.convert("L" if c == 1 else "RGB")
            if im.size != (w, h):
                im = im.resize((w, h), Image.BILINEAR)
            arr = np.asarray(im, dtype=DTYPE) / DTYPE(255.0)
    except (OSError, ValueError) as exc:
        raise ConvadError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return normalize(arr, preprocessing)


def normalize(x: Tensor, preprocessing: dict | None) -> Tensor:
    if not preprocessing:
        return x.astype(DTYPE)
    mean = np.asarray(preprocessing.get("mean", 0.0), dtype=DTYPE).reshape(-1, 1, 1)
    std = np.asarray(preprocessing.get("std", 1.0), dtype=DTYPE).reshape(-1, 1, 1)
    return ((x - mean) / std).astype(DTYPE)


def save_image(path: str | Path, x: Tensor) -> None:
    """Write a (C,H,W) tensor in [0,1] as PNG (grayscale or RGB)."""
    arr = np.clip(np.asarray(x, dtype=DTYPE), 0.0, 1.0)
    data = (arr * 255).round().astype(np.uint8)
    if data.shape[0] == 1:
        Image.fromarray(data[0], mode="L").save(path)
    else:
        Image.fromarray(data.transpose(1, 2, 0), mode="RGB").save(path)
