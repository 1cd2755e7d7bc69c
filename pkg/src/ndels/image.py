"""Image representation and basic plumbing.

An image is a float64 numpy array of shape (H, W, 3) with values in [0, 1].
All public functions in this package accept and return images in that form;
8-bit files are converted on load/save by dividing/multiplying by 255 with
round-half-up.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (H, W, 3) float contract and return the array as float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name}: expected (H, W, 3) array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name}: empty image {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def clip01(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Read a PNG/JPEG file into a float64 [0, 1] RGB array."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write an image as 8-bit PNG/JPEG (round-half-up quantization)."""
    arr = validate_image(img)
    q = np.floor(clip01(arr) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path)


def resize(img: np.ndarray, width: int, height: int) -> np.ndarray:
    """Center-aligned bilinear resampling to (height, width)."""
    arr = validate_image(img)
    if width < 1 or height < 1:
        raise ValueError(f"target size must be >= 1, got {width}x{height}")
    h, w = arr.shape[:2]
    if (h, w) == (height, width):
        return arr.copy()
    out = _resample_axis(arr, height, axis=0)
    out = _resample_axis(out, width, axis=1)
    return clip01(out)


def _resample_axis(arr: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = arr.shape[axis]
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    lo = np.clip(np.floor(src).astype(int), 0, n_in - 1)
    hi = np.clip(lo + 1, 0, n_in - 1)
    frac = np.clip(src - lo, 0.0, 1.0)
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, hi, axis=axis)
    shape = [1, 1, 1]
    shape[axis] = n_out
    f = frac.reshape(shape)
    return a * (1.0 - f) + b * f
