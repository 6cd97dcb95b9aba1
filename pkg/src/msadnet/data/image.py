from __future__ import annotations

import numpy as np

from .pnm import ImageBuffer


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centers: output pixel i samples input coordinate (i + 0.5) * scale - 0.5
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_array(a: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of the first two axes of a float array."""
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError("cannot resize an empty image")
    a = np.asarray(a, dtype=np.float64)
    y0, y1, fy = _axis_weights(a.shape[0], height)
    x0, x1, fx = _axis_weights(a.shape[1], width)
    extra = (None,) * (a.ndim - 2)
    fy = fy[(slice(None), None) + extra]
    fx = fx[(None, slice(None)) + extra]
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bottom = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_bilinear(img: ImageBuffer, height: int = 224, width: int = 224) -> ImageBuffer:
    if img.height == height and img.width == width:
        return ImageBuffer(img.pixels.copy())
    out = resize_array(img.pixels.astype(np.float64), height, width)
    return ImageBuffer(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def to_tensor(img: ImageBuffer, channels: int | None = None, dtype=np.float32) -> np.ndarray:
    """(1, C, H, W) array scaled to [0, 1]; grayscale is replicated when ``channels`` asks for 3."""
    px = img.pixels.astype(np.float64) / 255.0
    arr = px.transpose(2, 0, 1)[None]
    if channels is not None and channels != arr.shape[1]:
        if arr.shape[1] == 1 and channels == 3:
            arr = np.repeat(arr, 3, axis=1)
        elif arr.shape[1] == 3 and channels == 1:
            arr = arr.mean(axis=1, keepdims=True)
        else:
            raise ValueError(f"cannot map {arr.shape[1]} channels to {channels}")
    return arr.astype(dtype)


def from_tensor(arr: np.ndarray) -> ImageBuffer:
    """Inverse of :func:`to_tensor` for a single (1, C, H, W) or (C, H, W) array."""
    a = np.asarray(arr)
    if a.ndim == 4:
        a = a[0]
    px = np.clip(np.floor(a.transpose(1, 2, 0).astype(np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    return ImageBuffer(px)


def prepare(img: ImageBuffer, size: int, channels: int, dtype=np.float32) -> np.ndarray:
    """Resize to size x size and convert to a (1, C, size, size) model input."""
    return to_tensor(resize_bilinear(img, size, size), channels=channels, dtype=dtype)
