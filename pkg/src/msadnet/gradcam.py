"""Grad-CAM heatmaps and color overlays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data.image import resize_array
from .data.pnm import ImageBuffer
from .errors import ContractError
from .model import ModelGraph
from .tensor import Tensor

DEFAULT_TAP = "block5_conv"


def _jet_lut() -> np.ndarray:
    # piecewise-linear blue -> cyan -> yellow -> red ramp, 256 entries
    t = np.linspace(0.0, 1.0, 256)
    r = np.clip(1.5 - np.abs(4 * t - 3), 0, 1)
    g = np.clip(1.5 - np.abs(4 * t - 2), 0, 1)
    b = np.clip(1.5 - np.abs(4 * t - 1), 0, 1)
    return np.floor(np.stack([r, g, b], axis=1) * 255 + 0.5).astype(np.uint8)


COLORMAP = _jet_lut()


@dataclass
class Heatmap:
    values: np.ndarray  # (H, W) in [0, 1]
    tap: str
    target_class: int
    probs: np.ndarray | None = None
    raw: np.ndarray | None = None  # rectified map at tap resolution, before normalization

    def peak(self) -> tuple[int, int]:
        return tuple(int(v) for v in np.unravel_index(int(np.argmax(self.values)), self.values.shape))

    def to_image(self) -> ImageBuffer:
        return ImageBuffer(np.floor(self.values * 255 + 0.5).astype(np.uint8))


def gradcam(model: ModelGraph, image, target_class: int | None = None, tap: str = DEFAULT_TAP) -> Heatmap:
    """Class-discriminative localization map for one (1, C, H, W) input.

    Channel weights are spatial means of d(class logit)/d(tap activation);
    the map is ReLU of the weighted channel sum, bilinearly upsampled to the
    input size and divided by its maximum.
    """
    name = model.resolve_tap(tap)
    x = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=model.dtype)
    if x.ndim == 3:
        x = x[None]
    if x.shape[0] != 1:
        raise ContractError("gradcam takes a single image")
    model.zero_grad()
    probs = model.forward(Tensor(x), mode="infer")
    acts = model.activations
    k = probs.shape[1]
    if target_class is None:
        target_class = int(np.argmax(probs.data[0]))
    if not 0 <= target_class < k:
        raise ContractError(f"class index {target_class} out of range for {k} classes")
    A = acts[name]
    if A.ndim != 4:
        raise ContractError(f"tap {tap!r} has shape {A.shape}; Grad-CAM needs a spatial feature map")
    logits = acts["logits"]
    seed = np.zeros(logits.shape, dtype=logits.dtype)
    seed[0, target_class] = 1.0
    logits.backward(seed)
    grad = A.grad if A.grad is not None else np.zeros_like(A.data)
    model.zero_grad()
    model.activations = {}

    weights = grad[0].mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, A.data[0], axes=(0, 0)), 0.0).astype(np.float64)
    H, W = x.shape[2:]
    up = np.maximum(resize_array(cam, H, W), 0.0)
    peak = up.max()
    values = up / peak if peak > 0 else np.zeros_like(up)
    return Heatmap(values, tap, target_class, probs.data[0].copy(), cam)


def overlay(image: ImageBuffer, heatmap, alpha: float = 0.4) -> ImageBuffer:
    """Alpha-blend the color-mapped heatmap over the (grayscale-expanded) source."""
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    if values.shape != (image.height, image.width):
        raise ContractError(f"heatmap {values.shape} does not match image {image.height}x{image.width}")
    if not 0.0 <= alpha <= 1.0:
        raise ContractError("alpha must lie in [0, 1]")
    src = image.pixels.astype(np.float64)
    if image.channels == 1:
        src = np.repeat(src, 3, axis=2)
    idx = np.clip(np.floor(np.clip(values, 0, 1) * 255 + 0.5), 0, 255).astype(int)
    color = COLORMAP[idx].astype(np.float64)
    out = (1 - alpha) * src + alpha * color
    return ImageBuffer(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def peak_quadrant(values: np.ndarray) -> int:
    """0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right."""
    y, x = np.unravel_index(int(np.argmax(values)), values.shape)
    H, W = values.shape
    return int(y >= H / 2) * 2 + int(x >= W / 2)
