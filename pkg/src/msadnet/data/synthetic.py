"""Desk-scale stand-in for labeled CT slices.

Each image is a noisy, smoothly shaded background with one class-specific
structure placed in a random quadrant (recorded as ``meta["quadrant"]``) and
one faint class-agnostic distractor spot elsewhere. Class structures:

* class 0: a cluster of small bright blobs
* class 1: a thin ring
* classes 2+: a disk of parallel streaks, one orientation per class
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .dataset import Dataset, DatasetManifest, SampleRecord
from .image import to_tensor
from .pnm import ImageBuffer, save_pnm

QUADRANTS = ("top-left", "top-right", "bottom-left", "bottom-right")


@dataclass
class ClassStyle:
    pattern: str  # "blobs" | "ring" | "streaks"
    count: tuple[int, int] = (1, 1)
    radius: tuple[float, float] = (0.08, 0.12)  # fractions of image size
    orientation: float = 0.0  # radians, streak direction


@dataclass
class SyntheticSpec:
    num_classes: int = 4
    images_per_class: int = 40
    image_size: int = 112
    noise: float = 10.0
    contrast: float = 110.0
    distractor: bool = True
    seed: int = 0
    class_names: list[str] | None = None
    styles: list[ClassStyle] = field(default_factory=list)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("synthetic data needs at least 2 classes")
        if self.images_per_class < 1:
            raise ConfigError("images_per_class must be >= 1")
        if self.image_size < 16:
            raise ConfigError("image_size must be >= 16")
        if not self.styles:
            self.styles = default_styles(self.num_classes)
        self.styles = [s if isinstance(s, ClassStyle) else ClassStyle(**s) for s in self.styles]
        if len(self.styles) != self.num_classes:
            raise ConfigError("one style per class is required")
        if self.class_names is None:
            self.class_names = [f"class{c}_{s.pattern}" for c, s in enumerate(self.styles)]

    def to_dict(self) -> dict:
        return asdict(self)


def default_styles(k: int) -> list[ClassStyle]:
    styles = [ClassStyle("blobs", count=(3, 5), radius=(0.025, 0.04)), ClassStyle("ring", radius=(0.08, 0.11))]
    n_streak = k - 2
    for i in range(n_streak):
        styles.append(ClassStyle("streaks", radius=(0.11, 0.14), orientation=math.pi * i / max(n_streak, 1)))
    return styles[:k]


def _background(rng: np.random.Generator, n: int, noise: float) -> np.ndarray:
    yy, xx = np.mgrid[0:n, 0:n] / n
    img = np.full((n, n), 60.0)
    for _ in range(3):
        cy, cx = rng.uniform(0, 1, 2)
        s = rng.uniform(0.25, 0.5)
        img += rng.uniform(-15, 15) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return img + rng.normal(0, noise, (n, n))


def _structure(rng, style: ClassStyle, n: int, cy: float, cx: float) -> np.ndarray:
    """Unit-amplitude class structure centered at (cy, cx) in pixel units."""
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    out = np.zeros((n, n))
    if style.pattern == "blobs":
        count = int(rng.integers(style.count[0], style.count[1] + 1))
        spread = 0.09 * n
        for _ in range(count):
            r = rng.uniform(*style.radius) * n
            by, bx = cy + rng.uniform(-spread, spread), cx + rng.uniform(-spread, spread)
            out = np.maximum(out, np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2 * r * r)))
    elif style.pattern == "ring":
        r = rng.uniform(*style.radius) * n
        width = 0.018 * n
        d = np.hypot(yy - cy, xx - cx)
        out = np.exp(-((d - r) ** 2) / (2 * width * width))
    elif style.pattern == "streaks":
        r = rng.uniform(*style.radius) * n
        period = 0.06 * n
        theta = style.orientation
        # phase runs perpendicular to the streak direction
        across = -(xx - cx) * math.sin(theta) + (yy - cy) * math.cos(theta)
        grating = 0.5 * (1 + np.cos(2 * math.pi * across / period + rng.uniform(0, 2 * math.pi)))
        d = np.hypot(yy - cy, xx - cx)
        envelope = 1.0 / (1.0 + np.exp((d - r) / (0.01 * n)))
        out = grating * envelope
    else:
        raise ConfigError(f"unknown synthetic pattern {style.pattern!r}")
    return out


def render(spec: SyntheticSpec, label: int, index: int) -> tuple[ImageBuffer, dict]:
    """Deterministically render one image of class ``label``."""
    rng = np.random.default_rng([spec.seed, label, index])
    n = spec.image_size
    img = _background(rng, n, spec.noise)
    q = int(rng.integers(4))
    qy, qx = divmod(q, 2)
    jitter = n / 20
    cy = (qy + 0.5) * n / 2 + rng.uniform(-jitter, jitter)
    cx = (qx + 0.5) * n / 2 + rng.uniform(-jitter, jitter)
    img += spec.contrast * _structure(rng, spec.styles[label], n, cy, cx)
    meta = {"quadrant": q, "center": [float(cy), float(cx)]}
    if spec.distractor:
        dq = (q + int(rng.integers(1, 4))) % 4
        dy, dx = divmod(dq, 2)
        sy = (dy + 0.5) * n / 2 + rng.uniform(-jitter, jitter)
        sx = (dx + 0.5) * n / 2 + rng.uniform(-jitter, jitter)
        r = 0.06 * n
        yy, xx = np.mgrid[0:n, 0:n]
        img += 0.35 * spec.contrast * np.exp(-((yy - sy) ** 2 + (xx - sx) ** 2) / (2 * r * r))
        meta["distractor_quadrant"] = dq
    px = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    return ImageBuffer(px), meta


def generate_synthetic(spec: SyntheticSpec, self_test: bool = True) -> tuple[DatasetManifest, list[ImageBuffer]]:
    """Render the whole set in class-major order; optionally verify learnability."""
    images, records = [], []
    for c in range(spec.num_classes):
        for i in range(spec.images_per_class):
            img, meta = render(spec, c, i)
            images.append(img)
            records.append(SampleRecord(c, seed=spec.seed, meta={"index": i, **meta}))
    manifest = DatasetManifest(list(spec.class_names), records, "synthetic")
    if self_test:
        acc = pixel_statistics_baseline(images, manifest.labels)
        if acc < 2.0 / spec.num_classes:
            raise ConfigError(
                f"synthetic set failed its learnability self-test: baseline accuracy {acc:.3f} "
                f"< {2.0 / spec.num_classes:.3f}"
            )
    return manifest, images


def image_features(img: ImageBuffer) -> np.ndarray:
    """Translation-invariant pixel statistics used by the baseline classifier."""
    a = img.pixels[:, :, 0].astype(np.float64)
    dy = np.abs(np.diff(a, axis=0)).mean()
    dx = np.abs(np.diff(a, axis=1)).mean()
    hi = np.percentile(a, 99)
    return np.array([a.mean(), a.std(), dx, dy, dx - dy, hi, (a > hi * 0.8).mean()])


def pixel_statistics_baseline(images: list[ImageBuffer], labels) -> float:
    """Nearest-centroid accuracy on standardized pixel statistics (resubstitution)."""
    labels = np.asarray(labels)
    feats = np.stack([image_features(im) for im in images])
    mu, sd = feats.mean(axis=0), feats.std(axis=0)
    feats = (feats - mu) / np.where(sd > 0, sd, 1)
    classes = np.unique(labels)
    centroids = np.stack([feats[labels == c].mean(axis=0) for c in classes])
    d = ((feats[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    pred = classes[d.argmin(axis=1)]
    return float((pred == labels).mean())


def materialize(manifest: DatasetManifest, images: list[ImageBuffer], out_dir) -> DatasetManifest:
    """Write one PGM per sample under ``out_dir/<class>/`` plus ``manifest.json``."""
    out = Path(out_dir)
    records = []
    for rec, img in zip(manifest.records, images):
        cdir = out / manifest.class_names[rec.label]
        cdir.mkdir(parents=True, exist_ok=True)
        path = cdir / f"{manifest.class_names[rec.label]}_{rec.meta['index']:04d}.pgm"
        save_pnm(path, img)
        records.append(SampleRecord(rec.label, str(path), rec.seed, rec.partition, dict(rec.meta)))
    written = DatasetManifest(manifest.class_names, records, "synthetic", str(out))
    (out / "manifest.json").write_text(written.to_json())
    return written


def synthetic_dataset(spec: SyntheticSpec, channels: int = 1, dtype=np.float32, self_test: bool = True) -> Dataset:
    manifest, images = generate_synthetic(spec, self_test=self_test)
    x = np.stack([to_tensor(im, channels=channels, dtype=dtype)[0] for im in images])
    return Dataset(x, manifest.labels, manifest)
