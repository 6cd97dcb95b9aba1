"""Dataset manifests: labeled folder trees, pre-split trees, synthetic sets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ContractError
from .image import prepare
from .pnm import load_pnm

IMAGE_SUFFIXES = {".pgm", ".ppm", ".pnm"}
PARTITION_ALIASES = {"train": "train", "valid": "valid", "val": "valid", "validation": "valid", "test": "test"}


class DatasetLayoutError(ContractError):
    pass


@dataclass
class SampleRecord:
    label: int
    path: str | None = None
    seed: int | None = None
    partition: str | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class DatasetManifest:
    class_names: list[str]
    records: list[SampleRecord]
    source: str  # "directoryTree" | "preSplitTree" | "synthetic"
    root: str | None = None

    def __post_init__(self):
        k = len(self.class_names)
        if any(not 0 <= r.label < k for r in self.records):
            raise ContractError("sample labels must index the class list")
        paths = [r.path for r in self.records if r.path is not None]
        if len(paths) != len(set(paths)):
            raise ContractError("duplicate sample paths in manifest")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=int)

    @property
    def pre_split(self) -> bool:
        return any(r.partition is not None for r in self.records)

    def partition_indices(self, name: str) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.partition == name]

    def to_json(self) -> str:
        return json.dumps(
            {
                "class_names": self.class_names,
                "source": self.source,
                "root": self.root,
                "records": [asdict(r) for r in self.records],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        doc = json.loads(text)
        return cls(doc["class_names"], [SampleRecord(**r) for r in doc["records"]], doc["source"], doc.get("root"))


def _images_in(d: Path) -> list[Path]:
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _class_dirs(d: Path) -> list[Path]:
    return sorted(p for p in d.iterdir() if p.is_dir() and not p.name.startswith("."))


def scan_dataset(root) -> DatasetManifest:
    """Detect a {class}/ tree or a {train,valid,test}/{class}/ tree under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetLayoutError(f"dataset root {root} is not a directory")
    subdirs = _class_dirs(root)
    if not subdirs:
        raise DatasetLayoutError(f"{root} has no class or partition subdirectories")
    names = {p.name.lower() for p in subdirs}
    if names & set(PARTITION_ALIASES):
        parts = {PARTITION_ALIASES[p.name.lower()]: p for p in subdirs if p.name.lower() in PARTITION_ALIASES}
        if set(parts) != {"train", "valid", "test"} or len(parts) != len(subdirs):
            raise DatasetLayoutError(
                f"{root}: a pre-split tree needs exactly train/valid/test directories, found {sorted(names)}"
            )
        classes = sorted({c.name for p in parts.values() for c in _class_dirs(p)})
        if not classes:
            raise DatasetLayoutError(f"{root}: partitions contain no class directories")
        records = []
        for part in ("train", "valid", "test"):
            for ci, cname in enumerate(classes):
                cdir = parts[part] / cname
                files = _images_in(cdir) if cdir.is_dir() else []
                if not files:
                    raise DatasetLayoutError(f"empty class directory {cdir}")
                records += [SampleRecord(ci, str(f), partition=part) for f in files]
        return DatasetManifest(classes, records, "preSplitTree", str(root))
    classes = [p.name for p in subdirs]
    records = []
    for ci, cdir in enumerate(subdirs):
        files = _images_in(cdir)
        if not files:
            raise DatasetLayoutError(f"empty class directory {cdir}")
        records += [SampleRecord(ci, str(f)) for f in files]
    return DatasetManifest(classes, records, "directoryTree", str(root))


@dataclass
class Dataset:
    """Decoded, resized images held in memory alongside their manifest."""

    x: np.ndarray  # (N, C, H, W) in [0, 1]
    y: np.ndarray  # (N,)
    manifest: DatasetManifest

    @property
    def class_names(self) -> list[str]:
        return self.manifest.class_names

    def __len__(self) -> int:
        return len(self.y)


def load_dataset(manifest: DatasetManifest, size: int, channels: int, dtype=np.float32) -> Dataset:
    arrays = []
    for r in manifest.records:
        if r.path is None:
            raise ContractError("synthetic records must be materialized before loading")
        arrays.append(prepare(load_pnm(r.path), size, channels, dtype)[0])
    return Dataset(np.stack(arrays), manifest.labels, manifest)
