"""Stratified train/validation/test splits and k-fold plans."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

PARTITIONS = ("train", "valid", "test")


@dataclass
class SplitPlan:
    train: list[int]
    valid: list[int]
    test: list[int]
    weights: tuple[float, ...] = ()
    class_counts: dict[str, list[int]] = field(default_factory=dict)

    def partitions(self) -> dict[str, list[int]]:
        return {"train": self.train, "valid": self.valid, "test": self.test}

    def to_dict(self) -> dict:
        return {
            "train": list(map(int, self.train)),
            "valid": list(map(int, self.valid)),
            "test": list(map(int, self.test)),
            "weights": list(self.weights),
            "class_counts": self.class_counts,
        }


def _largest_remainder(n: int, weights: np.ndarray) -> np.ndarray:
    """Integer allocation of n items proportional to normalized weights."""
    quotas = n * weights
    alloc = np.floor(quotas).astype(int)
    rest = n - alloc.sum()
    # ties go to the earlier partition
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[:rest]:
        alloc[i] += 1
    return alloc


def _normalize(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or np.any(w < 0) or w.sum() <= 0:
        raise ContractError(f"split weights must be non-negative with a positive sum; got {weights}")
    return w / w.sum()


def _class_groups(labels: np.ndarray) -> dict[int, np.ndarray]:
    return {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}


def stratified_split(labels, weights=(6, 2, 1), seed: int = 0, min_per_class: int | None = None) -> SplitPlan:
    """Per-class largest-remainder allocation into train/valid/test.

    ``weights`` are normalized first, so (60, 20, 10) behaves like (6, 2, 1).
    A two-entry weight tuple yields an empty test partition.
    """
    labels = np.asarray(labels)
    w = _normalize(weights)
    if len(w) not in (2, 3):
        raise ContractError("weights must have 2 or 3 entries (train, valid[, test])")
    need = len(w) if min_per_class is None else min_per_class
    groups = _class_groups(labels)
    short = {c: len(ix) for c, ix in groups.items() if len(ix) < need}
    if short:
        raise ContractError(f"classes with fewer than {need} samples: {short}")
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[], [], []]
    counts = {}
    for c, idx in groups.items():
        idx = idx[rng.permutation(len(idx))]
        alloc = _largest_remainder(len(idx), w)
        counts[str(c)] = [int(a) for a in alloc] + ([0] if len(w) == 2 else [])
        start = 0
        for p, a in enumerate(alloc):
            parts[p].extend(int(i) for i in idx[start : start + a])
            start += a
    return SplitPlan(sorted(parts[0]), sorted(parts[1]), sorted(parts[2]), tuple(w), counts)


def kfold_plans(labels, k: int = 5, seed: int = 0, train_valid_weights=(6, 2)) -> list[SplitPlan]:
    """k stratified test folds covering every sample exactly once.

    Samples of each class are shuffled, then dealt to folds round-robin with
    a counter that carries over between classes, so fold sizes differ by at
    most one overall and per class. The remainder of each fold is split into
    train/valid by ``train_valid_weights``.
    """
    if k < 2:
        raise ContractError("k-fold cross-validation needs k >= 2")
    labels = np.asarray(labels)
    groups = _class_groups(labels)
    short = {c: len(ix) for c, ix in groups.items() if len(ix) < k}
    if short:
        raise ContractError(f"classes with fewer than k={k} samples: {short}")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    counter = 0
    for c, idx in groups.items():
        for i in idx[rng.permutation(len(idx))]:
            folds[counter % k].append(int(i))
            counter += 1
    plans = []
    all_idx = np.arange(len(labels))
    for f, test in enumerate(folds):
        test_set = np.zeros(len(labels), dtype=bool)
        test_set[test] = True
        rest = all_idx[~test_set]
        sub = stratified_split(labels[rest], weights=train_valid_weights, seed=seed + 1000 + f, min_per_class=1)
        train = sorted(int(rest[i]) for i in sub.train)
        valid = sorted(int(rest[i]) for i in sub.valid)
        counts = {
            str(c): [
                int(np.sum(labels[train] == c)),
                int(np.sum(labels[valid] == c)),
                int(np.sum(labels[test] == c)),
            ]
            for c in groups
        }
        plans.append(SplitPlan(train, valid, sorted(test), tuple(_normalize(train_valid_weights)), counts))
    return plans
