"""Training loop, evaluation and k-fold cross-validation."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import ops
from .checkpoint import save_checkpoint
from .data.dataset import Dataset
from .errors import ConfigError, TrainingDiverged
from .metrics import MetricsReport, classification_report
from .model import ModelConfig, ModelGraph, build_msadnet
from .optim import Adam, Schedule, lr_at
from .splits import SplitPlan, kfold_plans

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 16
    base_lr: float = 1e-4
    schedule: str = "fixed"  # "fixed" | "adaptive"
    flat_epochs: int = 7
    decay: float = 0.95
    epochs: int = 35
    early_stopping: bool = False
    patience: int = 5
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    split_weights: tuple[float, ...] = (6, 2, 1)
    seed: int = 0

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        self.split_weights = tuple(self.split_weights)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        self.lr_schedule()

    def lr_schedule(self) -> Schedule:
        try:
            return Schedule(self.schedule, self.base_lr, self.flat_epochs, self.decay, self.epochs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float
    secs: float


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr", "secs")

    @property
    def seconds_per_epoch(self) -> float:
        return float(np.mean([e.secs for e in self.epochs])) if self.epochs else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for e in self.epochs:
            w.writerow([e.epoch] + [repr(float(getattr(e, c))) for c in self.COLUMNS[1:]])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "epochs": [asdict(e) for e in self.epochs],
                "best_epoch": self.best_epoch,
                "stopped_early": self.stopped_early,
                "secs_per_epoch": self.seconds_per_epoch,
            },
            indent=2,
        )


def _batches(indices: np.ndarray, size: int):
    for i in range(0, len(indices), size):
        yield indices[i : i + size]


def _loss_and_acc(probs: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    p = np.clip(probs[np.arange(len(labels)), labels], ops.CCE_EPS, 1.0)
    return float(-np.log(p).mean()), float((probs.argmax(axis=1) == labels).mean())


def train_step(model: ModelGraph, opt: Adam, xb: np.ndarray, yb: np.ndarray, lr: float) -> tuple[float, np.ndarray]:
    """One forward/backward/Adam update; returns (loss, training-mode probabilities)."""
    k = model.config.num_classes
    probs = model.forward(xb, mode="train")
    loss = ops.cce_loss(probs, ops.one_hot(yb, k, dtype=model.dtype))
    value = loss.item()
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite training loss {value}")
    loss.backward()
    model.activations = {}
    opt.step(lr)
    opt.zero_grad()
    return value, probs.data


def fit(
    model: ModelGraph,
    dataset: Dataset,
    plan: SplitPlan,
    cfg: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    checkpoint_path=None,
    max_steps: int | None = None,
) -> History:
    """Train in place. With early stopping the best-validation parameters are restored.

    ``checkpoint_path`` receives the latest finite-loss state after every
    epoch, so a diverged run leaves its last good checkpoint behind.
    """
    schedule = cfg.lr_schedule()
    opt = Adam(model.parameters(), betas=cfg.adam_betas, eps=cfg.adam_eps)
    x, y = dataset.x, dataset.y
    train_idx = np.asarray(plan.train, dtype=int)
    valid_idx = np.asarray(plan.valid, dtype=int)
    if len(train_idx) == 0:
        raise ConfigError("the split plan has no training samples")
    hist = History()
    best_loss, best_state, since_best = np.inf, None, 0
    last_good = model.state_dict()
    steps = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_at(schedule, epoch)
        order = train_idx[np.random.default_rng([cfg.seed, epoch]).permutation(len(train_idx))]
        tot_loss = tot_correct = 0.0
        seen = 0
        try:
            for bidx in _batches(order, cfg.batch_size):
                loss, probs = train_step(model, opt, x[bidx], y[bidx], lr)
                tot_loss += loss * len(bidx)
                tot_correct += float((probs.argmax(axis=1) == y[bidx]).sum())
                seen += len(bidx)
                steps += 1
                if max_steps is not None and steps >= max_steps:
                    break
        except FloatingPointError as exc:
            model.load_state_dict(last_good)
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, model)
            raise TrainingDiverged(f"training diverged in epoch {epoch}: {exc}", hist) from exc
        if len(valid_idx):
            val_loss, val_acc = _loss_and_acc(model.predict_proba(x[valid_idx], cfg.batch_size), y[valid_idx])
        else:
            val_loss, val_acc = float("nan"), float("nan")
        rec = EpochRecord(epoch, tot_loss / seen, tot_correct / seen, val_loss, val_acc, lr, time.perf_counter() - t0)
        hist.epochs.append(rec)
        last_good = model.state_dict()
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, model)
        log.info(
            "epoch %d  loss %.4f acc %.3f  val_loss %.4f val_acc %.3f  lr %.3g  %.1fs",
            epoch, rec.train_loss, rec.train_acc, val_loss, val_acc, lr, rec.secs,
        )
        if on_epoch is not None:
            on_epoch(rec)
        if cfg.early_stopping and len(valid_idx):
            if val_loss < best_loss:
                best_loss, best_state, since_best = val_loss, model.state_dict(), 0
                hist.best_epoch = epoch
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    hist.stopped_early = True
                    break
        if max_steps is not None and steps >= max_steps:
            break
    if cfg.early_stopping and best_state is not None:
        model.load_state_dict(best_state)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, model)
    return hist


def evaluate(
    model: ModelGraph, dataset: Dataset, indices=None, batch_size: int = 32, seconds_per_epoch: float | None = None
) -> MetricsReport:
    idx = np.arange(len(dataset)) if indices is None else np.asarray(indices, dtype=int)
    probs = model.predict_proba(dataset.x[idx], batch_size)
    rep = classification_report(dataset.y[idx], probs, dataset.class_names)
    rep.seconds_per_epoch = seconds_per_epoch
    return rep


METRIC_KEYS = ("accuracy", "precision", "recall", "f1", "auc")
METRIC_LABELS = {"accuracy": "Accuracy", "precision": "Precision", "recall": "Recall", "f1": "F1", "auc": "AUC"}


@dataclass
class CrossValResult:
    reports: list[MetricsReport]
    plans: list[SplitPlan]
    histories: list[History]

    def rows(self) -> list[dict[str, float]]:
        return [r.summary() for r in self.reports]

    def mean_std(self) -> tuple[dict[str, float], dict[str, float]]:
        return summarize_folds(self.rows())

    def to_text(self) -> str:
        mean, std = self.mean_std()
        head = f"{'folds':<12}" + "".join(f"{METRIC_LABELS[k]:>11}" for k in METRIC_KEYS)
        lines = [head, "-" * len(head)]
        for i, row in enumerate(self.rows(), start=1):
            lines.append(f"{'fold' + str(i):<12}" + "".join(f"{row[k]:>11.3f}" for k in METRIC_KEYS))
        lines.append("-" * len(head))
        lines.append(f"{'Mean':<12}" + "".join(f"{mean[k]:>11.3f}" for k in METRIC_KEYS))
        lines.append(f"{'Std':<12}" + "".join(f"{'± ' + format(std[k], '.3f'):>11}" for k in METRIC_KEYS))
        lines.append("(weighted averages; std is the sample standard deviation over folds)")
        return "\n".join(lines)

    def to_csv(self) -> str:
        mean, std = self.mean_std()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("fold",) + METRIC_KEYS)
        for i, row in enumerate(self.rows(), start=1):
            w.writerow([f"fold{i}"] + [repr(row[k]) for k in METRIC_KEYS])
        w.writerow(["mean"] + [repr(mean[k]) for k in METRIC_KEYS])
        w.writerow(["std"] + [repr(std[k]) for k in METRIC_KEYS])
        return buf.getvalue()

    def to_json(self) -> str:
        mean, std = self.mean_std()
        return json.dumps(
            {"folds": self.rows(), "mean": mean, "std": std, "plans": [p.to_dict() for p in self.plans]}, indent=2
        )


def summarize_folds(rows: list[dict[str, float]]) -> tuple[dict[str, float], dict[str, float]]:
    """Per-metric mean and sample (ddof=1) standard deviation."""
    mean, std = {}, {}
    for k in METRIC_KEYS:
        vals = np.array([r[k] for r in rows], dtype=np.float64)
        mean[k] = float(vals.mean())
        std[k] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return mean, std


def crossval(
    model_config: ModelConfig,
    dataset: Dataset,
    k: int = 5,
    train_cfg: TrainConfig | None = None,
    on_fold: Callable[[int, MetricsReport], None] | None = None,
) -> CrossValResult:
    """Train one freshly initialized model per stratified fold and test on that fold."""
    train_cfg = train_cfg or TrainConfig()
    plans = kfold_plans(dataset.y, k=k, seed=train_cfg.seed, train_valid_weights=train_cfg.split_weights[:2])
    reports, histories = [], []
    for f, plan in enumerate(plans):
        model = build_msadnet(model_config.replace(seed=model_config.seed + f))
        cfg = TrainConfig.from_dict({**train_cfg.to_dict(), "seed": train_cfg.seed + f})
        hist = fit(model, dataset, plan, cfg)
        rep = evaluate(model, dataset, plan.test, seconds_per_epoch=hist.seconds_per_epoch)
        reports.append(rep)
        histories.append(hist)
        if on_fold is not None:
            on_fold(f + 1, rep)
    return CrossValResult(reports, plans, histories)


def write_history(hist: History, out_dir) -> None:
    out = Path(out_dir)
    (out / "history.csv").write_text(hist.to_csv())
    (out / "history.json").write_text(hist.to_json())
