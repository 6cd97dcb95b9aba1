"""Confusion-matrix metrics and one-vs-rest ROC AUC."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

AUC_NOTE = "AUC: one-vs-rest per class, trapezoidal ROC integration, macro-averaged over classes with both outcomes"


def confusion_matrix(y_true, y_pred, k: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.divide(a, b, out=np.zeros_like(a), where=b != 0)


def binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Area under the ROC curve by trapezoids over distinct score thresholds."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    P = positive.sum()
    N = positive.size - P
    if P == 0 or N == 0:
        return float("nan")
    order = np.argsort(-scores, kind="mergesort")
    s, pos = scores[order], positive[order]
    # last index of each run of tied scores is a threshold
    distinct = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(pos)[distinct]
    fps = (distinct + 1) - tps
    tpr = np.r_[0.0, tps / P]
    fpr = np.r_[0.0, fps / N]
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def macro_auc_ovr(y_true, scores: np.ndarray) -> tuple[float, list[float]]:
    y_true = np.asarray(y_true)
    per_class = [binary_auc(scores[:, c], y_true == c) for c in range(scores.shape[1])]
    defined = [a for a in per_class if not np.isnan(a)]
    return (float(np.mean(defined)) if defined else float("nan")), per_class


@dataclass
class MetricsReport:
    confusion: np.ndarray
    class_names: list[str]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    macro: dict[str, float]
    weighted: dict[str, float]
    auc: float = float("nan")
    auc_per_class: list[float] = field(default_factory=list)
    seconds_per_epoch: float | None = None

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    def summary(self) -> dict[str, float]:
        """Weighted-average row, matching how headline tables are reported."""
        return {
            "accuracy": self.accuracy,
            "precision": self.weighted["precision"],
            "recall": self.weighted["recall"],
            "f1": self.weighted["f1"],
            "auc": self.auc,
        }

    def to_dict(self) -> dict:
        return {
            "class_names": self.class_names,
            "confusion": self.confusion.tolist(),
            "per_class": {
                name: {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.support[i]),
                    "auc": None if np.isnan(self.auc_per_class[i]) else float(self.auc_per_class[i]),
                }
                for i, name in enumerate(self.class_names)
            },
            "accuracy": self.accuracy,
            "macro_avg": self.macro,
            "weighted_avg": self.weighted,
            "auc_macro_ovr": None if np.isnan(self.auc) else self.auc,
            "auc_definition": AUC_NOTE,
            "secs_per_epoch": self.seconds_per_epoch,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        w = max([len(c) for c in self.class_names] + [12])
        lines = [f"{'':<{w}} {'precision':>9} {'recall':>9} {'f1-score':>9} {'support':>8}"]
        for i, name in enumerate(self.class_names):
            lines.append(
                f"{name:<{w}} {self.precision[i]:>9.3f} {self.recall[i]:>9.3f} {self.f1[i]:>9.3f} {int(self.support[i]):>8d}"
            )
        lines.append("")
        lines.append(f"{'accuracy':<{w}} {'':>9} {'':>9} {self.accuracy:>9.3f} {self.n:>8d}")
        for label, row in (("macro avg", self.macro), ("weighted avg", self.weighted)):
            lines.append(
                f"{label:<{w}} {row['precision']:>9.3f} {row['recall']:>9.3f} {row['f1']:>9.3f} {self.n:>8d}"
            )
        lines.append(f"{'AUC (macro)':<{w}} {self.auc:>9.3f}")
        if self.seconds_per_epoch is not None:
            lines.append(f"{'secs/ep':<{w}} {self.seconds_per_epoch:>9.2f}")
        lines.append(f"# {AUC_NOTE}")
        return "\n".join(lines)

    def confusion_csv(self) -> str:
        head = "true\\pred," + ",".join(self.class_names)
        rows = [f"{name}," + ",".join(str(int(v)) for v in self.confusion[i]) for i, name in enumerate(self.class_names)]
        return "\n".join([head] + rows) + "\n"


def report_from_confusion(cm: np.ndarray, class_names: list[str] | None = None) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    k = cm.shape[0]
    names = class_names or [str(i) for i in range(k)]
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    total = cm.sum()
    accuracy = float(tp.sum() / total) if total else 0.0
    macro = {"precision": float(precision.mean()), "recall": float(recall.mean()), "f1": float(f1.mean())}
    wts = support / total if total else np.zeros(k)
    weighted = {
        "precision": float((precision * wts).sum()),
        "recall": float((recall * wts).sum()),
        "f1": float((f1 * wts).sum()),
    }
    return MetricsReport(cm, names, precision, recall, f1, support, accuracy, macro, weighted, auc_per_class=[float("nan")] * k)


def classification_report(y_true, probs: np.ndarray, class_names: list[str] | None = None) -> MetricsReport:
    """Full report from true labels and per-class scores (argmax gives predictions)."""
    probs = np.asarray(probs)
    k = probs.shape[1]
    y_pred = probs.argmax(axis=1)
    rep = report_from_confusion(confusion_matrix(y_true, y_pred, k), class_names)
    rep.auc, rep.auc_per_class = macro_auc_ovr(y_true, probs)
    return rep
