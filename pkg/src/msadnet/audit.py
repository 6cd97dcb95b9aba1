"""Closed-form trainable-parameter counts, checked against built tensors."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import AuditError
from .model import ModelGraph


def count_conv(f0: int, f1: int, k: int = 3) -> int:
    """k x k convolution from f0 to f1 channels, with bias."""
    return (k * k * f0 + 1) * f1


def count_conv1x1(f0: int, f1x1: int) -> int:
    return (f0 + 1) * f1x1


def count_sandwich(f0: int, f1x1: int, f1: int) -> tuple[int, int, int]:
    """(with 1x1 bottleneck, without, savings) for a f0 -> [f1x1] -> f1 3x3 stage."""
    with_bottleneck = count_conv(f1x1, f1, 3) + count_conv1x1(f0, f1x1)
    without = count_conv(f0, f1, 3)
    return with_bottleneck, without, without - with_bottleneck


def count_dwsc_paper(channels: int) -> int:
    """Simplified depthwise-separable count (3^2 * 1 + 1) * C used for conformance checks."""
    if channels < 1:
        raise ValueError("channel count must be >= 1")
    return (3**2 * 1 + 1) * channels


def count_dwsc_full(channels: int, filters: int, k: int) -> int:
    """Depthwise k x k planes (no bias) plus a biased pointwise stage."""
    return k * k * channels + (channels + 1) * filters


def count_batchnorm(channels: int) -> int:
    return 2 * channels


@dataclass
class LayerEntry:
    layer: str
    kind: str
    path: str
    closed_form: int
    actual: int

    @property
    def ok(self) -> bool:
        return self.closed_form == self.actual


@dataclass
class ParamReport:
    entries: list[LayerEntry]
    block_totals: dict[str, int]
    sandwiches: dict[str, dict[str, int]]
    conformance: dict[str, int] = field(default_factory=dict)

    @property
    def grand_total(self) -> int:
        return sum(e.actual for e in self.entries)

    @property
    def closed_form_total(self) -> int:
        return sum(e.closed_form for e in self.entries)

    @property
    def mismatches(self) -> list[LayerEntry]:
        return [e for e in self.entries if not e.ok]

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def path_total(self, path: str) -> int:
        return sum(e.actual for e in self.entries if e.path == path)

    def to_json(self) -> str:
        doc = {
            "layers": [
                {"layer": e.layer, "kind": e.kind, "path": e.path, "closed_form": e.closed_form, "actual": e.actual}
                for e in self.entries
            ],
            "block_totals": self.block_totals,
            "sandwiches": self.sandwiches,
            "conformance": self.conformance,
            "grand_total": self.grand_total,
            "closed_form_total": self.closed_form_total,
            "ok": self.ok,
        }
        return json.dumps(doc, indent=2)

    def to_text(self) -> str:
        w = max([len(e.layer) for e in self.entries] + [5])
        lines = [f"{'layer':<{w}}  {'kind':<13} {'closed_form':>12} {'actual':>10}"]
        for e in self.entries:
            flag = "" if e.ok else "  MISMATCH"
            lines.append(f"{e.layer:<{w}}  {e.kind:<13} {e.closed_form:>12,} {e.actual:>10,}{flag}")
        lines.append("")
        lines.append("per-block totals:")
        for blk, n in self.block_totals.items():
            lines.append(f"  {blk:<8} {n:>10,}")
        lines.append(f"grand total: {self.grand_total:,} trainable parameters")
        for name, s in self.sandwiches.items():
            lines.append(
                f"{name} 1x1 sandwich: with bottleneck {s['with_bottleneck']:,}, "
                f"without {s['without_bottleneck']:,}, saved {s['savings']:,}"
            )
        if self.conformance:
            lines.append("simplified DWSC counts (10*C): " + ", ".join(f"{k}={v:,}" for k, v in self.conformance.items()))
        lines.append("audit: " + ("PASS" if self.ok else f"FAIL ({len(self.mismatches)} mismatches)"))
        return "\n".join(lines)


def closed_form_count(node) -> int:
    s = node.spec
    C = node.in_channels
    if s.kind in ("conv3x3", "conv5x5", "dilconv"):
        return count_conv(C, s.filters, s.kernel)
    if s.kind == "conv1x1":
        return count_conv1x1(C, s.filters)
    if s.kind == "dwsc":
        return count_dwsc_full(C, s.filters, s.kernel)
    if s.kind == "batchnorm":
        return count_batchnorm(C)
    if s.kind == "dense_softmax":
        return count_conv1x1(C, s.filters)
    return 0


def _block_of(name: str) -> str:
    head = name.split(".")[0]
    return {"classifier": "head", "concat": "head", "gap": "head"}.get(head, head)


def audit(model: ModelGraph, strict: bool = True) -> ParamReport:
    """Per-layer closed-form vs actual counts; raises AuditError on mismatch when ``strict``."""
    entries = []
    for node in model.nodes:
        if not node.params:
            continue
        entries.append(LayerEntry(node.name, node.spec.kind, node.spec.path, closed_form_count(node), node.param_count()))
    totals: dict[str, int] = {}
    for e in entries:
        blk = _block_of(e.layer)
        totals[blk] = totals.get(blk, 0) + e.actual

    sandwiches = {}
    conformance = {}
    for prefix in ("b4", "b5"):
        first = f"{prefix}.s1.conv3x3"
        bottleneck = f"{prefix}.s2.conv1x1"
        second = f"{prefix}.s3.conv3x3"
        try:
            n1, nb, n2 = model.node(first), model.node(bottleneck), model.node(second)
        except KeyError:
            continue
        w, wo, sv = count_sandwich(n1.spec.filters, nb.spec.filters, n2.spec.filters)
        sandwiches[prefix] = {
            "f0": n1.spec.filters,
            "f1x1": nb.spec.filters,
            "f1": n2.spec.filters,
            "with_bottleneck": w,
            "without_bottleneck": wo,
            "savings": sv,
        }
    for node in model.nodes:
        if node.spec.kind == "dwsc":
            conformance[node.name] = count_dwsc_paper(node.in_channels)

    report = ParamReport(entries, totals, sandwiches, conformance)
    if strict and not report.ok:
        bad = report.mismatches[0]
        raise AuditError(
            f"layer {bad.layer} ({bad.kind}): closed form {bad.closed_form} != actual {bad.actual}"
        )
    return report


__all__ = [
    "LayerEntry",
    "ParamReport",
    "audit",
    "closed_form_count",
    "count_batchnorm",
    "count_conv",
    "count_conv1x1",
    "count_dwsc_full",
    "count_dwsc_paper",
    "count_sandwich",
]
