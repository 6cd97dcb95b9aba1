"""Command-line entry point: params | train | eval | crossval | gradcam | synth.

Configuration is one JSON document with optional sections::

    {
      "model":     {... ModelConfig fields ...},
      "train":     {... TrainConfig fields ...},
      "data":      {"root": null, "channels": null},
      "synthetic": {... SyntheticSpec fields ...},
      "crossval":  {"k": 5},
      "gradcam":   {"tap": "block5_conv", "alpha": 0.4}
    }

Resolution order: built-in defaults, the ``--config`` file, ``--seed``
(applied to every seeded section), subcommand flags, then each
``--override key=value`` in order. Override keys are either dotted
(``train.base_lr=1e-3``) or bare when the name is unique across sections
(``enable_sam=false``). Values are parsed as JSON, falling back to a plain
string. Every run writes the fully resolved document to
``<out>/resolved_config.json``; passing that file back as ``--config``
reproduces the run.

Exit codes: 0 success, 1 contract or validation failure, 2 I/O or parse failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any

import numpy as np

from .audit import audit
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .data.dataset import Dataset, load_dataset, scan_dataset
from .data.image import prepare, resize_bilinear
from .data.pnm import load_pnm, save_pnm
from .data.synthetic import SyntheticSpec, generate_synthetic, materialize, synthetic_dataset
from .errors import AuditError, CheckpointError, ConfigError, ContractError, PNMParseError, TrainingDiverged
from .gradcam import DEFAULT_TAP, gradcam, overlay
from .model import ModelConfig, build_msadnet
from .splits import SplitPlan, stratified_split
from .train import TrainConfig, crossval, evaluate, fit, write_history

log = logging.getLogger("msadnet")

SECTIONS = ("model", "train", "data", "synthetic", "crossval", "gradcam")
SEEDED = ("model", "train", "synthetic")


def default_config() -> dict[str, dict[str, Any]]:
    spec = SyntheticSpec()
    synth = spec.to_dict()
    # styles and names are derived from num_classes unless given explicitly
    synth["styles"] = None
    synth["class_names"] = None
    return {
        "model": ModelConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "data": {"root": None, "channels": None},
        "synthetic": synth,
        "crossval": {"k": 5},
        "gradcam": {"tap": DEFAULT_TAP, "alpha": 0.4},
    }


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
        if section not in cfg:
            raise ConfigError(f"override {key!r}: unknown section {section!r}")
        if name not in cfg[section]:
            raise ConfigError(f"override {key!r}: section {section!r} has no key {name!r}")
    else:
        owners = [s for s in SECTIONS if key in cfg[s]]
        if not owners:
            raise ConfigError(f"override {key!r} matches no configuration key")
        if len(owners) > 1:
            raise ConfigError(f"override {key!r} is ambiguous; use one of {[f'{s}.{key}' for s in owners]}")
        section, name = owners[0], key
    cfg[section][name] = _parse_value(raw)


def resolve_config(args, base: dict | None = None) -> dict:
    cfg = default_config()
    for section, values in (base or {}).items():
        if section in cfg and isinstance(values, dict):
            cfg[section].update(values)
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        for section, values in doc.items():
            if section == "seed":
                continue
            if section not in cfg:
                raise ConfigError(f"unknown config section {section!r}; expected one of {list(SECTIONS)}")
            if not isinstance(values, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            cfg[section].update(values)
        if "seed" in doc:
            for s in SEEDED:
                cfg[s]["seed"] = doc["seed"]
    if args.seed is not None:
        for s in SEEDED:
            cfg[s]["seed"] = args.seed
    if getattr(args, "schedule", None):
        cfg["train"]["schedule"] = args.schedule
    if getattr(args, "data", None):
        cfg["data"]["root"] = args.data
    if getattr(args, "tap", None):
        cfg["gradcam"]["tap"] = args.tap
    if getattr(args, "k", None):
        cfg["crossval"]["k"] = args.k
    for item in args.override or []:
        apply_override(cfg, item)
    # validate the typed sections now so bad values fail before any work
    model_config(cfg)
    train_config(cfg)
    return cfg


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig.from_dict(cfg["model"])


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig.from_dict(cfg["train"])


def synthetic_spec(cfg: dict, image_size: int | None = None) -> SyntheticSpec:
    d = {k: v for k, v in cfg["synthetic"].items() if v is not None}
    known = {f.name for f in fields(SyntheticSpec)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
    if image_size is not None:
        d["image_size"] = image_size
    return SyntheticSpec(**d)


def write_snapshot(cfg: dict, out: Path) -> None:
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))


def _channels(cfg: dict, mc: ModelConfig) -> int:
    return int(cfg["data"].get("channels") or mc.input_channels)


def load_data(cfg: dict, mc: ModelConfig) -> Dataset:
    """Dataset from ``data.root`` when set, otherwise the in-memory synthetic set."""
    channels = _channels(cfg, mc)
    dtype = np.dtype(mc.precision)
    root = cfg["data"].get("root")
    if root:
        ds = load_dataset(scan_dataset(root), mc.input_size, channels, dtype)
    else:
        ds = synthetic_dataset(synthetic_spec(cfg, mc.input_size), channels=channels, dtype=dtype)
    if ds.manifest.num_classes != mc.num_classes:
        raise ConfigError(f"dataset has {ds.manifest.num_classes} classes but the model expects {mc.num_classes}")
    return ds


def split_for(ds: Dataset, tc: TrainConfig) -> SplitPlan:
    man = ds.manifest
    if man.pre_split:
        return SplitPlan(man.partition_indices("train"), man.partition_indices("valid"), man.partition_indices("test"))
    return stratified_split(ds.y, tc.split_weights, seed=tc.seed)


# -- subcommands ------------------------------------------------------------


def cmd_params(args, cfg: dict, out: Path) -> int:
    model = build_msadnet(model_config(cfg))
    report = audit(model, strict=False)
    text = report.to_text()
    (out / "params.txt").write_text(text + "\n")
    (out / "params.json").write_text(report.to_json())
    print(text)
    if not report.ok:
        names = ", ".join(e.layer for e in report.mismatches)
        print(f"audit FAILED for: {names}", file=sys.stderr)
        return 1
    return 0


def cmd_train(args, cfg: dict, out: Path) -> int:
    mc, tc = model_config(cfg), train_config(cfg)
    ds = load_data(cfg, mc)
    plan = split_for(ds, tc)
    (out / "split.json").write_text(json.dumps(plan.to_dict(), indent=2))
    model = build_msadnet(mc)
    if args.resume:
        ck_cfg, state = read_checkpoint(args.resume)
        if ck_cfg.get("model") != mc.to_dict():
            raise ConfigError("--resume checkpoint was written for a different model configuration")
        model.load_state_dict(state)
    ckpt = out / "checkpoint.msad"
    extra = {"train": tc.to_dict(), "data": cfg["data"], "synthetic": cfg["synthetic"]}

    def on_epoch(rec):
        print(
            f"epoch {rec.epoch:3d}  lr {rec.lr:.6g}  loss {rec.train_loss:.4f}  acc {rec.train_acc:.3f}  "
            f"val_loss {rec.val_loss:.4f}  val_acc {rec.val_acc:.3f}  {rec.secs:.1f}s",
            flush=True,
        )

    try:
        hist = fit(model, ds, plan, tc, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        save_checkpoint(ckpt, model, extra)
        if exc.history is not None:
            write_history(exc.history, out)
        raise
    save_checkpoint(ckpt, model, extra)
    write_history(hist, out)
    if plan.test:
        rep = evaluate(model, ds, plan.test, seconds_per_epoch=hist.seconds_per_epoch)
        (out / "test_metrics.json").write_text(rep.to_json())
        print(rep.to_text())
    print(f"wrote {ckpt}")
    return 0


def cmd_eval(args, cfg: dict, out: Path) -> int:
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    model, _ = load_checkpoint(args.checkpoint)
    mc = model.config
    ds = load_data(cfg, mc)
    tc = train_config(cfg)
    if args.split == "all":
        idx = np.arange(len(ds))
    else:
        idx = np.asarray(split_for(ds, tc).partitions()[args.split], dtype=int)
    if len(idx) == 0:
        raise ContractError(f"the {args.split} partition is empty")
    rep = evaluate(model, ds, idx)
    (out / "metrics.json").write_text(rep.to_json())
    (out / "metrics.txt").write_text(rep.to_text() + "\n")
    (out / "confusion.csv").write_text(rep.confusion_csv())
    print(rep.to_text())
    return 0


def cmd_crossval(args, cfg: dict, out: Path) -> int:
    mc, tc = model_config(cfg), train_config(cfg)
    ds = load_data(cfg, mc)
    k = int(cfg["crossval"]["k"])

    def on_fold(i, rep):
        print(f"fold {i}/{k}: " + "  ".join(f"{key} {v:.3f}" for key, v in rep.summary().items()), flush=True)

    result = crossval(mc, ds, k=k, train_cfg=tc, on_fold=on_fold)
    for a in range(k):
        for b in range(a + 1, k):
            assert not set(result.plans[a].test) & set(result.plans[b].test), "cross-validation folds overlap"
    (out / "crossval.txt").write_text(result.to_text() + "\n")
    (out / "crossval.csv").write_text(result.to_csv())
    (out / "crossval.json").write_text(result.to_json())
    print(result.to_text())
    return 0


def _gradcam_one(model, path: Path, target, tap: str, alpha: float, map_path: Path, overlay_path: Path) -> None:
    img = load_pnm(path)
    size = model.config.input_size
    x = prepare(img, size, model.config.input_channels, model.dtype)
    hm = gradcam(model, x, target, tap)
    save_pnm(map_path, hm.to_image())
    save_pnm(overlay_path, overlay(resize_bilinear(img, size, size), hm, alpha))
    print(f"{path.name}: class {hm.target_class}  p={hm.probs[hm.target_class]:.3f}  peak {hm.peak()}")


def cmd_gradcam(args, cfg: dict, out: Path) -> int:
    if not args.checkpoint or not args.image:
        raise ConfigError("gradcam needs --checkpoint and --image")
    model, _ = load_checkpoint(args.checkpoint)
    tap = cfg["gradcam"]["tap"]
    alpha = float(cfg["gradcam"]["alpha"])
    model.resolve_tap(tap)
    src = Path(args.image)
    if src.is_dir():
        files = sorted(p for p in src.iterdir() if p.suffix.lower() in {".pgm", ".ppm", ".pnm"})
        if not files:
            raise FileNotFoundError(f"no PNM images under {src}")
        for f in files:
            _gradcam_one(model, f, args.target_class, tap, alpha, out / f"{f.stem}_map.pgm", out / f"{f.stem}_overlay.ppm")
    else:
        _gradcam_one(model, src, args.target_class, tap, alpha, out / "map.pgm", out / "overlay.ppm")
    return 0


def cmd_synth(args, cfg: dict, out: Path) -> int:
    spec = synthetic_spec(cfg)
    manifest, images = generate_synthetic(spec)
    written = materialize(manifest, images, out / "dataset")
    print(f"wrote {len(written.records)} images in {spec.num_classes} classes to {out / 'dataset'}")
    return 0


COMMANDS = {
    "params": cmd_params,
    "train": cmd_train,
    "eval": cmd_eval,
    "crossval": cmd_crossval,
    "gradcam": cmd_gradcam,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", default="runs/latest", help="output directory (created if absent)")
    common.add_argument("--seed", type=int, help="seed for model init, shuffling, splits and synthetic data")
    common.add_argument("--override", action="append", metavar="KEY=VALUE", help="dotted or bare config override")
    common.add_argument("--threads", type=int, help="cap BLAS/OpenMP worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="msadnet", description="MSAD-Net micro-framework: audit, train, evaluate, explain.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("params", parents=[common], help="parameter audit report")
    t = sub.add_parser("train", parents=[common], help="train and write checkpoint + history")
    t.add_argument("--data", help="dataset root (class folders or train/valid/test tree); synthetic if omitted")
    t.add_argument("--schedule", choices=["fixed", "adaptive"])
    t.add_argument("--resume", help="initialize from this checkpoint")
    e = sub.add_parser("eval", parents=[common], help="metrics for a checkpoint on one partition")
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--split", choices=["train", "valid", "test", "all"], default="test")
    c = sub.add_parser("crossval", parents=[common], help="stratified k-fold cross-validation")
    c.add_argument("--data")
    c.add_argument("--k", type=int)
    g = sub.add_parser("gradcam", parents=[common], help="Grad-CAM heatmap and overlay")
    g.add_argument("--checkpoint")
    g.add_argument("--image", help="PNM file, or a directory for batch mode")
    g.add_argument("--class", dest="target_class", type=int, help="target class (default: predicted class)")
    g.add_argument("--tap", help=f"activation to explain (default {DEFAULT_TAP})")
    sub.add_parser("synth", parents=[common], help="materialize the synthetic dataset as PGM files")
    return p


def _run(args) -> int:
    base = None
    if getattr(args, "checkpoint", None):
        # eval/gradcam start from the settings the checkpoint was trained with;
        # the model section always comes from the checkpoint itself
        base, _ = read_checkpoint(args.checkpoint)
    cfg = resolve_config(args, base)
    if base is not None:
        cfg["model"] = base["model"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(cfg, out)
    return COMMANDS[args.command](args, cfg, out)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.threads:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return _run(args)
        return _run(args)
    except (OSError, json.JSONDecodeError, PNMParseError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, ConfigError, AuditError, FloatingPointError, KeyError, ValueError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
