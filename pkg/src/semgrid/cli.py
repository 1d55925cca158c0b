"""Command line: simulate datasets, run baselines, train, evaluate, benchmark.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .grid import GridFormatError
from .net import CheckpointError, EDConfig, Schedule, build, load_checkpoint, save_checkpoint, train
from .synth.dataset import DatasetConfig, DatasetError, GridSequenceDataset, build_dataset, manifest_digest

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
SPLIT_FLAGS = {"none": None, "1": "split1", "2": "split2"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    label: str = "DC"
    baseline: str = "dc"
    translate: bool = True
    horizon: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: dict = field(default_factory=lambda: {"depth": 2, "base_features": 16, "dropout_rate": 0.5, "seed": 0})
    schedule: Schedule = field(default_factory=Schedule)
    train_seed: int = 0


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("semgrid.presets").iterdir() if p.name.endswith(".toml"))


def load_config(ref: str | None) -> ExperimentConfig:
    """Read a TOML experiment file; ``ref`` is a path or a preset name such as ``dc``."""
    if ref is None:
        return ExperimentConfig()
    path = Path(ref)
    try:
        if path.exists():
            raw = tomllib.loads(path.read_text())
        elif ref in preset_names():
            raw = tomllib.loads(resources.files("semgrid.presets").joinpath(f"{ref}.toml").read_text())
        else:
            raise ConfigError(f"no config file or preset named {ref!r} (presets: {', '.join(preset_names())})")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {ref}: {exc}") from exc
    unknown = set(raw) - {"experiment", "dataset", "model", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        exp = dict(raw.get("experiment", {}))
        bad = set(exp) - {"label", "baseline", "translate", "horizon"}
        if bad:
            raise ConfigError(f"unknown experiment options: {sorted(bad)}")
        model = {**ExperimentConfig().model, **raw.get("model", {})}
        bad = set(model) - {"depth", "base_features", "dropout_rate", "seed"}
        if bad:
            raise ConfigError(f"unknown model options: {sorted(bad)}")
        tr = dict(raw.get("train", {}))
        train_seed = tr.pop("seed", 0)
        cfg = ExperimentConfig(
            **exp,
            dataset=DatasetConfig.from_dict(raw.get("dataset", {})),
            model=model,
            schedule=Schedule(**tr),
            train_seed=train_seed,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if cfg.baseline not in ("nt", "dc", "sp"):
        raise ConfigError(f"unknown baseline {cfg.baseline!r}")
    return cfg


def _with_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    ds = cfg.dataset
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "split", None) is not None:
        updates["split"] = SPLIT_FLAGS[args.split]
    for name in ("train_clips", "val_clips"):
        if getattr(args, name, None) is not None:
            updates[name] = getattr(args, name)
    try:
        ds = replace(ds, **updates) if updates else ds
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = replace(cfg, dataset=ds)
    if getattr(args, "no_translation", False):
        cfg = replace(cfg, translate=False)
    if getattr(args, "horizon", None) is not None:
        cfg = replace(cfg, horizon=args.horizon)
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, schedule=replace(cfg.schedule, epochs=args.epochs))
    return cfg


def _write_json(doc: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _load_dataset(path) -> GridSequenceDataset:
    if path is None:
        raise ConfigError("--dataset is required")
    return GridSequenceDataset.load(path)


def _val(ds: GridSequenceDataset, horizon: int) -> GridSequenceDataset:
    val = ds.subset("val", horizon)
    if len(val) == 0:
        raise DatasetError(f"dataset has no validation sequences for horizon {horizon}")
    return val


def _render(out_dir, samples, translate, label, scale: int = 4) -> None:
    from PIL import Image

    from .experiment import triptych

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, (seq, pred, probs) in enumerate(samples):
        img = triptych(seq, pred, translate, probs).repeat(scale, 0).repeat(scale, 1)
        Image.fromarray(img).save(out / f"{label.lower()}_{k:03d}.png")


# -- commands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _with_overrides(load_config(args.config), args)
    if args.out is None:
        raise ConfigError("--out is required")
    ds = build_dataset(cfg.dataset, progress=_progress if args.verbose else None)
    ds.save(args.out)
    n_train = len(ds.subset("train"))
    print(f"wrote {len(ds)} sequences ({n_train} train, {len(ds) - n_train} val) to {args.out}")
    print(f"digest {manifest_digest(args.out)}")
    return EXIT_OK


def _progress(split, clip):
    print(f"  {split} clip {clip}", file=sys.stderr, flush=True)


def cmd_baseline(args) -> int:
    from .experiment import baseline_prediction, evaluate_baseline, report_document

    cfg = _with_overrides(load_config(args.config), args)
    ds = _load_dataset(args.dataset)
    kind = args.baseline or cfg.baseline
    val = _val(ds, cfg.horizon)
    try:
        result = evaluate_baseline(val, kind)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    doc = report_document(f"BL-{kind.upper()}", "baseline", result, horizon=cfg.horizon,
                          translate=kind != "nt", sequences=len(val))
    _emit(doc, args.report)
    if args.render:
        samples = [(q, baseline_prediction(q, kind).cells, None) for q in list(val)[: args.render_count]]
        _render(args.render, samples, kind != "nt", f"bl_{kind}")
    return EXIT_OK


def _emit(doc, path) -> None:
    if path:
        _write_json(doc, path)
    print(format_table([doc]))


def _model_config(cfg: ExperimentConfig, ds: GridSequenceDataset) -> EDConfig:
    geometry = ds[0].geometry if len(ds) else cfg.dataset.geometry
    try:
        return EDConfig.for_inputs(ds.n_sensors, ds.n_steps, grid_size=geometry.width, **cfg.model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(args) -> int:
    from .net.train import evaluate

    cfg = _with_overrides(load_config(args.config), args)
    if args.checkpoint is None:
        raise ConfigError("--checkpoint is required")
    ds = _load_dataset(args.dataset)
    model_cfg = _model_config(cfg, ds)
    if args.seed is not None:
        model_cfg = replace(model_cfg, seed=args.seed)
    net = build(model_cfg)
    seed = cfg.train_seed if args.seed is None else args.seed
    val = ds.subset("val", cfg.dataset.horizon)

    def log(entry, seconds):
        extra = f" val_loss {entry['val_loss']:.4f} val_mIoU {entry['val_miou']:.3f}" if "val_loss" in entry else ""
        print(f"epoch {entry['epoch']} lr {entry['lr']:g} loss {entry['train_loss']:.4f}{extra} ({seconds:.0f} s)",
              flush=True)

    history = train(net, ds.subset("train"), cfg.schedule, seed=seed, translate=cfg.translate, val=val, log=log)
    save_checkpoint(net, args.checkpoint)
    _write_json({"label": cfg.label, "model": json.loads(model_cfg.to_json()), **history},
                str(args.checkpoint) + ".log.json")
    if len(val) == 0:
        return EXIT_OK
    final = evaluate(net, val, cfg.translate)
    print(f"final val mIoU {final['miou']:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .experiment import baseline_prediction, evaluate_baseline, evaluate_model, report_document

    cfg = _with_overrides(load_config(args.config), args)
    if args.checkpoint is None:
        raise ConfigError("--checkpoint is required")
    ds = _load_dataset(args.dataset)
    net = load_checkpoint(args.checkpoint)
    if net.config.in_channels != ds.n_sensors * ds.n_steps * net.config.out_channels:
        raise DatasetError("checkpoint input channels do not match the dataset")
    val = _val(ds, cfg.horizon)
    kind = args.baseline or cfg.baseline
    if not cfg.translate:
        kind = "nt"
    result, kept = evaluate_model(net, val, cfg.translate, keep=args.render_count if args.render else 0)
    base = evaluate_baseline(val, kind)
    delta = {c: result["categories"][c] - base["categories"][c]
             for c in result["categories"] if c in base["categories"]}
    doc = report_document(
        f"ED-{cfg.label}", "model", result, horizon=cfg.horizon, translate=cfg.translate, sequences=len(val),
        baseline={"label": f"BL-{kind.upper()}", **base}, delta=delta,
    )
    _emit(doc, args.report)
    if args.render:
        samples = [(q, p.argmax(-1), p) for q, p in kept]
        _render(args.render, samples, cfg.translate, f"ed_{cfg.label}")
        _render(args.render, [(q, baseline_prediction(q, kind).cells, None) for q, _ in kept],
                cfg.translate, f"bl_{kind}")
    return EXIT_OK


def bench(config: EDConfig, iterations: int = 100, steps: int = 10) -> dict:
    """Forward-pass wall time at batch size 1: mean and std over iterations of ``steps`` passes."""
    net = build(config)
    x = np.zeros((1, config.grid_size, config.grid_size, config.in_channels), config.dtype)
    x[..., :: config.out_channels] = 1
    net.forward(x)  # warm-up
    per_step = []
    for _ in range(iterations):
        t = time.perf_counter()
        for _ in range(steps):
            net.forward(x)
        per_step.append((time.perf_counter() - t) / steps * 1e3)
    return {"mean_ms": float(np.mean(per_step)), "std_ms": float(np.std(per_step))}


def cmd_bench(args) -> int:
    cfg = _with_overrides(load_config(args.config), args)
    model = dict(cfg.model)
    if args.depth is not None:
        model["depth"] = args.depth
    if args.features is not None:
        model["base_features"] = args.features
    try:
        ed = EDConfig.for_inputs(cfg.dataset.n_sensors, cfg.dataset.n, grid_size=args.grid or cfg.dataset.grid_size,
                                 **model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    timing = bench(ed, args.iterations, args.steps)
    doc = {
        "schema": "semgrid-report/1",
        "label": f"bench d={ed.depth} f={ed.base_features} grid={ed.grid_size}",
        "kind": "bench",
        "config": json.loads(ed.to_json()),
        "iterations": args.iterations,
        "steps": args.steps,
        "batch_size": 1,
        **timing,
        "note": "CPU wall time of a numpy implementation; not comparable to GPU runtimes.",
    }
    if args.report:
        _write_json(doc, args.report)
    print(f"{doc['label']}: {timing['mean_ms']:.2f} +- {timing['std_ms']:.2f} ms per forward pass")
    print(doc["note"])
    return EXIT_OK


CATEGORY_COLUMNS = ("static", "small_static", "vehicles", "small_dynamic")


def format_table(docs) -> str:
    """Per-category mIoU of metric reports (and their baselines) as a text table."""
    rows = [("label", *CATEGORY_COLUMNS, "mIoU")]

    def fmt(v):
        return "-" if v is None else f"{v:.3f}"

    for d in docs:
        if d.get("kind") == "bench":
            continue
        rows.append((d["label"], *(fmt(d["categories"].get(c)) for c in CATEGORY_COLUMNS), fmt(d["miou"])))
        if "baseline" in d:
            b = d["baseline"]
            rows.append((b["label"], *(fmt(b["categories"].get(c)) for c in CATEGORY_COLUMNS), fmt(b["miou"])))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)) for r in rows)


def cmd_report(args) -> int:
    docs = []
    for p in args.reports:
        try:
            docs.append(json.loads(Path(p).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read report {p}: {exc}") from exc
    print(format_table(docs))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semgrid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        p.add_argument("--config", help="experiment TOML file or preset name (" + ", ".join(preset_names()) + ")")
        p.add_argument("--seed", type=int)
        if dataset:
            p.add_argument("--dataset", help="dataset directory written by 'synth'")

    p = sub.add_parser("synth", help="simulate scenes and write a grid-sequence dataset")
    common(p, dataset=False)
    p.add_argument("--out", help="output directory")
    p.add_argument("--split", choices=sorted(SPLIT_FLAGS), help="sensor split of the inputs")
    p.add_argument("--train-clips", type=int)
    p.add_argument("--val-clips", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("baseline", help="score a model-free baseline on the validation sequences")
    common(p)
    p.add_argument("--baseline", choices=["nt", "dc", "sp"])
    p.add_argument("--horizon", type=int)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--render", help="directory for PNG panels")
    p.add_argument("--render-count", type=int, default=5)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("train", help="train the encoder-decoder network")
    common(p)
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.add_argument("--no-translation", action="store_true", help="feed inputs without egomotion translation")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained network next to its baseline")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint to evaluate")
    p.add_argument("--baseline", choices=["nt", "dc", "sp"])
    p.add_argument("--horizon", type=int)
    p.add_argument("--no-translation", action="store_true")
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--render", help="directory for PNG panels including certainty maps")
    p.add_argument("--render-count", type=int, default=5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time forward passes at batch size 1")
    common(p, dataset=False)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--depth", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--report", help="JSON report path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="tabulate JSON reports")
    p.add_argument("reports", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, GridFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
