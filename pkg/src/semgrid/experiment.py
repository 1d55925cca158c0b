"""Evaluation of baselines and trained networks over validation sequences."""
from __future__ import annotations

import numpy as np

from .baselines import bl_dc, bl_nt, bl_overlay
from .grid import CLASS_NAMES, SemanticGrid
from .metrics import IoUAccumulator, certainty_map, loss_mask

REPORT_SCHEMA_ID = "semgrid-report/1"
BASELINES = ("nt", "dc", "sp")


def baseline_prediction(seq, kind: str) -> SemanticGrid:
    """Baseline estimate of the target grid of one sequence.

    ``nt`` repeats the last input, ``dc`` moves it by the egomotion and ``sp``
    overlays the lower and upper sensors before moving. With several sensors
    ``nt`` and ``dc`` also overlay them first.
    """
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    if kind == "sp" and seq.n_sensors < 2:
        raise ValueError("the split baseline needs a two-sensor dataset")
    raw = [[SemanticGrid(c, seq.geometry, t) for c, t in zip(sensor, seq.times)] for sensor in seq.inputs]
    last = raw[0][-1]
    for sensor in raw[1:]:
        last = bl_overlay(last, sensor[-1])
    if kind == "nt":
        return bl_nt([last]).replace(timestamp=seq.tau)
    return bl_dc([last], seq.track, seq.times[-1], seq.tau, t0=seq.times[0]).replace(timestamp=seq.tau)


def _mask(seq, translate: bool):
    sync = seq.synchronized(translate)
    return loss_mask(seq.target, list(sync.reshape(-1, *seq.target.shape)))


def evaluate_baseline(dataset, kind: str) -> dict:
    """Pooled IoU of a baseline; ``nt`` is scored against untranslated inputs."""
    acc = IoUAccumulator()
    translate = kind != "nt"
    for seq in dataset:
        acc.update(baseline_prediction(seq, kind), seq.target, _mask(seq, translate))
    return acc.report()


def predict(net, dataset, translate: bool = True, batch_size: int = 16):
    """Yield (sequence, class probabilities (H, W, F)) pairs in dataset order."""
    for start in range(0, len(dataset), batch_size):
        idx = range(start, min(start + batch_size, len(dataset)))
        x, _, _ = dataset.batch(idx, translate)
        probs = net.forward(x, train=False)
        for k, i in enumerate(idx):
            yield dataset[i], probs[k]


def evaluate_model(net, dataset, translate: bool = True, keep: int = 0) -> tuple[dict, list]:
    """Pooled IoU of the network; also returns up to ``keep`` (seq, probs) samples."""
    acc = IoUAccumulator()
    kept = []
    for seq, probs in predict(net, dataset, translate):
        acc.update(probs.argmax(-1), seq.target, _mask(seq, translate))
        if len(kept) < keep:
            kept.append((seq, probs))
    return acc.report(), kept


def report_document(label: str, kind: str, result: dict, **extra) -> dict:
    doc = {
        "schema": REPORT_SCHEMA_ID,
        "label": label,
        "kind": kind,
        "pooling": "IoU counts pooled over all cells of all validation sequences",
        "classes": {name: result["classes"].get(name) for name in CLASS_NAMES},
        "categories": result["categories"],
        "miou": result["miou"],
    }
    doc.update(extra)
    return doc


def triptych(seq, prediction: np.ndarray, translate: bool = True, probs: np.ndarray | None = None) -> np.ndarray:
    """Inputs, prediction, target (and certainty) side by side as an RGB image."""
    from .grid import COLORS

    sync = seq.synchronized(translate)
    panels = [COLORS[c] for sensor in sync for c in sensor]
    panels += [COLORS[prediction], COLORS[seq.target]]
    if probs is not None:
        c = (certainty_map(probs) * 255).astype(np.uint8)
        panels.append(np.repeat(c[..., None], 3, -1))
    h = panels[0].shape[0]
    gap = np.full((h, 2, 3), 255, np.uint8)
    row = []
    for p in panels:
        row += [p, gap]
    return np.concatenate(row[:-1], axis=1)
