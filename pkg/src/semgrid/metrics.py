"""Loss masks, masked cross-entropy, IoU and certainty maps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .grid import CATEGORIES, CLASS_NAMES, NUM_CLASSES, UNKNOWN, ProbabilisticGrid, SemanticGrid


@dataclass(frozen=True, eq=False)
class LossMask:
    """``mask`` is True where a cell is ignored by loss and IoU."""

    mask: np.ndarray
    covered: np.ndarray
    target: np.ndarray


def known_mask(g: SemanticGrid | np.ndarray) -> np.ndarray:
    cells = g.cells if isinstance(g, SemanticGrid) else np.asarray(g)
    return cells != UNKNOWN


def _cells(g) -> np.ndarray:
    return g.cells if isinstance(g, SemanticGrid) else np.asarray(g)


def loss_mask(target, inputs: Sequence, bottom_exclude: int = 0) -> LossMask:
    """Cells seen by some input but unknown in the target.

    ``bottom_exclude`` removes that many bottom rows from the mask so they
    are scored even without ground truth.
    """
    t = _cells(target)
    for g in inputs:
        if _cells(g).shape != t.shape:
            raise ValueError("geometry mismatch between target and input grids")
        if isinstance(g, SemanticGrid) and isinstance(target, SemanticGrid) and g.geometry != target.geometry:
            raise ValueError("geometry mismatch between target and input grids")
    target_known = known_mask(t)
    covered = target_known.copy()
    for g in inputs:
        covered |= known_mask(g)
    mask = covered & ~target_known
    if bottom_exclude > 0:
        mask[-bottom_exclude:, :] = False
    return LossMask(mask, covered, target_known)


def _mask_array(m) -> np.ndarray:
    if m is None:
        return None
    return m.mask if isinstance(m, LossMask) else np.asarray(m, bool)


def _probs(pred) -> np.ndarray:
    return pred.features if isinstance(pred, ProbabilisticGrid) else np.asarray(pred)


CE_FLOOR = 1e-12


def masked_cross_entropy(pred, target, m=None) -> tuple[float, np.ndarray]:
    """Masked categorical cross-entropy and its gradient w.r.t. ``pred``.

    ``pred`` holds probabilities with the class axis last, shape (..., H, W, F);
    ``target`` holds class ids (..., H, W). Masked cells take the target as the
    prediction, so they add nothing to the loss, which is averaged over all
    cells. The gradient at masked cells is exactly zero.
    """
    p = _probs(pred)
    t = _cells(target)
    if p.shape[:-1] != t.shape or p.shape[-1] != NUM_CLASSES:
        raise ValueError(f"prediction {p.shape} does not match target {t.shape}")
    if np.abs(p.sum(-1) - 1.0).max(initial=0.0) > 1e-4:
        raise ValueError("prediction is not normalized over classes")
    mask = np.zeros(t.shape, bool) if m is None else _mask_array(m)
    n = t.size
    scored = ~mask
    p_true = np.take_along_axis(p, t[..., None].astype(np.intp), -1)[..., 0]
    p_true = np.maximum(p_true, CE_FLOOR)
    loss = float(-np.log(p_true[scored]).sum() / n)
    grad = np.zeros_like(p)
    g_true = np.where(scored, -1.0 / (n * p_true), 0.0).astype(p.dtype)
    np.put_along_axis(grad, t[..., None].astype(np.intp), g_true[..., None], -1)
    return loss, grad


# -- IoU --------------------------------------------------------------------

def iou_counts(pred, target, m=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-class intersection and union cell counts over unmasked cells."""
    p = _cells(pred).ravel()
    t = _cells(target).ravel()
    if p.shape != t.shape:
        raise ValueError("geometry mismatch between prediction and target")
    if m is not None:
        keep = ~_mask_array(m).ravel()
        p, t = p[keep], t[keep]
    inter = np.bincount(t[p == t], minlength=NUM_CLASSES)[:NUM_CLASSES]
    area_p = np.bincount(p, minlength=NUM_CLASSES)[:NUM_CLASSES]
    area_t = np.bincount(t, minlength=NUM_CLASSES)[:NUM_CLASSES]
    return inter.astype(np.int64), (area_p + area_t - inter).astype(np.int64)


def iou_from_counts(inter: np.ndarray, union: np.ndarray) -> dict[int, float]:
    return {c: float(inter[c] / union[c]) for c in range(NUM_CLASSES) if union[c] > 0}


def class_iou(pred, target, m=None) -> dict[int, float]:
    """IoU per class id; classes with an empty union are absent from the result."""
    return iou_from_counts(*iou_counts(pred, target, m))


def category_miou(per_class: Mapping[int, float]) -> dict[str, float]:
    """Unweighted mean of the present member classes of each category."""
    out = {}
    for name, members in CATEGORIES.items():
        vals = [per_class[c] for c in members if c in per_class]
        if vals:
            out[name] = float(np.mean(vals))
    return out


class IoUAccumulator:
    """Pools intersection/union counts over many grid pairs."""

    def __init__(self):
        self.inter = np.zeros(NUM_CLASSES, np.int64)
        self.union = np.zeros(NUM_CLASSES, np.int64)

    def update(self, pred, target, m=None) -> None:
        i, u = iou_counts(pred, target, m)
        self.inter += i
        self.union += u

    def per_class(self) -> dict[int, float]:
        return iou_from_counts(self.inter, self.union)

    def per_category(self) -> dict[str, float]:
        return category_miou(self.per_class())

    def miou(self) -> float:
        pc = self.per_class()
        return float(np.mean(list(pc.values()))) if pc else float("nan")

    def report(self) -> dict:
        pc = self.per_class()
        return {
            "classes": {CLASS_NAMES[c]: pc.get(c) for c in range(NUM_CLASSES)},
            "categories": self.per_category(),
            "miou": self.miou(),
        }


def certainty_map(pred) -> np.ndarray:
    """Maximum class score per cell."""
    return _probs(pred).max(axis=-1)
