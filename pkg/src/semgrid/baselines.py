"""Parameter-free prediction baselines."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .alignment import EgomotionTrack, integrate_translation, translate_grid
from .grid import UNKNOWN, SemanticGrid


def bl_nt(inputs: Sequence[SemanticGrid]) -> SemanticGrid:
    """Repeat the last input grid."""
    if not inputs:
        raise ValueError("no input grids")
    return inputs[-1]


def bl_dc(
    inputs: Sequence[SemanticGrid],
    track: EgomotionTrack,
    t_n: float,
    tau: float,
    t0: float | None = None,
) -> SemanticGrid:
    """Move the last input grid to ``tau`` with the integrated egomotion."""
    return translate_grid(bl_nt(inputs), integrate_translation(track, t_n, tau, t0=t0))


def bl_overlay(lower: SemanticGrid, upper: SemanticGrid) -> SemanticGrid:
    """Lower sensor wins wherever it knows the class; upper fills the rest."""
    if lower.geometry != upper.geometry:
        raise ValueError("geometry mismatch between sensors")
    return lower.replace(cells=np.where(lower.cells != UNKNOWN, lower.cells, upper.cells))


def bl_split(
    lower: Sequence[SemanticGrid],
    upper: Sequence[SemanticGrid],
    track: EgomotionTrack,
    t_n: float,
    tau: float,
    t0: float | None = None,
) -> SemanticGrid:
    """Overlay the two sensors' last grids, then apply :func:`bl_dc`."""
    return bl_dc([bl_overlay(lower[-1], upper[-1])], track, t_n, tau, t0=t0)
