"""Orientation alignment, discretization, egomotion translation and filtering."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .grid import (
    CATEGORIES,
    CATEGORY_OF,
    NUM_CLASSES,
    PRIORITY_RANK,
    UNKNOWN,
    DepthMap,
    GridGeometry,
    SemanticGrid,
    SemanticImage,
)
from .projection import CameraModel, SemanticPointCloud, project_to_pointcloud


@dataclass(frozen=True, eq=False)
class EgomotionTrack:
    """Timestamped egomotion rates in the agent frame.

    ``yaw_rate`` is positive when the heading turns from +z towards -x, which
    matches the rotation used by :func:`rotate_pointcloud`. Rates are held
    constant from one sample to the next (left Riemann sums).
    """

    t: np.ndarray
    yaw_rate: np.ndarray
    vx: np.ndarray
    vz: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, k), np.float64).ravel() for k in ("t", "yaw_rate", "vx", "vz")]
        if len({a.size for a in arrays}) != 1 or arrays[0].size == 0:
            raise ValueError("track arrays must be non-empty and of equal length")
        if np.any(np.diff(arrays[0]) <= 0):
            raise ValueError("track timestamps must be strictly increasing")
        for k, a in zip(("t", "yaw_rate", "vx", "vz"), arrays):
            a.flags.writeable = False
            object.__setattr__(self, k, a)

    def __len__(self):
        return self.t.size

    def __eq__(self, other):
        if not isinstance(other, EgomotionTrack):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("t", "yaw_rate", "vx", "vz"))

    def slice(self, t_start: float, t_end: float) -> "EgomotionTrack":
        keep = (self.t >= t_start) & (self.t <= t_end)
        return EgomotionTrack(self.t[keep], self.yaw_rate[keep], self.vx[keep], self.vz[keep])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("t", "yaw_rate", "vx", "vz")}

    @classmethod
    def from_dict(cls, d: Mapping) -> "EgomotionTrack":
        return cls(d["t"], d["yaw_rate"], d["vx"], d["vz"])

    def _intervals(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """Indices of samples whose hold interval overlaps [a, b] and the overlap lengths."""
        lo, hi = self.t[0], self.t[-1]
        if a > b:
            raise ValueError(f"start time {a} after end time {b}")
        if a < lo or b > hi:
            raise ValueError(f"interval [{a}, {b}] outside track span [{lo}, {hi}]")
        starts = self.t[:-1]
        ends = self.t[1:]
        dt = np.clip(np.minimum(ends, b) - np.maximum(starts, a), 0.0, None)
        idx = np.nonzero(dt > 0)[0]
        return idx, dt[idx]


def integrate_orientation(track: EgomotionTrack, t0: float, ti: float) -> float:
    """Heading change between t0 and ti: sum of yaw_rate * dt."""
    idx, dt = track._intervals(t0, ti)
    return float(np.sum(track.yaw_rate[idx] * dt))


def integrate_translation(
    track: EgomotionTrack, ti: float, tau: float, t0: float | None = None
) -> tuple[float, float]:
    """Displacement (x, z) in meters between ti and tau.

    With ``t0`` set, each velocity sample is first rotated by the heading
    accumulated since ``t0``, expressing the displacement in the frame whose
    orientation was frozen at ``t0`` (the frame synchronized grids live in).
    Without it the agent-frame velocities are summed directly.
    """
    idx, dt = track._intervals(ti, tau)
    vx, vz = track.vx[idx], track.vz[idx]
    if t0 is not None and idx.size:
        base = integrate_orientation(track, t0, ti) if t0 <= ti else -integrate_orientation(track, ti, t0)
        # heading at the start of each hold interval, relative to t0
        heading = base + np.concatenate([[0.0], np.cumsum(track.yaw_rate[idx] * dt)[:-1]])
        c, s = np.cos(heading), np.sin(heading)
        vx, vz = c * vx - s * vz, s * vx + c * vz
    return float(np.sum(vx * dt)), float(np.sum(vz * dt))


def rotate_pointcloud(pc: SemanticPointCloud, alpha: float) -> SemanticPointCloud:
    """Rotate (x, z) by ``[[cos, -sin], [sin, cos]]``; classes are untouched."""
    c, s = np.cos(alpha), np.sin(alpha)
    return SemanticPointCloud(c * pc.x - s * pc.z, s * pc.x + c * pc.z, pc.classes, pc.timestamp)


def discretize(pc: SemanticPointCloud, geometry: GridGeometry, timestamp: float | None = None) -> SemanticGrid:
    """Rasterize points into cells; the highest-priority class wins each cell."""
    col, row = geometry.to_cells(pc.x, pc.z)
    inside = (col >= 0) & (col < geometry.width) & (row >= 0) & (row < geometry.height)
    flat = row[inside] * geometry.width + col[inside]
    rank = np.full(geometry.height * geometry.width, -1, np.int64)
    np.maximum.at(rank, flat, PRIORITY_RANK[pc.classes[inside]])
    class_of_rank = np.argsort(PRIORITY_RANK)
    cells = np.where(rank >= 0, class_of_rank[np.maximum(rank, 0)], UNKNOWN)
    ts = pc.timestamp if timestamp is None else timestamp
    return SemanticGrid(cells.reshape(geometry.shape), geometry, ts)


def translate_grid(g: SemanticGrid, q: tuple[float, float]) -> SemanticGrid:
    """Shift the grid so the agent has moved by ``q`` meters; vacated cells become unknown.

    Moving forward by one cell moves every row one step toward the agent
    (down), so the far edge is emptied.
    """
    dcol = -int(np.floor(q[0] / g.cell_size + 0.5))
    drow = int(np.floor(q[1] / g.cell_size + 0.5))
    h, w = g.height, g.width
    out = np.zeros_like(g.cells)
    if abs(dcol) < w and abs(drow) < h:
        src = g.cells[max(0, -drow) : h - max(0, drow), max(0, -dcol) : w - max(0, dcol)]
        out[max(0, drow) : h - max(0, -drow), max(0, dcol) : w - max(0, -dcol)] = src
    return g.replace(cells=out)


# -- morphological filtering ------------------------------------------------

FULL_RES_MORPH_PROFILE = {"static": (3, 2, 4, 4), "small_static": (1, 1, 2, 2), "vehicles": (1, 1, 2, 2), "small_dynamic": (1, 1, 2, 2)}
IDENTITY_MORPH_PROFILE = {name: (1, 1, 1, 1) for name in CATEGORIES}


def _dilate(mask: np.ndarray, k: int) -> np.ndarray:
    return mask if k == 1 else ndimage.maximum_filter(mask, size=k, mode="constant", cval=False)


def _erode(mask: np.ndarray, k: int) -> np.ndarray:
    # Reflected window for even k keeps opening/closing shift-free; the
    # replicated border stops grid edges from eroding inward.
    if k == 1:
        return mask
    return ndimage.minimum_filter(mask, size=k, mode="nearest", origin=-1 if k % 2 == 0 else 0)


def morphological_filter(g: SemanticGrid, profile: Mapping[str, Sequence[int]] | None = None) -> SemanticGrid:
    """Per class: dilate, erode, erode, dilate with square kernels, then recompose.

    ``profile`` maps a category name to its four kernel sizes. Classes are
    painted back in ascending priority so higher-priority classes win overlaps.
    """
    profile = FULL_RES_MORPH_PROFILE if profile is None else profile
    for ks in profile.values():
        if len(ks) != 4 or min(ks) < 1:
            raise ValueError(f"kernel sizes must be four integers >= 1, got {ks}")
    out = np.full(g.cells.shape, UNKNOWN, np.uint8)
    for cls in np.argsort(PRIORITY_RANK):
        if cls == UNKNOWN:
            continue
        mask = g.cells == cls
        if not mask.any():
            continue
        k1, k2, k3, k4 = profile[CATEGORY_OF[int(cls)]]
        mask = _dilate(_erode(_erode(_dilate(mask, k1), k2), k3), k4)
        out[mask] = cls
    return g.replace(cells=out)


# -- sequence synchronization ----------------------------------------------

def frame_to_grid(
    s: SemanticImage,
    d: DepthMap,
    cam: CameraModel,
    alpha: float,
    geometry: GridGeometry,
    profile: Mapping[str, Sequence[int]] | None = None,
    timestamp: float = 0.0,
) -> SemanticGrid:
    """project -> rotate(alpha) -> discretize -> filter, without translation."""
    pc = rotate_pointcloud(project_to_pointcloud(s, d, cam, timestamp), alpha)
    g = discretize(pc, geometry)
    return morphological_filter(g, profile) if profile is not None else g


def synchronize_sequence(
    frames: Sequence[tuple[SemanticImage, DepthMap, CameraModel, float]],
    track: EgomotionTrack,
    tau: float,
    geometry: GridGeometry,
    profile: Mapping[str, Sequence[int]] | None = None,
    translate: bool = True,
    t0: float | None = None,
) -> list[SemanticGrid]:
    """Grids of all frames, orientation-aligned to ``t0`` and moved to time ``tau``.

    ``t0`` defaults to the first frame time. ``translate=False`` skips the
    egomotion translation (the no-translation setting). ``profile=None`` skips
    morphological filtering.
    """
    times = [f[3] for f in frames]
    if not frames:
        return []
    if any(b <= a for a, b in zip(times, times[1:])) or times[-1] > tau:
        raise ValueError("frame times must increase strictly and not exceed tau")
    t0 = times[0] if t0 is None else t0
    out = []
    for s, d, cam, ti in frames:
        g = frame_to_grid(s, d, cam, integrate_orientation(track, t0, ti), geometry, profile, ti)
        if translate:
            g = translate_grid(g, integrate_translation(track, ti, tau, t0=t0))
        out.append(g.replace(timestamp=tau))
    return out
