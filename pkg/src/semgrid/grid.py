"""Class taxonomy, grid containers, binary grid files and PNG rendering.

Array layout: every 2D array is indexed ``[row, col]`` with shape
``(height, width)``. Row 0 is the far edge (forward = up), so a point ``z``
meters ahead of the agent lands ``z / cell_size`` rows above ``agent_row``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CLASS_NAMES = (
    "unknown",
    "road",
    "sidewalk",
    "building",
    "vegetation",
    "pole_sign",
    "car",
    "large_vehicle",
    "person",
    "bicycle",
)
NUM_CLASSES = len(CLASS_NAMES)
CLASS_ID = {name: i for i, name in enumerate(CLASS_NAMES)}

UNKNOWN = 0
ROAD, SIDEWALK, BUILDING, VEGETATION = 1, 2, 3, 4
POLE_SIGN = 5
CAR, LARGE_VEHICLE = 6, 7
PERSON, BICYCLE = 8, 9

# Pixels that carry no projectable class (sky, anything outside the taxonomy).
INVALID = 255

CATEGORIES = {
    "static": (UNKNOWN, ROAD, SIDEWALK, BUILDING, VEGETATION),
    "small_static": (POLE_SIGN,),
    "vehicles": (CAR, LARGE_VEHICLE),
    "small_dynamic": (PERSON, BICYCLE),
}
CATEGORY_PRIORITY = {"static": 0, "small_static": 1, "vehicles": 2, "small_dynamic": 3}
CATEGORY_OF = {c: name for name, members in CATEGORIES.items() for c in members}

# Total order used whenever two classes compete for one cell: category first,
# class id inside a category. With the id layout above this equals the id.
PRIORITY_RANK = np.array(
    sorted(range(NUM_CLASSES), key=lambda c: (CATEGORY_PRIORITY[CATEGORY_OF[c]], c)),
    dtype=np.int64,
).argsort()

COLORS = np.array(
    [
        (0, 0, 0),  # unknown
        (128, 64, 128),  # road
        (244, 32, 232),  # sidewalk
        (70, 70, 70),  # building
        (107, 142, 35),  # vegetation
        (220, 220, 0),  # pole_sign
        (0, 0, 142),  # car
        (0, 60, 100),  # large_vehicle
        (220, 20, 60),  # person
        (119, 11, 32),  # bicycle
    ],
    dtype=np.uint8,
)


class GridFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GridGeometry:
    """Size and placement of an egocentric grid."""

    width: int = 128
    height: int = 128
    cell_size: float = 100.0 / 128
    agent_cell: tuple[int, int] | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be positive")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        # f32 on disk; normalise here so file round trips are exact
        object.__setattr__(self, "cell_size", float(np.float32(self.cell_size)))
        if self.agent_cell is None:
            object.__setattr__(self, "agent_cell", (self.width // 2, self.height // 2))
        col, row = self.agent_cell
        object.__setattr__(self, "agent_cell", (int(col), int(row)))
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise ValueError(f"agent cell {self.agent_cell} outside {self.width}x{self.height} grid")

    @classmethod
    def from_extent(cls, size: int, extent: float, agent_cell=None) -> "GridGeometry":
        return cls(size, size, extent / size, agent_cell)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def extent(self) -> float:
        return self.width * self.cell_size

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Agent-frame (x, z) of every cell center, each shaped (height, width)."""
        col, row = self.agent_cell
        xs = (np.arange(self.width) - col) * self.cell_size
        zs = (row - np.arange(self.height)) * self.cell_size
        return np.meshgrid(xs, zs, indexing="xy")

    def to_cells(self, x: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map agent-frame meters to (col, row) indices, rounding half up."""
        col = self.agent_cell[0] + np.floor(np.asarray(x) / self.cell_size + 0.5).astype(np.int64)
        row = self.agent_cell[1] - np.floor(np.asarray(z) / self.cell_size + 0.5).astype(np.int64)
        return col, row


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SemanticGrid:
    cells: np.ndarray
    geometry: GridGeometry = field(default_factory=GridGeometry)
    timestamp: float = 0.0

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.shape != self.geometry.shape:
            raise ValueError(f"cells shape {cells.shape} != geometry {self.geometry.shape}")
        if cells.size and (cells.min() < 0 or cells.max() >= NUM_CLASSES):
            raise ValueError("cell ids must lie in 0..9")
        object.__setattr__(self, "cells", _frozen(cells.astype(np.uint8)))
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @classmethod
    def unknown(cls, geometry: GridGeometry, timestamp: float = 0.0) -> "SemanticGrid":
        return cls(np.zeros(geometry.shape, np.uint8), geometry, timestamp)

    @property
    def width(self) -> int:
        return self.geometry.width

    @property
    def height(self) -> int:
        return self.geometry.height

    @property
    def cell_size(self) -> float:
        return self.geometry.cell_size

    @property
    def agent_cell(self) -> tuple[int, int]:
        return self.geometry.agent_cell

    def replace(self, cells=None, timestamp=None) -> "SemanticGrid":
        return SemanticGrid(
            self.cells if cells is None else cells,
            self.geometry,
            self.timestamp if timestamp is None else timestamp,
        )

    def one_hot(self, dtype=np.float32) -> np.ndarray:
        """(H, W, F) one-hot encoding."""
        return one_hot(self.cells, dtype)

    def __eq__(self, other):
        if not isinstance(other, SemanticGrid):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.timestamp == other.timestamp
            and np.array_equal(self.cells, other.cells)
        )

    def __repr__(self):
        return (
            f"SemanticGrid({self.width}x{self.height}, cell={self.cell_size:g} m, "
            f"agent={self.agent_cell}, t={self.timestamp:g})"
        )


@dataclass(frozen=True, eq=False)
class ProbabilisticGrid:
    """Per-cell class scores, shape (H, W, F)."""

    features: np.ndarray
    geometry: GridGeometry = field(default_factory=GridGeometry)
    timestamp: float = 0.0

    def __post_init__(self):
        f = np.asarray(self.features)
        if f.shape != (*self.geometry.shape, NUM_CLASSES):
            raise ValueError(f"features shape {f.shape} incompatible with geometry")
        object.__setattr__(self, "features", _frozen(f))

    def argmax(self) -> SemanticGrid:
        return SemanticGrid(self.features.argmax(axis=-1), self.geometry, self.timestamp)


@dataclass(frozen=True, eq=False)
class SemanticImage:
    """Per-pixel class ids, shape (H_I, W_I); INVALID marks unprojectable pixels."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError("labels must be 2D")
        bad = (labels != INVALID) & ((labels < 0) | (labels >= NUM_CLASSES))
        if bad.any():
            raise ValueError("labels must be class ids or INVALID")
        object.__setattr__(self, "labels", _frozen(labels.astype(np.uint8)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Optical-axis depth in meters, shape (H_I, W_I); NaN marks invalid pixels."""

    depth: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("depth must be 2D")
        d = np.where(np.isfinite(d) & (d > 0), d, np.nan)
        object.__setattr__(self, "depth", _frozen(d))

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.depth)


def one_hot(cells: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Class ids (...) -> one-hot (..., F)."""
    return np.eye(NUM_CLASSES, dtype=dtype)[np.asarray(cells, np.intp)]


def colorize(grid: SemanticGrid | ProbabilisticGrid | np.ndarray) -> np.ndarray:
    if isinstance(grid, ProbabilisticGrid):
        grid = grid.argmax()
    cells = grid.cells if isinstance(grid, SemanticGrid) else np.asarray(grid)
    return COLORS[cells]


def render_png(grid, path) -> None:
    """Write one pixel per cell using the fixed class colors."""
    from PIL import Image

    Image.fromarray(colorize(grid), mode="RGB").save(Path(path), format="PNG")


# -- binary grid files -------------------------------------------------------

GRID_MAGIC = b"SGRD"
GRID_VERSION = 1
_HEADER = struct.Struct("<4sHHHfHHd")
HEADER_SIZE = _HEADER.size


def grid_to_bytes(grid: SemanticGrid) -> bytes:
    col, row = grid.agent_cell
    header = _HEADER.pack(
        GRID_MAGIC, GRID_VERSION, grid.width, grid.height, grid.cell_size, col, row, grid.timestamp
    )
    return header + np.ascontiguousarray(grid.cells, dtype=np.uint8).tobytes()


def grid_from_bytes(data: bytes) -> SemanticGrid:
    if len(data) < HEADER_SIZE:
        raise GridFormatError("size mismatch: file shorter than header")
    magic, version, w, h, cell, col, row, ts = _HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise GridFormatError(f"corrupt header: bad magic {magic!r}")
    if version != GRID_VERSION:
        raise GridFormatError(f"corrupt header: unsupported version {version}")
    if len(data) != HEADER_SIZE + w * h:
        raise GridFormatError(f"size mismatch: expected {HEADER_SIZE + w * h} bytes, got {len(data)}")
    cells = np.frombuffer(data, np.uint8, offset=HEADER_SIZE).reshape(h, w)
    if cells.max(initial=0) >= NUM_CLASSES:
        raise GridFormatError("corrupt payload: class id out of range")
    return SemanticGrid(cells, GridGeometry(w, h, float(cell), (col, row)), ts)


def write_grid(grid: SemanticGrid, path) -> None:
    Path(path).write_bytes(grid_to_bytes(grid))


def read_grid(path) -> SemanticGrid:
    return grid_from_bytes(Path(path).read_bytes())
