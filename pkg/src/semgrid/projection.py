"""Pixel + depth -> agent-frame ground-plane point cloud.

Agent frame: x right, y down, z forward (the optical frame of a camera with
identity extrinsics). The ground plane is x-z; the height y is dropped after
the transform.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import INVALID, NUM_CLASSES, DepthMap, SemanticImage


def rotation_ypr(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Camera-to-agent rotation, Rz(yaw) @ Ry(pitch) @ Rx(roll) written out."""
    sy, cy = np.sin(yaw), np.cos(yaw)
    sp, cp = np.sin(pitch), np.cos(pitch)
    sr, cr = np.sin(roll), np.cos(roll)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


@dataclass(frozen=True)
class Crop:
    """Pixel rectangle ``rows [top, bottom) x cols [left, right)`` a sensor sees."""

    top: int
    bottom: int
    left: int
    right: int

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        m = np.zeros(shape, bool)
        m[self.top : self.bottom, self.left : self.right] = True
        return m


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the camera pose in the agent frame.

    Note that with the y-down agent frame the ``roll`` angle rotates about the
    lateral x axis, i.e. it tilts the optical axis up or down. A camera looking
    down by ``tilt`` radians has ``roll = -tilt``.
    """

    fx: float
    fy: float
    u0: float
    v0: float
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0
    width: int | None = None
    height: int | None = None
    crop: Crop | None = None
    R: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        R = rotation_ypr(self.yaw, self.pitch, self.roll)
        R.flags.writeable = False
        object.__setattr__(self, "R", R)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.u0], [0.0, self.fy, self.v0], [0.0, 0.0, 1.0]])

    @property
    def t(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz])

    def with_crop(self, crop: Crop | None) -> "CameraModel":
        from dataclasses import replace

        return replace(self, crop=crop)

    def ray_directions(self, shape: tuple[int, int]) -> np.ndarray:
        """Agent-frame direction of K^-1 (u, v, 1) for every pixel, shape (H, W, 3).

        Scaling by optical depth gives the point relative to the camera center.
        """
        h, w = shape
        v, u = np.mgrid[0:h, 0:w].astype(np.float64)
        rays = np.stack([(u - self.u0) / self.fx, (v - self.v0) / self.fy, np.ones_like(u)], -1)
        return rays @ self.R.T

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("fx", "fy", "u0", "v0", "yaw", "pitch", "roll", "tx", "ty", "tz")}
        d["width"], d["height"] = self.width, self.height
        d["crop"] = None if self.crop is None else [self.crop.top, self.crop.bottom, self.crop.left, self.crop.right]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        d = dict(d)
        crop = d.pop("crop", None)
        return cls(**d, crop=None if crop is None else Crop(*crop))


@dataclass(frozen=True, eq=False)
class SemanticPointCloud:
    x: np.ndarray
    z: np.ndarray
    classes: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, np.float64).ravel()
        z = np.asarray(self.z, np.float64).ravel()
        c = np.asarray(self.classes).ravel().astype(np.uint8)
        if not (x.shape == z.shape == c.shape):
            raise ValueError("x, z and classes must have equal length")
        if c.size and c.max() >= NUM_CLASSES:
            raise ValueError("invalid class id in point cloud")
        if not (np.isfinite(x).all() and np.isfinite(z).all()):
            raise ValueError("point coordinates must be finite")
        for name, a in (("x", x), ("z", z), ("classes", c)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return self.x.size

    @classmethod
    def empty(cls, timestamp: float = 0.0) -> "SemanticPointCloud":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0, np.uint8), timestamp)


def pixel_to_agent(cam: CameraModel, u, v, depth) -> np.ndarray:
    """Agent-frame 3D point(s) ``R K^-1 d (u, v, 1)^T + t``; broadcasts, last axis = xyz."""
    u, v, depth = np.broadcast_arrays(*(np.asarray(a, np.float64) for a in (u, v, depth)))
    cam_pt = np.stack([(u - cam.u0) / cam.fx * depth, (v - cam.v0) / cam.fy * depth, depth], -1)
    # elementwise rather than matmul: BLAS rounding varies with the number of
    # rows, and a pixel's point must not depend on which others are projected
    return (cam_pt[..., None, :] * cam.R).sum(-1) + cam.t


def project_to_pointcloud(
    s: SemanticImage, d: DepthMap, cam: CameraModel, timestamp: float = 0.0
) -> SemanticPointCloud:
    """One ground-plane point per valid pixel, in row-major pixel order.

    Sky/unmapped labels, invalid depths and pixels outside ``cam.crop`` are
    skipped. Points beyond any grid are kept; discretization drops them.
    """
    if s.shape != d.shape:
        raise ValueError(f"image {s.shape} and depth {d.shape} dimensions differ")
    keep = (s.labels != INVALID) & d.valid
    if cam.crop is not None:
        keep &= cam.crop.mask(s.shape)
    v, u = np.nonzero(keep)
    pts = pixel_to_agent(cam, u, v, d.depth[v, u])
    return SemanticPointCloud(pts[:, 0], pts[:, 2], s.labels[v, u], timestamp)
