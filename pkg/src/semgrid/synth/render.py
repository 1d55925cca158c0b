"""Per-pixel raycasting of box-world scenes into labels, depth and egomotion."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..alignment import EgomotionTrack, discretize
from ..grid import INVALID, PRIORITY_RANK, DepthMap, GridGeometry, SemanticGrid, SemanticImage
from ..projection import CameraModel, Crop, SemanticPointCloud
from .scene import Box, SceneSpec

# Anything farther than this is treated like sky: no label, no depth.
MAX_RANGE = 60.0


@dataclass(frozen=True, eq=False)
class FrameBundle:
    index: int
    t: float
    images: tuple[SemanticImage, ...]
    depths: tuple[DepthMap, ...]
    cameras: tuple[CameraModel, ...]
    yaw_rate: float
    vx: float
    vz: float
    topdown: SemanticGrid | None = None

    def __post_init__(self):
        if not (len(self.images) == len(self.depths) == len(self.cameras)):
            raise ValueError("need one image and depth map per camera")
        for s, d in zip(self.images, self.depths):
            if s.shape != d.shape:
                raise ValueError("image and depth dimensions differ")


def _rot(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s], [s, c]])


def boxes_at(spec: SceneSpec, t: float) -> list[Box]:
    return [b.at(t) for b in spec.boxes]


def _slab(origin: np.ndarray, dirs: np.ndarray, b: Box) -> np.ndarray:
    """Entry parameter of each ray into box ``b``; inf on a miss."""
    lo = np.array([b.x - b.half_x, -b.height, b.z - b.half_z])
    hi = np.array([b.x + b.half_x, 0.0, b.z + b.half_z])
    inv = 1.0 / np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t1 = (lo - origin) * inv
    t2 = (hi - origin) * inv
    near = np.minimum(t1, t2).max(-1)
    far = np.maximum(t1, t2).min(-1)
    return np.where((near <= far) & (near > 0), near, np.inf)


def raycast(
    origin: np.ndarray,
    dirs: np.ndarray,
    boxes: Sequence[Box],
    max_range: float = MAX_RANGE,
    rois: Sequence[tuple[int, int, int, int] | None] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit along each ray ``origin + lam * dirs`` (world X, Y, Z).

    ``dirs`` has shape (H, W, 3). ``lam`` is in units of the direction
    vectors, so with optical-axis-normalized directions it is optical depth.
    Returns (lam, hit) with hit = box index, -1 for the ground plane Y = 0 and
    -2 for no hit (lam = NaN). ``rois`` optionally bounds the pixel rectangle
    (r0, r1, c0, c1) each box can cover; None means the whole image.
    """
    dy = dirs[..., 1]
    lam = np.full(dy.shape, np.inf)
    hit = np.full(dy.shape, -2, np.int64)
    down = dy > 1e-12
    lam[down] = -origin[1] / dy[down]
    hit[down] = -1
    for k, b in enumerate(boxes):
        r0, r1, c0, c1 = (0, dy.shape[0], 0, dy.shape[1]) if rois is None or rois[k] is None else rois[k]
        if r1 <= r0 or c1 <= c0:
            continue
        near = _slab(origin, dirs[r0:r1, c0:c1], b)
        sub_lam = lam[r0:r1, c0:c1]
        closer = near < sub_lam
        sub_lam[closer] = near[closer]
        hit[r0:r1, c0:c1][closer] = k
    # the ray length, not lam, bounds visibility
    far = lam * np.linalg.norm(dirs, axis=-1) > max_range
    hit[far | ~np.isfinite(lam)] = -2
    lam[hit == -2] = np.nan
    return lam, hit


def _box_roi(b: Box, cam: CameraModel, world_to_agent, shape) -> tuple[int, int, int, int] | None:
    """Pixel rectangle enclosing the box's image, or None if it reaches behind the camera."""
    xs = [b.x - b.half_x, b.x + b.half_x]
    zs = [b.z - b.half_z, b.z + b.half_z]
    corners = np.array([(x, y, z) for x in xs for y in (-b.height, 0.0) for z in zs])
    agent = world_to_agent(corners)
    cam_pts = (agent - cam.t) @ cam.R  # rows are R^T (p - t)
    if np.any(cam_pts[:, 2] <= 1e-6):
        return None
    u = cam.fx * cam_pts[:, 0] / cam_pts[:, 2] + cam.u0
    v = cam.fy * cam_pts[:, 1] / cam_pts[:, 2] + cam.v0
    h, w = shape
    c0, c1 = int(np.clip(np.floor(u.min()) - 1, 0, w)), int(np.clip(np.ceil(u.max()) + 2, 0, w))
    r0, r1 = int(np.clip(np.floor(v.min()) - 1, 0, h)), int(np.clip(np.ceil(v.max()) + 2, 0, h))
    return r0, r1, c0, c1


def render_camera(
    spec: SceneSpec, cam: CameraModel, t: float, boxes: Sequence[Box] | None = None, max_range: float = MAX_RANGE
) -> tuple[SemanticImage, DepthMap]:
    """Labels and optical-axis depth for one camera at time ``t``."""
    if cam.width is None or cam.height is None:
        raise ValueError("camera needs an image size to render")
    shape = (cam.height, cam.width)
    x0, z0, psi = spec.ego.pose(t)
    rot = _rot(psi)
    rays = cam.ray_directions(shape)
    dirs = np.empty_like(rays)
    dirs[..., 1] = rays[..., 1]
    dirs[..., [0, 2]] = rays[..., [0, 2]] @ rot.T
    origin = np.empty(3)
    origin[1] = cam.ty
    origin[[0, 2]] = rot @ np.array([cam.tx, cam.tz]) + (x0, z0)

    def world_to_agent(p):
        out = p.copy()
        out[:, [0, 2]] = (p[:, [0, 2]] - (x0, z0)) @ rot
        return out

    boxes = boxes_at(spec, t) if boxes is None else boxes
    # cull boxes out of range or behind the camera
    fwd = rot @ np.array([0.0, 1.0])
    near_boxes = []
    for b in boxes:
        rx, rz = b.x - origin[0], b.z - origin[2]
        reach = np.hypot(b.half_x, b.half_z)
        if np.hypot(rx, rz) - reach < max_range and rx * fwd[0] + rz * fwd[1] > -reach:
            near_boxes.append(b)
    rois = [_box_roi(b, cam, world_to_agent, shape) for b in near_boxes]
    lam, hit = raycast(origin, dirs, near_boxes, max_range, rois)

    ground_x = origin[0] + lam * dirs[..., 0]
    labels = np.full(shape, INVALID, np.uint8)
    g = hit == -1
    labels[g] = spec.layout.ground_class(ground_x[g])
    if near_boxes:
        cls = np.array([b.cls for b in near_boxes], np.uint8)
        on_box = hit >= 0
        labels[on_box] = cls[hit[on_box]]
    return SemanticImage(labels), DepthMap(lam)


def topdown_grid(spec: SceneSpec, t: float, geometry: GridGeometry, supersample: int = 4) -> SemanticGrid:
    """True world classes around the agent at ``t``, in the agent frame.

    Each cell is sampled on a ``supersample`` x ``supersample`` lattice; the
    samples are rasterized with the same priority rule as the pipeline.
    """
    k = supersample
    cs = geometry.cell_size
    xs, zs = geometry.cell_centers()
    off = (np.arange(k) + 0.5) / k - 0.5
    ox, oz = np.meshgrid(off * cs, off * cs)
    ax = (xs[..., None, None] + ox).ravel()
    az = (zs[..., None, None] + oz).ravel()
    x0, z0, psi = spec.ego.pose(t)
    world = np.stack([ax, az], -1) @ _rot(psi).T + (x0, z0)
    # boxes stand on the ground and hide it; overlapping boxes go by priority
    on_box = np.zeros(len(world), np.uint8)
    for b in boxes_at(spec, t):
        inside = (np.abs(world[:, 0] - b.x) <= b.half_x) & (np.abs(world[:, 1] - b.z) <= b.half_z)
        on_box[inside] = np.where(PRIORITY_RANK[on_box[inside]] >= PRIORITY_RANK[b.cls], on_box[inside], b.cls)
    cls = np.where(on_box > 0, on_box, spec.layout.ground_class(world[:, 0]))
    # sample offsets stay clear of cell borders, so each lands in its own cell
    return discretize(SemanticPointCloud(ax, az, cls, t), geometry, t)


def _noisy_depth(depth: np.ndarray, spec: SceneSpec, cam: CameraModel, rng: np.random.Generator) -> np.ndarray:
    """Perturb depth through a stereo disparity with Gaussian pixel noise."""
    fb = cam.fx * spec.stereo_baseline
    disp = fb / depth + rng.normal(0.0, spec.disparity_noise, depth.shape)
    return np.where(disp > 0, fb / np.where(disp > 0, disp, 1.0), np.nan)


def simulate(
    spec: SceneSpec,
    n_frames: int,
    indices: Sequence[int] | None = None,
    topdown: bool = True,
    max_range: float = MAX_RANGE,
) -> list[FrameBundle]:
    """Render frames ``indices`` (default all) of an ``n_frames`` clip at ``spec.frame_rate``."""
    for cam in spec.cameras:
        if not (cam.fx > 0 and cam.fy > 0):
            raise ValueError("degenerate camera")
    idx = range(n_frames) if indices is None else indices
    out = []
    for i in idx:
        if not 0 <= i < n_frames:
            raise ValueError(f"frame index {i} outside clip of {n_frames}")
        t = i / spec.frame_rate
        boxes = boxes_at(spec, t)
        rng = np.random.default_rng([spec.seed, i, 0])
        images, depths = [], []
        for cam in spec.cameras:
            s, d = render_camera(spec, cam, t, boxes, max_range)
            if spec.disparity_noise > 0:
                d = DepthMap(_noisy_depth(d.depth, spec, cam, rng))
            images.append(s)
            depths.append(d)
        yaw_rate, vz = _ego_sample(spec, i)
        out.append(
            FrameBundle(
                i, t, tuple(images), tuple(depths), tuple(spec.cameras), yaw_rate, 0.0, vz,
                topdown_grid(spec, t, spec.grid) if topdown else None,
            )
        )
    return out


def _ego_sample(spec: SceneSpec, i: int) -> tuple[float, float]:
    """Reported (yaw rate, forward speed) of frame ``i``; noisy if enabled."""
    yaw_rate, vz = spec.ego.yaw_rate, spec.ego.speed
    if spec.ego.noise_std > 0:
        rng = np.random.default_rng([spec.seed, i, 1])
        yaw_rate += rng.normal(0.0, spec.ego.noise_std * 0.01)
        vz += rng.normal(0.0, spec.ego.noise_std)
    return float(yaw_rate), float(vz)


def egomotion_track(spec: SceneSpec, n_frames: int) -> EgomotionTrack:
    """Per-frame egomotion samples of a clip (rates held until the next frame)."""
    samples = np.array([_ego_sample(spec, i) for i in range(n_frames)]).reshape(-1, 2)
    t = np.arange(n_frames) / spec.frame_rate
    return EgomotionTrack(t, samples[:, 0], np.zeros(n_frames), samples[:, 1])


# -- sensor splits -------------------------------------------------------------

# Reference crops on a 512 x 256 image: (top, bottom, left, right) for the lower
# and the upper virtual sensor.
SPLITS = {
    "split1": ((130, 256, 0, 512), (0, 130, 0, 512)),
    "split2": ((145, 256, 0, 512), (0, 125, 40, 472)),
}


def split_crops(split: str, width: int, height: int) -> tuple[Crop, Crop]:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {sorted(SPLITS)}")

    def scale(v, ref, size):
        return int(np.floor(v * size / ref + 0.5))

    return tuple(
        Crop(scale(t, 256, height), scale(b, 256, height), scale(l, 512, width), scale(r, 512, width))
        for t, b, l, r in SPLITS[split]
    )


def apply_split(bundle: FrameBundle, split: str) -> FrameBundle:
    """Replace the single camera with a lower and an upper cropped virtual sensor."""
    if len(bundle.cameras) != 1:
        raise ValueError("apply_split expects a single-camera bundle")
    cam, s, d = bundle.cameras[0], bundle.images[0], bundle.depths[0]
    lower, upper = split_crops(split, s.shape[1], s.shape[0])
    return replace(
        bundle,
        images=(s, s),
        depths=(d, d),
        cameras=(cam.with_crop(lower), cam.with_crop(upper)),
    )
