"""Box-world driving scenes.

World frame: X right, Y down, Z along the road. The road is straight along
Z and centered on X = 0; ground classes are bands in X (road, an optional
grass verge, then pavement). Objects are axis-aligned boxes standing on the
ground, optionally moving with constant velocity. The ego pose maps agent (x, z) to
world (X, Z) with the same 2x2 rotation used for orientation alignment.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..grid import (
    BICYCLE,
    BUILDING,
    CAR,
    LARGE_VEHICLE,
    PERSON,
    POLE_SIGN,
    ROAD,
    SIDEWALK,
    VEGETATION,
    GridGeometry,
)
from ..projection import CameraModel


@dataclass(frozen=True)
class Box:
    cls: int
    x: float  # footprint center X at t = 0
    z: float  # footprint center Z at t = 0
    half_x: float
    half_z: float
    height: float
    vx: float = 0.0
    vz: float = 0.0

    def at(self, t: float) -> "Box":
        return replace(self, x=self.x + self.vx * t, z=self.z + self.vz * t, vx=0.0, vz=0.0)


@dataclass(frozen=True)
class Layout:
    """Cross-section: road, then a grass verge, then pavement out to the buildings."""

    lanes: int = 4
    lane_width: float = 3.5
    verge_width: float = 0.0
    sidewalk_width: float = 3.0

    @property
    def road_half(self) -> float:
        return self.lanes * self.lane_width / 2

    @property
    def curb(self) -> float:
        """Distance from the road center to the start of the pavement."""
        return self.road_half + self.verge_width

    def ground_class(self, X: np.ndarray) -> np.ndarray:
        a = np.abs(np.asarray(X))
        return np.where(a < self.road_half, ROAD, np.where(a < self.curb, VEGETATION, SIDEWALK)).astype(np.uint8)


@dataclass(frozen=True)
class EgoMotion:
    x0: float = 1.75
    speed: float = 8.0
    yaw_rate: float = 0.0
    heading0: float = 0.0
    noise_std: float = 0.0  # std of Gaussian noise on reported rates

    def pose(self, t: float) -> tuple[float, float, float]:
        """World (X, Z, heading) at time t; heading 0 faces +Z."""
        psi = self.heading0 + self.yaw_rate * t
        if abs(self.yaw_rate) < 1e-12:
            return (self.x0 - self.speed * t * np.sin(self.heading0), self.speed * t * np.cos(self.heading0), psi)
        r = self.speed / self.yaw_rate
        return (
            self.x0 + r * (np.cos(psi) - np.cos(self.heading0)),
            r * (np.sin(psi) - np.sin(self.heading0)),
            psi,
        )


def default_camera(width: int = 256, height: int = 128, tilt: float = 0.05, cam_height: float = 1.5) -> CameraModel:
    """Forward camera scaled from a 2048x1024 rig with f = 2262 px."""
    f = 2262.0 * width / 2048
    return CameraModel(
        fx=f, fy=f, u0=(width - 1) / 2, v0=(height - 1) / 2,
        roll=-tilt, ty=-cam_height, width=width, height=height,
    )


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    extent: float = 200.0  # world length along Z that objects populate
    layout: Layout = field(default_factory=Layout)
    boxes: tuple[Box, ...] = ()
    ego: EgoMotion = field(default_factory=EgoMotion)
    cameras: tuple[CameraModel, ...] = field(default_factory=lambda: (default_camera(),))
    frame_rate: float = 17.0
    grid: GridGeometry = field(default_factory=lambda: GridGeometry.from_extent(64, 50.0))
    disparity_noise: float = 0.0  # px; 0 gives exact depth
    stereo_baseline: float = 0.22

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        if self.extent <= 0:
            raise ValueError("empty world: extent must be positive")
        if not self.cameras:
            raise ValueError("scene needs at least one camera")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cameras"] = [c.to_dict() for c in self.cameras]
        d["grid"] = {"width": self.grid.width, "height": self.grid.height,
                     "cell_size": self.grid.cell_size, "agent_cell": list(self.grid.agent_cell)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        grid = d.pop("grid", None)
        return cls(
            **{k: v for k, v in d.items() if k not in ("layout", "boxes", "ego", "cameras")},
            layout=Layout(**d.get("layout", {})),
            boxes=tuple(Box(**b) for b in d.get("boxes", ())),
            ego=EgoMotion(**d.get("ego", {})),
            cameras=tuple(CameraModel.from_dict(c) for c in d["cameras"]) if "cameras" in d else (default_camera(),),
            grid=GridGeometry(**{**grid, "agent_cell": tuple(grid["agent_cell"])}) if grid else GridGeometry.from_extent(64, 50.0),
        )


# object footprints: (half_x, half_z, height)
SIZES = {
    CAR: (0.9, 2.25, 1.5),
    LARGE_VEHICLE: (1.25, 5.0, 3.2),
    PERSON: (0.3, 0.3, 1.75),
    BICYCLE: (0.3, 0.9, 1.6),
    POLE_SIGN: (0.15, 0.15, 4.0),
}


def random_scene(seed: int, **overrides) -> SceneSpec:
    """A randomly populated straight street; fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    layout = overrides.pop("layout", None) or Layout(
        lanes=int(rng.choice([2, 4])),
        verge_width=float(rng.choice([0.0, rng.uniform(1.0, 2.5)])),
        sidewalk_width=float(rng.uniform(2.5, 4.0)),
    )
    lw, rh, sw = layout.lane_width, layout.road_half, layout.sidewalk_width
    curb = layout.curb
    lane_centers = [-rh + lw * (i + 0.5) for i in range(layout.lanes)]
    # right-hand traffic: lanes with X > 0 drive towards +Z
    fwd_lanes = [c for c in lane_centers if c > 0]
    back_lanes = [c for c in lane_centers if c < 0]

    ego_lane = float(rng.choice(fwd_lanes))
    speed = float(rng.choice([0.0, rng.uniform(4.0, 12.0), rng.uniform(4.0, 12.0), rng.uniform(4.0, 12.0)]))
    ego = EgoMotion(
        x0=ego_lane + float(rng.uniform(-0.4, 0.4)),
        speed=speed,
        yaw_rate=float(rng.uniform(-0.06, 0.06)) if speed > 0 else 0.0,
        heading0=float(rng.uniform(-0.08, 0.08)),
    )
    z_lo, z_hi = -40.0, 120.0
    boxes: list[Box] = []

    def add(cls, x, z, vx=0.0, vz=0.0, size=None):
        hx, hz, h = size or SIZES[cls]
        boxes.append(Box(cls, float(x), float(z), hx, hz, h, float(vx), float(vz)))

    for side in (-1.0, 1.0):
        edge = curb + sw
        z = z_lo + rng.uniform(0, 10)
        while z < z_hi:
            # building frontage with gaps filled by trees or hedges
            length = rng.uniform(8, 25)
            if rng.random() < 0.65:
                depth = rng.uniform(8, 15)
                setback = rng.uniform(1.0, 5.0)
                x = side * (edge + setback + depth / 2)
                add(BUILDING, x, z + length / 2, size=(depth / 2, length / 2, rng.uniform(6, 20)))
            else:
                for zz in np.arange(z + 2, z + length - 1, rng.uniform(4, 8)):
                    r = rng.uniform(1.0, 2.0)
                    add(VEGETATION, side * (edge + rng.uniform(1.5, 5.0)), zz, size=(r, r, rng.uniform(2, 6)))
            z += length + rng.uniform(0, 6)
        # poles along the curb
        for zz in np.arange(z_lo + rng.uniform(0, 15), z_hi, rng.uniform(12, 25)):
            add(POLE_SIGN, side * (curb + 0.4), zz)
        # pedestrians on the sidewalk
        for _ in range(rng.poisson(4)):
            add(PERSON, side * (curb + rng.uniform(0.5, sw - 0.5)), rng.uniform(z_lo, z_hi),
                vz=rng.choice([-1, 1]) * rng.uniform(0.8, 1.8))
        # parked cars along the curb, only on streets with room for them
        if layout.lanes == 4:
            for zz in np.arange(z_lo + rng.uniform(0, 10), z_hi, rng.uniform(6, 14)):
                if rng.random() < 0.35:
                    add(CAR, side * (rh - 1.2), zz)

    # traffic; keep the ego lane clear right in front of the agent
    for lane in lane_centers:
        direction = 1.0 if lane > 0 else -1.0
        z = z_lo + rng.uniform(0, 15)
        while z < z_hi:
            cls = LARGE_VEHICLE if rng.random() < 0.15 else CAR
            v = direction * rng.uniform(3.0, 14.0)
            near_ego = abs(lane - ego_lane) < 1e-6 and -12.0 < z < 14.0
            if not near_ego and (layout.lanes != 4 or abs(lane) < rh - lw):
                if abs(lane - ego_lane) < 1e-6 and z > 0:
                    v = max(v, speed)
                if abs(lane - ego_lane) < 1e-6 and z < 0:
                    v = min(v, speed)
                add(cls, lane + rng.uniform(-0.3, 0.3), z, vz=v)
            z += rng.uniform(10, 35)
    # cyclists near the road edge, pedestrians crossing
    for _ in range(rng.poisson(1.5)):
        lane = float(rng.choice(fwd_lanes + back_lanes))
        direction = 1.0 if lane > 0 else -1.0
        add(BICYCLE, np.sign(lane) * (rh - 0.6), rng.uniform(z_lo, z_hi), vz=direction * rng.uniform(3, 6))
    for _ in range(rng.poisson(0.8)):
        side = rng.choice([-1, 1])
        add(PERSON, side * rng.uniform(0.5, rh), rng.uniform(8, 40), vx=-side * rng.uniform(0.8, 1.8))

    kw = dict(seed=seed, layout=layout, boxes=tuple(boxes), ego=ego)
    kw.update(overrides)
    return SceneSpec(**kw)
