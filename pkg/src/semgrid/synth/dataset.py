"""Sequence sampling, grid sequence containers and on-disk datasets.

A sequence holds n input frames o, o+s, ..., o+(n-1)s and one target frame
o+(n-1)s+h*s. Input grids are stored orientation-aligned to the first input
frame but not yet translated, so both the translated and the untranslated
(no-translation) variants come from the same files. The target is always the
grid of the full, uncropped camera, aligned to the same orientation.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..alignment import EgomotionTrack, frame_to_grid, integrate_orientation, integrate_translation, translate_grid
from ..grid import NUM_CLASSES, GridGeometry, SemanticGrid, read_grid, write_grid
from ..projection import CameraModel
from .render import FrameBundle, apply_split, egomotion_track, simulate
from .scene import default_camera, random_scene

# Exact synthetic depth leaves one-cell-thick facades and vehicle faces; the
# wider kernels meant for noisy stereo depth would erase them.
DESK_MORPH_PROFILE = {
    "static": (3, 2, 2, 2),
    "small_static": (1, 1, 1, 1),
    "vehicles": (1, 1, 1, 1),
    "small_dynamic": (1, 1, 1, 1),
}


class DatasetError(ValueError):
    pass


def sequence_span(n: int, s: int, h: int) -> int:
    """Number of clip frames from the first input to the target, inclusive."""
    return (n - 1) * s + h * s + 1


def sequence_indices(
    n_frames: int,
    n: int,
    s: int,
    h: int,
    overlap: bool,
    count: int | None = None,
    rng: np.random.Generator | None = None,
    align_horizon: int | None = None,
) -> list[tuple[tuple[int, ...], int]]:
    """(input frame indices, target index) of every sequence drawn from one clip.

    Overlapping sampling uses every valid offset, or ``count`` of them drawn
    without replacement. Disjoint sampling packs sequences back to back; with
    ``align_horizon`` the packing uses that horizon's span, so sequences of
    different horizons share their offsets and input frames.
    """
    if n < 1 or s < 1 or h < 1:
        raise ValueError("n, s and h must be positive")
    span = sequence_span(n, s, h)
    if span > n_frames:
        raise DatasetError(f"clip of {n_frames} frames too short for n={n}, s={s}, h={h}")
    if overlap:
        offsets = np.arange(n_frames - span + 1)
        if count is not None and count < offsets.size:
            rng = rng if rng is not None else np.random.default_rng(0)
            offsets = np.sort(rng.choice(offsets, count, replace=False))
    else:
        pack = sequence_span(n, s, max(h, align_horizon or h))
        if pack > n_frames:
            raise DatasetError(f"clip of {n_frames} frames too short for horizon {align_horizon}")
        offsets = np.arange(n_frames // pack) * pack
    return [(tuple(int(o) + k * s for k in range(n)), int(o) + (n - 1) * s + h * s) for o in offsets]


@dataclass(frozen=True, eq=False)
class GridSequence:
    """Inputs of one training or validation sample plus its target.

    ``inputs`` has shape (sensors, n, H, W) and holds class ids.
    """

    inputs: np.ndarray
    target: np.ndarray
    times: tuple[float, ...]
    tau: float
    track: EgomotionTrack
    geometry: GridGeometry
    split: str = "train"
    clip: int = 0
    scene_seed: int = 0
    offset: int = 0
    horizon: int = 1

    def __post_init__(self):
        inputs = np.asarray(self.inputs, np.uint8)
        if inputs.ndim != 4 or inputs.shape[2:] != self.geometry.shape:
            raise ValueError(f"inputs shape {inputs.shape} incompatible with geometry")
        if len(self.times) != inputs.shape[1]:
            raise ValueError("one timestamp per input step required")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "target", np.asarray(self.target, np.uint8))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))

    @property
    def n_sensors(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_steps(self) -> int:
        return self.inputs.shape[1]

    def shift(self, i: int) -> tuple[float, float]:
        """Displacement from input step ``i`` to ``tau`` in the sequence frame."""
        return integrate_translation(self.track, self.times[i], self.tau, t0=self.times[0])

    def synchronized(self, translate: bool = True) -> np.ndarray:
        """Input class ids moved to ``tau`` (or left in place), shape (sensors, n, H, W)."""
        if not translate:
            return self.inputs
        out = np.empty_like(self.inputs)
        for i in range(self.n_steps):
            q = self.shift(i)
            for k in range(self.n_sensors):
                out[k, i] = translate_grid(SemanticGrid(self.inputs[k, i], self.geometry), q).cells
        return out

    def grids(self, translate: bool = True) -> list[list[SemanticGrid]]:
        """Synchronized inputs as ``[sensor][step]`` grids."""
        cells = self.synchronized(translate)
        return [[SemanticGrid(c, self.geometry, self.tau) for c in sensor] for sensor in cells]

    def target_grid(self) -> SemanticGrid:
        return SemanticGrid(self.target, self.geometry, self.tau)

    def stacked(self, translate: bool = True, dtype=np.float32) -> np.ndarray:
        """One-hot network input (H, W, sensors * n * F); channel (k * n + i) * F + c."""
        cells = self.synchronized(translate)
        s, n, h, w = cells.shape
        flat = cells.transpose(2, 3, 0, 1).reshape(h, w, s * n)
        out = np.zeros((h, w, s * n * NUM_CLASSES), dtype)
        idx = np.arange(s * n) * NUM_CLASSES + flat
        np.put_along_axis(out, idx.astype(np.intp), 1, axis=-1)
        return out


def sample_sequences(
    frames: Sequence[FrameBundle],
    track: EgomotionTrack,
    n: int,
    s: int,
    h: int,
    overlap: bool,
    seed: int = 0,
    geometry: GridGeometry | None = None,
    profile: Mapping | None = DESK_MORPH_PROFILE,
    split: str | None = None,
    count: int | None = None,
    n_frames: int | None = None,
    align_horizon: int | None = None,
    split_name: str | None = None,
    clip: int = 0,
    scene_seed: int = 0,
) -> list[GridSequence]:
    """Cut a rendered clip into grid sequences.

    ``frames`` are single-camera bundles; ``split`` ("split1" / "split2")
    replaces the camera by two cropped sensors for the inputs only. Frames
    not rendered (see ``simulate(indices=...)``) must not be needed by any
    sequence.
    """
    by_index = {f.index: f for f in frames}
    n_frames = n_frames if n_frames is not None else (max(by_index) + 1 if by_index else 0)
    geometry = geometry or GridGeometry.from_extent(64, 50.0)
    rng = np.random.default_rng([seed, clip])
    plan = sequence_indices(n_frames, n, s, h, overlap, count, rng, align_horizon)
    out = []
    for inputs, target in plan:
        missing = [i for i in (*inputs, target) if i not in by_index]
        if missing:
            raise DatasetError(f"frames {missing} were not rendered")
        t0 = by_index[inputs[0]].t
        sensors: list[list[np.ndarray]] = []
        for i in inputs:
            b = by_index[i]
            b = apply_split(b, split) if split else b
            alpha = integrate_orientation(track, t0, b.t)
            sensors.append([
                frame_to_grid(img, d, cam, alpha, geometry, profile).cells
                for img, d, cam in zip(b.images, b.depths, b.cameras)
            ])
        tb = by_index[target]
        tgt = frame_to_grid(tb.images[0], tb.depths[0], tb.cameras[0], integrate_orientation(track, t0, tb.t),
                            geometry, profile).cells
        out.append(
            GridSequence(
                inputs=np.array(sensors).transpose(1, 0, 2, 3),
                target=tgt,
                times=tuple(by_index[i].t for i in inputs),
                tau=tb.t,
                track=track.slice(t0, tb.t),
                geometry=geometry,
                split=split_name or ("train" if overlap else "val"),
                clip=clip,
                scene_seed=scene_seed,
                offset=inputs[0],
                horizon=h,
            )
        )
    return out


# -- dataset configuration and building ----------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    train_clips: int = 100
    val_clips: int = 200
    clip_frames: int = 30
    n: int = 2
    step: int = 5
    horizon: int = 1
    val_horizons: tuple[int, ...] = (1, 2, 3)
    train_per_clip: int | None = None
    split: str | None = None  # None, "split1" or "split2"
    image_width: int = 256
    image_height: int = 128
    grid_size: int = 64
    grid_extent: float = 50.0
    frame_rate: float = 17.0
    morph_profile: dict | None = field(default_factory=lambda: dict(DESK_MORPH_PROFILE))
    disparity_noise: float = 0.0
    ego_noise: float = 0.0

    def __post_init__(self):
        if self.split not in (None, "split1", "split2"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.train_clips < 0 or self.val_clips < 0:
            raise ValueError("clip counts must be non-negative")
        if self.horizon not in self.val_horizons:
            raise ValueError("training horizon must be one of the validation horizons")
        object.__setattr__(self, "val_horizons", tuple(int(h) for h in self.val_horizons))
        if self.morph_profile is not None:
            object.__setattr__(self, "morph_profile", {k: tuple(v) for k, v in self.morph_profile.items()})

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry.from_extent(self.grid_size, self.grid_extent)

    @property
    def n_sensors(self) -> int:
        return 1 if self.split is None else 2

    def camera(self) -> CameraModel:
        return default_camera(self.image_width, self.image_height)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["val_horizons"] = list(self.val_horizons)
        if self.morph_profile is not None:
            d["morph_profile"] = {k: list(v) for k, v in sorted(self.morph_profile.items())}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown dataset options: {sorted(unknown)}")
        d = dict(d)
        if "val_horizons" in d:
            d["val_horizons"] = tuple(d["val_horizons"])
        return cls(**d)


def scene_seed(seed: int, split: str, clip: int) -> int:
    return int(np.random.SeedSequence([seed, 0 if split == "train" else 1, clip]).generate_state(1)[0])


def clip_scene(config: DatasetConfig, split: str, clip: int):
    spec = random_scene(
        scene_seed(config.seed, split, clip),
        cameras=(config.camera(),),
        grid=config.geometry,
        frame_rate=config.frame_rate,
        disparity_noise=config.disparity_noise,
    )
    if config.ego_noise:
        spec = replace(spec, ego=replace(spec.ego, noise_std=config.ego_noise))
    return spec


def build_dataset(config: DatasetConfig, progress=None) -> "GridSequenceDataset":
    """Render all clips and cut them into training and validation sequences."""
    seqs: list[GridSequence] = []
    split = config.split
    common = dict(n=config.n, s=config.step, geometry=config.geometry, profile=config.morph_profile, split=split,
                  n_frames=config.clip_frames, seed=config.seed)
    for c in range(config.train_clips):
        spec = clip_scene(config, "train", c)
        track = egomotion_track(spec, config.clip_frames)
        needed = sorted({i for ins, t in sequence_indices(config.clip_frames, config.n, config.step, config.horizon,
                                                          True, config.train_per_clip,
                                                          np.random.default_rng([config.seed, c]))
                         for i in (*ins, t)})
        frames = simulate(spec, config.clip_frames, needed, topdown=False)
        seqs += sample_sequences(frames, track, h=config.horizon, overlap=True, count=config.train_per_clip,
                                 split_name="train", clip=c, scene_seed=spec.seed, **common)
        if progress:
            progress("train", c)
    h_max = max(config.val_horizons)
    for c in range(config.val_clips):
        spec = clip_scene(config, "val", c)
        track = egomotion_track(spec, config.clip_frames)
        needed = sorted({i for h in config.val_horizons
                         for ins, t in sequence_indices(config.clip_frames, config.n, config.step, h, False,
                                                        align_horizon=h_max)
                         for i in (*ins, t)})
        frames = simulate(spec, config.clip_frames, needed, topdown=False)
        for h in config.val_horizons:
            seqs += sample_sequences(frames, track, h=h, overlap=False, align_horizon=h_max,
                                     split_name="val", clip=c, scene_seed=spec.seed, **common)
        if progress:
            progress("val", c)
    return GridSequenceDataset(seqs, config)


# -- on-disk format ------------------------------------------------------------------

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


class GridSequenceDataset:
    """A list of :class:`GridSequence` with its generating configuration."""

    def __init__(self, sequences: Iterable[GridSequence], config: DatasetConfig | None = None):
        self.sequences = list(sequences)
        self.config = config

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    def subset(self, split: str | None = None, horizon: int | None = None) -> "GridSequenceDataset":
        keep = [
            q for q in self.sequences
            if (split is None or q.split == split) and (horizon is None or q.horizon == horizon)
        ]
        return GridSequenceDataset(keep, self.config)

    @property
    def n_sensors(self) -> int:
        return self.sequences[0].n_sensors if self.sequences else (self.config.n_sensors if self.config else 1)

    @property
    def n_steps(self) -> int:
        return self.sequences[0].n_steps if self.sequences else (self.config.n if self.config else 1)

    def batch(self, idx: Sequence[int], translate: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(stacked inputs (B, H, W, C), targets (B, H, W), synchronized inputs (B, S, n, H, W))."""
        sync = np.stack([self.sequences[i].synchronized(translate) for i in idx])
        b, s, n, h, w = sync.shape
        x = np.zeros((b, h, w, s * n * NUM_CLASSES), np.float32)
        flat = sync.transpose(0, 3, 4, 1, 2).reshape(b, h, w, s * n)
        np.put_along_axis(x, (np.arange(s * n) * NUM_CLASSES + flat).astype(np.intp), 1, axis=-1)
        y = np.stack([self.sequences[i].target for i in idx])
        return x, y, sync

    # -- persistence --------------------------------------------------------------

    def save(self, root) -> Path:
        root = Path(root)
        (root / "grids").mkdir(parents=True, exist_ok=True)
        entries = []
        for k, q in enumerate(self.sequences):
            files = []
            for si in range(q.n_sensors):
                names = []
                for i in range(q.n_steps):
                    name = f"grids/{k:06d}_s{si}_f{i}.sgrd"
                    write_grid(SemanticGrid(q.inputs[si, i], q.geometry, q.times[i]), root / name)
                    names.append(name)
                files.append(names)
            target = f"grids/{k:06d}_target.sgrd"
            write_grid(q.target_grid(), root / target)
            entries.append({
                "split": q.split,
                "clip": q.clip,
                "scene_seed": q.scene_seed,
                "offset": q.offset,
                "horizon": q.horizon,
                "times": list(q.times),
                "tau": q.tau,
                "track": q.track.to_dict(),
                "inputs": files,
                "target": target,
            })
        manifest = {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict() if self.config else None,
            "cameras": self._cameras(),
            "sequences": entries,
        }
        (root / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=1))
        return root

    def _cameras(self) -> list[dict]:
        if self.config is None:
            return []
        from .render import split_crops

        cam = self.config.camera()
        if self.config.split is None:
            return [cam.to_dict()]
        crops = split_crops(self.config.split, cam.width, cam.height)
        return [cam.with_crop(c).to_dict() for c in crops]

    @classmethod
    def load(cls, root) -> "GridSequenceDataset":
        root = Path(root)
        try:
            manifest = json.loads((root / MANIFEST).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read dataset manifest in {root}: {exc}") from exc
        if manifest.get("format_version") != FORMAT_VERSION:
            raise DatasetError("unsupported dataset format version")
        config = DatasetConfig.from_dict(manifest["config"]) if manifest.get("config") else None
        seqs = []
        try:
            for e in manifest["sequences"]:
                grids = [[read_grid(root / f) for f in sensor] for sensor in e["inputs"]]
                target = read_grid(root / e["target"])
                seqs.append(GridSequence(
                    inputs=np.array([[g.cells for g in sensor] for sensor in grids]),
                    target=target.cells,
                    times=tuple(e["times"]),
                    tau=e["tau"],
                    track=EgomotionTrack.from_dict(e["track"]),
                    geometry=target.geometry,
                    split=e["split"],
                    clip=e["clip"],
                    scene_seed=e["scene_seed"],
                    offset=e["offset"],
                    horizon=e["horizon"],
                ))
        except (OSError, KeyError, ValueError) as exc:
            raise DatasetError(f"corrupt dataset in {root}: {exc}") from exc
        return cls(seqs, config)


def manifest_digest(root) -> str:
    """SHA-256 over the manifest and every grid file it lists."""
    root = Path(root)
    h = hashlib.sha256()
    raw = (root / MANIFEST).read_bytes()
    h.update(raw)
    for e in json.loads(raw)["sequences"]:
        for f in [f for sensor in e["inputs"] for f in sensor] + [e["target"]]:
            h.update((root / f).read_bytes())
    return h.hexdigest()
