"""Egocentric semantic grids: projection, synchronization, baselines and a fusion network."""
from .alignment import (
    EgomotionTrack,
    discretize,
    integrate_orientation,
    integrate_translation,
    morphological_filter,
    rotate_pointcloud,
    synchronize_sequence,
    translate_grid,
)
from .baselines import bl_dc, bl_nt, bl_overlay, bl_split
from .grid import (
    CLASS_NAMES,
    NUM_CLASSES,
    DepthMap,
    GridGeometry,
    ProbabilisticGrid,
    SemanticGrid,
    SemanticImage,
    read_grid,
    render_png,
    write_grid,
)
from .metrics import IoUAccumulator, category_miou, certainty_map, class_iou, known_mask, loss_mask, masked_cross_entropy
from .projection import CameraModel, Crop, SemanticPointCloud, pixel_to_agent, project_to_pointcloud

__version__ = "0.1.0"
