"""Box-world driving simulator and sequence datasets."""
from .render import FrameBundle, apply_split, egomotion_track, render_camera, simulate, split_crops, topdown_grid
from .scene import Box, EgoMotion, Layout, SceneSpec, default_camera, random_scene
