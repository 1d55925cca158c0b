import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from semgrid.grid import (
    CATEGORIES,
    CATEGORY_OF,
    CATEGORY_PRIORITY,
    CLASS_NAMES,
    COLORS,
    HEADER_SIZE,
    NUM_CLASSES,
    PRIORITY_RANK,
    GridFormatError,
    GridGeometry,
    ProbabilisticGrid,
    SemanticGrid,
    SemanticImage,
    DepthMap,
    grid_from_bytes,
    grid_to_bytes,
    one_hot,
    read_grid,
    render_png,
    write_grid,
)


def test_taxonomy_is_dense_and_partitioned():
    assert NUM_CLASSES == 10
    assert CLASS_NAMES[0] == "unknown"
    members = sorted(c for m in CATEGORIES.values() for c in m)
    assert members == list(range(10))
    assert {CLASS_NAMES[c] for c in CATEGORIES["static"]} == {"unknown", "building", "road", "sidewalk", "vegetation"}
    assert {CLASS_NAMES[c] for c in CATEGORIES["small_static"]} == {"pole_sign"}
    assert {CLASS_NAMES[c] for c in CATEGORIES["vehicles"]} == {"car", "large_vehicle"}
    assert {CLASS_NAMES[c] for c in CATEGORIES["small_dynamic"]} == {"person", "bicycle"}
    order = ["static", "small_static", "vehicles", "small_dynamic"]
    assert [CATEGORY_PRIORITY[c] for c in order] == sorted(CATEGORY_PRIORITY.values())
    assert len(set(CATEGORY_PRIORITY.values())) == 4


def test_every_class_has_one_category_and_color():
    for c in range(NUM_CLASSES):
        assert CATEGORY_OF[c] in CATEGORIES
        assert COLORS[c].shape == (3,)
    assert sorted(PRIORITY_RANK.tolist()) == list(range(NUM_CLASSES))


def test_priority_rank_respects_categories():
    for a in range(NUM_CLASSES):
        for b in range(NUM_CLASSES):
            if CATEGORY_PRIORITY[CATEGORY_OF[a]] < CATEGORY_PRIORITY[CATEGORY_OF[b]]:
                assert PRIORITY_RANK[a] < PRIORITY_RANK[b]


def test_geometry_defaults():
    g = GridGeometry()
    assert g.cell_size == pytest.approx(0.78125)
    assert g.agent_cell == (64, 64)
    with pytest.raises(ValueError):
        GridGeometry(8, 8, 1.0, (8, 0))


def test_grid_rejects_bad_ids():
    geo = GridGeometry(4, 4, 1.0)
    with pytest.raises(ValueError):
        SemanticGrid(np.full((4, 4), 10), geo)
    with pytest.raises(ValueError):
        SemanticGrid(np.zeros((3, 4)), geo)


def test_grid_is_immutable():
    g = SemanticGrid.unknown(GridGeometry(4, 4, 1.0))
    with pytest.raises(ValueError):
        g.cells[0, 0] = 1


def test_image_and_depth_types():
    SemanticImage(np.array([[0, 9, 255]]))
    with pytest.raises(ValueError):
        SemanticImage(np.array([[12]]))
    d = DepthMap(np.array([[1.0, -1.0, np.inf, 0.0]]))
    assert d.valid.tolist() == [[True, False, False, False]]


@pytest.mark.parametrize(
    "name,rgb",
    [("road", (128, 64, 128)), ("unknown", (0, 0, 0)), ("sidewalk", (244, 32, 232))],
)
def test_render_png_legend_colors(tmp_path, name, rgb):
    cls = CLASS_NAMES.index(name)
    g = SemanticGrid(np.full((3, 5), cls), GridGeometry(5, 3, 1.0))
    render_png(g, tmp_path / "g.png")
    img = np.asarray(Image.open(tmp_path / "g.png"))
    assert img.shape == (3, 5, 3)
    assert (img == rgb).all()


def test_render_png_probabilistic_uses_argmax(tmp_path):
    geo = GridGeometry(2, 2, 1.0)
    f = np.full((2, 2, NUM_CLASSES), 0.05)
    f[..., 1] = 0.55
    render_png(ProbabilisticGrid(f, geo), tmp_path / "p.png")
    assert (np.asarray(Image.open(tmp_path / "p.png")) == (128, 64, 128)).all()


def test_render_png_unwritable(tmp_path):
    g = SemanticGrid.unknown(GridGeometry(2, 2, 1.0))
    with pytest.raises(OSError):
        render_png(g, tmp_path / "missing" / "dir" / "g.png")


def test_one_hot_class_last():
    cells = np.array([[0, 3], [9, 1]])
    oh = one_hot(cells)
    assert oh.shape == (2, 2, 10)
    assert (oh.argmax(-1) == cells).all() and (oh.sum(-1) == 1).all()


@st.composite
def grids(draw):
    w = draw(st.integers(1, 20))
    h = draw(st.integers(1, 20))
    cell = draw(st.floats(0.01, 5.0))
    agent = (draw(st.integers(0, w - 1)), draw(st.integers(0, h - 1)))
    seed = draw(st.integers(0, 2**31))
    ts = draw(st.floats(-1e6, 1e6, allow_nan=False))
    cells = np.random.default_rng(seed).integers(0, NUM_CLASSES, (h, w))
    return SemanticGrid(cells, GridGeometry(w, h, cell, agent), ts)


@settings(max_examples=100, deadline=None)
@given(grids())
def test_serialization_round_trip(g):
    assert grid_from_bytes(grid_to_bytes(g)) == g


def test_file_round_trip_and_size(tmp_path):
    g = SemanticGrid(np.random.default_rng(0).integers(0, 10, (128, 128)), GridGeometry(), 12.5)
    write_grid(g, tmp_path / "g.sgrd")
    # magic 4 + version 2 + W 2 + H 2 + cell f32 4 + col 2 + row 2 + timestamp f64 8
    header = 4 + 2 + 2 + 2 + 4 + 2 + 2 + 8
    assert HEADER_SIZE == header
    assert (tmp_path / "g.sgrd").stat().st_size == header + 128 * 128
    assert read_grid(tmp_path / "g.sgrd") == g


def test_header_layout():
    g = SemanticGrid(np.zeros((2, 3)), GridGeometry(3, 2, 0.5, (1, 1)), 7.0)
    raw = grid_to_bytes(g)
    magic, version, w, h = struct.unpack_from("<4sHHH", raw)
    assert (magic, version, w, h) == (b"SGRD", 1, 3, 2)


def test_truncated_file_is_size_mismatch(tmp_path):
    g = SemanticGrid.unknown(GridGeometry(8, 8, 1.0))
    raw = grid_to_bytes(g)
    (tmp_path / "t.sgrd").write_bytes(raw[:-3])
    with pytest.raises(GridFormatError, match="size mismatch"):
        read_grid(tmp_path / "t.sgrd")
    with pytest.raises(GridFormatError, match="size mismatch"):
        grid_from_bytes(raw[:10])


def test_corrupt_header():
    raw = bytearray(grid_to_bytes(SemanticGrid.unknown(GridGeometry(2, 2, 1.0))))
    raw[0:4] = b"XXXX"
    with pytest.raises(GridFormatError, match="corrupt header"):
        grid_from_bytes(bytes(raw))
