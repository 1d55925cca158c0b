import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semgrid.grid import CATEGORIES, NUM_CLASSES, ROAD, UNKNOWN, GridGeometry, ProbabilisticGrid, SemanticGrid
from semgrid.metrics import (
    IoUAccumulator,
    LossMask,
    category_miou,
    certainty_map,
    class_iou,
    known_mask,
    loss_mask,
    masked_cross_entropy,
)


def random_cells(rng, shape=(8, 9), p_unknown=0.4):
    c = rng.integers(1, NUM_CLASSES, shape)
    c[rng.random(shape) < p_unknown] = UNKNOWN
    return c


def random_probs(rng, shape=(8, 9)):
    z = rng.normal(0, 2, (*shape, NUM_CLASSES))
    e = np.exp(z - z.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


# -- known / loss mask --------------------------------------------------------

def test_known_mask_cases():
    geo = GridGeometry(3, 2, 1.0)
    assert not known_mask(SemanticGrid.unknown(geo)).any()
    assert known_mask(SemanticGrid(np.full((2, 3), ROAD), geo)).all()
    cells = random_cells(np.random.default_rng(0))
    oracle = np.array([[cells[r, c] != 0 for c in range(cells.shape[1])] for r in range(cells.shape[0])])
    assert np.array_equal(known_mask(cells), oracle)


def test_loss_mask_trivial_cases():
    t = np.array([[1, 0], [0, 0]])
    assert not loss_mask(t, [np.array([[2, 0], [0, 0]])]).mask.any()
    m = loss_mask(t, [np.array([[0, 3], [0, 0]])])
    assert m.mask.tolist() == [[False, True], [False, False]]


def test_loss_mask_bottom_exclude():
    t = np.zeros((4, 3), int)
    m = loss_mask(t, [np.ones((4, 3), int)], bottom_exclude=1)
    assert m.mask[:3].all() and not m.mask[3].any()


def test_loss_mask_geometry_mismatch():
    with pytest.raises(ValueError):
        loss_mask(np.zeros((3, 3)), [np.zeros((3, 4))])
    a = SemanticGrid.unknown(GridGeometry(3, 3, 1.0))
    b = SemanticGrid.unknown(GridGeometry(3, 3, 2.0))
    with pytest.raises(ValueError):
        loss_mask(a, [b])


def test_loss_mask_matches_set_oracle_500_triples():
    rng = np.random.default_rng(1)
    for _ in range(500):
        t, a, b = (random_cells(rng, (6, 5)) for _ in range(3))
        m = loss_mask(t, [a, b])
        h, w = t.shape
        covered = {(r, c) for r in range(h) for c in range(w) if t[r, c] or a[r, c] or b[r, c]}
        target = {(r, c) for r in range(h) for c in range(w) if t[r, c]}
        oracle = covered - target
        assert {(int(r), int(c)) for r, c in zip(*np.nonzero(m.mask))} == oracle
        assert not (m.mask & m.target).any()
        assert (m.covered >= m.target).all()


# -- masked cross-entropy -----------------------------------------------------

def test_ce_perfect_prediction_is_zero():
    t = np.random.default_rng(2).integers(0, NUM_CLASSES, (4, 4))
    loss, _ = masked_cross_entropy(np.eye(NUM_CLASSES)[t], t)
    assert loss == 0.0


def test_ce_mask_everything():
    rng = np.random.default_rng(3)
    t = rng.integers(0, NUM_CLASSES, (4, 5))
    loss, grad = masked_cross_entropy(random_probs(rng, (4, 5)), t, np.ones((4, 5), bool))
    assert loss == 0.0 and (grad == 0).all()


def test_ce_rejects_unnormalized():
    p = np.full((2, 2, NUM_CLASSES), 0.2)
    with pytest.raises(ValueError):
        masked_cross_entropy(p, np.zeros((2, 2), int))


def substituted_ce(p, t, mask):
    """Plain mean CE of (1 - M) * p + M * onehot(t)."""
    onehot = np.eye(NUM_CLASSES)[t]
    sub = np.where(mask[..., None], onehot, p)
    h, w = t.shape
    total = 0.0
    for r in range(h):
        for c in range(w):
            total -= np.log(sub[r, c, t[r, c]])
    return total / (h * w)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_ce_equals_substituted_oracle(seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(0, NUM_CLASSES, (5, 6))
    p = random_probs(rng, (5, 6))
    mask = rng.random((5, 6)) < 0.4
    loss, grad = masked_cross_entropy(p, t, mask)
    assert abs(loss - substituted_ce(p, t, mask)) < 1e-10
    assert (grad[mask] == 0).all()


def test_ce_accepts_loss_mask_and_grid_types():
    rng = np.random.default_rng(4)
    geo = GridGeometry(5, 4, 1.0)
    t = SemanticGrid(rng.integers(0, NUM_CLASSES, (4, 5)), geo)
    inp = SemanticGrid(rng.integers(0, NUM_CLASSES, (4, 5)), geo)
    p = random_probs(rng, (4, 5))
    m = loss_mask(t, [inp])
    assert isinstance(m, LossMask)
    a, _ = masked_cross_entropy(ProbabilisticGrid(p, geo), t, m)
    b, _ = masked_cross_entropy(p, t.cells, m.mask)
    assert a == b


def test_ce_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    t = rng.integers(0, NUM_CLASSES, (3, 3))
    p = random_probs(rng, (3, 3))
    mask = rng.random((3, 3)) < 0.3
    _, grad = masked_cross_entropy(p, t, mask)
    eps = 1e-7
    for _ in range(20):
        idx = (rng.integers(3), rng.integers(3), rng.integers(NUM_CLASSES))
        # the loss only reads p[..., t], so perturbing one entry is well defined
        q = p.copy()
        q[idx] += eps
        hi = -np.log(np.where(mask, 1.0, np.take_along_axis(q, t[..., None], -1)[..., 0])).mean()
        q[idx] -= 2 * eps
        lo = -np.log(np.where(mask, 1.0, np.take_along_axis(q, t[..., None], -1)[..., 0])).mean()
        assert grad[idx] == pytest.approx((hi - lo) / (2 * eps), rel=1e-5, abs=1e-9)


# -- IoU ----------------------------------------------------------------------

def test_iou_identity_and_disjoint():
    cells = random_cells(np.random.default_rng(6))
    iou = class_iou(cells, cells)
    assert set(iou) == set(np.unique(cells).tolist())
    assert all(v == 1.0 for v in iou.values())
    a, b = np.full((3, 3), 1), np.full((3, 3), 2)
    assert class_iou(a, b) == {1: 0.0, 2: 0.0}


def count_oracle(p, t, mask):
    out = {}
    for c in range(NUM_CLASSES):
        inter = union = 0
        for pv, tv, mv in zip(p.ravel(), t.ravel(), mask.ravel()):
            if mv:
                continue
            inter += pv == c and tv == c
            union += pv == c or tv == c
        if union:
            out[c] = inter / union
    return out


def test_iou_matches_counting_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        p, t = random_cells(rng), random_cells(rng)
        mask = rng.random(p.shape) < 0.3
        assert class_iou(p, t, mask) == pytest.approx(count_oracle(p, t, mask))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_iou_symmetric(seed):
    rng = np.random.default_rng(seed)
    p, t = random_cells(rng), random_cells(rng)
    assert class_iou(p, t) == class_iou(t, p)


def test_category_miou():
    # unknown, building, road, sidewalk, vegetation
    static = dict(zip(CATEGORIES["static"], (0.99, 0.68, 0.86, 0.68, 0.72)))
    assert category_miou(static)["static"] == pytest.approx(0.786, abs=1e-12)
    assert category_miou({5: 0.33})["small_static"] == 0.33
    partial = category_miou({6: 0.5, 1: 0.9})
    assert partial["vehicles"] == 0.5 and partial["static"] == 0.9
    assert "small_dynamic" not in partial


def test_accumulator_pools_counts():
    rng = np.random.default_rng(8)
    pairs = [(random_cells(rng), random_cells(rng)) for _ in range(5)]
    acc = IoUAccumulator()
    for p, t in pairs:
        acc.update(p, t)
    pooled = class_iou(np.concatenate([p for p, _ in pairs]), np.concatenate([t for _, t in pairs]))
    assert acc.per_class() == pytest.approx(pooled)
    report = acc.report()
    assert len(report["classes"]) == NUM_CLASSES
    assert report["miou"] == pytest.approx(np.mean(list(pooled.values())))


# -- certainty ----------------------------------------------------------------

def test_certainty_map():
    t = np.random.default_rng(9).integers(0, NUM_CLASSES, (4, 4))
    assert (certainty_map(np.eye(NUM_CLASSES)[t]) == 1.0).all()
    assert np.allclose(certainty_map(np.full((3, 3, NUM_CLASSES), 0.1)), 0.1)
    p = random_probs(np.random.default_rng(10), (5, 5))
    oracle = [[max(p[r, c]) for c in range(5)] for r in range(5)]
    assert np.array_equal(certainty_map(p), np.array(oracle))
