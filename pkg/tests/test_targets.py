import numpy as np
import pytest

import gridcast as gc
from gridcast.errors import OutOfGridError, TruthOnObstacleError
from gridcast.metrics import waee
from gridcast.scene import TRAINING, Category


def oracle_gaussian_3x3(sigma, e=1.0, center=(1, 1)):
    """Direct density evaluation at the 9 cell centers, then normalize."""
    g = gc.make_grid(3, e)
    out = np.empty((3, 3))
    cy = gc.cell_to_position(g, center)
    for r in range(3):
        for c in range(3):
            p = gc.cell_to_position(g, (r, c))
            out[r, c] = np.exp(-((p - cy) @ (p - cy)) / (2 * sigma**2))
    return out / out.sum()


# frozen from the oracle above at sigma = 0.48, e = 1, y = center
ORACLE_CENTER = 0.6627877368592624
ORACLE_EDGE = 0.07566501455269066
ORACLE_DIAGONAL = 0.008638051232493742
# frozen from the oracle with the 4 diagonal cells zeroed and renormalized
MASKED_CENTER = 0.68650810561040188
MASKED_EDGE = 0.078372973597399517


def test_oracle_constants_are_what_the_oracle_computes():
    probs = oracle_gaussian_3x3(0.48)
    assert probs[1, 1] == pytest.approx(ORACLE_CENTER, abs=1e-15)
    assert probs[0, 1] == pytest.approx(ORACLE_EDGE, abs=1e-15)
    assert probs[0, 0] == pytest.approx(ORACLE_DIAGONAL, abs=1e-15)
    masked = probs.copy()
    masked[[0, 0, 2, 2], [0, 2, 0, 2]] = 0.0
    masked /= masked.sum()
    assert masked[1, 1] == pytest.approx(MASKED_CENTER, abs=1e-15)
    assert masked[0, 1] == pytest.approx(MASKED_EDGE, abs=1e-15)


def test_gaussian_target_matches_oracle():
    g = gc.make_grid(3, 1.0)
    d = gc.gaussian_target(g, (1, 1), 0.48)
    assert np.allclose(d.probs, oracle_gaussian_3x3(0.48), atol=1e-12)
    assert d.probs[1, 1] == pytest.approx(ORACLE_CENTER, abs=1e-9)
    assert d.probs[0, 1] == pytest.approx(ORACLE_EDGE, abs=1e-9)
    assert d.probs[2, 2] == pytest.approx(ORACLE_DIAGONAL, abs=1e-9)


def test_gaussian_target_tiny_sigma_is_one_hot():
    g = gc.make_grid(5, 0.35)
    d = gc.gaussian_target(g, (2, 3), 0.01 * g.e)
    assert d.probs[2, 3] >= 1 - 1e-12


def test_gaussian_target_center_rotation_invariant():
    g = gc.make_grid(5, 0.35)
    d = gc.gaussian_target(g, g.center, 0.48 * g.e)
    for k in (1, 2, 3):
        assert np.allclose(d.probs, np.rot90(d.probs, k), atol=1e-15)


def test_gaussian_target_invariants():
    g = gc.make_grid(7, 0.5)
    for sigma in (0.2, 0.5, 1.3):
        d = gc.gaussian_target(g, (2, 4), sigma)
        assert abs(d.probs.sum() - 1) < 1e-12
        assert np.unravel_index(d.probs.argmax(), d.probs.shape) == (2, 4)
        # monotone non-increasing away from y along the row and column
        row = d.probs[2]
        assert np.all(np.diff(row[4:]) <= 1e-15) and np.all(np.diff(row[:5]) >= -1e-15)
        col = d.probs[:, 4]
        assert np.all(np.diff(col[2:]) <= 1e-15) and np.all(np.diff(col[:3]) >= -1e-15)


def entropy(p):
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def test_gaussian_entropy_grows_with_sigma():
    g = gc.make_grid(9, 0.35)
    sigmas = [0.1, 0.2, 0.48, 1.0, 2.0, 4.0]
    ents = [entropy(gc.gaussian_target(g, g.center, s * g.e).probs) for s in sigmas]
    assert np.all(np.diff(ents) >= -1e-12)


def test_gaussian_target_out_of_bounds():
    g = gc.make_grid(3, 1.0)
    with pytest.raises(OutOfGridError):
        gc.gaussian_target(g, (3, 0), 0.5)


def test_one_hot_target():
    g = gc.make_grid(5, 0.35)
    d = gc.one_hot_target(g, (1, 4))
    assert d.probs.sum() == 1.0
    assert np.unravel_index(d.probs.argmax(), d.probs.shape) == (1, 4)
    assert entropy(d.probs) == 0.0
    # cross-module: expected positional error against its own truth is zero
    truth = gc.cell_to_position(g, (1, 4))
    assert waee([d], [truth]) == 0.0


def test_masked_target_empty_mask_is_plain_gaussian():
    g = gc.make_grid(3, 1.0)
    mask = gc.ObstacleMask(g, np.zeros((3, 3), bool), TRAINING)
    plain = gc.gaussian_target(g, (1, 1), 0.48)
    masked = gc.masked_gaussian_target(g, (1, 1), 0.48, mask)
    assert np.allclose(masked.probs, plain.probs, atol=1e-15)


def test_masked_target_diagonals_masked_matches_oracle():
    g = gc.make_grid(3, 1.0)
    m = np.zeros((3, 3), bool)
    m[[0, 0, 2, 2], [0, 2, 0, 2]] = True
    d = gc.masked_gaussian_target(g, (1, 1), 0.48, gc.ObstacleMask(g, m, TRAINING))
    assert np.all(d.probs[m] == 0.0)
    assert d.probs[1, 1] == pytest.approx(MASKED_CENTER, abs=1e-9)
    assert d.probs[0, 1] == pytest.approx(MASKED_EDGE, abs=1e-9)
    assert abs(d.probs.sum() - 1) < 1e-12


def test_masked_target_proportional_on_free_cells():
    g = gc.make_grid(7, 0.35)
    rng = np.random.default_rng(6)
    mask = rng.random((7, 7)) < 0.3
    mask[3, 2] = False
    d_masked = gc.masked_gaussian_target(
        g, (3, 2), 0.6 * g.e, gc.ObstacleMask(g, mask, TRAINING)
    )
    d_plain = gc.gaussian_target(g, (3, 2), 0.6 * g.e)
    free = ~mask
    ratio = d_masked.probs[free] / d_plain.probs[free]
    assert np.allclose(ratio, ratio[0], rtol=1e-12)


def test_masked_target_truth_on_obstacle():
    g = gc.make_grid(3, 1.0)
    m = np.zeros((3, 3), bool)
    m[1, 1] = True
    with pytest.raises(TruthOnObstacleError):
        gc.masked_gaussian_target(g, (1, 1), 0.48, gc.ObstacleMask(g, m, TRAINING))


def test_masked_target_requires_training_mask():
    g = gc.make_grid(3, 1.0)
    occ = gc.obstacle_mask(
        gc.SemanticMap(g, np.zeros((3, 3), np.uint8)), "occupancy"
    )
    with pytest.raises(ValueError):
        gc.masked_gaussian_target(g, (1, 1), 0.48, occ)


def test_masked_target_occupancy_score_is_zero_on_masked_cells():
    # a masked target never places mass where its own mask lives
    g = gc.make_grid(5, 0.35)
    cats = np.full((5, 5), int(Category.SIDEWALK), np.uint8)
    cats[0, :] = int(Category.STATIC_OBSTACLE)
    smap = gc.SemanticMap(g, cats)
    train_mask = gc.obstacle_mask(smap, "training")
    occ_mask = gc.obstacle_mask(smap, "occupancy")
    d = gc.masked_gaussian_target(g, (2, 2), 0.8 * g.e, train_mask)
    assert gc.occupancy(d, occ_mask) == 0.0


def test_smoothing_schedule():
    sched = gc.SmoothingSchedule(gc.DEFAULT_SIGMA_CELLS)
    assert len(sched) == 5
    g = gc.make_grid(67, 0.35)
    assert sched.sigma_meters(0, g) == pytest.approx(0.48 * 0.35)
    assert sched.sigma_meters(4, g) == pytest.approx(0.55 * 0.35)
    with pytest.raises(ValueError):
        gc.SmoothingSchedule((-0.1,))
