"""Training target distributions: spatially smoothed Gaussians over the grid.

One-hot targets make cross-entropy training overconfident; replacing them
with a Gaussian centered on the true future cell (spatial label smoothing)
spreads target mass over nearby cells. Obstacle-masked variants zero the
target on obstacle cells and renormalize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllMassMaskedError, OutOfGridError, TruthOnObstacleError
from .grid import Grid, GridDistribution
from .scene import TRAINING, ObstacleMask

# Validation-selected smoothing widths for the five standard horizons,
# in multiples of the cell edge.
DEFAULT_SIGMA_CELLS = (0.48, 0.48, 0.53, 0.55, 0.55)


@dataclass(frozen=True)
class SmoothingSchedule:
    """Per-horizon smoothing standard deviation, in multiples of the cell edge."""

    sigma_cells: tuple

    def __post_init__(self):
        sig = tuple(float(v) for v in self.sigma_cells)
        if any(v < 0 for v in sig):
            raise ValueError("smoothing sigmas must be non-negative")
        object.__setattr__(self, "sigma_cells", sig)

    def __len__(self):
        return len(self.sigma_cells)

    def sigma_meters(self, k: int, grid: Grid) -> float:
        return self.sigma_cells[k] * grid.e


def _check_bounds(grid: Grid, y) -> tuple[int, int]:
    row, col = int(y[0]), int(y[1])
    if not (0 <= row < grid.h and 0 <= col < grid.h):
        raise OutOfGridError(f"target cell ({row}, {col}) outside {grid.h}x{grid.h} grid")
    return row, col


def _gaussian_weights(grid: Grid, y, sigma: float) -> np.ndarray:
    row, col = _check_bounds(grid, y)
    # distances between cell centers depend only on index differences
    dx = (np.arange(grid.h) - col) * grid.e
    dy = (np.arange(grid.h) - row) * grid.e
    sq = dy[:, None] ** 2 + dx[None, :] ** 2
    return np.exp(-sq / (2.0 * sigma * sigma))


def one_hot_target(grid: Grid, y) -> GridDistribution:
    """All mass on the cell containing the true future position."""
    row, col = _check_bounds(grid, y)
    probs = np.zeros((grid.h, grid.h))
    probs[row, col] = 1.0
    return GridDistribution(grid, probs)


def gaussian_target(grid: Grid, y, sigma: float) -> GridDistribution:
    """Isotropic Gaussian evaluated at cell centers and normalized to unit sum.

    The density is centered on the center of cell y; sigma is in meters.
    sigma = 0 degenerates to the one-hot target.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return one_hot_target(grid, y)
    w = _gaussian_weights(grid, y, sigma)
    return GridDistribution(grid, w / w.sum())


def masked_gaussian_target(
    grid: Grid, y, sigma: float, c: ObstacleMask
) -> GridDistribution:
    """Gaussian target zeroed on obstacle cells and renormalized.

    Free-cell probabilities stay proportional to the unmasked target.
    Raises TruthOnObstacleError when the true cell itself is masked and
    AllMassMaskedError when masking removes essentially all mass.
    """
    if c.kind != TRAINING:
        raise ValueError(f"masked targets require a training mask, got {c.kind!r}")
    if c.grid != grid:
        raise ValueError("obstacle mask grid does not match the target grid")
    row, col = _check_bounds(grid, y)
    if c.mask[row, col]:
        raise TruthOnObstacleError(
            f"true future cell ({row}, {col}) is marked as an obstacle"
        )
    base = gaussian_target(grid, y, sigma).probs.copy()
    base[c.mask] = 0.0
    remaining = base.sum()
    if remaining < 1e-12:
        raise AllMassMaskedError("obstacle mask removed all target mass")
    return GridDistribution(grid, base / remaining)
