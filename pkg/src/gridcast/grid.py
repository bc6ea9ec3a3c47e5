"""Square forecast grid and discrete probability distributions over it.

The grid is centered on the VRU's current head position: the center cell's
center point is the coordinate origin. Coordinate convention, used
everywhere in this package: row index increases with +y (forward), column
index increases with +x (right). Cell (r, c) of a grid with side h and
cell edge e therefore has center ((c - (h-1)/2) * e, (r - (h-1)/2) * e).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import OutOfGridError
from .pgm import write_pgm

SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Grid:
    """Square grid with an odd number of cells per side.

    Attributes:
        h: cells per side (odd, >= 3).
        e: cell edge length in meters.
    """

    h: int
    e: float

    @property
    def extent(self) -> float:
        """Physical side length h * e in meters."""
        return self.h * self.e

    @property
    def center(self) -> "CellIndex":
        return CellIndex((self.h - 1) // 2, (self.h - 1) // 2)

    def cell_centers(self) -> np.ndarray:
        """(h, h, 2) array of cell center (x, y) coordinates in meters."""
        half = (self.h - 1) // 2
        offsets = (np.arange(self.h) - half) * self.e
        xx, yy = np.meshgrid(offsets, offsets)  # rows vary with y
        return np.stack([xx, yy], axis=-1)


class CellIndex(NamedTuple):
    row: int
    col: int


def make_grid(h: int, e: float) -> Grid:
    """Create a forecast grid with h cells per side and cell edge e meters."""
    if h < 3 or h % 2 == 0:
        raise ValueError(f"grid side must be an odd integer >= 3, got {h}")
    if e <= 0:
        raise ValueError(f"cell edge must be positive, got {e}")
    return Grid(int(h), float(e))


def _axis_index(grid: Grid, v: float) -> int:
    # Nearest cell center; exact boundary ties resolve to the smaller index.
    k = int(np.ceil(v / grid.e - 0.5))
    half = (grid.h - 1) // 2
    return int(np.clip(k + half, 0, grid.h - 1))


def position_to_cell(grid: Grid, pos) -> CellIndex:
    """Index of the cell whose center is nearest to pos = (x, y) meters.

    Raises OutOfGridError when |x| or |y| exceeds half the grid extent.
    """
    x, y = float(pos[0]), float(pos[1])
    half_extent = grid.extent / 2.0
    if abs(x) > half_extent or abs(y) > half_extent:
        raise OutOfGridError(
            f"position ({x:.3f}, {y:.3f}) outside grid of extent "
            f"{grid.extent:.3f} m"
        )
    return CellIndex(_axis_index(grid, y), _axis_index(grid, x))


def cell_to_position(grid: Grid, idx) -> np.ndarray:
    """Center coordinates (x, y) in meters of the cell at idx = (row, col)."""
    row, col = int(idx[0]), int(idx[1])
    if not (0 <= row < grid.h and 0 <= col < grid.h):
        raise OutOfGridError(f"cell index ({row}, {col}) outside {grid.h}x{grid.h} grid")
    half = (grid.h - 1) // 2
    return np.array([(col - half) * grid.e, (row - half) * grid.e])


@dataclass(frozen=True)
class GridDistribution:
    """Probability raster over a Grid; probs[row, col] is the cell mass."""

    grid: Grid
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != (self.grid.h, self.grid.h):
            raise ValueError(
                f"probs shape {probs.shape} does not match grid side {self.grid.h}"
            )
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True)
class DistributionReport:
    ok: bool
    violations: tuple[str, ...]
    total: float
    min_value: float


def validate_distribution(d: GridDistribution) -> DistributionReport:
    """Check non-negativity and unit sum (within 1e-9); reports, never raises."""
    total = float(d.probs.sum())
    min_value = float(d.probs.min())
    violations = []
    if min_value < 0.0:
        violations.append(f"negative probability {min_value:.6g}")
    if abs(total - 1.0) > SUM_TOLERANCE:
        violations.append(f"probabilities sum to {total:.12g}, not 1")
    if not np.all(np.isfinite(d.probs)):
        violations.append("non-finite probability entries")
    return DistributionReport(not violations, tuple(violations), total, min_value)


def save_distribution_pgm(d: GridDistribution, path) -> None:
    """Export as 16-bit PGM, scaled so the maximum probability maps to 65535.

    Raster row 0 of the file is grid row 0 (y = -extent/2).
    """
    peak = float(d.probs.max())
    if peak <= 0:
        raster = np.zeros_like(d.probs, dtype=np.uint16)
    else:
        raster = np.rint(d.probs / peak * 65535).astype(np.uint16)
    write_pgm(path, raster, 65535)


def save_distribution_csv(d: GridDistribution, path) -> None:
    """Export as CSV rows (row, col, probability) for exact interchange."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "probability"])
        for r in range(d.grid.h):
            for c in range(d.grid.h):
                writer.writerow([r, c, format(d.probs[r, c], ".17g")])


def load_distribution_csv(grid: Grid, path) -> GridDistribution:
    """Inverse of save_distribution_csv."""
    probs = np.zeros((grid.h, grid.h))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        for row, col, p in reader:
            probs[int(row), int(col)] = float(p)
    return GridDistribution(grid, probs)
