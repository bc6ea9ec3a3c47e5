"""Semantic map rasters, one-hot encoding, and obstacle masks."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .pgm import read_pgm, write_pgm


class Category(enum.IntEnum):
    """The eight per-cell scene labels."""

    STATIC_OBSTACLE = 0
    DYNAMIC_OBSTACLE = 1
    SIDEWALK = 2
    ROAD = 3
    WALKABLE_VEGETATION = 4
    PERSON = 5
    UNKNOWN_OBSTACLE = 6
    UNKNOWN_FREE_SPACE = 7


CATEGORY_NAMES = (
    "static-obstacle",
    "dynamic-obstacle",
    "sidewalk",
    "road",
    "walkable-vegetation",
    "person",
    "unknown-obstacle",
    "unknown-free-space",
)

N_CATEGORIES = len(CATEGORY_NAMES)

# Mask kinds: training masks cover anything a target may not overlap
# (static and dynamic obstacles); occupancy masks cover static obstacles
# only, since collisions of forecasts with moving objects are not
# necessarily wrong.
TRAINING = "training"
OCCUPANCY = "occupancy"

_MASK_CATEGORIES = {
    TRAINING: (Category.STATIC_OBSTACLE, Category.DYNAMIC_OBSTACLE),
    OCCUPANCY: (Category.STATIC_OBSTACLE,),
}


@dataclass(frozen=True)
class SemanticMap:
    """Per-cell category raster in the grid frame of the owning sample."""

    grid: Grid
    categories: np.ndarray

    def __post_init__(self):
        cats = np.asarray(self.categories, dtype=np.uint8)
        if cats.shape != (self.grid.h, self.grid.h):
            raise ValueError(
                f"category raster shape {cats.shape} does not match grid side {self.grid.h}"
            )
        if cats.max(initial=0) >= N_CATEGORIES:
            raise ValueError("category ids must lie in [0, 7]")
        cats = cats.copy()
        cats.flags.writeable = False
        object.__setattr__(self, "categories", cats)


@dataclass(frozen=True)
class ObstacleMask:
    grid: Grid
    mask: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in (TRAINING, OCCUPANCY):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.grid.h, self.grid.h):
            raise ValueError("mask shape does not match grid")
        mask = mask.copy()
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)


def encode_one_hot(m: SemanticMap) -> np.ndarray:
    """(8, h, h) binary raster; channel k is 1 exactly where categories == k."""
    channels = np.zeros((N_CATEGORIES, m.grid.h, m.grid.h))
    for k in range(N_CATEGORIES):
        channels[k] = m.categories == k
    return channels


def obstacle_mask(m: SemanticMap, kind: str) -> ObstacleMask:
    """Binary mask of obstacle cells; see TRAINING vs OCCUPANCY above."""
    if kind not in _MASK_CATEGORIES:
        raise ValueError(f"unknown mask kind {kind!r}")
    mask = np.isin(m.categories, [int(c) for c in _MASK_CATEGORIES[kind]])
    return ObstacleMask(m.grid, mask, kind)


def rotate_map(m: SemanticMap, angle: float) -> SemanticMap:
    """Rotate the raster by `angle` radians about the grid center.

    Each destination cell takes the category of the nearest source cell
    (categories cannot be interpolated). Destination cells whose source
    position falls outside the grid become unknown free space; for
    multiples of pi/2 nothing falls outside and the result is an exact
    cell permutation.
    """
    grid = m.grid
    centers = grid.cell_centers()  # (h, h, 2)
    cos, sin = np.cos(-angle), np.sin(-angle)
    src_x = cos * centers[..., 0] - sin * centers[..., 1]
    src_y = sin * centers[..., 0] + cos * centers[..., 1]
    half = (grid.h - 1) // 2
    col = np.ceil(src_x / grid.e - 0.5).astype(int) + half
    row = np.ceil(src_y / grid.e - 0.5).astype(int) + half
    inside = (row >= 0) & (row < grid.h) & (col >= 0) & (col < grid.h)
    out = np.full((grid.h, grid.h), int(Category.UNKNOWN_FREE_SPACE), dtype=np.uint8)
    out[inside] = m.categories[row[inside], col[inside]]
    return SemanticMap(grid, out)


def save_map_pgm(m: SemanticMap, path) -> None:
    """8-bit PGM whose pixel values are the category ids 0-7."""
    write_pgm(path, m.categories, 255)


def load_map_pgm(grid: Grid, path) -> SemanticMap:
    raster, _ = read_pgm(path)
    return SemanticMap(grid, raster)
