"""Forecast grids and training targets.

Builds the pedestrian grid, shows coordinate round-trips, and constructs
plain / obstacle-masked smoothing targets, exporting one as a PGM heatmap.
"""

import os

import numpy as np

import gridcast as gc
from gridcast.scene import TRAINING, Category

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

# The pedestrian grid: 67 cells of 0.35 m, centered on the walker.
grid = gc.make_grid(67, 0.35)
print(f"pedestrian grid: {grid.h}x{grid.h} cells, {grid.extent:.2f} m extent")
print(f"center cell: {grid.center}")

pos = (2.4, -1.1)
cell = gc.position_to_cell(grid, pos)
back = gc.cell_to_position(grid, cell)
print(f"position {pos} -> cell {tuple(cell)} -> center ({back[0]:.3f}, {back[1]:.3f})")

# A spatially smoothed target: a Gaussian over cells around the true cell.
small = gc.make_grid(33, 0.35)
truth = gc.position_to_cell(small, (1.2, 0.8))
target = gc.gaussian_target(small, truth, sigma=0.55 * small.e)
report = gc.validate_distribution(target)
print(f"\nsmoothed target: sum={report.total:.12f}, valid={report.ok}")

# Mask a wall: the masked target carries no mass on obstacle cells.
cats = np.full((33, 33), int(Category.SIDEWALK), np.uint8)
cats[:, 20:23] = int(Category.STATIC_OBSTACLE)
wall_map = gc.SemanticMap(small, cats)
mask = gc.obstacle_mask(wall_map, TRAINING)
masked = gc.masked_gaussian_target(small, truth, 0.55 * small.e, mask)
print(f"mass on wall cells: plain={target.probs[mask.mask].sum():.6f}, "
      f"masked={masked.probs[mask.mask].sum():.6f}")

pgm = os.path.join(out_dir, "masked_target.pgm")
gc.save_distribution_pgm(masked, pgm)
print(f"wrote {pgm}")
