"""Evaluation metrics on hand-built forecasts.

Walks through confidence levels, reliability curves, the calibration
error, confidence areas / sharpness, and the probability-weighted
positional error — first on tiny hand-checkable cases, then on a
synthetic ensemble that shows what overconfidence looks like.
"""

import numpy as np

import gridcast as gc

grid = gc.make_grid(15, 0.35)

# Confidence level: total mass on cells at least as probable as the truth.
forecast = gc.gaussian_target(grid, grid.center, 0.8 * grid.e)
for cell in [grid.center, (7, 9), (3, 3)]:
    c = gc.confidence_level(forecast, cell)
    print(f"truth at {tuple(cell)}: confidence level {c:.3f}")

# Confidence area at the 95% level, and sharpness across horizons.
area = gc.confidence_area(forecast, 0.95)
print(f"\n95% confidence area: {area:.3f} m^2")
mean_areas = [area, 2.7 * area, 5.1 * area]
horizons = (0.44, 1.48, 2.52)
print(f"sharpness S(0.95) = {gc.sharpness(mean_areas, horizons):.3f} m^2/s")

# Positional error: probability-weighted distance to the true cell center.
truth = gc.cell_to_position(grid, (7, 9))
print(f"WAEE of the smoothed forecast vs that truth: {gc.waee([forecast], [truth]):.3f} m")

# Reliability: draw truths from a wide distribution but forecast a
# sharpened version of it -> overconfident, curve below the diagonal.
rng = np.random.default_rng(0)
wide = gc.gaussian_target(grid, grid.center, 2.0 * grid.e).probs
sharp = wide**2
sharp /= sharp.sum()
sharp_forecast = gc.GridDistribution(grid, sharp)

cells = rng.choice(wide.size, size=3000, p=wide.ravel())
cs = [
    gc.confidence_level(sharp_forecast, np.unravel_index(c, wide.shape)) for c in cells
]
curve = gc.reliability_curve(cs, 10)
print("\nlevel -> observed frequency (overconfident forecasts):")
for lv, fo in zip(curve.levels, curve.observed):
    bar = "#" * int(40 * fo)
    print(f"  {lv:4.2f} -> {fo:5.3f} {bar}")
print(f"calibration error (ECE): {gc.ece([cs], 10):.3f}")
