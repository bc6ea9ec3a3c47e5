"""Train a grid forecaster on synthetic walkers and evaluate it.

Generates a small corridor dataset, trains the trajectory-only model
briefly, and prints the evaluation table (reliability, sharpness,
positional accuracy, occupancy) against a persistence baseline.
Takes a couple of minutes on one core.
"""

import numpy as np

import gridcast as gc
from gridcast import metrics, models

HORIZONS = (0.44, 1.48)

dataset = gc.synthesize(
    gc.SynthConfig(
        scene="corridor",
        behavior_mix={"move": 0.6, "start": 0.2, "stop": 0.1, "turn": 0.1},
        n_samples=600,
        seed=7,
        grid_h=25,
        cell_e=0.35,
        horizons=HORIZONS,
        speed_range=(0.6, 1.4),
        noise_sigma=0.08,
        n_locations=9,
    )
)
train, val, test = gc.split_by_location(dataset, (0.6, 0.2, 0.2), seed=0)
print(f"samples: {len(train)} train / {len(val)} validation / {len(test)} test")

cfg = models.DiscreteModelConfig(
    kind="d_t",
    grid=dataset.manifest.grid,
    horizons=HORIZONS,
    trajectory_layers=3,
    trajectory_width=80,
    fusion_convs=2,
    fusion_filters=8,
    smoothing=gc.SmoothingSchedule((0.5, 0.5)),
)
model, report = models.train_discrete(
    cfg, train.samples, val.samples, seed=0,
    learning_rate=3e-3, max_epochs=60, patience=12,
)
print(f"stopped after {report.stopped_epoch} epochs "
      f"(best validation loss {min(report.val_loss):.3f} at epoch {report.best_epoch})")

evaluation = metrics.evaluate_discrete(model, test.samples)
aggregate = evaluation.motions["all"]["aggregate"]
print("\ntest scores:")
print(f"  calibration error (ECE): {aggregate['ece']:.4f}")
print(f"  sharpness S(0.95):       {aggregate['sharpness']:.2f} m^2/s")
print(f"  ASWAEE:                  {aggregate['aswaee']:.3f} m/s")

# persistence: all mass on the current cell, at every horizon
grid = dataset.manifest.grid
stay = gc.one_hot_target(grid, grid.center)
per_h = []
for k in range(len(HORIZONS)):
    errs = [
        metrics.expected_distance(stay, gc.position_to_cell(grid, s.future_positions[k]))
        for s in test.samples
    ]
    per_h.append(np.mean(errs))
persistence = gc.aswaee(per_h, HORIZONS)
print(f"  persistence ASWAEE:      {persistence:.3f} m/s "
      f"({(1 - aggregate['aswaee'] / persistence) * 100:+.1f}% by the model)")

print("\nper motion type (ASWAEE):")
for motion, block in sorted(evaluation.motions.items()):
    print(f"  {motion:11s} {block['aggregate']['aswaee']:.3f}  (n={block['count']})")
