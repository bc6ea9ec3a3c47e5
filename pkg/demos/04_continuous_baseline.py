"""The continuous bivariate-Gaussian baseline.

Trains the trajectory-only Gaussian model on straight walkers with a
known isotropic position noise and shows that it recovers the noise
level; then compares the analytic confidence level / area with Monte
Carlo estimates.
"""

import numpy as np

import gridcast as gc
from gridcast import metrics, models

HORIZONS = (0.44, 1.48)
TRUE_SIGMA = 0.2

dataset = gc.synthesize(
    gc.SynthConfig(
        scene="open",
        behavior_mix={"move": 1.0},
        n_samples=1200,
        seed=3,
        grid_h=25,
        cell_e=0.35,
        horizons=HORIZONS,
        speed_range=(0.5, 1.3),
        noise_sigma=TRUE_SIGMA,
        n_locations=6,
    )
)
train, val, test = gc.split_by_location(dataset, (0.6, 0.2, 0.2), seed=0)

cfg = models.ContinuousModelConfig(kind="c_t", horizons=HORIZONS)
model, report = models.train_continuous(
    cfg, train.samples, val.samples, seed=0,
    learning_rate=3e-3, max_epochs=120, patience=15,
)
print(f"stopped after {report.stopped_epoch} epochs, "
      f"validation NLL {min(report.val_loss):.3f}")

sigmas = np.array([fc.sigma for fc, _ in models.predict_gaussians(model, test.samples)])
print(f"\ntrue noise sigma: {TRUE_SIGMA:.3f} m")
for k, t in enumerate(HORIZONS):
    mean_sigma = sigmas[:, k].mean()
    print(f"  horizon {t:.2f} s: mean predicted sigma {mean_sigma:.3f} m")

# analytic vs sampled uncertainty measures for one forecast
fc, truth = models.predict_gaussians(model, test.samples)[0]
c_analytic = gc.gaussian_confidence_level(fc, truth)
c_mc = metrics.gaussian_confidence_level_mc(fc, truth, 200_000, seed=1)
a_analytic = gc.gaussian_confidence_area(fc, 0.95)
a_mc = metrics.gaussian_confidence_area_mc(fc, 0.95, 200_000, seed=2)
print("\nanalytic vs Monte Carlo (one test sample):")
for k, t in enumerate(HORIZONS):
    print(f"  horizon {t:.2f} s: C {c_analytic[k]:.4f} vs {c_mc[k]:.4f}, "
          f"A(0.95) {a_analytic[k]:.3f} vs {a_mc[k]:.3f} m^2")

w = gc.gaussian_waee(fc, truth, 100_000, seed=3)
print(f"sampled positional error per horizon: {np.round(w, 3)} m")
