"""Reliability calibration: smoothing-width sweep and temperature scaling.

Both procedures pick whatever minimizes the validation calibration error,
per forecast horizon. The sweep trains one model per candidate width
(shared across horizons) and then selects per horizon from those runs;
retraining per per-horizon combination would be combinatorial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nnkernel as nn
from .errors import OutOfGridError
from .grid import position_to_cell
from .metrics import DEFAULT_BINS, ece_per_horizon
from .models import (
    DiscreteModel,
    ForecastSet,
    predict_logits,
    train_discrete,
    with_smoothing,
)
from .targets import SmoothingSchedule


@dataclass(frozen=True)
class TemperatureSchedule:
    """Per-horizon softmax temperature; 1.0 leaves forecasts unchanged."""

    temperatures: tuple

    def __post_init__(self):
        temps = tuple(float(v) for v in self.temperatures)
        if any(v <= 0 for v in temps):
            raise ValueError("temperatures must be positive")
        object.__setattr__(self, "temperatures", temps)

    def __len__(self):
        return len(self.temperatures)


def _truth_cells(grid, samples, n_horizons):
    """Snapped truth cells for samples whose futures stay on the grid."""
    kept, cells = [], []
    for i, s in enumerate(samples):
        try:
            cells.append(
                [position_to_cell(grid, s.future_positions[k]) for k in range(n_horizons)]
            )
            kept.append(i)
        except OutOfGridError:
            continue
    if not kept:
        raise ValueError("no validation sample has its truth inside the grid")
    return kept, cells


def _confidence_from_probs(probs_k, cells_k):
    """Confidence levels for one horizon given (N, h, h) probabilities."""
    out = np.empty(len(cells_k))
    for i, (row, col) in enumerate(cells_k):
        flat = probs_k[i].reshape(-1)
        out[i] = flat[flat >= probs_k[i, row, col]].sum()
    return out


def validation_ece_per_horizon(model: DiscreteModel, samples, bins: int = DEFAULT_BINS):
    """Per-horizon calibration error of a model on a sample list."""
    logits = predict_logits(model, samples)
    kept, cells = _truth_cells(model.grid, samples, len(model.horizons))
    probs = nn.softmax2d(logits[kept])
    return np.array(
        [
            ece_per_horizon(
                _confidence_from_probs(probs[:, k], [c[k] for c in cells]), bins
            )
            for k in range(len(model.horizons))
        ]
    )


def sweep_sigma(
    base_cfg,
    candidates_cells,
    train_samples,
    validation_samples,
    seed: int,
    bins: int = DEFAULT_BINS,
    **train_opts,
):
    """Pick the smoothing width with the lowest validation calibration error.

    Trains one model per candidate width (applied to every horizon), then
    selects the best candidate independently per horizon. Returns the
    selected schedule and a report with every candidate's scores.
    """
    candidates = [float(c) for c in candidates_cells]
    if not candidates:
        raise ValueError("need at least one smoothing candidate")
    t_count = len(base_cfg.horizons)
    per_candidate = []
    for sigma_cells in candidates:
        cfg = with_smoothing(base_cfg, SmoothingSchedule((sigma_cells,) * t_count))
        model, _ = train_discrete(
            cfg, train_samples, validation_samples, seed, **train_opts
        )
        per_candidate.append(validation_ece_per_horizon(model, validation_samples, bins))
    scores = np.stack(per_candidate)  # (n_candidates, T)
    winners = scores.argmin(axis=0)
    schedule = SmoothingSchedule(tuple(candidates[w] for w in winners))
    report = {
        "candidates_cells": candidates,
        "validation_ece": {
            format(candidates[i], ".17g"): scores[i].tolist()
            for i in range(len(candidates))
        },
        "selected_cells": list(schedule.sigma_cells),
        "bins": bins,
        "seed": seed,
    }
    return schedule, report


def apply_temperature(logits: np.ndarray, schedule: TemperatureSchedule) -> np.ndarray:
    """Softmax of per-horizon temperature-scaled logits.

    Accepts (T, h, h) or (N, T, h, h); scaling preserves each grid's argmax.
    """
    temps = np.asarray(schedule.temperatures)
    if logits.ndim == 3:
        scaled = logits / temps[:, None, None]
    elif logits.ndim == 4:
        scaled = logits / temps[None, :, None, None]
    else:
        raise ValueError(f"expected 3D or 4D logits, got shape {logits.shape}")
    return nn.softmax2d(scaled)


def forecast_with_temperature(model: DiscreteModel, f, m=None, schedule=None) -> ForecastSet:
    """Single-sample forecast with calibrated softmax temperatures."""
    from .models import _forward_discrete_batch, _normalize  # local import, same package
    from .scene import encode_one_hot

    if schedule is None:
        schedule = TemperatureSchedule((1.0,) * len(model.horizons))
    maps = None
    if model.cfg.kind == "d_tpm":
        maps = encode_one_hot(m)[None].astype(np.float64)
    x = _normalize(model, f.values[None, :])
    logits = _forward_discrete_batch(model, x, maps)[0]
    probs = apply_temperature(logits, schedule)
    return ForecastSet.from_probs(model.grid, model.horizons, probs)


def _golden_section(fn, lo: float, hi: float, iterations: int):
    """Minimize a scalar function on [lo, hi]; returns (x, fn(x))."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iterations):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fn(d)
    x = (a + b) / 2.0
    return x, fn(x)


def fit_temperature(
    model: DiscreteModel,
    validation_samples,
    bins: int = DEFAULT_BINS,
    t_min: float = 0.05,
    t_max: float = 20.0,
    iterations: int = 40,
):
    """Per-horizon temperature minimizing the validation calibration error.

    Falls back to temperature 1 whenever the search cannot beat it, so the
    fitted schedule never scores worse than the uncalibrated model.
    """
    logits = predict_logits(model, validation_samples)
    kept, cells = _truth_cells(model.grid, validation_samples, len(model.horizons))
    logits = logits[kept]
    temps, eces = [], []
    for k in range(len(model.horizons)):
        cells_k = [c[k] for c in cells]
        logits_k = logits[:, k]

        def ece_at(temperature):
            probs = nn.softmax2d(logits_k / temperature)
            return ece_per_horizon(_confidence_from_probs(probs, cells_k), bins)

        t_star, e_star = _golden_section(ece_at, t_min, t_max, iterations)
        e_one = ece_at(1.0)
        if e_one <= e_star:
            t_star, e_star = 1.0, e_one
        temps.append(t_star)
        eces.append(e_star)
    schedule = TemperatureSchedule(tuple(temps))
    report = {
        "temperatures": list(schedule.temperatures),
        "validation_ece": [float(e) for e in eces],
        "bins": bins,
        "search": {"t_min": t_min, "t_max": t_max, "iterations": iterations},
    }
    return schedule, report
