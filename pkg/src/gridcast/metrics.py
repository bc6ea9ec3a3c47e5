"""Forecast evaluation: reliability, sharpness, positional accuracy, occupancy.

Discrete metrics snap the true position to the center of its containing
cell; the continuous (Gaussian) counterparts use the exact position. The
asymmetry is unavoidable and recorded in every report's conventions block.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfGridError
from .grid import GridDistribution, cell_to_position, position_to_cell
from .models import (
    ContinuousModel,
    DiscreteModel,
    GaussianForecastSet,
    predict_gaussians,
    predict_probs,
)
from .scene import OCCUPANCY, ObstacleMask, obstacle_mask

DEFAULT_BINS = 20
DEFAULT_SHARPNESS_LEVEL = 0.95

CONVENTIONS = {
    "ece_bin_representative": "upper edge of each equal-width bin over (0, 1]",
    "truth_position": "discrete metrics snap truth to the containing cell center; "
    "gaussian metrics use the exact position",
}


# ---------------------------------------------------------------------------
# discrete metrics (one distribution at a time)


def confidence_level(d: GridDistribution, y) -> float:
    """Total mass on cells at least as probable as the true cell (ties included)."""
    row, col = int(y[0]), int(y[1])
    p_true = d.probs[row, col]
    flat = d.probs.reshape(-1)
    return float(flat[flat >= p_true].sum())


def observed_frequency(cs, level: float) -> float:
    """Fraction of confidence levels at or below the given level."""
    cs = np.asarray(cs, dtype=np.float64)
    if cs.size == 0:
        raise ValueError("observed_frequency needs at least one confidence level")
    return float(np.mean(cs <= level))


def _bin_counts(cs: np.ndarray, bins: int) -> np.ndarray:
    """Histogram over bins ((b-1)/B, b/B], b = 1..B."""
    idx = np.ceil(cs * bins).astype(int)
    idx = np.clip(idx, 1, bins) - 1
    return np.bincount(idx, minlength=bins).astype(np.float64)


def ece_per_horizon(cs, bins: int) -> float:
    """Binning-based calibration error for one horizon's confidence levels."""
    cs = np.asarray(cs, dtype=np.float64)
    if cs.size == 0:
        raise ValueError("cannot compute calibration error of an empty horizon")
    counts = _bin_counts(cs, bins)
    total = 0.0
    for b in range(1, bins + 1):
        level = b / bins
        total += counts[b - 1] * abs(level - observed_frequency(cs, level))
    return total / cs.size


def ece(cs_per_horizon, bins: int) -> float:
    """Calibration error averaged over horizons (equal sample counts required)."""
    if bins < 1:
        raise ValueError("need at least one bin")
    sizes = {len(np.asarray(cs)) for cs in cs_per_horizon}
    if len(sizes) != 1:
        raise ValueError(f"horizons have unequal sample counts: {sorted(sizes)}")
    return float(np.mean([ece_per_horizon(cs, bins) for cs in cs_per_horizon]))


def confidence_area(d: GridDistribution, level: float) -> float:
    """Area (m^2) of the smallest cell set reaching the confidence level.

    Cells are added in order of decreasing probability until the level is
    reached; all cells tied with the last-added probability count too.
    """
    flat = np.sort(d.probs.reshape(-1))[::-1]
    cum = np.cumsum(flat)
    stop = int(np.searchsorted(cum, level, side="left"))
    if stop >= flat.size:
        stop = flat.size - 1
    tau = flat[stop]
    n_cells = int((d.probs >= tau).sum())
    return n_cells * d.grid.e**2


def sharpness(mean_areas, horizons) -> float:
    """Mean over horizons of the per-horizon mean area divided by the horizon."""
    mean_areas = np.asarray(mean_areas, dtype=np.float64)
    horizons = np.asarray(horizons, dtype=np.float64)
    if mean_areas.shape != horizons.shape:
        raise ValueError("need one mean area per horizon")
    return float(np.mean(mean_areas / horizons))


def expected_distance(d: GridDistribution, y_cell) -> float:
    """Probability-weighted distance from the true cell center (one sample)."""
    center = cell_to_position(d.grid, y_cell)
    centers = d.grid.cell_centers()
    delta = centers - center
    dist = np.sqrt(delta[..., 0] ** 2 + delta[..., 1] ** 2)
    return float((d.probs * dist).reshape(-1).sum())


def waee(distributions, truths) -> float:
    """Mean probability-weighted Euclidean error for one horizon.

    truths are positions in meters; each is snapped to its cell center.
    """
    if len(distributions) != len(truths):
        raise ValueError("forecast and truth counts differ")
    total = 0.0
    for d, pos in zip(distributions, truths):
        cell = position_to_cell(d.grid, pos)
        total += expected_distance(d, cell)
    return total / len(distributions)


def aswaee(waee_per_horizon, horizons) -> float:
    """Mean over horizons of WAEE divided by the horizon."""
    w = np.asarray(waee_per_horizon, dtype=np.float64)
    t = np.asarray(horizons, dtype=np.float64)
    if w.shape != t.shape:
        raise ValueError("need one WAEE per horizon")
    return float(np.mean(w / t))


def occupancy(d: GridDistribution, o: ObstacleMask) -> float:
    """Forecast mass on static-obstacle cells."""
    if o.grid != d.grid:
        raise ValueError("occupancy mask grid does not match the forecast grid")
    return float(d.probs[o.mask].sum())


# ---------------------------------------------------------------------------
# Gaussian counterparts


def _mahalanobis_sq(fc: GaussianForecastSet, points: np.ndarray) -> np.ndarray:
    dx = points[..., 0] - fc.mu[..., 0]
    dy = points[..., 1] - fc.mu[..., 1]
    sx, sy = fc.sigma[..., 0], fc.sigma[..., 1]
    q = 1.0 - fc.rho**2
    z = (dx / sx) ** 2 - 2.0 * fc.rho * dx * dy / (sx * sy) + (dy / sy) ** 2
    return z / q


def gaussian_confidence_level(fc: GaussianForecastSet, truth) -> np.ndarray:
    """Per-horizon confidence level 1 - exp(-d^2/2) of the true position."""
    truth = np.asarray(truth, dtype=np.float64).reshape(len(fc.horizons), 2)
    return 1.0 - np.exp(-0.5 * _mahalanobis_sq(fc, truth))


def gaussian_confidence_area(fc: GaussianForecastSet, level: float) -> np.ndarray:
    """Per-horizon area (m^2) of the highest-density region at the level."""
    if not 0 <= level < 1:
        raise ValueError("level must lie in [0, 1)")
    alpha = 1.0 - level
    q = 1.0 - fc.rho**2
    return np.pi * fc.sigma[:, 0] * fc.sigma[:, 1] * np.sqrt(q) * (-2.0 * np.log(alpha))


def _cholesky_factors(fc: GaussianForecastSet):
    sx, sy = fc.sigma[:, 0], fc.sigma[:, 1]
    q = np.sqrt(1.0 - fc.rho**2)
    return sx, fc.rho * sy, sy * q


def _sample_gaussian(fc: GaussianForecastSet, n: int, rng) -> np.ndarray:
    """(T, n, 2) draws from each horizon's Gaussian."""
    t = len(fc.horizons)
    xi = rng.standard_normal((t, n, 2))
    lxx, lyx, lyy = _cholesky_factors(fc)
    out = np.empty_like(xi)
    out[..., 0] = fc.mu[:, None, 0] + lxx[:, None] * xi[..., 0]
    out[..., 1] = fc.mu[:, None, 1] + lyx[:, None] * xi[..., 0] + lyy[:, None] * xi[..., 1]
    return out


def gaussian_waee(fc: GaussianForecastSet, truth, n_samples: int, seed: int) -> np.ndarray:
    """Per-horizon Monte Carlo estimate of the expected Euclidean error.

    Unlike the discrete case there is no closed form; draws are seeded for
    reproducibility.
    """
    truth = np.asarray(truth, dtype=np.float64).reshape(len(fc.horizons), 2)
    rng = np.random.default_rng(seed)
    draws = _sample_gaussian(fc, n_samples, rng)
    delta = draws - truth[:, None, :]
    return np.sqrt(delta[..., 0] ** 2 + delta[..., 1] ** 2).mean(axis=1)


def gaussian_confidence_level_mc(
    fc: GaussianForecastSet, truth, n_samples: int, seed: int
) -> np.ndarray:
    """Monte Carlo cross-check of gaussian_confidence_level."""
    truth = np.asarray(truth, dtype=np.float64).reshape(len(fc.horizons), 2)
    d_truth = _mahalanobis_sq(fc, truth)
    rng = np.random.default_rng(seed)
    draws = _sample_gaussian(fc, n_samples, rng)
    d_draws = _mahalanobis_sq(fc, draws.transpose(1, 0, 2)).T  # (T, n)
    return (d_draws <= d_truth[:, None]).mean(axis=1)


def gaussian_confidence_area_mc(
    fc: GaussianForecastSet, level: float, n_samples: int, seed: int
) -> np.ndarray:
    """Monte Carlo cross-check of gaussian_confidence_area.

    Estimates the ellipse area by uniform sampling over its bounding box.
    """
    alpha = 1.0 - level
    r_sq = -2.0 * np.log(alpha)
    r = np.sqrt(r_sq)
    rng = np.random.default_rng(seed)
    t = len(fc.horizons)
    areas = np.empty(t)
    for k in range(t):
        half_x = r * fc.sigma[k, 0]
        half_y = r * fc.sigma[k, 1]
        u = rng.uniform(-1.0, 1.0, size=(n_samples, 2))
        pts = fc.mu[k] + u * np.array([half_x, half_y])
        dx = pts[:, 0] - fc.mu[k, 0]
        dy = pts[:, 1] - fc.mu[k, 1]
        sx, sy = fc.sigma[k]
        q = 1.0 - fc.rho[k] ** 2
        d_sq = ((dx / sx) ** 2 - 2 * fc.rho[k] * dx * dy / (sx * sy) + (dy / sy) ** 2) / q
        inside = (d_sq <= r_sq).mean()
        areas[k] = inside * 4.0 * half_x * half_y
    return areas


# ---------------------------------------------------------------------------
# reliability curves


@dataclass(frozen=True)
class ReliabilityCurve:
    """Observed frequency at the representative level of each bin."""

    bins: int
    levels: np.ndarray
    observed: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        for name in ("levels", "observed", "counts"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def reliability_curve(cs, bins: int) -> ReliabilityCurve:
    """The binned curve underlying the calibration error."""
    if bins < 1:
        raise ValueError("need at least one bin")
    cs = np.asarray(cs, dtype=np.float64)
    levels = np.arange(1, bins + 1) / bins
    observed = np.array([observed_frequency(cs, lv) for lv in levels])
    counts = _bin_counts(cs, bins)
    return ReliabilityCurve(bins, levels, observed, counts)


def save_reliability_csv(curve: ReliabilityCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "observed_frequency", "count"])
        for lv, fo, jb in zip(curve.levels, curve.observed, curve.counts):
            writer.writerow(
                [format(lv, ".17g"), format(fo, ".17g"), int(jb)]
            )


# ---------------------------------------------------------------------------
# dataset-level evaluation reports


@dataclass
class MetricsReport:
    """Scores per motion type and horizon plus their aggregates."""

    model_kind: str
    vru_type: str
    bins: int
    sharpness_level: float
    horizons: tuple
    motions: dict
    reliability: dict
    flags: dict = field(default_factory=dict)
    config_hash: str | None = None

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "vru_type": self.vru_type,
            "bins": self.bins,
            "sharpness_level": self.sharpness_level,
            "horizons": list(self.horizons),
            "conventions": dict(CONVENTIONS),
            "motions": self.motions,
            "reliability": self.reliability,
            "flags": self.flags,
            "config_hash": self.config_hash,
        }


def _horizon_key(t: float) -> str:
    return format(float(t), ".2f")


def _aggregate_block(c_all, a_all, w_all, o_all, horizons, bins):
    """Per-horizon and aggregate scores for one motion subset."""
    t_count = len(horizons)
    per_horizon = {}
    eces, areas, waees = [], [], []
    for k in range(t_count):
        block = {
            "ece": ece_per_horizon(c_all[:, k], bins),
            "waee": float(np.mean(w_all[:, k])),
            "mean_area": float(np.mean(a_all[:, k])),
        }
        if o_all is not None:
            block["occupancy"] = float(np.mean(o_all[:, k]))
        eces.append(block["ece"])
        areas.append(block["mean_area"])
        waees.append(block["waee"])
        per_horizon[_horizon_key(horizons[k])] = block
    aggregate = {
        "ece": float(np.mean(eces)),
        "sharpness": sharpness(areas, horizons),
        "aswaee": aswaee(waees, horizons),
    }
    return {"count": int(c_all.shape[0]), "horizons": per_horizon, "aggregate": aggregate}


def _build_report(
    model_kind,
    vru_type,
    horizons,
    motion_types,
    c_all,
    a_all,
    w_all,
    o_all,
    bins,
    level,
    flags,
    config_hash,
):
    motions = {"all": _aggregate_block(c_all, a_all, w_all, o_all, horizons, bins)}
    for motion in sorted(set(motion_types)):
        sel = np.array([m == motion for m in motion_types])
        motions[motion] = _aggregate_block(
            c_all[sel],
            a_all[sel],
            w_all[sel],
            o_all[sel] if o_all is not None else None,
            horizons,
            bins,
        )
    reliability = {}
    for k, t in enumerate(horizons):
        curve = reliability_curve(c_all[:, k], bins)
        reliability[_horizon_key(t)] = {
            "levels": curve.levels.tolist(),
            "observed_frequency": curve.observed.tolist(),
            "counts": curve.counts.astype(int).tolist(),
        }
    return MetricsReport(
        model_kind=model_kind,
        vru_type=vru_type,
        bins=bins,
        sharpness_level=level,
        horizons=tuple(horizons),
        motions=motions,
        reliability=reliability,
        flags=flags,
        config_hash=config_hash,
    )


def evaluate_discrete(
    model: DiscreteModel,
    samples,
    bins: int = DEFAULT_BINS,
    sharpness_level: float = DEFAULT_SHARPNESS_LEVEL,
    batch_size: int = 256,
    config_hash: str | None = None,
) -> MetricsReport:
    """Evaluate a discrete model on a sample list."""
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    grid = model.grid
    horizons = model.horizons
    t_count = len(horizons)
    probs = predict_probs(model, samples, batch_size)
    kept, cells = [], []
    out_of_grid = 0
    for i, s in enumerate(samples):
        try:
            cells.append(
                [position_to_cell(grid, s.future_positions[k]) for k in range(t_count)]
            )
            kept.append(i)
        except OutOfGridError:
            out_of_grid += 1
    if not kept:
        raise ValueError("every sample's truth lies outside the grid")
    c_all = np.empty((len(kept), t_count))
    a_all = np.empty_like(c_all)
    w_all = np.empty_like(c_all)
    o_all = np.empty_like(c_all)
    reused_maps = 0
    for j, i in enumerate(kept):
        s = samples[i]
        reused_maps += int(s.reused_tc_maps)
        for k in range(t_count):
            d = GridDistribution(grid, probs[i, k])
            c_all[j, k] = confidence_level(d, cells[j][k])
            a_all[j, k] = confidence_area(d, sharpness_level)
            w_all[j, k] = expected_distance(d, cells[j][k])
            mask = obstacle_mask(s.future_map_at(k), OCCUPANCY)
            o_all[j, k] = occupancy(d, mask)
    motion_types = [samples[i].motion_type for i in kept]
    flags = {"out_of_grid_truths": out_of_grid, "reused_tc_maps": reused_maps}
    return _build_report(
        model.cfg.kind,
        samples[kept[0]].vru_type,
        horizons,
        motion_types,
        c_all,
        a_all,
        w_all,
        o_all,
        bins,
        sharpness_level,
        flags,
        config_hash,
    )


def evaluate_continuous(
    model: ContinuousModel,
    samples,
    bins: int = DEFAULT_BINS,
    sharpness_level: float = DEFAULT_SHARPNESS_LEVEL,
    waee_samples: int = 4096,
    seed: int = 0,
    config_hash: str | None = None,
) -> MetricsReport:
    """Evaluate a continuous model; positional error uses seeded sampling."""
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    horizons = model.horizons
    pairs = predict_gaussians(model, samples)
    n = len(pairs)
    c_all = np.empty((n, len(horizons)))
    a_all = np.empty_like(c_all)
    w_all = np.empty_like(c_all)
    for i, (fc, truth) in enumerate(pairs):
        c_all[i] = gaussian_confidence_level(fc, truth)
        a_all[i] = gaussian_confidence_area(fc, sharpness_level)
        w_all[i] = gaussian_waee(fc, truth, waee_samples, seed=seed * 1_000_003 + i)
    motion_types = [s.motion_type for s in samples]
    flags = {"waee_samples": waee_samples}
    return _build_report(
        model.cfg.kind,
        samples[0].vru_type,
        horizons,
        motion_types,
        c_all,
        a_all,
        w_all,
        None,
        bins,
        sharpness_level,
        flags,
        config_hash,
    )
