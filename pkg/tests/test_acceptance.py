"""Acceptance suite: one test per criterion, one printed line per criterion.

The training-based criteria share one synthetic corridor experiment
(session fixtures below). Runtimes are a few minutes per trained model on
one core; the whole module finishes in well under an hour.
"""

import json
import os
import time

import numpy as np
import pytest

import gridcast as gc
from gridcast import calibration, cli, metrics, models
from gridcast.scene import OCCUPANCY, TRAINING

HORIZONS = (0.44, 1.48, 2.52)
GRID_H = 33
CELL_E = 0.35
SMOOTH = gc.SmoothingSchedule((0.5, 0.5, 0.5))
TRAIN_OPTS = dict(learning_rate=3e-3, patience=25, decay_patience=6)


def announce(criterion, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")


# ---------------------------------------------------------------------------
# shared corridor experiment (criteria 5-7)


@pytest.fixture(scope="module")
def corridor_data():
    cfg = gc.SynthConfig(
        scene="corridor",
        behavior_mix={"move": 0.62, "start": 0.15, "stop": 0.08, "turn": 0.15},
        n_samples=2000,
        seed=42,
        grid_h=GRID_H,
        cell_e=CELL_E,
        horizons=HORIZONS,
        speed_range=(0.8, 1.8),
        noise_sigma=0.08,
        n_locations=12,
    )
    dataset = gc.synthesize(cfg)
    train, val, test = gc.split_by_location(dataset, (0.6, 0.2, 0.2), seed=1)
    return dataset, train, val, test


@pytest.fixture(scope="module")
def trained_dt_dtp(corridor_data):
    """d_t and d_tp trained on the corridor set, with the wall-clock cost."""
    dataset, train, val, test = corridor_data
    grid = dataset.manifest.grid
    t0 = time.time()
    dt, _ = models.train_discrete(
        models.table1_config("d_t", grid, HORIZONS, smoothing=SMOOTH),
        train.samples, val.samples, seed=0, max_epochs=100, **TRAIN_OPTS,
    )
    dtp, _ = models.train_discrete(
        models.table1_config("d_tp", grid, HORIZONS, smoothing=SMOOTH),
        train.samples, val.samples, seed=0, max_epochs=100, **TRAIN_OPTS,
    )
    elapsed = time.time() - t0
    return dt, dtp, elapsed


@pytest.fixture(scope="module")
def trained_dtpm(corridor_data):
    dataset, train, val, _ = corridor_data
    grid = dataset.manifest.grid
    model, _ = models.train_discrete(
        models.table1_config("d_tpm", grid, HORIZONS, smoothing=SMOOTH),
        train.samples, val.samples, seed=0, max_epochs=100, **TRAIN_OPTS,
    )
    return model


def persistence_aswaee(grid, samples):
    stay = gc.one_hot_target(grid, grid.center)
    per_h = []
    for k in range(len(HORIZONS)):
        errs = [
            metrics.expected_distance(stay, gc.position_to_cell(grid, s.future_positions[k]))
            for s in samples
        ]
        per_h.append(float(np.mean(errs)))
    return gc.aswaee(per_h, HORIZONS)


# ---------------------------------------------------------------------------
# criterion 1: metric oracle equivalence


def brute_confidence_level(probs, y):
    p_true = probs[y[0], y[1]]
    selected = [p for p in probs.ravel() if p >= p_true]
    return float(np.sum(np.array(selected)))


def brute_confidence_area(probs, level, e):
    flat = sorted(probs.ravel(), reverse=True)
    cum, tau = 0.0, flat[-1]
    for v in flat:
        cum += v
        if cum >= level:
            tau = v
            break
    return sum(1 for v in probs.ravel() if v >= tau) * e**2


def brute_expected_distance(grid, probs, cell):
    cy = gc.cell_to_position(grid, cell)
    vals = []
    for r in range(grid.h):
        for c in range(grid.h):
            p = gc.cell_to_position(grid, (r, c))
            dx, dy = p[0] - cy[0], p[1] - cy[1]
            vals.append(probs[r, c] * np.sqrt(dx * dx + dy * dy))
    return float(np.sum(np.array(vals)))


def brute_occupancy(probs, mask):
    vals = [probs[r, c] for r in range(probs.shape[0]) for c in range(probs.shape[1]) if mask[r, c]]
    return float(np.sum(np.array(vals))) if vals else 0.0


def brute_ece(cs_per_horizon, bins):
    total, m = 0.0, len(cs_per_horizon[0])
    for cs in cs_per_horizon:
        for b in range(1, bins + 1):
            lo, hi = (b - 1) / bins, b / bins
            j = sum(1 for c in cs if lo < c <= hi)
            fo = sum(1 for c in cs if c <= hi) / len(cs)
            total += j * abs(hi - fo)
    return total / (len(cs_per_horizon) * m)


def test_criterion_1_metric_oracle_equivalence():
    rng = np.random.default_rng(2024)
    grid = gc.make_grid(5, 0.35)
    t0 = time.time()
    checked = 0
    for _ in range(1000):
        probs = np.round(rng.random((5, 5)), 3)
        if probs.sum() == 0:
            continue
        probs = probs / probs.sum()
        d = gc.GridDistribution(grid, probs)
        y = (int(rng.integers(5)), int(rng.integers(5)))
        level = float(rng.choice([0.5, 0.8, 0.9, 0.95]))
        mask = rng.random((5, 5)) < 0.35
        assert gc.confidence_level(d, y) == brute_confidence_level(probs, y)
        assert gc.confidence_area(d, level) == brute_confidence_area(probs, level, 0.35)
        truth = gc.cell_to_position(grid, y)
        assert gc.waee([d], [truth]) == brute_expected_distance(grid, probs, y)
        om = gc.ObstacleMask(grid, mask, OCCUPANCY)
        assert gc.occupancy(d, om) == brute_occupancy(probs, mask)
        checked += 1
    cs = [rng.random(211) for _ in range(3)]
    assert gc.ece(cs, 20) == pytest.approx(brute_ece(cs, 20), abs=1e-12)
    elapsed = time.time() - t0
    ok = checked >= 990 and elapsed < 10
    announce(1, ok, f"{checked} random 5x5 grids match brute force exactly in {elapsed:.1f}s")
    assert elapsed < 10


# ---------------------------------------------------------------------------
# criterion 2: gradient correctness


def test_criterion_2_full_model_gradient_checks():
    synth = gc.SynthConfig(
        scene="corridor",
        behavior_mix={"move": 0.4, "start": 0.2, "stop": 0.2, "turn": 0.2},
        n_samples=12,
        seed=31,
        grid_h=5,
        cell_e=0.35,
        horizons=(0.2, 0.4),
        speed_range=(0.1, 0.25),
        noise_sigma=0.03,
        n_locations=3,
    )
    samples = gc.synthesize(synth).samples[:2]
    grid = gc.make_grid(5, 0.35)
    t0 = time.time()
    worst = {}
    for kind in ("d_t", "d_tp", "d_tpm"):
        cfg = models.DiscreteModelConfig(
            kind=kind,
            grid=grid,
            horizons=(0.2, 0.4),
            trajectory_layers=2,
            trajectory_width=6,
            fusion_convs=2,
            fusion_filters=3,
            map_convs=1 if kind == "d_tpm" else 0,
            map_filters=3 if kind == "d_tpm" else 0,
            smoothing=gc.SmoothingSchedule((0.5, 0.5)),
            masked_targets=(kind == "d_tpm"),
        )
        errs = []
        for seed in (0, 1, 2):
            model = models.build_discrete(cfg, seed=seed)
            errs.append(models.gradient_check_model(model, samples))
        worst[kind] = max(errs)
    elapsed = time.time() - t0
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 60
    announce(
        2,
        ok,
        "max relative gradient error "
        + ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
        + f" in {elapsed:.0f}s",
    )
    for kind, v in worst.items():
        assert v < 1e-4, f"{kind} gradient check failed: {v}"
    assert elapsed < 60


# ---------------------------------------------------------------------------
# criterion 3: every emitted forecast is a valid distribution


def test_criterion_3_forecast_normalization(corridor_data, trained_dt_dtp, trained_dtpm):
    import gridcast.runtime as runtime

    assert runtime.strict_forecasts, "suite must run with strict forecast validation"
    dataset, _, val, test = corridor_data
    dt, dtp, _ = trained_dt_dtp
    checked = 0
    for model in (dt, dtp, trained_dtpm):
        probs = models.predict_probs(model, test.samples[:150])
        for i in range(probs.shape[0]):
            # ForecastSet.from_probs re-validates under the strict flag
            fs = models.ForecastSet.from_probs(model.grid, model.horizons, probs[i])
            for d in fs.distributions:
                report = gc.validate_distribution(d)
                assert report.ok, report
                checked += 1
    # temperature-scaled forecasts stay normalized too
    sched, _ = calibration.fit_temperature(dt, val.samples[:120], bins=10)
    logits = models.predict_logits(dt, test.samples[:60])
    scaled = calibration.apply_temperature(logits, sched)
    for i in range(scaled.shape[0]):
        fs = models.ForecastSet.from_probs(dt.grid, dt.horizons, scaled[i])
        for d in fs.distributions:
            assert gc.validate_distribution(d).ok
            checked += 1
    announce(3, True, f"{checked} forecasts validated (strict mode on for the whole suite)")


# ---------------------------------------------------------------------------
# criterion 4: target construction oracles


def test_criterion_4_target_oracles():
    g = gc.make_grid(3, 1.0)
    # independent oracle: direct density evaluation then normalization
    centers = g.cell_centers()
    cy = gc.cell_to_position(g, (1, 1))
    dens = np.exp(-((centers - cy) ** 2).sum(-1) / (2 * 0.48**2))
    oracle = dens / dens.sum()
    target = gc.gaussian_target(g, (1, 1), 0.48)
    assert np.all(np.abs(target.probs - oracle) < 1e-9)

    mask = np.zeros((3, 3), bool)
    mask[[0, 0, 2, 2], [0, 2, 0, 2]] = True
    oracle_masked = oracle.copy()
    oracle_masked[mask] = 0.0
    oracle_masked /= oracle_masked.sum()
    masked = gc.masked_gaussian_target(g, (1, 1), 0.48, gc.ObstacleMask(g, mask, TRAINING))
    assert np.all(np.abs(masked.probs - oracle_masked) < 1e-9)
    assert np.all(masked.probs[mask] == 0.0)
    free = ~mask
    ratio = masked.probs[free] / target.probs[free]
    assert np.all(np.abs(ratio - ratio[0]) < 1e-12)
    announce(4, True, "3x3 smoothing targets match the density oracle to 1e-9; "
                      "masking is exact-zero and proportional to 1e-12")


# ---------------------------------------------------------------------------
# criterion 5: learning sanity on the corridor set


def test_criterion_5_learning_beats_persistence(corridor_data, trained_dt_dtp):
    dataset, _, _, test = corridor_data
    dt, dtp, train_seconds = trained_dt_dtp
    grid = dataset.manifest.grid
    persistence = persistence_aswaee(grid, test.samples)
    a_dt = metrics.evaluate_discrete(dt, test.samples).motions["all"]["aggregate"]["aswaee"]
    a_dtp = metrics.evaluate_discrete(dtp, test.samples).motions["all"]["aggregate"]["aswaee"]
    reduction = 1 - a_dt / persistence
    ok = (reduction >= 0.30) and (a_dtp < a_dt) and (train_seconds < 900)
    announce(
        5,
        ok,
        f"d_t {a_dt:.3f} vs persistence {persistence:.3f} ({reduction:.1%} reduction), "
        f"d_tp {a_dtp:.3f} < d_t, trained in {train_seconds:.0f}s",
    )
    assert reduction >= 0.30
    assert a_dtp < a_dt
    assert train_seconds < 900


# ---------------------------------------------------------------------------
# criterion 6: calibration direction


def test_criterion_6_smoothing_and_temperature_reduce_ece(corridor_data):
    dataset, train, val, _ = corridor_data
    grid = dataset.manifest.grid
    base = models.table1_config("d_t", grid, HORIZONS)
    opts = dict(learning_rate=3e-3, max_epochs=60, patience=12, decay_patience=6)

    schedule, sweep_report = calibration.sweep_sigma(
        base, [0.25, 0.5, 1.0], train.samples, val.samples, seed=0, bins=20, **opts
    )
    smoothed, _ = models.train_discrete(
        models.with_smoothing(base, schedule), train.samples, val.samples, seed=0, **opts
    )
    onehot, _ = models.train_discrete(base, train.samples, val.samples, seed=0, **opts)
    ece_smoothed = calibration.validation_ece_per_horizon(smoothed, val.samples, 20).mean()
    ece_onehot = calibration.validation_ece_per_horizon(onehot, val.samples, 20).mean()

    _, temp_report = calibration.fit_temperature(onehot, val.samples, bins=20)
    ece_temp = float(np.mean(temp_report["validation_ece"]))

    margin = ece_onehot - ece_smoothed
    ok = margin >= 0.005 and ece_temp <= ece_onehot + 1e-12
    announce(
        6,
        ok,
        f"validation ECE one-hot {ece_onehot:.4f} -> smoothed {ece_smoothed:.4f} "
        f"(margin {margin:.4f}), temperature {ece_temp:.4f} (never worse); "
        f"sweep selected sigma {schedule.sigma_cells}",
    )
    assert margin >= 0.005
    assert ece_temp <= ece_onehot + 1e-12


# ---------------------------------------------------------------------------
# criterion 7: obstacle masking reduces occupancy


def test_criterion_7_masked_training_reduces_occupancy(corridor_data, trained_dt_dtp, trained_dtpm):
    dataset, _, _, test = corridor_data
    _, dtp, _ = trained_dt_dtp
    rep_dtp = metrics.evaluate_discrete(dtp, test.samples).motions["all"]["horizons"]
    rep_dtpm = metrics.evaluate_discrete(trained_dtpm, test.samples).motions["all"]["horizons"]
    occ_dtp = [rep_dtp[k]["occupancy"] for k in sorted(rep_dtp)]
    occ_dtpm = [rep_dtpm[k]["occupancy"] for k in sorted(rep_dtpm)]
    last = format(HORIZONS[-1], ".2f")
    rel_drop = 1 - rep_dtpm[last]["occupancy"] / max(rep_dtp[last]["occupancy"], 1e-12)
    everywhere = all(m <= p + 1e-12 for m, p in zip(occ_dtpm, occ_dtp))
    ok = everywhere and rel_drop >= 0.25
    announce(
        7,
        ok,
        f"occupancy d_tp {np.round(occ_dtp, 5).tolist()} -> "
        f"d_tpm {np.round(occ_dtpm, 5).tolist()}; longest-horizon reduction {rel_drop:.0%}",
    )
    assert everywhere
    assert rel_drop >= 0.25


# ---------------------------------------------------------------------------
# criterion 8: continuous baseline


def test_criterion_8_continuous_recovery_and_mc_agreement():
    true_sigma = 0.2
    dataset = gc.synthesize(
        gc.SynthConfig(
            scene="open",
            behavior_mix={"move": 1.0},
            n_samples=1500,
            seed=11,
            grid_h=GRID_H,
            cell_e=CELL_E,
            horizons=HORIZONS,
            speed_range=(0.5, 1.4),
            noise_sigma=true_sigma,
            n_locations=8,
        )
    )
    train, val, test = gc.split_by_location(dataset, (0.6, 0.2, 0.2), seed=0)
    model, _ = models.train_continuous(
        models.ContinuousModelConfig(kind="c_t", horizons=HORIZONS),
        train.samples, val.samples, seed=0,
        learning_rate=3e-3, max_epochs=150, patience=20, decay_patience=6,
    )
    sigmas = np.array([fc.sigma for fc, _ in models.predict_gaussians(model, test.samples)])
    mean_sigma = sigmas.mean(axis=(0, 2))
    recovery_ok = np.all(np.abs(mean_sigma - true_sigma) <= 0.04)

    # analytic confidence level / area vs Monte Carlo at 1e6 samples
    rng = np.random.default_rng(5)
    n = 1_000_000
    mc_ok = True
    for trial in range(2):
        sigma = rng.uniform(0.4, 1.5, size=2)
        rho = rng.uniform(-0.7, 0.7)
        truth = rng.uniform(-1.5, 1.5, size=2)
        fc = models.GaussianForecastSet((1.0,), [[0.0, 0.0]], [sigma], [rho])
        c = gc.gaussian_confidence_level(fc, [truth])[0]
        c_mc = metrics.gaussian_confidence_level_mc(fc, [truth], n, seed=trial)[0]
        se = np.sqrt(max(c * (1 - c), 1e-12) / n)
        mc_ok &= abs(c - c_mc) <= 3 * se + 1e-9
        a = gc.gaussian_confidence_area(fc, 0.95)[0]
        a_mc = metrics.gaussian_confidence_area_mc(fc, 0.95, n, seed=trial + 7)[0]
        box = 4 * (-2 * np.log(0.05)) * sigma[0] * sigma[1]
        frac = a / box
        se_a = box * np.sqrt(frac * (1 - frac) / n)
        mc_ok &= abs(a - a_mc) <= 3 * se_a
    ok = recovery_ok and bool(mc_ok)
    announce(
        8,
        ok,
        f"recovered sigma per horizon {np.round(mean_sigma, 3).tolist()} "
        f"(true {true_sigma}); analytic C/A within 3 SE of 1e6-sample MC",
    )
    assert recovery_ok, mean_sigma
    assert mc_ok


# ---------------------------------------------------------------------------
# criterion 9: byte-identical reruns


def test_criterion_9_cli_determinism(tmp_path):
    out = tmp_path
    config = {
        "seed": 3,
        "threads": 1,
        "out_dir": str(out),
        "model": {"kind": "d_t", "grid_h": 17, "cell_e": 0.35, "horizons": [0.44, 1.48]},
        "training": {
            "learning_rate": 0.003, "max_epochs": 6, "patience": 6,
            "smoothing_sigma_cells": [0.5],
        },
        "data": {
            "dataset_dir": str(out / "dataset"),
            "synth": {
                "scene": "corridor",
                "behavior_mix": {"move": 0.6, "start": 0.2, "stop": 0.1, "turn": 0.1},
                "n_samples": 90, "speed_min": 0.4, "speed_max": 0.9,
                "noise_sigma": 0.08, "grid_h": 17, "horizons": [0.44, 1.48],
                "n_locations": 5,
            },
        },
        "eval": {"bins": 10},
    }
    config_path = out / "run.json"
    config_path.write_text(json.dumps(config))
    assert cli.main(["synth", "--config", str(config_path), "--out", str(out / "s")]) == 0
    os.replace(out / "s" / "dataset", out / "dataset")

    for tag in ("a", "b"):
        assert cli.main(["train", "--config", str(config_path), "--out", str(out / f"t{tag}")]) == 0
    ckpt_same = (out / "ta" / "model.ckpt").read_bytes() == (out / "tb" / "model.ckpt").read_bytes()
    report_same = (
        (out / "ta" / "train_report.json").read_bytes()
        == (out / "tb" / "train_report.json").read_bytes()
    )

    config["model"]["checkpoint"] = str(out / "ta" / "model.ckpt")
    config_path.write_text(json.dumps(config))
    for tag in ("a", "b"):
        assert cli.main(["eval", "--config", str(config_path), "--out", str(out / f"e{tag}")]) == 0
    eval_same = (
        (out / "ea" / "metrics_report.json").read_bytes()
        == (out / "eb" / "metrics_report.json").read_bytes()
    )
    rel_same = all(
        (out / "ea" / f).read_bytes() == (out / "eb" / f).read_bytes()
        for f in os.listdir(out / "ea")
        if f.startswith("reliability")
    )
    ok = ckpt_same and report_same and eval_same and rel_same
    announce(9, ok, "repeated train and eval runs produce byte-identical "
                    "checkpoints, train reports, metrics reports, and CSVs")
    assert ckpt_same and report_same and eval_same and rel_same


# ---------------------------------------------------------------------------
# criterion 10: published architecture constants


def test_criterion_10_architecture_constants():
    expect = {
        "d_t": dict(trajectory_layers=4, trajectory_width=150,
                    fusion_convs=2, fusion_filters=10, map_convs=0, map_filters=0),
        "d_tp": dict(trajectory_layers=5, trajectory_width=50,
                     fusion_convs=2, fusion_filters=20, map_convs=0, map_filters=0),
        "d_tpm": dict(trajectory_layers=5, trajectory_width=50,
                      fusion_convs=2, fusion_filters=20, map_convs=1, map_filters=8),
    }
    horizons = (0.44, 0.96, 1.48, 2.0, 2.52)
    pedestrian = gc.make_grid(67, 0.35)
    cyclist = gc.make_grid(147, 0.35)
    assert pedestrian.extent == pytest.approx(23.45)
    assert cyclist.extent == pytest.approx(51.45)
    for kind, arch in expect.items():
        for grid in (pedestrian, cyclist):
            cfg = models.table1_config(kind, grid, horizons)
            for key, value in arch.items():
                assert getattr(cfg, key) == value, (kind, key)
            model = models.build_discrete(cfg, seed=0)
            assert len(model.horizons) == 5
            # trajectory stack + projection, map stream, fusion + 1x1
            expected_layers = arch["trajectory_layers"] + 1 + arch["map_convs"] + arch["fusion_convs"] + 1
            assert len(model.specs) == expected_layers
            assert model.specs[-1].ksize == 1 and model.specs[-1].activation == "linear"
            assert model.specs[-1].cout == 5
    defaults = gc.SmoothingSchedule(gc.DEFAULT_SIGMA_CELLS)
    assert defaults.sigma_cells == (0.48, 0.48, 0.53, 0.55, 0.55)
    announce(10, True, "published layer/filter counts and grids instantiate; "
                       "five horizons 0.44-2.52 s; default smoothing schedule present")
