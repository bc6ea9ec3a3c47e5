"""Batch command-line front-end.

Subcommands: synth, train, calibrate, eval, forecast, plot. Every command
reads a JSON run configuration (schema below), writes only inside the
output directory, and exits 0 on success, 1 on a validation error, 2 on a
runtime failure; errors also go to stderr as one JSON line.

Configuration keys can be overridden by environment variables with the
GRIDCAST_ prefix, nesting with double underscores (e.g.
GRIDCAST_TRAINING__MAX_EPOCHS=50), and by the --seed/--threads/--out
flags.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import jsonio, runtime
from .calibration import fit_temperature, sweep_sigma
from .data import load_dataset, save_dataset, split_by_location, augment_rotations
from .errors import GridcastError, SchemaError
from .grid import make_grid, save_distribution_csv, save_distribution_pgm
from .metrics import evaluate_continuous, evaluate_discrete
from .models import (
    CONTINUOUS_KINDS,
    DISCRETE_KINDS,
    TABLE1,
    ContinuousModelConfig,
    DiscreteModel,
    DiscreteModelConfig,
    forward_discrete,
    load_model,
    save_model,
    train_continuous,
    train_discrete,
)
from .features import pose_features, trajectory_features
from .pgm import write_pgm
from .synth import SynthConfig, synthesize
from .targets import SmoothingSchedule

ENV_PREFIX = "GRIDCAST_"

# (type, default) pairs; None default means "no default, optional" unless
# listed in _REQUIRED. Nested dicts are sub-schemas.
_SYNTH_SCHEMA = {
    "scene": (str, "corridor"),
    "behavior_mix": (dict, {"move": 0.5, "start": 0.2, "stop": 0.15, "turn": 0.15}),
    "n_samples": (int, 2000),
    "speed_min": (float, 0.8),
    "speed_max": (float, 1.8),
    "noise_sigma": (float, 0.1),
    "grid_h": (int, 33),
    "cell_e": (float, 0.35),
    "horizons": (list, [0.44, 1.48, 2.52]),
    "n_locations": (int, 12),
    "vru_type": (str, "pedestrian"),
}

_SCHEMA = {
    "seed": (int, 0),
    "threads": (int, 1),
    "out_dir": (str, None),
    "model": {
        "kind": (str, "d_t"),
        "grid_h": (int, 33),
        "cell_e": (float, 0.35),
        "horizons": (list, [0.44, 1.48, 2.52]),
        "trajectory_layers": (int, None),
        "trajectory_width": (int, None),
        "map_convs": (int, None),
        "map_filters": (int, None),
        "fusion_convs": (int, None),
        "fusion_filters": (int, None),
        "hidden_layers": (int, 2),
        "hidden_width": (int, 100),
        "checkpoint": (str, None),
    },
    "training": {
        "batch_size": (int, 40),
        "learning_rate": (float, 1e-3),
        "max_epochs": (int, 500),
        "patience": (int, 10),
        "smoothing_sigma_cells": (list, None),
        "masked_targets": (bool, None),
    },
    "data": {
        "dataset_dir": (str, None),
        "split_fractions": (list, [0.6, 0.2, 0.2]),
        "split_seed": (int, None),
        "augment_factor": (int, 1),
        "eval_split": (str, "test"),
        "synth": _SYNTH_SCHEMA,
    },
    "calibration": {
        "sigma_candidates_cells": (list, [0.25, 0.5, 1.0]),
        "fit_temperature": (bool, True),
        "bins": (int, 20),
    },
    "eval": {
        "bins": (int, 20),
        "sharpness_level": (float, 0.95),
        "gaussian_waee_samples": (int, 4096),
        "strict": (bool, False),
    },
}

_REQUIRED = {("out_dir",)}


def _validate(blob, schema, path=()):
    """Fill defaults, reject unknown keys, coerce numeric types."""
    if not isinstance(blob, dict):
        raise SchemaError(f"config section {'.'.join(path) or '<root>'} must be an object")
    unknown = set(blob) - set(schema)
    if unknown:
        raise SchemaError(
            f"unknown config key(s) {sorted(unknown)} under {'.'.join(path) or '<root>'}"
        )
    out = {}
    for key, spec in schema.items():
        here = path + (key,)
        if isinstance(spec, dict):
            out[key] = _validate(blob.get(key, {}), spec, here)
            continue
        typ, default = spec
        if key not in blob or blob[key] is None:
            if here in _REQUIRED:
                raise SchemaError(f"missing required config key {'.'.join(here)}")
            out[key] = default
            continue
        value = blob[key]
        if typ is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if typ is int and isinstance(value, bool):
            raise SchemaError(f"config key {'.'.join(here)} must be an integer")
        if not isinstance(value, typ):
            raise SchemaError(
                f"config key {'.'.join(here)} must be {typ.__name__}, got {type(value).__name__}"
            )
        out[key] = value
    return out


def _apply_env(blob: dict) -> None:
    for name, raw in sorted(os.environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX) :].lower().split("__")
        try:
            value = jsonio.loads(raw)
        except Exception:
            value = raw
        node = blob
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise SchemaError(f"environment override {name} conflicts with config")
        node[parts[-1]] = value


def load_config(path, overrides=None) -> dict:
    try:
        blob = jsonio.loads(open(path).read())
    except FileNotFoundError:
        raise SchemaError(f"config file not found: {path}")
    except ValueError as exc:
        raise SchemaError(f"config file is not valid JSON: {exc}")
    _apply_env(blob)
    for key, value in (overrides or {}).items():
        if value is not None:
            blob[key] = value
    return _validate(blob, _SCHEMA)


def _hash(config) -> str:
    return jsonio.config_hash({k: v for k, v in config.items() if k != "out_dir"})


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        fh.write(jsonio.dumps(obj, indent=2))


def _synth_config(config) -> SynthConfig:
    s = config["data"]["synth"]
    return SynthConfig(
        scene=s["scene"],
        behavior_mix={k: float(v) for k, v in s["behavior_mix"].items()},
        n_samples=s["n_samples"],
        seed=config["seed"],
        speed_range=(s["speed_min"], s["speed_max"]),
        noise_sigma=s["noise_sigma"],
        grid_h=s["grid_h"],
        cell_e=s["cell_e"],
        horizons=tuple(s["horizons"]),
        n_locations=s["n_locations"],
        vru_type=s["vru_type"],
    )


def _load_splits(config):
    data_cfg = config["data"]
    if not data_cfg["dataset_dir"]:
        raise SchemaError("config key data.dataset_dir is required for this command")
    ds = load_dataset(data_cfg["dataset_dir"])
    split_seed = data_cfg["split_seed"]
    if split_seed is None:
        split_seed = config["seed"]
    train, val, test = split_by_location(
        ds, tuple(data_cfg["split_fractions"]), split_seed
    )
    if data_cfg["augment_factor"] > 1:
        train = augment_rotations(train, data_cfg["augment_factor"], split_seed)
    return ds, train, val, test


def _select_split(config, ds, train, val, test):
    name = config["data"]["eval_split"]
    if name == "train":
        return train
    if name == "validation":
        return val
    if name == "test":
        return test
    if name == "all":
        return ds
    raise SchemaError(f"unknown eval split {name!r}")


def _smoothing_from_config(config, horizons) -> SmoothingSchedule | None:
    cells = config["training"]["smoothing_sigma_cells"]
    if cells is None:
        return None
    if len(cells) == 1:
        cells = list(cells) * len(horizons)
    if len(cells) != len(horizons):
        raise SchemaError(
            "training.smoothing_sigma_cells must have one value, or one per horizon"
        )
    return SmoothingSchedule(tuple(float(c) for c in cells))


def _discrete_config(config) -> DiscreteModelConfig:
    m = config["model"]
    kind = m["kind"]
    grid = make_grid(m["grid_h"], m["cell_e"])
    horizons = tuple(m["horizons"])
    arch = dict(TABLE1[kind])
    for key in ("trajectory_layers", "trajectory_width", "map_convs", "map_filters",
                "fusion_convs", "fusion_filters"):
        if m[key] is not None:
            arch[key] = m[key]
    masked = config["training"]["masked_targets"]
    if masked is None:
        masked = kind == "d_tpm"
    return DiscreteModelConfig(
        kind=kind,
        grid=grid,
        horizons=horizons,
        smoothing=_smoothing_from_config(config, horizons),
        masked_targets=masked,
        **arch,
    )


def _train_opts(config) -> dict:
    t = config["training"]
    return dict(
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        max_epochs=t["max_epochs"],
        patience=t["patience"],
    )


def cmd_synth(config) -> int:
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    ds = synthesize(_synth_config(config))
    save_dataset(ds, os.path.join(out_dir, "dataset"))
    _write_json(
        os.path.join(out_dir, "synth_summary.json"),
        {
            "n_samples": len(ds),
            "locations": sorted({s.location_id for s in ds.samples}),
            "motion_types": sorted({s.motion_type for s in ds.samples}),
            "config_hash": _hash(config),
        },
    )
    return 0


def cmd_train(config) -> int:
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _, train, val, _ = _load_splits(config)
    kind = config["model"]["kind"]
    seed = config["seed"]
    if kind in DISCRETE_KINDS:
        model, report = train_discrete(
            _discrete_config(config), train.samples, val.samples, seed, **_train_opts(config)
        )
    elif kind in CONTINUOUS_KINDS:
        cfg = ContinuousModelConfig(
            kind=kind,
            horizons=tuple(config["model"]["horizons"]),
            hidden_layers=config["model"]["hidden_layers"],
            hidden_width=config["model"]["hidden_width"],
        )
        model, report = train_continuous(cfg, train.samples, val.samples, seed, **_train_opts(config))
    else:
        raise SchemaError(f"unknown model kind {kind!r}")
    save_model(model, os.path.join(out_dir, "model.ckpt"))
    blob = report.to_dict()
    blob["config_hash"] = _hash(config)
    _write_json(os.path.join(out_dir, "train_report.json"), blob)
    return 0


def cmd_calibrate(config) -> int:
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _, train, val, _ = _load_splits(config)
    cal = config["calibration"]
    report = {"config_hash": _hash(config)}
    if cal["sigma_candidates_cells"]:
        schedule, sweep_report = sweep_sigma(
            _discrete_config(config),
            cal["sigma_candidates_cells"],
            train.samples,
            val.samples,
            config["seed"],
            bins=cal["bins"],
            **_train_opts(config),
        )
        report["sigma_sweep"] = sweep_report
    if cal["fit_temperature"]:
        ckpt = config["model"]["checkpoint"]
        if not ckpt:
            raise SchemaError("temperature fitting needs config key model.checkpoint")
        model = load_model(ckpt)
        if not isinstance(model, DiscreteModel):
            raise SchemaError("temperature fitting applies to discrete models only")
        _check_grid_match(model, val)
        _, temp_report = fit_temperature(model, val.samples, bins=cal["bins"])
        report["temperature"] = temp_report
    _write_json(os.path.join(out_dir, "calibration_report.json"), report)
    return 0


def _check_grid_match(model: DiscreteModel, ds) -> None:
    mg, dg = model.grid, ds.manifest.grid
    if mg != dg:
        raise SchemaError(
            f"model grid {mg.h}x{mg.h} @ {mg.e} m does not match dataset grid "
            f"{dg.h}x{dg.h} @ {dg.e} m"
        )


def cmd_eval(config) -> int:
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    ckpt = config["model"]["checkpoint"]
    if not ckpt:
        raise SchemaError("evaluation needs config key model.checkpoint")
    model = load_model(ckpt)
    if isinstance(model, DiscreteModel):
        if not config["data"]["dataset_dir"]:
            raise SchemaError("config key data.dataset_dir is required for this command")
        _check_grid_match(model, load_dataset(config["data"]["dataset_dir"]))
    ds, train, val, test = _load_splits(config)
    subset = _select_split(config, ds, train, val, test)
    if not subset.samples:
        raise SchemaError(f"eval split {config['data']['eval_split']!r} is empty")
    ev = config["eval"]
    if ev["strict"]:
        runtime.set_strict_forecasts(True)
    chash = _hash(config)
    if isinstance(model, DiscreteModel):
        report = evaluate_discrete(
            model,
            subset.samples,
            bins=ev["bins"],
            sharpness_level=ev["sharpness_level"],
            config_hash=chash,
        )
    else:
        report = evaluate_continuous(
            model,
            subset.samples,
            bins=ev["bins"],
            sharpness_level=ev["sharpness_level"],
            waee_samples=ev["gaussian_waee_samples"],
            seed=config["seed"],
            config_hash=chash,
        )
    _write_json(os.path.join(out_dir, "metrics_report.json"), report.to_dict())
    for key, block in report.reliability.items():
        path = os.path.join(out_dir, f"reliability_{key.replace('.', '_')}.csv")
        with open(path, "w") as fh:
            fh.write("level,observed_frequency,count\n")
            for lv, fo, jb in zip(
                block["levels"], block["observed_frequency"], block["counts"]
            ):
                fh.write(f"{lv:.17g},{fo:.17g},{int(jb)}\n")
    return 0


def _log_scaled(probs: np.ndarray) -> np.ndarray:
    peak = probs.max()
    if peak <= 0:
        return np.zeros_like(probs, dtype=np.uint16)
    floor = peak * 1e-6
    clipped = np.maximum(probs, floor)
    scaled = (np.log(clipped) - np.log(floor)) / (np.log(peak) - np.log(floor))
    return np.rint(scaled * 65535).astype(np.uint16)


def cmd_forecast(config, sample_id: str) -> int:
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    ckpt = config["model"]["checkpoint"]
    if not ckpt:
        raise SchemaError("forecasting needs config key model.checkpoint")
    model = load_model(ckpt)
    if not isinstance(model, DiscreteModel):
        raise SchemaError("the forecast command renders discrete models only")
    if not config["data"]["dataset_dir"]:
        raise SchemaError("config key data.dataset_dir is required for this command")
    ds = load_dataset(config["data"]["dataset_dir"])
    _check_grid_match(model, ds)
    matches = [s for s in ds.samples if s.sample_id == sample_id]
    if not matches:
        raise SchemaError(f"sample id {sample_id!r} not found in dataset")
    sample = matches[0]
    f = trajectory_features(sample) if model.cfg.kind == "d_t" else pose_features(sample)
    m = sample.map_tc if model.cfg.kind == "d_tpm" else None
    fs = forward_discrete(model, f, m)
    meta = {"sample_id": sample_id, "horizons": list(model.horizons),
            "config_hash": _hash(config)}
    for k, t in enumerate(model.horizons):
        tag = format(t, ".2f").replace(".", "_")
        d = fs.distributions[k]
        save_distribution_pgm(d, os.path.join(out_dir, f"forecast_{tag}.pgm"))
        write_pgm(
            os.path.join(out_dir, f"forecast_{tag}_log.pgm"), _log_scaled(d.probs), 65535
        )
        save_distribution_csv(d, os.path.join(out_dir, f"forecast_{tag}.csv"))
    _write_json(os.path.join(out_dir, "forecast_meta.json"), meta)
    return 0


def cmd_plot(reliability_paths, forecast_paths, out_dir) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    if reliability_paths:
        fig, ax = plt.subplots(figsize=(5, 5))
        for path in reliability_paths:
            rows = [line.strip().split(",") for line in open(path)][1:]
            levels = [float(r[0]) for r in rows]
            observed = [float(r[1]) for r in rows]
            ax.plot(levels, observed, marker="o", markersize=3, label=os.path.basename(path))
        ax.plot([0, 1], [0, 1], "k--", linewidth=1, label="ideal")
        ax.set_xlabel("confidence level")
        ax.set_ylabel("observed frequency")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "reliability.png"), dpi=150)
        plt.close(fig)
    for path in forecast_paths or []:
        rows = [line.strip().split(",") for line in open(path)][1:]
        size = int(np.sqrt(len(rows)))
        raster = np.zeros((size, size))
        for r, c, p in rows:
            raster[int(r), int(c)] = float(p)
        fig, ax = plt.subplots(figsize=(5, 5))
        peak = raster.max() or 1.0
        from matplotlib.colors import LogNorm

        ax.imshow(
            np.maximum(raster, peak * 1e-6),
            origin="lower",
            cmap="jet",
            norm=LogNorm(vmin=peak * 1e-6, vmax=peak),
        )
        ax.set_title(os.path.basename(path))
        fig.tight_layout()
        stem = os.path.splitext(os.path.basename(path))[0]
        fig.savefig(os.path.join(out_dir, f"{stem}.png"), dpi=150)
        plt.close(fig)
    return 0


def _error_json(exc: BaseException) -> str:
    return jsonio.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}})


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gridcast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "train", "calibrate", "eval", "forecast"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None)
        if name == "forecast":
            p.add_argument("--sample", required=True)
    p = sub.add_parser("plot")
    p.add_argument("--reliability", nargs="*", default=[])
    p.add_argument("--forecast", nargs="*", default=[])
    p.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    try:
        if args.command == "plot":
            return cmd_plot(args.reliability, args.forecast, args.out)
        overrides = {"seed": args.seed, "threads": args.threads, "out_dir": args.out}
        config = load_config(args.config, overrides)
        if args.command == "synth":
            return cmd_synth(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "calibrate":
            return cmd_calibrate(config)
        if args.command == "eval":
            return cmd_eval(config)
        if args.command == "forecast":
            return cmd_forecast(config, args.sample)
        raise SchemaError(f"unknown command {args.command!r}")
    except (SchemaError, ValueError) as exc:
        sys.stderr.write(_error_json(exc) + "\n")
        return 1
    except GridcastError as exc:
        sys.stderr.write(_error_json(exc) + "\n")
        return 2
    except Exception as exc:  # runtime failure
        sys.stderr.write(_error_json(exc) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
