"""Canonical dataset format, location-disjoint splitting, and augmentation.

On disk a dataset is one directory:

    manifest.json   grid parameters, joint order, observation/forecast
                    times, category names, format version
    samples.jsonl   one record per sample (scalars, trajectory, poses,
                    futures, map file references)
    maps/*.pgm      8-bit category rasters referenced from the records

All floating-point values are serialized as decimal with 17 significant
digits, which round-trips doubles exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import jsonio
from .errors import SchemaError
from .features import JOINT_NAMES, N_OBSERVED, OBS_RATE_HZ, VruSample
from .grid import Grid, make_grid
from .scene import CATEGORY_NAMES, SemanticMap, load_map_pgm, rotate_map, save_map_pgm

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Manifest:
    grid_h: int
    grid_e: float
    obs_times: tuple
    horizons: tuple
    joint_names: tuple = JOINT_NAMES
    categories: tuple = CATEGORY_NAMES
    version: int = FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "obs_times", tuple(float(t) for t in self.obs_times))
        object.__setattr__(self, "horizons", tuple(float(t) for t in self.horizons))
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "categories", tuple(self.categories))

    @property
    def grid(self) -> Grid:
        return make_grid(self.grid_h, self.grid_e)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "grid_h": self.grid_h,
            "grid_e": self.grid_e,
            "obs_times": list(self.obs_times),
            "horizons": list(self.horizons),
            "joint_names": list(self.joint_names),
            "categories": list(self.categories),
        }


def standard_manifest(grid: Grid, horizons) -> Manifest:
    obs = tuple((i - N_OBSERVED + 1) / OBS_RATE_HZ for i in range(N_OBSERVED))
    return Manifest(grid.h, grid.e, obs, tuple(horizons))


@dataclass
class Dataset:
    manifest: Manifest
    samples: list

    def __len__(self):
        return len(self.samples)


def _validate_manifest(blob: dict) -> Manifest:
    required = {
        "version",
        "grid_h",
        "grid_e",
        "obs_times",
        "horizons",
        "joint_names",
        "categories",
    }
    missing = required - set(blob)
    if missing:
        raise SchemaError(f"manifest missing fields: {sorted(missing)}")
    if blob["version"] != FORMAT_VERSION:
        raise SchemaError(
            f"manifest version {blob['version']} unsupported (expected {FORMAT_VERSION})"
        )
    obs = blob["obs_times"]
    if len(obs) != N_OBSERVED:
        raise SchemaError(
            f"manifest field obs_times must list {N_OBSERVED} observation times, got {len(obs)}"
        )
    steps = np.diff(obs)
    if not np.allclose(steps, 1.0 / OBS_RATE_HZ, atol=1e-9):
        raise SchemaError(f"manifest field obs_times must be uniform at {OBS_RATE_HZ} Hz")
    if tuple(blob["categories"]) != CATEGORY_NAMES:
        raise SchemaError("manifest category names do not match this library")
    return Manifest(
        grid_h=int(blob["grid_h"]),
        grid_e=float(blob["grid_e"]),
        obs_times=tuple(obs),
        horizons=tuple(blob["horizons"]),
        joint_names=tuple(blob["joint_names"]),
        categories=tuple(blob["categories"]),
    )


def save_dataset(ds: Dataset, path) -> None:
    os.makedirs(path, exist_ok=True)
    maps_dir = os.path.join(path, "maps")
    os.makedirs(maps_dir, exist_ok=True)
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        fh.write(jsonio.dumps(ds.manifest.to_dict(), indent=2))
    with open(os.path.join(path, "samples.jsonl"), "w") as fh:
        for s in ds.samples:
            map_ref = f"{s.sample_id}_tc.pgm"
            save_map_pgm(s.map_tc, os.path.join(maps_dir, map_ref))
            future_refs = []
            for k, m in enumerate(s.future_maps):
                if m is None:
                    future_refs.append(None)
                else:
                    ref = f"{s.sample_id}_f{k}.pgm"
                    save_map_pgm(m, os.path.join(maps_dir, ref))
                    future_refs.append(ref)
            record = {
                "id": s.sample_id,
                "location_id": s.location_id,
                "vru_type": s.vru_type,
                "motion_type": s.motion_type,
                "times": s.times.tolist(),
                "head_xy": s.head_xy.tolist(),
                "pose": s.pose.tolist() if s.pose is not None else None,
                "map_tc": map_ref,
                "future_times": s.future_times.tolist(),
                "future_positions": s.future_positions.tolist(),
                "future_maps": future_refs,
            }
            fh.write(jsonio.dumps(record))
            fh.write("\n")


def _load_map(grid: Grid, maps_dir: str, ref: str) -> SemanticMap:
    full = os.path.join(maps_dir, ref)
    if not os.path.exists(full):
        raise SchemaError(f"missing map file {ref!r}")
    return load_map_pgm(grid, full)


def load_dataset(path) -> Dataset:
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise SchemaError(f"no manifest.json under {path}")
    manifest = _validate_manifest(jsonio.loads(open(manifest_path).read()))
    grid = manifest.grid
    maps_dir = os.path.join(path, "maps")
    samples = []
    seen = set()
    with open(os.path.join(path, "samples.jsonl")) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = jsonio.loads(line)
            try:
                sid = rec["id"]
                if sid in seen:
                    raise SchemaError(f"duplicate sample id {sid!r}")
                seen.add(sid)
                future_maps = tuple(
                    None if ref is None else _load_map(grid, maps_dir, ref)
                    for ref in rec["future_maps"]
                )
                samples.append(
                    VruSample(
                        sample_id=sid,
                        location_id=rec["location_id"],
                        vru_type=rec["vru_type"],
                        motion_type=rec["motion_type"],
                        times=np.array(rec["times"]),
                        head_xy=np.array(rec["head_xy"]),
                        pose=np.array(rec["pose"]) if rec["pose"] is not None else None,
                        map_tc=_load_map(grid, maps_dir, rec["map_tc"]),
                        future_times=np.array(rec["future_times"]),
                        future_positions=np.array(rec["future_positions"]),
                        future_maps=future_maps,
                    )
                )
            except KeyError as exc:
                raise SchemaError(f"samples.jsonl line {line_no}: missing field {exc}")
            except ValueError as exc:
                raise SchemaError(f"samples.jsonl line {line_no}: {exc}")
    return Dataset(manifest, samples)


# ---------------------------------------------------------------------------
# splitting


def split_by_location(ds: Dataset, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Assign whole locations to train/validation/test greedily.

    Locations are processed largest-first (seeded order among ties); each
    goes to the split with the largest remaining sample deficit, breaking
    ties toward better motion-type balance. The same location never lands
    in two splits.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be three values summing to 1")
    by_location: dict = {}
    for s in ds.samples:
        by_location.setdefault(s.location_id, []).append(s)
    if len(by_location) < 3:
        raise ValueError(
            f"need at least 3 distinct locations to split, got {len(by_location)}"
        )
    rng = np.random.default_rng(seed)
    loc_ids = sorted(by_location)
    tiebreak = {loc: float(r) for loc, r in zip(loc_ids, rng.random(len(loc_ids)))}
    order = sorted(loc_ids, key=lambda loc: (-len(by_location[loc]), tiebreak[loc]))

    total = len(ds.samples)
    motions = sorted({s.motion_type for s in ds.samples})
    global_hist = np.array(
        [sum(s.motion_type == m for s in ds.samples) for m in motions], dtype=float
    )
    global_hist /= global_hist.sum()

    counts = [0, 0, 0]
    hists = [np.zeros(len(motions)) for _ in range(3)]
    assignment: dict = {}
    for loc in order:
        samples = by_location[loc]
        loc_hist = np.array(
            [sum(s.motion_type == m for s in samples) for m in motions], dtype=float
        )
        # relative deficit: an empty 20% split outranks a half-filled 60%
        # one, so every split receives a location even when few exist
        deficits = [
            (fractions[i] * total - counts[i]) / max(fractions[i], 1e-9)
            for i in range(3)
        ]
        best = max(deficits)
        tied = [i for i in range(3) if abs(deficits[i] - best) < 1e-12]
        if len(tied) > 1:
            # imbalance of the motion-type mix if this location joins split i
            def imbalance(i):
                merged = hists[i] + loc_hist
                return float(np.abs(merged / merged.sum() - global_hist).sum())

            tied.sort(key=lambda i: (imbalance(i), i))
        choice = tied[0]
        assignment[loc] = choice
        counts[choice] += len(samples)
        hists[choice] += loc_hist

    parts = ([], [], [])
    for s in ds.samples:
        parts[assignment[s.location_id]].append(s)
    return tuple(Dataset(ds.manifest, list(p)) for p in parts)


# ---------------------------------------------------------------------------
# rotation augmentation


def _rotate_sample(s: VruSample, angle: float, suffix: str) -> VruSample:
    c, sn = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -sn], [sn, c]])
    pose = None
    if s.pose is not None:
        pose = s.pose.copy()
        pose[..., :2] = pose[..., :2] @ rot.T
    return VruSample(
        sample_id=s.sample_id + suffix,
        location_id=s.location_id,
        vru_type=s.vru_type,
        motion_type=s.motion_type,
        times=s.times,
        head_xy=s.head_xy @ rot.T,
        pose=pose,
        map_tc=rotate_map(s.map_tc, angle),
        future_times=s.future_times,
        future_positions=s.future_positions @ rot.T,
        future_maps=tuple(
            None if m is None else rotate_map(m, angle) for m in s.future_maps
        ),
    )


def augment_rotations(ds: Dataset, factor: int, seed: int, _fixed_angle=None) -> Dataset:
    """Replace each sample with `factor` independently rotated copies.

    Trajectories, poses, and futures rotate rigidly about the origin; maps
    are resampled. _fixed_angle forces a single angle (test hook).
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for s in ds.samples:
        for j in range(factor):
            angle = (
                float(_fixed_angle)
                if _fixed_angle is not None
                else float(rng.uniform(0.0, 2.0 * np.pi))
            )
            suffix = "" if factor == 1 else f"#r{j}"
            out.append(_rotate_sample(s, angle, suffix))
    return Dataset(ds.manifest, out)
