"""Synthetic scenes and walkers for desk-scale training and verification.

Scenes are simple geometric layouts (corridor, intersection, open ground)
rasterized into semantic maps. Walkers follow one of five behaviors
(move, start, stop, turn, wait); poses come from a kinematic walker whose
torso orientation leads the path heading by a fixed anticipation time and
whose limbs swing sinusoidally with traveled distance.

Noise model: the observed past is clean and additive Gaussian noise is
applied to the future positions only, so the conditional spread of the
truth given the inputs equals the configured noise at every horizon.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, standard_manifest
from .features import JOINT_NAMES, N_OBSERVED, VruSample
from .grid import make_grid
from .scene import Category, SemanticMap

DT = 0.04  # master time step (25 Hz)

SCENES = ("corridor", "intersection", "open")
BEHAVIORS = ("move", "start", "stop", "turn", "wait")

WALL_THICKNESS = 0.7


@dataclass(frozen=True)
class PoseSettings:
    """Kinematic walker parameters."""

    hip_width_range: tuple = (0.30, 0.40)
    shoulder_width: float = 0.42
    stature_range: tuple = (0.9, 1.1)
    stride_length: float = 0.9
    anticipation_lead: float = 0.3  # torso leads the heading by this many seconds
    lean_gain: float = 0.12


@dataclass(frozen=True)
class SynthConfig:
    scene: str
    behavior_mix: dict
    n_samples: int
    seed: int
    speed_range: tuple = (0.8, 1.8)
    noise_sigma: float = 0.1
    grid_h: int = 33
    cell_e: float = 0.35
    horizons: tuple = (0.44, 1.48, 2.52)
    n_locations: int = 12
    vru_type: str = "pedestrian"
    pose: PoseSettings = field(default_factory=PoseSettings)

    def __post_init__(self):
        if self.scene not in SCENES:
            raise ValueError(f"unknown scene kind {self.scene!r}")
        if self.n_samples < 1 or self.n_locations < 3:
            raise ValueError("need n_samples >= 1 and n_locations >= 3")
        weights = dict(self.behavior_mix)
        unknown = set(weights) - set(BEHAVIORS)
        if unknown:
            raise ValueError(f"unknown behaviors in mix: {sorted(unknown)}")
        total = sum(weights.values())
        if total <= 0 or abs(total - 1.0) > 1e-9:
            raise ValueError("behavior mix probabilities must sum to 1")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ValueError("invalid speed range")
        for t in self.horizons:
            if abs(t / DT - round(t / DT)) > 1e-9:
                raise ValueError(f"horizon {t} is not a multiple of {DT} s")
        object.__setattr__(self, "behavior_mix", weights)
        object.__setattr__(self, "horizons", tuple(float(t) for t in self.horizons))


# ---------------------------------------------------------------------------
# scene geometry (all in the location frame: corridor axis = x axis)


class _SceneGeometry:
    """Per-location layout sampled once and shared by its samples."""

    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        self.kind = cfg.scene
        self.half_width = float(rng.uniform(1.05, 2.1))
        self.cross_half_width = float(rng.uniform(1.05, 2.1))
        self.orientation = float(rng.uniform(0.0, 2.0 * np.pi))
        self.vegetation_side = int(rng.integers(0, 3))  # 0: none, 1: +y, 2: -y
        self.cars = []
        if self.kind == "corridor":
            for _ in range(int(rng.integers(0, 3))):
                x0 = float(rng.uniform(-9.0, 5.0))
                side = 1.0 if rng.random() < 0.5 else -1.0
                self.cars.append((x0, side))
        self.persons = [
            (float(rng.uniform(-9.0, 9.0)), float(rng.uniform(-0.9, 0.9)))
            for _ in range(int(rng.integers(0, 3)))
        ]
        self.unknown_patch = None
        if rng.random() < 0.3:
            self.unknown_patch = (float(rng.uniform(-9.0, 5.0)), 1.0 if rng.random() < 0.5 else -1.0)

    def categories_at(self, pts: np.ndarray) -> np.ndarray:
        """Category ids for points in the location frame; pts is (..., 2)."""
        x, y = pts[..., 0], pts[..., 1]
        out = np.full(x.shape, int(Category.ROAD), dtype=np.uint8)
        if self.kind == "open":
            out[...] = int(Category.SIDEWALK)
            return out
        w, tau = self.half_width, WALL_THICKNESS
        if self.kind == "corridor":
            if self.vegetation_side == 1:
                out[y > w + tau] = int(Category.WALKABLE_VEGETATION)
            elif self.vegetation_side == 2:
                out[y < -(w + tau)] = int(Category.WALKABLE_VEGETATION)
            if self.unknown_patch is not None:
                x0, side = self.unknown_patch
                sel = (np.abs(x - x0 - 2.0) <= 2.0) & (side * y > w + tau + 2.1)
                out[sel] = int(Category.UNKNOWN_FREE_SPACE)
            for x0, side in self.cars:
                sel = (
                    (x >= x0)
                    & (x <= x0 + 4.2)
                    & (side * y > w + tau)
                    & (side * y <= w + tau + 2.1)
                )
                out[sel] = int(Category.DYNAMIC_OBSTACLE)
            out[(np.abs(y) > w) & (np.abs(y) <= w + tau)] = int(Category.STATIC_OBSTACLE)
            out[np.abs(y) <= w] = int(Category.SIDEWALK)
            for px, py in self.persons:
                sel = (np.abs(x - px) <= 0.2) & (np.abs(y - py * w) <= 0.2)
                out[sel] = int(Category.PERSON)
            return out
        # intersection: two perpendicular free bands crossing at the origin
        w2 = self.cross_half_width
        free = (np.abs(y) <= w) | (np.abs(x) <= w2)
        near = (np.abs(y) <= w + tau) | (np.abs(x) <= w2 + tau)
        out[near & ~free] = int(Category.STATIC_OBSTACLE)
        out[free] = int(Category.SIDEWALK)
        return out

    def is_walkable(self, pts: np.ndarray, margin: float) -> np.ndarray:
        """True where a walker center this far from obstacles is fine."""
        x, y = pts[..., 0], pts[..., 1]
        if self.kind == "open":
            return np.ones(x.shape, dtype=bool)
        if self.kind == "corridor":
            return np.abs(y) <= self.half_width - margin
        return (np.abs(y) <= self.half_width - margin) | (
            np.abs(x) <= self.cross_half_width - margin
        )


# ---------------------------------------------------------------------------
# walker behaviors


class _Behavior:
    """Closed-form speed/heading profiles in the location frame."""

    def __init__(self, kind, base_angle, speed, t_on=0.0, t_off=0.0, turn_at=0.0,
                 turn_span=0.5, turn_delta=0.0, ramp=1.0, brake=0.8):
        self.kind = kind
        self.base_angle = base_angle
        self.speed = speed
        self.t_on = t_on
        self.t_off = t_off
        self.turn_at = turn_at
        self.turn_span = turn_span
        self.turn_delta = turn_delta
        self.ramp = ramp
        self.brake = brake

    def speed_at(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "wait":
            return np.zeros_like(t)
        if self.kind == "start":
            return self.speed * np.clip((t - self.t_on) / self.ramp, 0.0, 1.0)
        if self.kind == "stop":
            return self.speed * np.clip(1.0 - (t - self.t_off) / self.brake, 0.0, 1.0)
        return np.full_like(t, self.speed)

    def heading_at(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.kind != "turn":
            return np.full_like(t, self.base_angle)
        progress = np.clip((t - self.turn_at) / self.turn_span, 0.0, 1.0)
        return self.base_angle + self.turn_delta * progress


def _integrate_path(behavior: _Behavior, times: np.ndarray, anchor_index: int,
                    anchor_xy: np.ndarray):
    """Trapezoid-integrated positions plus cumulative arc length.

    Positions are shifted so times[anchor_index] sits at anchor_xy. Pure
    constant-velocity motion is computed in closed form so futures match
    linear extrapolation exactly.
    """
    speed = behavior.speed_at(times)
    heading = behavior.heading_at(times)
    if behavior.kind == "move":
        direction = np.array([np.cos(behavior.base_angle), np.sin(behavior.base_angle)])
        rel = (times - times[anchor_index])[:, None] * behavior.speed * direction
        return anchor_xy + rel, behavior.speed * (times - times[0])
    vel = np.stack([speed * np.cos(heading), speed * np.sin(heading)], axis=1)
    steps = 0.5 * (vel[1:] + vel[:-1]) * np.diff(times)[:, None]
    pos = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
    pos += anchor_xy - pos[anchor_index]
    arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(times))])
    return pos, arc


# ---------------------------------------------------------------------------
# kinematic walker poses

_JOINT_HEIGHTS = {
    "head": 1.70,
    "shoulder": 1.45,
    "elbow": 1.15,
    "wrist": 0.88,
    "hip": 0.95,
    "knee": 0.50,
    "foot": 0.06,
}


def _walker_poses(behavior, times, head_xy, arc, stature, hip_width, settings,
                  facing_override=None):
    """(len(times), 13, 3) joint positions for the observation window."""
    lead = settings.anticipation_lead
    torso_angle = behavior.heading_at(times + lead)
    if facing_override is not None:
        torso_angle = np.full_like(torso_angle, facing_override)
    upcoming = behavior.speed_at(times + lead)
    current = behavior.speed_at(times)
    fwd = np.stack([np.cos(torso_angle), np.sin(torso_angle)], axis=1)
    right = np.stack([np.sin(torso_angle), -np.cos(torso_angle)], axis=1)
    lean = settings.lean_gain * np.minimum(upcoming, 1.5)[:, None] * fwd
    phase = 2.0 * np.pi * arc / (settings.stride_length * stature)
    swing = np.minimum(current / 1.4, 1.5)
    arm_amp = 0.16 * swing
    leg_amp = 0.22 * swing
    sin_r = np.sin(phase)
    sin_l = np.sin(phase + np.pi)

    n = len(times)
    pose = np.empty((n, len(JOINT_NAMES), 3))
    half_shoulder = 0.5 * settings.shoulder_width * stature
    half_hip = 0.5 * hip_width

    def put(name, xy, z):
        pose[:, JOINT_NAMES.index(name), 0] = xy[:, 0]
        pose[:, JOINT_NAMES.index(name), 1] = xy[:, 1]
        pose[:, JOINT_NAMES.index(name), 2] = z * stature

    put("head", head_xy, _JOINT_HEIGHTS["head"])
    for side, sign, leg_sin, arm_sin in (("r", 1.0, sin_r, sin_l), ("l", -1.0, sin_l, sin_r)):
        shoulder = head_xy + sign * half_shoulder * right + lean
        put(f"shoulder_{side}", shoulder, _JOINT_HEIGHTS["shoulder"])
        put(
            f"elbow_{side}",
            shoulder + (arm_amp * arm_sin * 0.6)[:, None] * fwd,
            _JOINT_HEIGHTS["elbow"],
        )
        put(
            f"wrist_{side}",
            shoulder + (arm_amp * arm_sin * 1.3)[:, None] * fwd,
            _JOINT_HEIGHTS["wrist"],
        )
        hip = head_xy + sign * half_hip * right + 0.5 * lean
        put(f"hip_{side}", hip, _JOINT_HEIGHTS["hip"])
        put(
            f"knee_{side}",
            hip + (leg_amp * leg_sin * 0.6)[:, None] * fwd,
            _JOINT_HEIGHTS["knee"],
        )
        put(
            f"foot_{side}",
            hip + (leg_amp * leg_sin * 1.2)[:, None] * fwd,
            _JOINT_HEIGHTS["foot"],
        )
    return pose


# ---------------------------------------------------------------------------
# sample assembly


def _draw_behavior(cfg: SynthConfig, geo: _SceneGeometry, rng):
    kinds = sorted(cfg.behavior_mix)
    probs = np.array([cfg.behavior_mix[k] for k in kinds])
    kind = kinds[int(rng.choice(len(kinds), p=probs / probs.sum()))]
    speed = float(rng.uniform(*cfg.speed_range))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    base = 0.0 if sign > 0 else np.pi
    if kind == "move" or kind == "stop":
        # braking usually begins inside the observation window
        b = _Behavior(kind, base, speed, t_off=float(rng.uniform(-0.6, 0.3)))
    elif kind == "start":
        if cfg.scene == "intersection":
            base = float(rng.choice([0.0, np.pi, np.pi / 2, -np.pi / 2]))
        elif cfg.scene == "open":
            base = float(rng.uniform(0.0, 2.0 * np.pi))
        b = _Behavior(kind, base, speed, t_on=float(rng.uniform(0.0, 0.5)))
    elif kind == "turn":
        left = rng.random() < 0.5
        if cfg.scene == "intersection":
            delta = np.deg2rad(float(rng.uniform(70.0, 110.0)))
        else:
            delta = np.deg2rad(float(rng.uniform(150.0, 210.0)))
        b = _Behavior(
            kind,
            base,
            min(speed, 1.4),
            turn_at=float(rng.uniform(0.05, 0.35)),
            turn_delta=delta if left else -delta,
        )
    else:  # wait
        b = _Behavior(kind, base, 0.0)
    return b


def _motion_label(behavior: _Behavior) -> str:
    if behavior.kind == "turn":
        return "turn-left" if behavior.turn_delta > 0 else "turn-right"
    return behavior.kind


def synthesize(cfg: SynthConfig) -> Dataset:
    """Generate a dataset of synthetic walkers; deterministic given the seed."""
    grid = make_grid(cfg.grid_h, cfg.cell_e)
    manifest = standard_manifest(grid, cfg.horizons)
    t_max = cfg.horizons[-1]
    reach = cfg.speed_range[1] * t_max
    if reach + 0.45 > grid.extent / 2:
        raise ValueError(
            f"grid extent {grid.extent:.2f} m cannot hold futures reaching {reach:.2f} m"
        )
    n_future_steps = int(round(t_max / DT))
    times = (np.arange(N_OBSERVED + n_future_steps) - (N_OBSERVED - 1)) * DT
    anchor = N_OBSERVED - 1
    future_idx = np.array([anchor + int(round(t / DT)) for t in cfg.horizons])
    centers = grid.cell_centers()

    geometries = [
        _SceneGeometry(cfg, np.random.default_rng([cfg.seed, 1000 + j]))
        for j in range(cfg.n_locations)
    ]

    samples = []
    for i in range(cfg.n_samples):
        rng = np.random.default_rng([cfg.seed, 7, i])
        loc = i % cfg.n_locations
        geo = geometries[loc]
        sample = _make_sample(cfg, grid, geo, centers, times, anchor, future_idx, rng, i, loc)
        samples.append(sample)
    return Dataset(manifest, samples)


def _make_sample(cfg, grid, geo, centers, times, anchor, future_idx, rng, index, loc):
    margin = 0.25
    for attempt in range(40):
        behavior = _draw_behavior(cfg, geo, rng)
        if attempt >= 30:  # fall back to an always-feasible slow walk
            behavior = _Behavior("move", 0.0 if rng.random() < 0.5 else np.pi,
                                 cfg.speed_range[0])
        lateral_max = max(geo.half_width - margin - 0.1, 0.05)
        lateral = float(rng.uniform(-lateral_max, lateral_max))
        if cfg.scene == "intersection" and behavior.kind == "turn":
            # place the spawn so the turn pivots near the crossing
            x_spawn = -np.cos(behavior.base_angle) * behavior.speed * (
                behavior.turn_at + 0.5 * behavior.turn_span
            )
        elif cfg.scene == "intersection" and behavior.kind == "start":
            x_spawn = float(rng.uniform(-0.5, 0.5))
            lateral = float(rng.uniform(-0.5, 0.5))
        else:
            x_spawn = 0.0
        anchor_xy = np.array([x_spawn, lateral])
        pos_loc, arc = _integrate_path(behavior, times, anchor, anchor_xy)
        # feasibility: the whole future path walkable, horizons inside the grid
        # (circular bound, so it holds for any scene orientation)
        rel = pos_loc - anchor_xy
        if not np.all(geo.is_walkable(pos_loc[anchor:], margin)):
            continue
        if np.any(np.linalg.norm(rel[future_idx], axis=1) > grid.extent / 2 - 0.45):
            continue
        break
    else:
        raise ValueError("infeasible geometry: could not place a walker")

    orientation = geo.orientation
    c, s = np.cos(orientation), np.sin(orientation)
    rot = np.array([[c, -s], [s, c]])

    head_loc = pos_loc[: anchor + 1]
    head_xy = (head_loc - anchor_xy) @ rot.T
    head_xy[anchor] = 0.0  # exact origin at the current time

    facing = None
    if behavior.kind == "wait":
        facing = float(rng.uniform(0.0, 2.0 * np.pi))
    stature = float(rng.uniform(*cfg.pose.stature_range))
    hip_width = float(rng.uniform(*cfg.pose.hip_width_range))
    pose_loc = _walker_poses(
        behavior,
        times[: anchor + 1],
        head_loc,
        arc[: anchor + 1],
        stature,
        hip_width,
        cfg.pose,
        facing_override=facing,
    )
    pose = pose_loc.copy()
    pose[..., :2] = (pose_loc[..., :2] - anchor_xy) @ rot.T
    # keep joints consistent with the re-anchored head trajectory
    pose[..., :2] += (head_xy - pose[:, 0, :2])[:, None, :]

    # noisy futures, re-drawn until they stay on walkable, in-grid cells
    future_positions = np.empty((len(future_idx), 2))
    for k, idx in enumerate(future_idx):
        clean_loc = pos_loc[idx]
        point = clean_loc.copy()
        for _ in range(20):
            candidate = clean_loc + rng.normal(0.0, cfg.noise_sigma, size=2)
            cand_sample = (candidate - anchor_xy) @ rot.T
            if np.any(np.abs(cand_sample) > grid.extent / 2):
                continue
            cell_center_sample = _snap_to_cell_center(grid, cand_sample)
            cell_center_loc = cell_center_sample @ rot + anchor_xy
            cat = geo.categories_at(cell_center_loc[None, :])[0]
            if cat in (int(Category.STATIC_OBSTACLE), int(Category.DYNAMIC_OBSTACLE)):
                continue
            point = candidate
            break
        future_positions[k] = (point - anchor_xy) @ rot.T

    # rasterize the scene in the sample frame (centered on the walker)
    pts_loc = centers @ rot + anchor_xy
    categories = geo.categories_at(pts_loc)
    sem_map = SemanticMap(grid, categories)

    return VruSample(
        sample_id=f"s{index:06d}",
        location_id=f"loc{loc:03d}",
        vru_type=cfg.vru_type,
        motion_type=_motion_label(behavior),
        times=times[: anchor + 1],
        head_xy=head_xy,
        pose=pose,
        map_tc=sem_map,
        future_times=np.array(cfg.horizons),
        future_positions=future_positions,
        future_maps=tuple(sem_map for _ in cfg.horizons),
    )


def _snap_to_cell_center(grid, pos):
    half = (grid.h - 1) // 2
    col = int(np.clip(np.ceil(pos[0] / grid.e - 0.5) + half, 0, grid.h - 1))
    row = int(np.clip(np.ceil(pos[1] / grid.e - 0.5) + half, 0, grid.h - 1))
    return np.array([(col - half) * grid.e, (row - half) * grid.e])
