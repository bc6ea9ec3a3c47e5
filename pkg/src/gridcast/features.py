"""Model input construction from observed samples.

A sample carries one second of observations at 25 Hz: the 2D head
trajectory and the 13-joint 3D poses, both expressed in a frame whose
origin is the head position at the current time (the last observation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import LayoutError
from .scene import SemanticMap

OBS_RATE_HZ = 25
N_OBSERVED = 25  # one second of history

# Head plus three joints per limb, right side first, left foot terminal.
JOINT_NAMES = (
    "head",
    "shoulder_r",
    "elbow_r",
    "wrist_r",
    "shoulder_l",
    "elbow_l",
    "wrist_l",
    "hip_r",
    "knee_r",
    "foot_r",
    "hip_l",
    "knee_l",
    "foot_l",
)
N_JOINTS = len(JOINT_NAMES)
HIP_R = JOINT_NAMES.index("hip_r")
HIP_L = JOINT_NAMES.index("hip_l")

REFERENCE_HIP_WIDTH = 0.35  # meters; any positive constant works after z-scoring
STATIONARY_THRESHOLD = 0.05  # meters of net displacement over the window

TRAJECTORY_DIM = 2 * N_OBSERVED
POSE_DIM = 3 * N_JOINTS * N_OBSERVED

_LAYOUT_DIMS = {
    "d_t": TRAJECTORY_DIM,
    "d_tp": POSE_DIM,
    "c_t": TRAJECTORY_DIM,
    "c_tp": POSE_DIM,
}

MOTION_TYPES = ("wait", "start", "move", "stop", "turn-left", "turn-right")
VRU_TYPES = ("pedestrian", "cyclist")


def _frozen(a, dtype=np.float64):
    arr = np.asarray(a, dtype=dtype).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class VruSample:
    """One observation of a VRU with its ground-truth futures.

    Attributes:
        times: (25,) observation times in seconds, <= 0, uniform 25 Hz.
        head_xy: (25, 2) head positions in meters; (0, 0) at the current time.
        pose: (25, 13, 3) joint positions in meters, or None when the source
            provides no poses.
        map_tc: semantic map at the current time, centered on the head.
        future_times: forecast horizons in seconds, strictly increasing, > 0.
        future_positions: (len(future_times), 2) true future head positions.
        future_maps: semantic map per horizon; None entries mean the map at
            the current time is reused (the evaluation report flags this).
    """

    sample_id: str
    location_id: str
    vru_type: str
    motion_type: str
    times: np.ndarray
    head_xy: np.ndarray
    pose: Optional[np.ndarray]
    map_tc: SemanticMap
    future_times: np.ndarray
    future_positions: np.ndarray
    future_maps: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(self.times))
        object.__setattr__(self, "head_xy", _frozen(self.head_xy))
        if self.pose is not None:
            object.__setattr__(self, "pose", _frozen(self.pose))
        object.__setattr__(self, "future_times", _frozen(self.future_times))
        object.__setattr__(self, "future_positions", _frozen(self.future_positions))
        if not self.future_maps:
            object.__setattr__(
                self, "future_maps", tuple([None] * len(self.future_times))
            )
        self.validate()

    def validate(self):
        if self.vru_type not in VRU_TYPES:
            raise ValueError(f"unknown vru_type {self.vru_type!r}")
        if self.motion_type not in MOTION_TYPES:
            raise ValueError(f"unknown motion_type {self.motion_type!r}")
        if self.times.shape != (N_OBSERVED,):
            raise ValueError(
                f"expected {N_OBSERVED} observation times, got {self.times.shape}"
            )
        steps = np.diff(self.times)
        if self.times[-1] != 0.0 or np.any(self.times > 0):
            raise ValueError("observation times must end at 0 and be non-positive")
        if not np.allclose(steps, 1.0 / OBS_RATE_HZ, atol=1e-9):
            raise ValueError(f"observations must be uniform at {OBS_RATE_HZ} Hz")
        if self.head_xy.shape != (N_OBSERVED, 2):
            raise ValueError(f"head_xy must be ({N_OBSERVED}, 2)")
        if np.any(np.abs(self.head_xy[-1]) > 1e-9):
            raise ValueError("head position at the current time must be the origin")
        if self.pose is not None and self.pose.shape != (N_OBSERVED, N_JOINTS, 3):
            raise ValueError(f"pose must be ({N_OBSERVED}, {N_JOINTS}, 3)")
        k = len(self.future_times)
        if k == 0 or np.any(self.future_times <= 0) or np.any(np.diff(self.future_times) <= 0):
            raise ValueError("future_times must be strictly increasing and positive")
        if self.future_positions.shape != (k, 2):
            raise ValueError("future_positions must match future_times")
        if len(self.future_maps) != k:
            raise ValueError("future_maps must match future_times")

    @property
    def reused_tc_maps(self) -> bool:
        return any(m is None for m in self.future_maps)

    def future_map_at(self, k: int) -> SemanticMap:
        """Map for horizon k, falling back to the current-time map."""
        m = self.future_maps[k]
        return self.map_tc if m is None else m


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: str

    def __post_init__(self):
        if self.layout not in _LAYOUT_DIMS:
            raise LayoutError(f"unknown layout {self.layout!r}")
        values = _frozen(self.values)
        if values.shape != (_LAYOUT_DIMS[self.layout],):
            raise LayoutError(
                f"layout {self.layout} expects {_LAYOUT_DIMS[self.layout]} entries, "
                f"got shape {values.shape}"
            )
        object.__setattr__(self, "values", values)


def trajectory_features(s: VruSample) -> FeatureVector:
    """Head positions concatenated in time order: (x, y) per observation."""
    return FeatureVector(s.head_xy.reshape(-1), "d_t")


def scale_pose(pose: np.ndarray) -> np.ndarray:
    """Scale each time step's pose about its head so hip width is 0.35 m."""
    if pose is None or np.any(~np.isfinite(pose)):
        raise ValueError("pose is missing or contains non-finite joints")
    hips = pose[:, HIP_R, :] - pose[:, HIP_L, :]
    widths = np.linalg.norm(hips, axis=1)
    if np.any(widths < 1e-9):
        raise ValueError("degenerate pose: hip width is zero")
    factor = (REFERENCE_HIP_WIDTH / widths)[:, None, None]
    head = pose[:, :1, :]
    return head + factor * (pose - head)


def pose_features(s: VruSample) -> FeatureVector:
    """Hip-width-normalized 3D joint positions concatenated in time order."""
    return FeatureVector(scale_pose(s.pose).reshape(-1), "d_tp")


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension z-transform statistics fitted on training features."""

    mean: np.ndarray
    std: np.ndarray
    layout: str

    STD_FLOOR = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(self.mean))
        object.__setattr__(self, "std", _frozen(self.std))


def fit_normalizer(train: Sequence[FeatureVector]) -> Normalizer:
    if len(train) < 2:
        raise ValueError("need at least 2 training vectors to fit a normalizer")
    layouts = {f.layout for f in train}
    if len(layouts) != 1:
        raise LayoutError(f"mixed layouts in training set: {sorted(layouts)}")
    stacked = np.stack([f.values for f in train])
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), Normalizer.STD_FLOOR)
    return Normalizer(mean, std, layouts.pop())


def apply_normalizer(n: Normalizer, f: FeatureVector) -> FeatureVector:
    if f.layout != n.layout:
        raise LayoutError(f"normalizer fitted for {n.layout}, got {f.layout}")
    return FeatureVector((f.values - n.mean) / n.std, f.layout)


@dataclass(frozen=True)
class EgoView:
    """A sample expressed in the movement-aligned ego frame.

    The frame origin is the current position; +x points along the net
    displacement over the observation window. Stationary samples (net
    displacement below 0.05 m) keep the world orientation.
    """

    features: FeatureVector
    angle: float
    stationary: bool
    future_positions: np.ndarray


def _rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def ego_transform(s: VruSample, with_pose: bool) -> EgoView:
    """Rotate a sample so its movement direction maps to +x.

    Returns ego-frame features (layout c_t or c_tp) with the ground-truth
    futures carried along in the same frame.
    """
    displacement = s.head_xy[-1] - s.head_xy[0]
    stationary = bool(np.linalg.norm(displacement) < STATIONARY_THRESHOLD)
    angle = 0.0 if stationary else float(np.arctan2(displacement[1], displacement[0]))
    rot = _rotation(-angle)
    futures = s.future_positions @ rot.T
    if with_pose:
        pose = scale_pose(s.pose).copy()
        pose[..., :2] = pose[..., :2] @ rot.T
        features = FeatureVector(pose.reshape(-1), "c_tp")
    else:
        features = FeatureVector((s.head_xy @ rot.T).reshape(-1), "c_t")
    return EgoView(features, angle, stationary, futures)
