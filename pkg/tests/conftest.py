import numpy as np
import pytest

import gridcast as gc
import gridcast.runtime as runtime


@pytest.fixture(autouse=True, scope="session")
def strict_forecasts():
    # every forecast produced anywhere in the suite is validated
    runtime.set_strict_forecasts(True)
    yield
    runtime.set_strict_forecasts(False)


@pytest.fixture(scope="session")
def tiny_corridor():
    """Small corridor dataset shared by model/calibration tests."""
    cfg = gc.SynthConfig(
        scene="corridor",
        behavior_mix={"move": 0.4, "start": 0.2, "stop": 0.2, "turn": 0.2},
        n_samples=120,
        seed=703,
        grid_h=17,
        cell_e=0.35,
        horizons=(0.44, 1.48),
        speed_range=(0.4, 1.0),
        noise_sigma=0.08,
        n_locations=6,
    )
    return gc.synthesize(cfg)


@pytest.fixture(scope="session")
def tiny_splits(tiny_corridor):
    return gc.split_by_location(tiny_corridor, (0.6, 0.2, 0.2), seed=1)


def make_sample(
    head_xy=None,
    pose=None,
    grid=None,
    motion_type="move",
    futures=((0.44, (0.0, 0.0)), (1.48, (0.0, 0.0))),
    categories=None,
    vru_type="pedestrian",
):
    """Hand-built sample for feature-level tests."""
    grid = grid or gc.make_grid(9, 0.35)
    times = (np.arange(25) - 24) / 25.0
    if head_xy is None:
        head_xy = np.zeros((25, 2))
    cats = categories if categories is not None else np.full((grid.h, grid.h), 2, np.uint8)
    future_times = np.array([t for t, _ in futures])
    future_positions = np.array([p for _, p in futures])
    return gc.VruSample(
        sample_id="t0",
        location_id="locA",
        vru_type=vru_type,
        motion_type=motion_type,
        times=times,
        head_xy=head_xy,
        pose=pose,
        map_tc=gc.SemanticMap(grid, cats),
        future_times=future_times,
        future_positions=future_positions,
    )


def make_walking_pose(head_xy, hip_width=0.35, stature=1.0):
    """Minimal upright pose stack over a head trajectory."""
    from gridcast.features import JOINT_NAMES

    n = head_xy.shape[0]
    pose = np.zeros((n, 13, 3))
    heights = {
        "head": 1.7, "shoulder": 1.45, "elbow": 1.15, "wrist": 0.9,
        "hip": 0.95, "knee": 0.5, "foot": 0.05,
    }
    for j, name in enumerate(JOINT_NAMES):
        part = name.split("_")[0]
        side = 1.0 if name.endswith("_r") else (-1.0 if name.endswith("_l") else 0.0)
        lateral = 0.0
        if part == "shoulder":
            lateral = side * 0.21 * stature
        elif part in ("elbow", "wrist"):
            lateral = side * 0.25 * stature
        elif part in ("hip", "knee", "foot"):
            lateral = side * hip_width / 2.0
        pose[:, j, 0] = head_xy[:, 0]
        pose[:, j, 1] = head_xy[:, 1] + lateral
        pose[:, j, 2] = heights[part] * stature
    return pose
