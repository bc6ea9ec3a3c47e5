import numpy as np
import pytest

import gridcast as gc
from gridcast.errors import LayoutError
from gridcast.features import HIP_L, HIP_R, JOINT_NAMES, scale_pose

from conftest import make_sample, make_walking_pose


def constant_velocity_head(vx, vy):
    times = (np.arange(25) - 24) / 25.0
    return np.stack([vx * times, vy * times], axis=1)


def test_trajectory_features_stationary_is_zero():
    f = gc.trajectory_features(make_sample())
    assert f.layout == "d_t"
    assert np.all(f.values == 0)


def test_trajectory_features_constant_velocity():
    s = make_sample(head_xy=constant_velocity_head(1.0, 0.0))
    f = gc.trajectory_features(s)
    assert len(f.values) == 50
    xs = f.values[0::2]
    ys = f.values[1::2]
    assert xs[0] == pytest.approx(-0.96)
    assert xs[1] == pytest.approx(-0.92)
    assert xs[-1] == 0.0
    assert np.all(ys == 0)


def test_trajectory_features_translation_invariant_after_anchoring():
    rng = np.random.default_rng(0)
    world = rng.standard_normal((25, 2)).cumsum(axis=0) * 0.05
    offset = np.array([123.4, -56.7])

    def anchored(w):
        return make_sample(head_xy=w - w[-1])

    f1 = gc.trajectory_features(anchored(world))
    f2 = gc.trajectory_features(anchored(world + offset))
    assert np.allclose(f1.values, f2.values, atol=1e-12)


def test_pose_features_scaling():
    head = constant_velocity_head(0.5, 0.0)
    pose = make_walking_pose(head, hip_width=0.5)
    s = make_sample(head_xy=head, pose=pose)
    f = gc.pose_features(s)
    assert len(f.values) == 975
    scaled = f.values.reshape(25, 13, 3)
    # hip width normalized to the 0.35 m reference at every step
    widths = np.linalg.norm(scaled[:, HIP_R] - scaled[:, HIP_L], axis=1)
    assert np.allclose(widths, 0.35, atol=1e-12)
    # scaling by 0.7 happens about the head: the head keeps its position
    assert np.allclose(scaled[:, 0, :2], head, atol=1e-12)
    # an off-head joint moves toward the head by the same factor
    rel_before = pose[0, 3] - pose[0, 0]
    rel_after = scaled[0, 3] - scaled[0, 0]
    assert np.allclose(rel_after, 0.7 * rel_before, atol=1e-12)


def test_pose_scaling_idempotent():
    pose = make_walking_pose(constant_velocity_head(1.0, 0.3), hip_width=0.42)
    once = scale_pose(pose)
    twice = scale_pose(once)
    assert np.allclose(once, twice, atol=1e-12)


def test_pose_features_degenerate_hip_width():
    head = np.zeros((25, 2))
    pose = make_walking_pose(head, hip_width=0.35)
    pose[:, HIP_L] = pose[:, HIP_R]
    s = make_sample(head_xy=head, pose=pose)
    with pytest.raises(ValueError):
        gc.pose_features(s)


def test_pose_features_missing_pose():
    s = make_sample()
    with pytest.raises(ValueError):
        gc.pose_features(s)


def test_joint_order_has_13_joints_left_foot_last():
    assert len(JOINT_NAMES) == 13
    assert JOINT_NAMES[0] == "head"
    assert JOINT_NAMES[-1] == "foot_l"


def test_normalizer_two_points():
    f1 = gc.FeatureVector(np.full(50, -1.0), "d_t")
    f2 = gc.FeatureVector(np.full(50, 1.0), "d_t")
    n = gc.fit_normalizer([f1, f2])
    assert np.allclose(n.mean, 0) and np.allclose(n.std, 1)
    assert np.allclose(gc.apply_normalizer(n, f1).values, -1)
    assert np.allclose(gc.apply_normalizer(n, f2).values, 1)


def test_normalizer_constant_dimension_floors():
    vecs = [gc.FeatureVector(np.full(50, 3.25), "d_t") for _ in range(4)]
    n = gc.fit_normalizer(vecs)
    assert np.all(n.std == gc.Normalizer.STD_FLOOR)
    out = gc.apply_normalizer(n, vecs[0])
    assert np.all(out.values == 0)


def test_normalizer_zero_mean_unit_std():
    rng = np.random.default_rng(1)
    vecs = [gc.FeatureVector(rng.standard_normal(50) * 3 + 1, "d_t") for _ in range(40)]
    n = gc.fit_normalizer(vecs)
    out = np.stack([gc.apply_normalizer(n, f).values for f in vecs])
    assert np.all(np.abs(out.mean(axis=0)) < 1e-9)
    assert np.allclose(out.std(axis=0), 1.0, atol=1e-9)


def test_normalizer_layout_mismatch():
    n = gc.fit_normalizer([gc.FeatureVector(np.zeros(50), "d_t") for _ in range(2)])
    with pytest.raises(LayoutError):
        gc.apply_normalizer(n, gc.FeatureVector(np.zeros(975), "d_tp"))
    with pytest.raises(LayoutError):
        gc.fit_normalizer(
            [gc.FeatureVector(np.zeros(50), "d_t"), gc.FeatureVector(np.zeros(50), "c_t")]
        )


def test_feature_vector_length_enforced():
    with pytest.raises(LayoutError):
        gc.FeatureVector(np.zeros(49), "d_t")
    with pytest.raises(LayoutError):
        gc.FeatureVector(np.zeros(975), "nope")


def test_ego_transform_aligns_movement_with_x():
    s = make_sample(head_xy=constant_velocity_head(0.0, 1.0))
    view = gc.ego_transform(s, with_pose=False)
    assert not view.stationary
    assert view.angle == pytest.approx(np.pi / 2)
    ego = view.features.values.reshape(25, 2)
    assert np.allclose(ego[:, 1], 0, atol=1e-12)
    assert ego[0, 0] == pytest.approx(-0.96)


def test_ego_transform_identity_when_moving_along_x():
    s = make_sample(head_xy=constant_velocity_head(1.2, 0.0))
    view = gc.ego_transform(s, with_pose=False)
    assert view.angle == 0.0
    assert np.allclose(view.features.values, s.head_xy.reshape(-1))


def test_ego_transform_stationary_fallback():
    # net displacement below 0.05 m: identity rotation, flag recorded
    times = (np.arange(25) - 24) / 25.0
    head = np.stack([0.01 * np.sin(times * 20), np.zeros(25)], axis=1)
    head -= head[-1]
    s = make_sample(head_xy=head)
    view = gc.ego_transform(s, with_pose=False)
    assert view.stationary and view.angle == 0.0


def test_ego_transform_rigid_and_carries_futures():
    head = constant_velocity_head(0.6, 0.8)
    pose = make_walking_pose(head)
    s = make_sample(
        head_xy=head,
        pose=pose,
        futures=((0.44, (0.3, 0.4)), (1.48, (0.9, 1.2))),
    )
    view = gc.ego_transform(s, with_pose=True)
    assert view.features.layout == "c_tp"
    ego_pose = view.features.values.reshape(25, 13, 3)
    scaled = scale_pose(pose)
    # pairwise distances survive the rotation
    d_before = np.linalg.norm(scaled[0, :, None, :] - scaled[0, None, :, :], axis=-1)
    d_after = np.linalg.norm(ego_pose[0, :, None, :] - ego_pose[0, None, :, :], axis=-1)
    assert np.allclose(d_before, d_after, atol=1e-9)
    # futures rotate into the same frame: the (0.3, 0.4) point lies on +x
    assert view.future_positions[0, 0] == pytest.approx(0.5)
    assert view.future_positions[0, 1] == pytest.approx(0.0, abs=1e-12)
