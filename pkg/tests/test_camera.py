import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from talkfield.camera import CameraPose, Ray, generate_rays, look_at_pose
from talkfield.errors import ArgumentError, PoseValidationError


def _identity_pose(res=8):
    return CameraPose(np.eye(3), np.zeros(3), (10.0, 10.0, res / 2, res / 2))


def test_principal_point_ray_is_optical_axis():
    bundle = generate_rays(_identity_pose(8), 8, 8)
    dirs = bundle.directions.double().numpy().reshape(8, 8, 3)
    # pixel centres straddle cx = 4, so average the four central rays
    centre = dirs[3:5, 3:5].reshape(-1, 3).mean(0)
    np.testing.assert_allclose(centre / np.linalg.norm(centre), [0, 0, 1], atol=1e-12)
    odd = generate_rays(CameraPose(np.eye(3), np.zeros(3), (10.0, 10.0, 2.5, 2.5)), 5, 5)
    np.testing.assert_allclose(odd.directions.double().numpy()[12], [0, 0, 1], atol=1e-7)


def test_directions_are_unit():
    import torch

    bundle = generate_rays(look_at_pose(23.0, 3.5, 64), 64, 64, dtype=torch.float64)
    norms = np.linalg.norm(bundle.directions.numpy(), axis=-1)
    assert bundle.directions.shape == (64 * 64, 3)
    assert np.max(np.abs(norms - 1)) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rotating_pose_rotates_directions(seed):
    import torch

    r = Rotation.random(random_state=seed).as_matrix()
    base = look_at_pose(10.0, 3.5, 16)
    moved = CameraPose(r @ base.rotation, base.translation, base.intrinsics)
    d0 = generate_rays(base, 16, 16, dtype=torch.float64).directions.numpy()
    d1 = generate_rays(moved, 16, 16, dtype=torch.float64).directions.numpy()
    assert np.max(np.abs(d1 - d0 @ r.T)) < 1e-9


def test_pose_validation():
    with pytest.raises(PoseValidationError):
        CameraPose(np.diag([1.0, 1.0, 1.1]), np.zeros(3), (1, 1, 0, 0))
    with pytest.raises(PoseValidationError):
        CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3), (1, 1, 0, 0))
    with pytest.raises(PoseValidationError):
        CameraPose(np.eye(3), np.zeros(2), (1, 1, 0, 0))


def test_ray_validation():
    Ray(np.array([0, 0, 0.0]), np.array([0, 0, 1.0]), 1.0, 2.0)
    with pytest.raises(ArgumentError):
        Ray(np.zeros(3), np.array([0, 0, 1.01]), 1.0, 2.0)
    with pytest.raises(ArgumentError):
        Ray(np.zeros(3), np.array([0, 0, 1.0]), 2.0, 1.0)


def test_look_at_points_at_origin():
    for yaw in (-30, 0, 45):
        pose = look_at_pose(yaw, 3.5, 64)
        np.testing.assert_allclose(pose.project(np.zeros(3)), [32, 32], atol=1e-9)
        np.testing.assert_allclose(np.linalg.norm(pose.translation), 3.5)


def test_roll_rotates_projection_about_principal_point():
    pose = look_at_pose(15.0, 3.5, 64)
    pts = np.random.default_rng(0).normal(scale=0.5, size=(20, 3))
    theta = math.radians(37)
    base = pose.project(pts) - 32
    rolled = pose.rolled(theta).project(pts) - 32
    c, s = math.cos(theta), math.sin(theta)
    expected = base @ np.array([[c, -s], [s, c]])
    np.testing.assert_allclose(rolled, expected, atol=1e-9)


def test_pose_dict_round_trip():
    pose = look_at_pose(-12.0, 3.5, 64)
    back = CameraPose.from_dict(pose.to_dict())
    np.testing.assert_array_equal(back.rotation, pose.rotation)
    assert back.intrinsics == pose.intrinsics
