import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthmotion.errors import AngleAtPi, BehindCamera, NonPositiveDepth
from depthmotion.geometry import (
    Intrinsics, Pose, PoseParams, backproject, compose, invert, params_to_pose, pose_to_params, project, so3_exp,
)


def random_pose(rng, scale=1.0):
    w = rng.normal(size=3)
    w *= rng.uniform(0, 3.0) / np.linalg.norm(w)
    return Pose(so3_exp(w), scale * rng.normal(size=3))


def close_pose(a, b, tol):
    return (np.linalg.norm(a.rotation - b.rotation) <= tol
            and np.linalg.norm(a.translation - b.translation) <= tol)


def test_compose_identity_left(rng):
    p = random_pose(rng)
    assert close_pose(compose(Pose.identity(), p), p, 1e-15)


def test_compose_with_inverse_is_identity(rng):
    for _ in range(50):
        p = random_pose(rng, 10.0)
        assert close_pose(compose(p, invert(p)), Pose.identity(), 1e-12)
        assert close_pose(compose(invert(p), p), Pose.identity(), 1e-12)


def test_two_thirty_degree_z_rotations_make_sixty():
    r30 = Pose(so3_exp([0, 0, np.pi / 6]))
    r60 = compose(r30, r30)
    c, s = np.cos(np.pi / 3), np.sin(np.pi / 3)
    np.testing.assert_allclose(r60.rotation, [[c, -s, 0], [s, c, 0], [0, 0, 1]], atol=1e-15)


def test_compose_applies_right_operand_first(rng):
    a, b = random_pose(rng), random_pose(rng)
    x = rng.normal(size=3)
    np.testing.assert_allclose(compose(a, b).apply(x), a.apply(b.apply(x)), atol=1e-13)


def test_invert_identity_and_translation():
    assert close_pose(invert(Pose.identity()), Pose.identity(), 0)
    inv = invert(Pose(np.eye(3), [1, 2, 3]))
    np.testing.assert_array_equal(inv.translation, [-1, -2, -3])
    np.testing.assert_array_equal(inv.rotation, np.eye(3))


def test_determinant_stable_under_many_compositions(rng):
    p = Pose.identity()
    for _ in range(1000):
        p = compose(p, random_pose(rng))
    assert abs(np.linalg.det(p.rotation) - 1) < 1e-9
    assert np.abs(p.rotation.T @ p.rotation - np.eye(3)).max() < 1e-9


def test_exp_of_zero_and_quarter_turn():
    np.testing.assert_array_equal(params_to_pose(np.zeros(6)).rotation, np.eye(3))
    r = params_to_pose([0, 0, np.pi / 2, 0, 0, 0]).rotation
    np.testing.assert_allclose(r, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1.8, 1.8), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_exp_log_round_trip(w, t):
    w = np.array(w)
    if np.linalg.norm(w) >= np.pi - 1e-3:
        w *= (np.pi - 2e-3) / np.linalg.norm(w)
    back = pose_to_params(params_to_pose(PoseParams(w, t)))
    np.testing.assert_allclose(back.rotation_vector, w, atol=1e-10)
    np.testing.assert_array_equal(back.translation, t)


def test_log_near_pi_is_stable():
    w = np.array([0.3, -0.5, 0.8])
    w *= (np.pi - 1e-4) / np.linalg.norm(w)
    np.testing.assert_allclose(pose_to_params(params_to_pose(PoseParams(w, np.zeros(3)))).rotation_vector,
                               w, atol=1e-9)


def test_log_at_pi_raises():
    with pytest.raises(AngleAtPi):
        pose_to_params(params_to_pose([np.pi, 0, 0, 0, 0, 0]))


def test_intrinsics_inverse(k100):
    np.testing.assert_allclose(k100.to_matrix() @ k100.to_inverse_matrix(), np.eye(3), atol=1e-12)
    with pytest.raises(ValueError):
        Intrinsics(0, 1, 0, 0)


def test_project_examples(k100):
    assert project([0, 0, 1], k100) == (50, 50)
    assert project([1, 0, 2], k100) == (100, 50)
    with pytest.raises(BehindCamera):
        project([0, 0, -1], k100)


def test_backproject_examples(k100):
    np.testing.assert_array_equal(backproject((50, 50), 1.0, k100), [0, 0, 1])
    np.testing.assert_array_equal(backproject((100, 50), 2.0, k100), [1, 0, 2])
    with pytest.raises(NonPositiveDepth):
        backproject((1, 1), 0.0, k100)


def test_project_backproject_round_trip(k100, rng):
    for _ in range(100):
        p = rng.uniform(0, 100, 2)
        d = rng.uniform(0.1, 50)
        np.testing.assert_allclose(project(backproject(p, d, k100), k100), p, atol=1e-9)
