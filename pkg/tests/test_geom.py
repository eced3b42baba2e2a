import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slotvio.geom import (BevBoundsError, BevCalibration, Pose, bev_to_body, body_to_bev, body_to_world,
                          compose, inverse, quat_mul, quat_to_rot, right_jacobian, right_jacobian_inv,
                          rot_to_quat, rotation_angle, so3_exp, so3_log, world_to_body, yaw_quat)

unit = st.floats(-1.0, 1.0, allow_nan=False)
quats = st.tuples(unit, unit, unit, unit).filter(lambda q: np.linalg.norm(q) > 0.1)
vecs = st.tuples(*[st.floats(-50, 50, allow_nan=False)] * 3)


def poses():
    return st.builds(lambda q, t: Pose(np.array(q), np.array(t)), quats, vecs)


def close_pose(a, b, tol=1e-9):
    return rotation_angle(a, b) < tol and np.linalg.norm(a.t - b.t) < tol


def test_compose_identity_and_inverse():
    T = Pose.from_yaw(0.3, (1.0, -2.0, 0.5))
    assert close_pose(compose(Pose.identity(), T), T)
    assert close_pose(compose(T, inverse(T)), Pose.identity())


def test_compose_quarter_turns():
    a = Pose.from_yaw(np.pi / 2)
    out = compose(a, a)
    # hand-expanded Hamilton product: (c + s k)^2 = cos(pi/2) + sin(pi/2) k
    assert np.allclose(out.q, [0.0, 0.0, 0.0, 1.0], atol=1e-12)


def test_body_to_world_examples():
    p = np.array([1.0, 2.0, 0.0])
    assert np.allclose(body_to_world(p, Pose.identity()), p)
    assert np.allclose(body_to_world([1, 0, 0], Pose(t=[3.0, 0, 0])), [4, 0, 0])
    assert np.allclose(body_to_world([1, 0, 0], Pose.from_yaw(np.pi / 2, (1, 1, 0))), [1, 2, 0], atol=1e-12)


def test_bev_calibration_constants():
    cal = BevCalibration()
    assert cal.meters_per_pixel == pytest.approx(11.32 / 576)
    assert np.allclose(bev_to_body([288.0, 288.0], cal), [0.0, 0.0])
    # right edge of the image is 5.66 m to the right of the vehicle (body -y)
    assert np.allclose(bev_to_body([576.0, 288.0], cal), [0.0, -5.66])
    assert np.allclose(bev_to_body([288.0, 0.0], cal), [5.66, 0.0])


def test_bev_bounds():
    with pytest.raises(BevBoundsError):
        bev_to_body([600.0, 10.0], BevCalibration())
    assert np.allclose(bev_to_body([600.0, 288.0], BevCalibration(), strict=False), [0.0, -312 * 11.32 / 576])


def test_bev_round_trip_grid():
    cal = BevCalibration()
    g = np.linspace(0, cal.image_size, 16)
    px = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    assert np.max(np.abs(body_to_bev(bev_to_body(px, cal), cal) - px)) < 1e-9


@given(poses(), poses(), poses())
def test_compose_associative(a, b, c):
    assert close_pose(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9 * 100)


@given(poses())
def test_quaternion_stays_unit(a):
    for p in (a, inverse(a), compose(a, a)):
        assert abs(np.linalg.norm(p.q) - 1.0) < 1e-9
    assert close_pose(compose(a, inverse(a)), Pose.identity(), 1e-9 * 100)


@given(poses(), vecs, vecs)
def test_rigid_motion_preserves_distance(T, a, b):
    a, b = np.array(a), np.array(b)
    d = np.linalg.norm(body_to_world(a, T) - body_to_world(b, T))
    assert d == pytest.approx(np.linalg.norm(a - b), abs=1e-9)
    assert np.allclose(world_to_body(body_to_world(a, T), T), a, atol=1e-9)


@given(st.tuples(*[st.floats(-3.0, 3.0)] * 3))
def test_so3_exp_log(phi):
    phi = np.array(phi)
    R = so3_exp(phi)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.allclose(so3_exp(so3_log(R)), R, atol=1e-9)
    assert np.allclose(quat_to_rot(rot_to_quat(R)), R, atol=1e-12)


@given(st.tuples(*[st.floats(-1.5, 1.5)] * 3))
def test_right_jacobian_inverse(phi):
    phi = np.array(phi)
    assert np.allclose(right_jacobian(phi) @ right_jacobian_inv(phi), np.eye(3), atol=1e-9)


def test_right_jacobian_first_order():
    rng = np.random.default_rng(0)
    for _ in range(20):
        phi, d = rng.normal(size=3), 1e-6 * rng.normal(size=3)
        lhs = so3_exp(phi + d)
        rhs = so3_exp(phi) @ so3_exp(right_jacobian(phi) @ d)
        assert np.abs(lhs - rhs).max() < 1e-10


def test_yaw_quat_product():
    assert np.allclose(quat_mul(yaw_quat(0.2), yaw_quat(0.3)), yaw_quat(0.5))
