import math

import numpy as np
import pytest
import scipy.linalg

from groundcal.geometry import (
    AmbiguousRotationError,
    CameraIntrinsics,
    Plane,
    RigidTransform,
    compose,
    euler_zyx,
    exp_twist,
    log_transform,
    point_plane_distance,
    project,
    project_points,
    rot_x,
    rot_z,
    skew,
)

# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def homogeneous_compose(a: RigidTransform, b: RigidTransform) -> np.ndarray:
    """Brute-force 4x4 homogeneous matrix product."""
    return a.matrix() @ b.matrix()


def expm_oracle(xi: np.ndarray) -> np.ndarray:
    """SE(3) exponential via scaling-and-squaring on the 4x4 twist matrix."""
    H = np.zeros((4, 4))
    H[:3, :3] = skew(xi[:3])
    H[:3, 3] = xi[3:]
    return scipy.linalg.expm(H)


def projection_oracle(k: CameraIntrinsics, t: RigidTransform, x: np.ndarray):
    """Homogeneous-matrix pinhole chain: K [R|t] x, then divide."""
    P = k.matrix() @ t.matrix()[:3, :]
    xh = P @ np.append(x, 1.0)
    if xh[2] <= 1e-6:
        return None
    return xh[:2] / xh[2]


def random_transform(rng) -> RigidTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-3.0, 3.0)
    from groundcal.geometry import so3_exp

    return RigidTransform(so3_exp(axis * angle), rng.uniform(-5.0, 5.0, size=3))


# ---------------------------------------------------------------------------
# compose / inverse
# ---------------------------------------------------------------------------


def test_compose_identity():
    I = RigidTransform.identity()
    out = compose(I, I)
    np.testing.assert_allclose(out.matrix(), np.eye(4), atol=1e-15)


def test_compose_inverse_law():
    rng = np.random.default_rng(7)
    for _ in range(20):
        T = random_transform(rng)
        np.testing.assert_allclose(compose(T, T.inverse()).matrix(), np.eye(4), atol=1e-9)


def test_compose_rz_chain_matches_hand_computation():
    a = RigidTransform(rot_z(math.radians(30)), [1.0, 0.0, 0.0])
    b = RigidTransform(rot_z(math.radians(60)), [0.0, 0.0, 0.0])
    out = compose(a, b)
    expected = RigidTransform(rot_z(math.radians(90)), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(out.matrix(), expected.matrix(), atol=1e-12)
    np.testing.assert_allclose(out.matrix(), homogeneous_compose(a, b), atol=1e-12)


def test_compose_associativity():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a, b, c = (random_transform(rng) for _ in range(3))
        left = compose(compose(a, b), c).matrix()
        right = compose(a, compose(b, c)).matrix()
        np.testing.assert_allclose(left, right, atol=1e-9)


def test_long_composition_chain_stays_orthonormal():
    rng = np.random.default_rng(3)
    steps = [random_transform(rng) for _ in range(20)]
    T = RigidTransform.identity()
    for i in range(1000):
        T = compose(T, steps[i % 20])
    R = T.rotation
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


def test_from_matrix_roundtrip_and_validation():
    rng = np.random.default_rng(5)
    T = random_transform(rng)
    np.testing.assert_allclose(RigidTransform.from_matrix(T.matrix()).matrix(), T.matrix())
    bad = T.matrix()
    bad[3, 0] = 0.5
    with pytest.raises(ValueError):
        RigidTransform.from_matrix(bad)
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 2.0, np.zeros(3))


# ---------------------------------------------------------------------------
# exp / log
# ---------------------------------------------------------------------------


def test_exp_zero_twist_is_identity():
    np.testing.assert_allclose(exp_twist(np.zeros(6)).matrix(), np.eye(4), atol=1e-15)


def test_exp_pure_rotation_about_z():
    T = exp_twist([0.0, 0.0, math.pi / 2, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(T.rotation, rot_z(math.pi / 2), atol=1e-12)
    np.testing.assert_allclose(T.translation, np.zeros(3), atol=1e-15)


def test_exp_log_roundtrip_specific():
    xi = np.array([0.1, -0.2, 0.3, 1.0, 2.0, 3.0])
    T = exp_twist(xi)
    np.testing.assert_allclose(log_transform(T), xi, atol=1e-9)
    # verify exp independently via scaling-and-squaring of the 4x4 twist matrix
    np.testing.assert_allclose(T.matrix(), expm_oracle(xi), atol=1e-12)


def test_exp_log_roundtrip_property():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0.0, 3.0)
        xi = np.concatenate([axis * angle, rng.uniform(-5.0, 5.0, size=3)])
        np.testing.assert_allclose(log_transform(exp_twist(xi)), xi, atol=1e-9)


def test_exp_matches_expm_oracle_property():
    rng = np.random.default_rng(43)
    for _ in range(200):
        xi = rng.uniform(-2.0, 2.0, size=6)
        np.testing.assert_allclose(exp_twist(xi).matrix(), expm_oracle(xi), atol=1e-10)


def test_log_near_pi_raises():
    T = RigidTransform(rot_x(math.pi - 1e-9), np.zeros(3))
    with pytest.raises(AmbiguousRotationError):
        log_transform(T)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

K = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def test_project_optical_axis_hits_principal_point():
    uv = project(K, RigidTransform.identity(), [0.0, 0.0, 2.0])
    np.testing.assert_allclose(uv, [320.0, 240.0], atol=1e-12)


def test_project_offset_point():
    uv = project(K, RigidTransform.identity(), [1.0, 0.0, 2.0])
    np.testing.assert_allclose(uv, [570.0, 240.0], atol=1e-12)
    np.testing.assert_allclose(
        uv, projection_oracle(K, RigidTransform.identity(), np.array([1.0, 0.0, 2.0])), atol=1e-12
    )


def test_project_behind_camera_returns_none():
    assert project(K, RigidTransform.identity(), [0.0, 0.0, -1.0]) is None


def test_project_matches_homogeneous_oracle_random():
    rng = np.random.default_rng(77)
    for _ in range(100):
        T = random_transform(rng)
        x = rng.uniform(-4.0, 4.0, size=3)
        got = project(K, T, x)
        want = projection_oracle(K, T, x)
        if want is None:
            assert got is None
        else:
            np.testing.assert_allclose(got, want, atol=1e-9)


def test_project_points_vectorized_consistency():
    rng = np.random.default_rng(78)
    T = random_transform(rng)
    pts = rng.uniform(-4.0, 4.0, size=(50, 3))
    uv, depth, valid = project_points(K, T, pts)
    for i in range(50):
        single = project(K, T, pts[i])
        if single is None:
            assert not valid[i]
        else:
            assert valid[i]
            np.testing.assert_allclose(uv[i], single, atol=1e-12)
            assert depth[i] > 1e-6


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=500.0, fy=500.0, cx=700.0, cy=240.0, width=640, height=480)


# ---------------------------------------------------------------------------
# planes
# ---------------------------------------------------------------------------


def test_point_plane_distance_examples():
    p = Plane([0.0, 0.0, 1.0], -1.5)
    assert point_plane_distance(p, [7.0, 3.0, 1.5]) == pytest.approx(0.0, abs=1e-15)
    assert point_plane_distance(p, [0.0, 0.0, 2.0]) == pytest.approx(0.5, abs=1e-15)
    q = Plane([0.0, 1.0 / math.sqrt(2), 1.0 / math.sqrt(2)], 0.0)
    assert point_plane_distance(q, [0.0, 1.0, 1.0]) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_plane_canonicalization():
    p = Plane([0.0, 0.0, -2.0], 3.0)
    np.testing.assert_allclose(p.normal, [0.0, 0.0, 1.0])
    assert p.offset == pytest.approx(-1.5)
    q = Plane([0.0, -4.0, 0.0], 2.0)
    np.testing.assert_allclose(q.normal, [0.0, 1.0, 0.0])
    assert q.offset == pytest.approx(-0.5)
    assert np.linalg.norm(Plane([1.0, 2.0, 2.0], 1.0).normal) == pytest.approx(1.0, abs=1e-12)


def test_plane_transform_preserves_distances():
    rng = np.random.default_rng(9)
    for _ in range(50):
        T = random_transform(rng)
        n = rng.normal(size=3)
        plane = Plane(n, rng.uniform(-3.0, 3.0))
        x = rng.uniform(-5.0, 5.0, size=3)
        d0 = point_plane_distance(plane, x)
        d1 = point_plane_distance(plane.transformed(T), T.apply(x))
        # canonicalization may flip the normal, which flips the sign
        assert abs(abs(d0) - abs(d1)) < 1e-9


def test_euler_zyx_roundtrip():
    rng = np.random.default_rng(13)
    from groundcal.geometry import rot_y

    for _ in range(100):
        r, p, y = rng.uniform(-1.2, 1.2, size=3)
        R = rot_z(y) @ rot_y(p) @ rot_x(r)
        rr, pp, yy = euler_zyx(R)
        np.testing.assert_allclose([rr, pp, yy], [r, p, y], atol=1e-12)
