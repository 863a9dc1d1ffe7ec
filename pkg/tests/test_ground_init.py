import math

import numpy as np
import pytest

from groundcal.geometry import CameraIntrinsics, Plane, RigidTransform, compose, rot_x, rot_y, rot_z
from groundcal.ground_init import (
    DegenerateHeadingError,
    DegenerateMotionError,
    InsufficientTracksError,
    ZeroPathError,
    _decompose_homography,
    chain_initial_extrinsic,
    estimate_scale,
    ground_pose_from_plane,
    motion_direction,
    segment_ground,
    two_view_ground_reconstruction,
    windowed_ground_pose,
)
from groundcal.planes import AlignmentWindow

K = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


# ---------------------------------------------------------------------------
# motion_direction
# ---------------------------------------------------------------------------


def test_motion_axis():
    m = motion_direction([0, 0, 0], [2, 0, 0], 1.0)
    np.testing.assert_allclose(m.direction, [1, 0, 0])
    np.testing.assert_allclose(m.increment, [2, 0, 0])


def test_motion_stationary():
    assert motion_direction([1, 2, 3], [1, 2, 3], 1.0) is None


def test_motion_scaled_diagonal():
    m = motion_direction([0, 0, 0], [1, 1, 0], 3.0)
    r = 1.0 / math.sqrt(2.0)
    np.testing.assert_allclose(m.direction, [r, r, 0], atol=1e-12)
    np.testing.assert_allclose(m.increment, [3, 3, 0], atol=1e-12)


# ---------------------------------------------------------------------------
# estimate_scale
# ---------------------------------------------------------------------------


def test_scale_ratio_definition():
    cam = [[0, 0, 0], [2, 0, 0]]
    metric = [[0, 0, 0], [5, 0, 0]]
    est = estimate_scale(cam, metric)
    assert est.s == pytest.approx(2.5)


def test_scale_identity():
    path = [[0, 0, 0], [1, 0, 0], [2, 1, 0]]
    est = estimate_scale(path, path)
    assert est.s == pytest.approx(1.0)
    assert est.confidence == pytest.approx(1.0)


def test_scale_confidence_hand_computed():
    # segment ratios {2.4, 2.5, 2.6}: cv = std/mean = 0.0816497/2.5
    cam = [[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]
    metric = [[0, 0, 0], [2.4, 0, 0], [4.9, 0, 0], [7.5, 0, 0]]
    est = estimate_scale(cam, metric)
    assert est.s == pytest.approx(2.5)
    assert est.confidence == pytest.approx(1.0 - 0.0816497 / 2.5, abs=1e-4)


def test_scale_zero_path():
    with pytest.raises(ZeroPathError):
        estimate_scale([[0, 0, 0], [0, 0, 0]], [[0, 0, 0], [1, 0, 0]])


# ---------------------------------------------------------------------------
# ground_pose_from_plane
# ---------------------------------------------------------------------------


def test_ground_pose_level():
    pose = ground_pose_from_plane(Plane([0, 0, 1], -1.5), 1.0)
    assert pose.height == pytest.approx(1.5)
    assert pose.roll == pytest.approx(0.0)
    assert pose.pitch == pytest.approx(0.0)


def test_ground_pose_pure_roll():
    a = math.radians(10.0)
    pose = ground_pose_from_plane(Plane([0.0, -math.sin(a), math.cos(a)], -1.2), 1.0)
    assert pose.roll == pytest.approx(a, abs=1e-12)
    assert pose.pitch == pytest.approx(0.0, abs=1e-12)
    assert pose.height == pytest.approx(1.2)


def test_ground_pose_scale_applies_to_height():
    pose = ground_pose_from_plane(Plane([0, 0, 1], -0.6), 2.5)
    assert pose.height == pytest.approx(1.5)


def test_ground_pose_scale_linearity():
    plane = Plane([0.02, -0.1, 0.99], -0.8)
    s = 1.3
    one = ground_pose_from_plane(plane, s)
    two = ground_pose_from_plane(plane, 2 * s)
    assert two.height == 2 * one.height


def _angles_to_plane(roll, pitch, d):
    n = np.array(
        [
            -math.sin(pitch),
            -math.sin(roll) * math.cos(pitch),
            math.cos(roll) * math.cos(pitch),
        ]
    )
    return Plane(n, d)


def test_ground_pose_reproduces_plane():
    # applying the transform to the canonical ground plane gives back the input
    ground = Plane([0.0, 0.0, 1.0], 0.0)
    for roll_deg in (-40, -10, 0, 15, 40):
        for pitch_deg in (-40, -5, 0, 20, 40):
            for d in (-2.0, -0.7, 0.9, 1.73):
                plane = _angles_to_plane(math.radians(roll_deg), math.radians(pitch_deg), d)
                pose = ground_pose_from_plane(plane, 1.0)
                back = ground.transformed(pose.transform)
                np.testing.assert_allclose(back.normal, plane.normal, atol=1e-9)
                assert back.offset == pytest.approx(plane.offset, abs=1e-9)
                assert pose.roll == pytest.approx(math.radians(roll_deg), abs=1e-12)
                assert pose.pitch == pytest.approx(math.radians(pitch_deg), abs=1e-12)


def test_ground_pose_observability():
    # exactly three DoF populated: z, roll, pitch
    rng = np.random.default_rng(4)
    for _ in range(50):
        plane = _angles_to_plane(rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7), rng.uniform(-3, 3))
        pose = ground_pose_from_plane(plane, 1.0)
        R, t = pose.transform.rotation, pose.transform.translation
        assert abs(R[0, 1]) < 1e-12  # Rx*Ry family has no yaw term
        # translation is along the ground normal: ground-frame position is (0, 0, +/-height)
        pos_g = -(R.T @ t)
        assert abs(pos_g[0]) < 1e-9 and abs(pos_g[1]) < 1e-9
        assert abs(abs(pos_g[2]) - pose.height) < 1e-9
        assert pose.observability_mask == {
            "x": False, "y": False, "z": True, "roll": True, "pitch": True, "yaw": False,
        }


# ---------------------------------------------------------------------------
# windowed_ground_pose
# ---------------------------------------------------------------------------


def _samples(directions):
    return [
        motion_direction([0, 0, 0], np.asarray(d, dtype=float), 1.0, timestamp=float(i))
        for i, d in enumerate(directions)
    ]


def test_windowed_level_driving():
    w = AlignmentWindow(10, 0.5)
    planes = [Plane([0, 0, 1], 1.73) for _ in range(10)]
    samples = _samples([[1, 0, 0]] * 10)
    pose = windowed_ground_pose(samples, planes, w, 1.0)
    assert pose is not None
    assert pose.height == pytest.approx(1.73)
    assert pose.roll == pytest.approx(0.0)
    assert pose.pitch == pytest.approx(0.0)


def test_windowed_climbing_not_aligned():
    w = AlignmentWindow(10, 0.5)
    planes = [Plane([0, 0, 1], 1.73) for _ in range(10)]
    samples = _samples([[0, 0, 1]] * 10)
    assert windowed_ground_pose(samples, planes, w, 1.0) is None


def test_windowed_jittered_planes_average_out():
    rng = np.random.default_rng(21)
    w = AlignmentWindow(10, 0.5)
    true_roll = math.radians(2.0)
    planes = []
    for _ in range(10):
        jitter_r = true_roll + math.radians(rng.uniform(-0.5, 0.5))
        jitter_p = math.radians(rng.uniform(-0.5, 0.5))
        planes.append(_angles_to_plane(jitter_r, jitter_p, 1.6))
    samples = _samples([[1, 0, 0]] * 10)
    pose = windowed_ground_pose(samples, planes, w, 1.0)
    assert pose is not None
    # averaging keeps the window mean, well within the jitter amplitude
    assert abs(pose.roll - true_roll) < math.radians(0.4)
    assert abs(pose.pitch) < math.radians(0.4)


# ---------------------------------------------------------------------------
# chain_initial_extrinsic
# ---------------------------------------------------------------------------


def test_chain_identical_poses_identity():
    pose = ground_pose_from_plane(Plane([0, 0, 1], 1.73), 1.0)
    T = chain_initial_extrinsic(pose, pose, [[1, 0, 0]], [[1, 0, 0]])
    np.testing.assert_allclose(T.matrix(), np.eye(4), atol=1e-12)


def test_chain_vertical_offset_co_oriented():
    lidar = ground_pose_from_plane(Plane([0, 0, 1], 1.73), 1.0)
    cam = ground_pose_from_plane(Plane([0, 0, 1], 2.03), 1.0)
    T = chain_initial_extrinsic(cam, lidar, [[1, 0, 0]], [[1, 0, 0]])
    np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(T.translation, [0, 0, -0.3], atol=1e-12)


def test_chain_optical_camera_against_hand_derivation():
    # z-up LiDAR at 1.73 m; y-down/z-forward camera 0.3 m above it, no
    # planar offset. Expected extrinsic derived by hand from the frame
    # definitions.
    lidar = ground_pose_from_plane(Plane([0, 0, 1], 1.73), 1.0)
    cam = ground_pose_from_plane(Plane([0, 1, 0], -2.03), 1.0)
    T = chain_initial_extrinsic(cam, lidar, [[0, 0, 1]], [[1, 0, 0]])
    expected_R = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    np.testing.assert_allclose(T.rotation, expected_R, atol=1e-12)
    np.testing.assert_allclose(T.translation, [0.0, 0.3, 0.0], atol=1e-12)


def test_chain_recovers_relative_yaw():
    lidar = ground_pose_from_plane(Plane([0, 0, 1], 1.73), 1.0)
    cam = ground_pose_from_plane(Plane([0, 0, 1], 1.73), 1.0)
    a = math.radians(5.0)
    lidar_dir = rot_z(a).T @ np.array([1.0, 0.0, 0.0])
    T = chain_initial_extrinsic(cam, lidar, [[1, 0, 0]], [lidar_dir])
    np.testing.assert_allclose(T.rotation, rot_z(a), atol=1e-9)


def test_chain_degenerate_heading():
    pose = ground_pose_from_plane(Plane([0, 0, 1], 1.73), 1.0)
    with pytest.raises(DegenerateHeadingError):
        chain_initial_extrinsic(pose, pose, [[0, 0, 1]], [[1, 0, 0]])


# ---------------------------------------------------------------------------
# two-view reconstruction
# ---------------------------------------------------------------------------


def _project_pixels(points_cam: np.ndarray) -> np.ndarray:
    z = points_cam[:, 2]
    return np.column_stack([K.fx * points_cam[:, 0] / z + K.cx, K.fy * points_cam[:, 1] / z + K.cy])


def _ground_points(n=50, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3.0, 3.0, n)
    z = rng.uniform(4.0, 12.0, n)
    y = np.full(n, 1.65)  # ground below a y-down camera
    return np.column_stack([x, y, z])


def test_two_view_planar_ground_translation():
    pts = _ground_points()
    c2 = np.array([1.0, 0.0, 0.0])
    uv1 = _project_pixels(pts)
    uv2 = _project_pixels(pts - c2)
    T, est = two_view_ground_reconstruction(np.hstack([uv1, uv2]), K, seed=3)

    cos = float(T.translation @ c2) / (np.linalg.norm(T.translation) * np.linalg.norm(c2))
    assert math.degrees(math.acos(min(1.0, cos))) < 0.1
    np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-6)

    # structure matches truth up to one global scale
    scale = float(np.median(np.linalg.norm(pts, axis=1) / np.linalg.norm(est, axis=1)))
    np.testing.assert_allclose(est * scale, pts, rtol=1e-6, atol=1e-6)


def test_two_view_insufficient_tracks():
    with pytest.raises(InsufficientTracksError):
        two_view_ground_reconstruction(np.zeros((5, 4)), K)


def test_two_view_identical_pairs_degenerate():
    pts = _ground_points(20, seed=1)
    uv = _project_pixels(pts)
    with pytest.raises(DegenerateMotionError):
        two_view_ground_reconstruction(np.hstack([uv, uv]), K)


def test_two_view_pure_rotation_degenerate():
    pts = _ground_points(40, seed=2)
    R = rot_y(math.radians(4.0))
    uv1 = _project_pixels(pts)
    uv2 = _project_pixels(pts @ R)  # rows: R.T @ p
    with pytest.raises(DegenerateMotionError):
        two_view_ground_reconstruction(np.hstack([uv1, uv2]), K, seed=5)


def test_two_view_nonplanar_essential_route():
    rng = np.random.default_rng(12)
    pts = np.column_stack(
        [rng.uniform(-3, 3, 60), rng.uniform(-2, 2, 60), rng.uniform(4, 14, 60)]
    )
    R = rot_y(math.radians(3.0)) @ rot_x(math.radians(-2.0))
    c2 = np.array([0.8, 0.1, 0.3])
    # camera 2 pose: x2 = R.T (p - c2)
    pts2 = (pts - c2) @ R
    T, est = two_view_ground_reconstruction(
        np.hstack([_project_pixels(pts), _project_pixels(pts2)]), K, seed=7
    )
    np.testing.assert_allclose(T.rotation, R, atol=1e-6)
    cos = float(T.translation @ c2) / np.linalg.norm(c2)
    assert math.degrees(math.acos(min(1.0, cos))) < 0.1
    scale = float(np.median(np.linalg.norm(pts, axis=1) / np.linalg.norm(est, axis=1)))
    np.testing.assert_allclose(est * scale, pts, rtol=1e-5, atol=1e-5)


def test_homography_decomposition_contains_truth():
    rng = np.random.default_rng(33)
    for _ in range(20):
        R = rot_z(rng.uniform(-0.3, 0.3)) @ rot_y(rng.uniform(-0.3, 0.3)) @ rot_x(rng.uniform(-0.3, 0.3))
        t = rng.uniform(-1.0, 1.0, 3)
        if np.linalg.norm(t) < 0.3:
            t = np.array([0.5, 0.1, 0.2])
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        d = rng.uniform(1.0, 4.0)
        H = R + np.outer(t, n) / d
        t_hat = t / np.linalg.norm(t)
        best = min(
            np.linalg.norm(Rc - R) + min(np.linalg.norm(tc - t_hat), np.linalg.norm(tc + t_hat))
            for Rc, tc, _ in _decompose_homography(H)
        )
        assert best < 1e-9


def test_homography_decomposition_pure_rotation_degenerate():
    with pytest.raises(DegenerateMotionError):
        _decompose_homography(rot_z(0.2))


# ---------------------------------------------------------------------------
# segment_ground (basic; simulator-labeled test lives in test_sim)
# ---------------------------------------------------------------------------


def _box_surface(center, size, n, rng):
    c = np.asarray(center, dtype=float)
    s = np.asarray(size, dtype=float) / 2
    pts = []
    for axis in range(3):
        for sign in (-1, 1):
            face = rng.uniform(-1, 1, size=(n, 3)) * s
            face[:, axis] = sign * s[axis]
            pts.append(c + face)
    return np.vstack(pts)


def test_segment_ground_two_boxes():
    rng = np.random.default_rng(8)
    ground = np.column_stack(
        [rng.uniform(-8, 8, 3000), rng.uniform(-8, 8, 3000), np.zeros(3000)]
    )
    box1 = _box_surface([3.0, 3.0, 0.75], [1.0, 1.0, 1.5], 60, rng)
    box2 = _box_surface([-3.0, 2.0, 0.5], [0.8, 0.8, 1.0], 60, rng)
    cloud = np.vstack([ground, box1, box2])
    seg = segment_ground(cloud, cell_size=0.4)

    assert len(seg.clusters) == 2
    # every true ground point within the ground output (recall >= 0.99)
    assert seg.ground.shape[0] >= 0.99 * 3000
    np.testing.assert_allclose(np.abs(seg.plane.normal), [0, 0, 1], atol=1e-4)
    # clusters index into non_ground
    for cl in seg.clusters:
        assert cl.max() < seg.non_ground.shape[0]


def test_segment_ground_only_ground():
    rng = np.random.default_rng(9)
    cloud = np.column_stack([rng.uniform(-5, 5, 500), rng.uniform(-5, 5, 500), np.zeros(500)])
    seg = segment_ground(cloud, cell_size=0.5)
    assert seg.non_ground.shape[0] == 0
    assert seg.clusters == []


def test_segment_ground_size_guard():
    with pytest.raises(ValueError):
        segment_ground(np.zeros((49, 3)), cell_size=0.3)
