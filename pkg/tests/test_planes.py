import math
from itertools import combinations

import numpy as np
import pytest

from groundcal.geometry import Plane
from groundcal.planes import (
    AlignmentWindow,
    DegenerateGeometryError,
    RansacConfig,
    alignment_check,
    fit_plane_lsq,
    ransac_plane,
)

# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def brute_force_best_triple(points: np.ndarray, threshold: float):
    """Enumerate every 3-point plane; return the winning inlier index set.

    Mirrors the consensus rule: max inlier count, ties to the earliest
    triple in itertools.combinations order. Collinear triples are skipped.
    """
    best_count = -1
    best_inliers = None
    for i, j, k in combinations(range(len(points)), 3):
        n = np.cross(points[j] - points[i], points[k] - points[i])
        norm = np.linalg.norm(n)
        if norm <= 1e-9:
            continue
        n = n / norm
        d = -n @ points[i]
        dist = np.abs(points @ n + d)
        count = int(np.count_nonzero(dist <= threshold))
        if count > best_count:
            best_count = count
            best_inliers = np.flatnonzero(dist <= threshold)
    return best_inliers


def svd_plane_oracle(points: np.ndarray):
    """Total-least-squares plane via SVD (independent of eigh path)."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c)
    n = vt[-1]
    return n, -float(n @ c)


# ---------------------------------------------------------------------------
# ransac_plane
# ---------------------------------------------------------------------------


def test_noiseless_axis_aligned_plane():
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(-5, 5, 100), rng.uniform(-5, 5, 100), np.full(100, 1.5)])
    plane, inliers = ransac_plane(pts, RansacConfig(inlier_threshold=0.05, seed=0))
    assert len(inliers) == 100
    np.testing.assert_allclose(plane.normal, [0, 0, 1], atol=1e-12)
    assert plane.offset == pytest.approx(-1.5, abs=1e-12)


def test_collinear_points_degenerate():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    with pytest.raises(DegenerateGeometryError):
        ransac_plane(pts, RansacConfig())


def test_too_few_points_degenerate():
    with pytest.raises(DegenerateGeometryError):
        ransac_plane(np.zeros((2, 3)), RansacConfig())


def test_low_consensus_degenerate():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-10, 10, size=(100, 3))
    with pytest.raises(DegenerateGeometryError):
        ransac_plane(pts, RansacConfig(inlier_threshold=0.001, min_inlier_fraction=0.5, seed=3))


def test_noisy_plane_with_outliers():
    rng = np.random.default_rng(42)
    ground = np.column_stack(
        [rng.uniform(-5, 5, 200), rng.uniform(-5, 5, 200), rng.normal(0.0, 0.01, 200)]
    )
    outliers = rng.uniform(-5, 5, size=(50, 3))
    pts = np.vstack([ground, outliers])
    plane, inliers = ransac_plane(pts, RansacConfig(inlier_threshold=0.03, seed=42))

    angle = math.degrees(math.acos(min(1.0, abs(plane.normal @ np.array([0.0, 0.0, 1.0])))))
    assert angle < 0.5
    assert abs(plane.offset) < 0.01
    assert len(inliers) >= 190

    # against an exhaustive least-squares fit on the known inlier subset
    n_ref, d_ref = svd_plane_oracle(ground)
    ref = Plane(n_ref, d_ref)
    assert math.degrees(math.acos(min(1.0, abs(plane.normal @ ref.normal)))) < 0.2
    assert abs(plane.offset - ref.offset) < 0.005


def test_determinism_same_seed_bit_identical():
    rng = np.random.default_rng(8)
    pts = np.vstack(
        [
            np.column_stack([rng.uniform(-3, 3, 80), rng.uniform(-3, 3, 80), rng.normal(0, 0.02, 80)]),
            rng.uniform(-3, 3, size=(40, 3)),
        ]
    )
    cfg = RansacConfig(inlier_threshold=0.05, seed=123)
    p1, in1 = ransac_plane(pts, cfg)
    p2, in2 = ransac_plane(pts, cfg)
    assert np.array_equal(in1, in2)
    assert np.array_equal(p1.normal, p2.normal)
    assert p1.offset == p2.offset


def test_oracle_equivalence_small_instances():
    rng = np.random.default_rng(99)
    for trial in range(20):
        plane_n = rng.normal(size=3)
        plane_n /= np.linalg.norm(plane_n)
        d = rng.uniform(-2, 2)
        basis = np.linalg.svd(plane_n.reshape(1, 3))[2][1:]
        coords = rng.uniform(-4, 4, size=(8, 2))
        on_plane = coords @ basis - d * plane_n
        off_plane = on_plane[:4] + plane_n * rng.uniform(0.5, 2.0, size=(4, 1))
        pts = np.vstack([on_plane, off_plane])

        cfg = RansacConfig(inlier_threshold=0.05, max_iterations=300, seed=trial)
        _, inliers = ransac_plane(pts, cfg)
        expected = brute_force_best_triple(pts, 0.05)
        assert np.array_equal(inliers, expected)


def test_refit_optimality_against_eigen_oracle():
    rng = np.random.default_rng(17)
    pts = np.column_stack(
        [rng.uniform(-5, 5, 120), rng.uniform(-5, 5, 120), rng.normal(1.0, 0.05, 120)]
    )
    plane, inliers = ransac_plane(pts, RansacConfig(inlier_threshold=0.2, seed=5))
    n_ref, d_ref = svd_plane_oracle(pts[inliers])
    ref = Plane(n_ref, d_ref)
    cost = float(np.sum(plane.distance(pts[inliers]) ** 2))
    cost_ref = float(np.sum(ref.distance(pts[inliers]) ** 2))
    assert cost <= cost_ref + 1e-9


def test_fit_plane_lsq_exact():
    pts = np.array([[0, 0, 2.0], [1, 0, 2.0], [0, 1, 2.0], [3, 4, 2.0]])
    plane = fit_plane_lsq(pts)
    np.testing.assert_allclose(plane.normal, [0, 0, 1], atol=1e-12)
    assert plane.offset == pytest.approx(-2.0, abs=1e-12)


# ---------------------------------------------------------------------------
# alignment_check
# ---------------------------------------------------------------------------


def _level_planes(n, d=-1.5):
    return [Plane([0.0, 0.0, 1.0], d) for _ in range(n)]


def test_alignment_orthogonal_motion_passes():
    dirs = np.tile([1.0, 0.0, 0.0], (5, 1))
    assert alignment_check(dirs, _level_planes(5), AlignmentWindow(5, 0.01))


def test_alignment_motion_along_normal_fails():
    dirs = np.tile([0.0, 0.0, 1.0], (5, 1))
    assert not alignment_check(dirs, _level_planes(5), AlignmentWindow(5, 0.01))


def test_alignment_one_degree_tilt_closed_form():
    tilt = math.radians(1.0)
    d = np.array([math.cos(tilt), 0.0, math.sin(tilt)])
    dirs = np.tile(d, (10, 1))
    # closed form: sum = 10 * sin(1 deg) ~= 0.1745
    assert 10 * math.sin(tilt) == pytest.approx(0.17449, abs=1e-4)
    assert alignment_check(dirs, _level_planes(10), AlignmentWindow(10, 0.2))
    assert not alignment_check(dirs, _level_planes(10), AlignmentWindow(10, 0.17))


def test_alignment_uses_trailing_window():
    dirs = np.vstack([np.tile([0.0, 0.0, 1.0], (5, 1)), np.tile([1.0, 0.0, 0.0], (5, 1))])
    assert alignment_check(dirs, _level_planes(10), AlignmentWindow(5, 0.01))


def test_alignment_absolute_values_prevent_cancellation():
    up = [0.0, math.sin(0.3), math.cos(0.3)]
    down = [0.0, -math.sin(0.3), math.cos(0.3)]
    dirs = np.array([up, down] * 3)
    planes = _level_planes(6)
    # raw sum would cancel to ~0; per-term absolute values must not
    assert not alignment_check(dirs, planes, AlignmentWindow(6, 0.5))


def test_alignment_length_mismatch_raises():
    with pytest.raises(ValueError):
        alignment_check(np.ones((4, 3)), _level_planes(5), AlignmentWindow(4, 0.1))


def test_config_validation():
    with pytest.raises(ValueError):
        RansacConfig(inlier_threshold=0.0)
    with pytest.raises(ValueError):
        RansacConfig(max_iterations=0)
    with pytest.raises(ValueError):
        RansacConfig(min_inlier_fraction=1.5)
    with pytest.raises(ValueError):
        AlignmentWindow(window_length=1)
    with pytest.raises(ValueError):
        AlignmentWindow(epsilon=0.0)
