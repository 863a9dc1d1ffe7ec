"""Per-sensor ground-relative pose estimation and initial extrinsic chaining.

Both sensor paths produce a GroundRelativePose: the LiDAR path from RANSAC
planes on raw scans, the camera path from a minimal two-view reconstruction
of tracked ground features. Chaining the two poses through the shared
ground frame yields the initial LiDAR-to-camera extrinsic; only yaw is
recovered from motion headings, the in-plane offset is left at zero for
the refinement stage.

Ground frame convention: the per-sensor ground frame sits at the foot of
the sensor's perpendicular to the ground plane, z-axis pointing from the
plane toward the sensor, axes otherwise fixed by the roll/pitch
construction (zero yaw). GroundRelativePose.transform maps ground-frame
points into the sensor frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Plane, RigidTransform, rot_x, rot_y, rot_z
from .planes import (
    AlignmentWindow,
    DegenerateGeometryError,
    RansacConfig,
    alignment_check,
    fit_plane_lsq,
    ransac_plane,
)


class InsufficientTracksError(ValueError):
    """Fewer than 8 tracked point pairs."""


class DegenerateMotionError(ValueError):
    """Baseline too small to reconstruct (pure rotation or no motion)."""


class ZeroPathError(ValueError):
    """A trajectory segment list with vanishing path length."""


class NoGroundError(ValueError):
    """Ground segmentation could not find a dominant plane."""


class DegenerateHeadingError(ValueError):
    """Mean motion direction has no component in the ground plane."""


@dataclass(frozen=True)
class MotionSample:
    """One frame of sensor egomotion in that sensor's odometry frame."""

    timestamp: float
    position: np.ndarray
    direction: np.ndarray  # unit vector
    increment: np.ndarray  # scaled position delta, parallel to direction

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float).reshape(3))
        object.__setattr__(self, "increment", np.asarray(self.increment, dtype=float).reshape(3))


@dataclass(frozen=True)
class ScaleEstimate:
    s: float
    confidence: float

    def __post_init__(self):
        if self.s <= 0.0:
            raise ValueError("scale must be positive")


@dataclass(frozen=True)
class GroundRelativePose:
    """Height, roll and pitch of a sensor relative to the ground plane.

    Only z, roll and pitch are observable from a single ground plane; the
    transform's in-plane position and yaw are zero by construction.
    """

    height: float
    roll: float
    pitch: float
    transform: RigidTransform
    observability_mask: dict = field(
        default_factory=lambda: {
            "x": False, "y": False, "z": True, "roll": True, "pitch": True, "yaw": False,
        }
    )


@dataclass(frozen=True)
class SegmentedCloud:
    """Ground / non-ground split with grid-connected object clusters.

    ``clusters`` holds index arrays into ``non_ground``; points in clusters
    smaller than the noise floor stay in ``non_ground`` but belong to no
    cluster.
    """

    ground: np.ndarray
    non_ground: np.ndarray
    clusters: list
    plane: Plane


def motion_direction(p_prev, p_next, s: float, timestamp: float = 0.0) -> MotionSample | None:
    """Scaled motion sample between consecutive positions.

    Returns None (stationary) when the raw increment norm is below 1e-6;
    the caller skips such frames from the alignment window.
    """
    p_prev = np.asarray(p_prev, dtype=float).reshape(3)
    p_next = np.asarray(p_next, dtype=float).reshape(3)
    delta = p_next - p_prev
    norm = float(np.linalg.norm(delta))
    if norm < 1e-6:
        return None
    return MotionSample(
        timestamp=timestamp,
        position=p_next,
        direction=delta / norm,
        increment=s * delta,
    )


def estimate_scale(cam_positions, metric_positions) -> ScaleEstimate:
    """Monocular-to-metric scale from path length ratio over a window.

    Confidence is 1 minus the coefficient of variation of the per-segment
    length ratios, clamped to [0, 1].
    """
    cam = np.asarray(cam_positions, dtype=float).reshape(-1, 3)
    metric = np.asarray(metric_positions, dtype=float).reshape(-1, 3)
    if cam.shape[0] != metric.shape[0] or cam.shape[0] < 2:
        raise ValueError("need equal-length position lists with at least 2 samples")
    cam_seg = np.linalg.norm(np.diff(cam, axis=0), axis=1)
    met_seg = np.linalg.norm(np.diff(metric, axis=0), axis=1)
    cam_len = float(cam_seg.sum())
    met_len = float(met_seg.sum())
    if cam_len < 1e-6 or met_len < 1e-6:
        raise ZeroPathError(f"path lengths {cam_len:.3g} / {met_len:.3g} too short")
    s = met_len / cam_len

    usable = cam_seg > 1e-9
    if np.count_nonzero(usable) >= 1:
        ratios = met_seg[usable] / cam_seg[usable]
        mean = float(ratios.mean())
        cv = float(ratios.std() / mean) if mean > 0.0 else 1.0
    else:
        cv = 1.0
    return ScaleEstimate(s=s, confidence=min(1.0, max(0.0, 1.0 - cv)))


def ground_pose_from_plane(plane: Plane, s: float) -> GroundRelativePose:
    """Sensor pose relative to the ground from a canonical plane.

    Reported angles follow roll = atan2(-b, c), pitch = atan2(-a,
    sqrt(b^2 + c^2)); height is s*|d|. The transform is built from the
    plane oriented so its normal points toward the sensor (the whole
    vector is flipped when d < 0), which keeps ground frames of
    differently-handed sensor frames chainable.
    """
    a, b, c = plane.normal
    d = plane.offset
    roll = math.atan2(-b, c)
    pitch = math.atan2(-a, math.hypot(b, c))
    height = s * abs(d)

    if d >= 0.0:
        n_o = plane.normal
        d_o = d
    else:
        n_o = -plane.normal
        d_o = -d
    roll_o = math.atan2(-n_o[1], n_o[2])
    pitch_o = math.atan2(-n_o[0], math.hypot(n_o[1], n_o[2]))
    # Rx(roll) @ Ry(-pitch) maps the ground z-axis onto the oriented normal
    R = rot_x(roll_o) @ rot_y(-pitch_o)
    t = -(s * d_o) * n_o
    return GroundRelativePose(height=height, roll=roll, pitch=pitch, transform=RigidTransform(R, t))


def windowed_ground_pose(
    samples: list, planes: list, w: AlignmentWindow, s: float
) -> GroundRelativePose | None:
    """Ground pose from the trailing window, or None while not aligned.

    All samples and planes must be expressed in one shared reference
    sensor frame. On a passing alignment check the canonical plane
    parameters are averaged over the window (normalized mean normal, mean
    offset) before the pose is extracted.
    """
    if len(samples) != len(planes):
        raise ValueError("samples and planes must have equal length")
    if len(samples) < w.window_length:
        raise ValueError(f"need at least {w.window_length} samples, got {len(samples)}")
    directions = np.array([m.direction for m in samples])
    if not alignment_check(directions, planes, w):
        return None
    tail = slice(len(planes) - w.window_length, len(planes))
    normals = np.array([p.normal for p in planes[tail]])
    offsets = np.array([p.offset for p in planes[tail]])
    mean_n = normals.mean(axis=0)
    avg = Plane(mean_n / np.linalg.norm(mean_n), float(offsets.mean()))
    return ground_pose_from_plane(avg, s)


def _ground_heading(pose: GroundRelativePose, directions) -> np.ndarray:
    dirs = np.asarray(directions, dtype=float).reshape(-1, 3)
    mean = dirs.mean(axis=0)
    in_ground = pose.transform.rotation.T @ mean
    h = in_ground[:2]
    norm = float(np.linalg.norm(h))
    if norm < 1e-6:
        raise DegenerateHeadingError("mean motion direction is normal to the ground plane")
    return h / norm


def chain_initial_extrinsic(
    cam: GroundRelativePose, lidar: GroundRelativePose, cam_dirs, lidar_dirs
) -> RigidTransform:
    """Initial LiDAR-to-camera transform through the shared ground frame.

    Yaw between the two per-sensor ground frames comes from aligning the
    mean motion headings projected into the ground plane; the in-plane
    offset is left at zero (unobservable here). The result maps
    LiDAR-frame points into the camera frame.
    """
    h_l = _ground_heading(lidar, lidar_dirs)
    h_c = _ground_heading(cam, cam_dirs)
    psi = math.atan2(h_l[0] * h_c[1] - h_l[1] * h_c[0], float(h_l @ h_c))
    yaw = RigidTransform(rot_z(psi), np.zeros(3))
    from .geometry import compose

    return compose(cam.transform, compose(yaw, lidar.transform.inverse()))


# ---------------------------------------------------------------------------
# two-view reconstruction
# ---------------------------------------------------------------------------


def _hartley_normalize(x: np.ndarray):
    centroid = x.mean(axis=0)
    rms = float(np.sqrt(np.mean(np.sum((x - centroid) ** 2, axis=1))))
    scale = math.sqrt(2.0) / max(rms, 1e-12)
    T = np.array(
        [[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]]
    )
    xn = (x - centroid) * scale
    return xn, T


def _eight_point(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Normalized 8-point essential matrix for x2' E x1 = 0."""
    x1n, T1 = _hartley_normalize(x1)
    x2n, T2 = _hartley_normalize(x2)
    u1, v1 = x1n[:, 0], x1n[:, 1]
    u2, v2 = x2n[:, 0], x2n[:, 1]
    A = np.column_stack(
        [u2 * u1, u2 * v1, u2, v2 * u1, v2 * v1, v2, u1, v1, np.ones_like(u1)]
    )
    _, _, Vt = np.linalg.svd(A)
    E = Vt[-1].reshape(3, 3)
    E = T2.T @ E @ T1
    U, S, Vt = np.linalg.svd(E)
    sigma = 0.5 * (S[0] + S[1])
    return U @ np.diag([sigma, sigma, 0.0]) @ Vt


def _homography_dlt(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    x1n, T1 = _hartley_normalize(x1)
    x2n, T2 = _hartley_normalize(x2)
    n = x1n.shape[0]
    A = np.zeros((2 * n, 9))
    A[0::2, 0] = x1n[:, 0]
    A[0::2, 1] = x1n[:, 1]
    A[0::2, 2] = 1.0
    A[0::2, 6] = -x2n[:, 0] * x1n[:, 0]
    A[0::2, 7] = -x2n[:, 0] * x1n[:, 1]
    A[0::2, 8] = -x2n[:, 0]
    A[1::2, 3] = x1n[:, 0]
    A[1::2, 4] = x1n[:, 1]
    A[1::2, 5] = 1.0
    A[1::2, 6] = -x2n[:, 1] * x1n[:, 0]
    A[1::2, 7] = -x2n[:, 1] * x1n[:, 1]
    A[1::2, 8] = -x2n[:, 1]
    _, _, Vt = np.linalg.svd(A)
    H = Vt[-1].reshape(3, 3)
    return np.linalg.inv(T2) @ H @ T1


def _sampson_sq(E: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    X1 = np.column_stack([x1, np.ones(len(x1))])
    X2 = np.column_stack([x2, np.ones(len(x2))])
    Ex1 = X1 @ E.T
    Etx2 = X2 @ E
    num = np.einsum("ij,ij->i", X2, Ex1) ** 2
    den = Ex1[:, 0] ** 2 + Ex1[:, 1] ** 2 + Etx2[:, 0] ** 2 + Etx2[:, 1] ** 2
    return num / np.maximum(den, 1e-300)


def _sym_transfer_sq(H: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    X1 = np.column_stack([x1, np.ones(len(x1))])
    X2 = np.column_stack([x2, np.ones(len(x2))])
    f = X1 @ H.T
    with np.errstate(divide="ignore", invalid="ignore"):
        f = f[:, :2] / f[:, 2:3]
        b = X2 @ np.linalg.inv(H).T
        b = b[:, :2] / b[:, 2:3]
    err = np.sum((f - x2) ** 2, axis=1) + np.sum((b - x1) ** 2, axis=1)
    return np.where(np.isfinite(err), err, np.inf)


def _ransac_model(x1, x2, fit, score, sample_size, threshold_sq, seed, iterations=100):
    n = x1.shape[0]
    rng = np.random.default_rng(seed)
    best_count, best_inliers = -1, None
    for _ in range(iterations):
        idx = rng.choice(n, size=sample_size, replace=False)
        try:
            model = fit(x1[idx], x2[idx])
        except np.linalg.LinAlgError:
            continue
        err = score(model, x1, x2)
        inliers = err <= threshold_sq
        count = int(np.count_nonzero(inliers))
        if count > best_count:
            best_count, best_inliers = count, inliers
    model = fit(x1[best_inliers], x2[best_inliers]) if best_count >= sample_size else None
    return model, best_inliers, best_count


def _decompose_essential(E: np.ndarray):
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    R1 = U @ W @ Vt
    R2 = U @ W.T @ Vt
    t = U[:, 2]
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def _decompose_homography(H: np.ndarray):
    """Faugeras-Lustman decomposition of x2 ~ H x1 into (R, t, n) candidates."""
    U, D, Vt = np.linalg.svd(H)
    d1, d2, d3 = D
    if d1 / d3 < 1.0 + 1e-8:
        raise DegenerateMotionError("homography is a pure rotation (no baseline)")
    s = np.linalg.det(U) * np.linalg.det(Vt)
    V = Vt.T

    aux1 = math.sqrt(max(0.0, (d1 * d1 - d2 * d2) / (d1 * d1 - d3 * d3)))
    aux3 = math.sqrt(max(0.0, (d2 * d2 - d3 * d3) / (d1 * d1 - d3 * d3)))
    candidates = []

    # d' = +d2
    aux_st = math.sqrt(max(0.0, (d1 * d1 - d2 * d2) * (d2 * d2 - d3 * d3))) / ((d1 + d3) * d2)
    ct = (d2 * d2 + d1 * d3) / ((d1 + d3) * d2)
    for e1, e3 in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        st = e1 * e3 * aux_st
        Rp = np.array([[ct, 0.0, -st], [0.0, 1.0, 0.0], [st, 0.0, ct]])
        tp = (d1 - d3) * np.array([e1 * aux1, 0.0, -e3 * aux3])
        npl = np.array([e1 * aux1, 0.0, e3 * aux3])
        candidates.append((s * U @ Rp @ Vt, U @ tp, V @ npl))

    # d' = -d2 (reflection branch, filtered away by cheirality in practice)
    if d1 != d3:
        aux_sp = math.sqrt(max(0.0, (d1 * d1 - d2 * d2) * (d2 * d2 - d3 * d3))) / ((d1 - d3) * d2)
        cp = (d1 * d3 - d2 * d2) / ((d1 - d3) * d2)
        for e1, e3 in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            sp = e1 * e3 * aux_sp
            Rp = np.array([[cp, 0.0, sp], [0.0, -1.0, 0.0], [sp, 0.0, -cp]])
            tp = (d1 + d3) * np.array([e1 * aux1, 0.0, e3 * aux3])
            npl = np.array([e1 * aux1, 0.0, e3 * aux3])
            candidates.append((s * U @ Rp @ Vt, U @ tp, V @ npl))

    valid = []
    for R, t, n in candidates:
        if np.linalg.det(R) < 0.0:
            continue
        norm = np.linalg.norm(t)
        if norm < 1e-12:
            continue
        nn = n / max(np.linalg.norm(n), 1e-12)
        valid.append((R, t / norm, nn))
    if not valid:
        raise DegenerateMotionError("homography decomposition produced no valid motion")
    return valid


def _triangulate_midpoint(R: np.ndarray, t: np.ndarray, x1: np.ndarray, x2: np.ndarray):
    """Midpoint triangulation in the first camera frame for x2 = R x1 + t."""
    d1 = np.column_stack([x1, np.ones(len(x1))])
    d1 /= np.linalg.norm(d1, axis=1, keepdims=True)
    d2 = np.column_stack([x2, np.ones(len(x2))]) @ R  # R^T applied rowwise
    d2 /= np.linalg.norm(d2, axis=1, keepdims=True)
    o2 = -R.T @ t

    b = np.einsum("ij,ij->i", d1, d2)
    w0 = -o2  # o1 - o2
    dd = d1 @ w0
    e = d2 @ w0
    denom = 1.0 - b * b
    ok = denom > 1e-12
    s1 = np.where(ok, (b * e - dd) / np.where(ok, denom, 1.0), 0.0)
    s2 = np.where(ok, (e - b * dd) / np.where(ok, denom, 1.0), 0.0)
    p1 = s1[:, None] * d1
    p2 = o2 + s2[:, None] * d2
    points = 0.5 * (p1 + p2)
    angles = np.arccos(np.clip(b, -1.0, 1.0))
    return points, angles, s1, ok


def two_view_ground_reconstruction(tracks, k, *, seed: int = 0, threshold_px: float = 1.0):
    """Relative camera motion and up-to-scale structure from two views.

    ``tracks`` is an (N, 4) array of pixel pairs (u1, v1, u2, v2). The
    essential matrix comes from the normalized 8-point algorithm inside a
    seeded RANSAC loop; ground features are frequently coplanar, where the
    8-point system is degenerate, so a homography model is fit alongside
    and wins when it explains at least as many tracks (it is then
    decomposed directly into motion candidates). Cheirality over midpoint
    triangulations picks the final motion.

    Returns ``(transform, points)``: the pose of the second camera in the
    first camera frame (unit-norm translation) and the triangulated track
    points in the first camera frame, up to one global scale.
    """
    tracks = np.asarray(tracks, dtype=float).reshape(-1, 4)
    if tracks.shape[0] < 8:
        raise InsufficientTracksError(f"need at least 8 tracks, got {tracks.shape[0]}")

    fx, fy = k.fx, k.fy
    x1 = np.column_stack([(tracks[:, 0] - k.cx) / fx, (tracks[:, 1] - k.cy) / fy])
    x2 = np.column_stack([(tracks[:, 2] - k.cx) / fx, (tracks[:, 3] - k.cy) / fy])

    if float(np.median(np.linalg.norm(x2 - x1, axis=1))) < 1e-9:
        raise DegenerateMotionError("image pairs are identical (zero baseline)")

    thr = threshold_px / (0.5 * (fx + fy))
    thr_sq = thr * thr

    H, h_inliers, n_h = _ransac_model(
        x1, x2, _homography_dlt, _sym_transfer_sq, 4, 4.0 * thr_sq, seed
    )
    E, e_inliers, n_e = _ransac_model(x1, x2, _eight_point, _sampson_sq, 8, thr_sq, seed + 1)

    use_h = n_h >= 0.45 * (n_h + n_e) if (n_h + n_e) > 0 else True
    if use_h and H is not None:
        motions = _decompose_homography(H)
        inliers = h_inliers
    else:
        if E is None:
            raise DegenerateMotionError("no epipolar model could be fit")
        motions = [(R, t, None) for R, t in _decompose_essential(E)]
        inliers = e_inliers

    xi1, xi2 = x1[inliers], x2[inliers]
    scored = []
    for R, t, n in motions:
        pts, angles, depth1, ok = _triangulate_midpoint(R, t, xi1, xi2)
        in_cam2 = (pts - (-R.T @ t)) @ (R.T @ np.array([0.0, 0.0, 1.0]))
        front = int(np.count_nonzero((depth1 > 0) & (in_cam2 > 0) & ok))
        scored.append((front, R, t, n, pts, angles))
    best_front = max(s[0] for s in scored)
    # the planar two-fold ambiguity leaves two cheirality-valid motions; a
    # ground vehicle translates parallel to the reconstructed plane, so the
    # candidate with motion most orthogonal to the plane normal wins
    finalists = [s for s in scored if s[0] >= max(1, int(0.9 * best_front))]
    finalists.sort(
        key=lambda s: (-s[0], abs(float(s[2] @ s[3])) if s[3] is not None else 0.0)
    )
    front, R, t, n, pts, angles = finalists[0]
    if front < max(6, 0.5 * len(xi1)):
        raise DegenerateMotionError("no motion hypothesis places the structure in front")
    if math.degrees(float(np.median(angles))) < 0.1:
        raise DegenerateMotionError("median triangulation ray angle below 0.1 degrees")

    transform = RigidTransform(R.T, -R.T @ t)
    return transform, pts


# ---------------------------------------------------------------------------
# ground segmentation
# ---------------------------------------------------------------------------

_NEIGHBOR_OFFSETS = np.array(
    [(i, j, kk) for i in (-1, 0, 1) for j in (-1, 0, 1) for kk in (-1, 0, 1) if (i, j, kk) != (0, 0, 0)],
    dtype=np.int64,
)


def _cell_normals(points: np.ndarray, cell_ids: np.ndarray, n_cells: int, fallback: np.ndarray):
    """Per-cell PCA normals, vectorized with bincount accumulation."""
    counts = np.bincount(cell_ids, minlength=n_cells).astype(float)
    sums = np.column_stack(
        [np.bincount(cell_ids, weights=points[:, i], minlength=n_cells) for i in range(3)]
    )
    means = sums / np.maximum(counts, 1.0)[:, None]
    centered = points - means[cell_ids]
    # upper-triangle second moments per cell
    xs = {}
    for i in range(3):
        for j in range(i, 3):
            xs[(i, j)] = np.bincount(
                cell_ids, weights=centered[:, i] * centered[:, j], minlength=n_cells
            )
    cov = np.zeros((n_cells, 3, 3))
    for (i, j), v in xs.items():
        cov[:, i, j] = v
        cov[:, j, i] = v
    normals = np.tile(fallback, (n_cells, 1))
    enough = counts >= 3
    if np.any(enough):
        _, vecs = np.linalg.eigh(cov[enough])
        normals[enough] = vecs[:, :, 0]
    return normals


def segment_ground(
    cloud,
    cell_size: float = 0.3,
    *,
    ransac: RansacConfig | None = None,
    ground_distance: float = 0.15,
    normal_cone_deg: float = 30.0,
    min_cluster_points: int = 10,
) -> SegmentedCloud:
    """Split a scan into ground and clustered non-ground objects.

    The dominant plane comes from ransac_plane; a point is ground when it
    is within ``ground_distance`` of the plane and its local (grid-cell
    PCA) surface normal is within ``normal_cone_deg`` of the plane normal.
    Remaining points are clustered by 26-connected grid components.
    """
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 50:
        raise ValueError(f"need at least 50 points, got {pts.shape[0]}")
    if cell_size <= 0.0:
        raise ValueError("cell_size must be positive")

    cfg = ransac if ransac is not None else RansacConfig(inlier_threshold=0.05, seed=0)
    try:
        plane, _ = ransac_plane(pts, cfg)
    except DegenerateGeometryError as exc:
        raise NoGroundError(str(exc)) from exc

    ijk = np.floor(pts / cell_size).astype(np.int64)
    ijk -= ijk.min(axis=0)
    dims = ijk.max(axis=0) + 1
    cell_ids = np.ravel_multi_index((ijk[:, 0], ijk[:, 1], ijk[:, 2]), dims)
    uniq, inv = np.unique(cell_ids, return_inverse=True)
    normals = _cell_normals(pts, inv, len(uniq), plane.normal)

    cos_cone = math.cos(math.radians(normal_cone_deg))
    normal_ok = np.abs(normals[inv] @ plane.normal) >= cos_cone
    near_plane = np.abs(plane.distance(pts)) <= ground_distance
    is_ground = near_plane & normal_ok

    ground = pts[is_ground]
    non_ground_idx = np.flatnonzero(~is_ground)
    non_ground = pts[non_ground_idx]

    clusters: list[np.ndarray] = []
    if non_ground.shape[0] > 0:
        og_cells = ijk[non_ground_idx]
        cell_map: dict[tuple, list] = {}
        for row, cell in enumerate(map(tuple, og_cells)):
            cell_map.setdefault(cell, []).append(row)
        seen = set()
        for start in sorted(cell_map):
            if start in seen:
                continue
            stack, members = [start], []
            seen.add(start)
            while stack:
                cell = stack.pop()
                members.extend(cell_map[cell])
                for off in _NEIGHBOR_OFFSETS:
                    nb = (cell[0] + off[0], cell[1] + off[1], cell[2] + off[2])
                    if nb in cell_map and nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
            if len(members) >= min_cluster_points:
                clusters.append(np.array(sorted(members), dtype=np.int64))

    return SegmentedCloud(ground=ground, non_ground=non_ground, clusters=clusters, plane=plane)
