"""Deterministic synthetic sensor-rig simulator.

World model: a ground plane (optionally sloped), axis-aligned boxes and
vertical cylinders expressed in the ground frame, and a vehicle driving a
piecewise-linear waypoint trajectory on the plane. The LiDAR rides
``lidar_height`` above the ground on the vehicle; the camera hangs off the
LiDAR through the rig's true extrinsic (which maps LiDAR-frame points into
the camera frame).

Per frame the simulator ray-casts the LiDAR beam grid against the scene
(nearest hit, labeled per primitive), projects the visible object wireframe
into the camera as 2D segments, samples ground feature tracks between
consecutive camera frames, and emits truth and optionally noise-perturbed
odometry. Everything is driven by one seed; identical specs produce
bit-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .edges import EdgeSegment2D
from .geometry import CameraIntrinsics, RigidTransform, compose, rot_x, rot_y, rot_z, so3_exp


class InvalidSpecError(ValueError):
    """Scene specification violates its invariants."""


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxSpec:
    """Axis-aligned box in the ground frame: center and full extents."""

    center: tuple
    size: tuple


@dataclass(frozen=True)
class CylinderSpec:
    """Vertical cylinder in the ground frame."""

    center_xy: tuple
    base_z: float
    radius: float
    height: float


@dataclass(frozen=True)
class LidarModel:
    beam_count: int = 15
    elevation_min_deg: float = -20.0
    elevation_max_deg: float = 8.0
    azimuth_step_deg: float = 0.5
    max_range: float = 80.0

    def elevations_deg(self) -> np.ndarray:
        # linspace endpoints chosen so a 0 degree ring exists whenever
        # (count - 1) divides the span evenly through zero
        return np.linspace(self.elevation_min_deg, self.elevation_max_deg, self.beam_count)


@dataclass(frozen=True)
class RigSpec:
    extrinsic: RigidTransform  # LiDAR frame -> camera frame
    lidar_height: float
    intrinsics: CameraIntrinsics
    lidar: LidarModel = LidarModel()


@dataclass(frozen=True)
class NoiseSpec:
    lidar_sigma: float = 0.0
    pixel_sigma: float = 0.0
    odom_sigma_t: float = 0.0
    odom_sigma_rot: float = 0.0  # radians per frame


@dataclass(frozen=True)
class SceneSpec:
    rig: RigSpec
    waypoints: tuple = ((0.0, 0.0), (20.0, 0.0))
    speed: float = 2.0
    rate_hz: float = 10.0
    ground_roll_deg: float = 0.0
    ground_pitch_deg: float = 0.0
    boxes: tuple = ()
    cylinders: tuple = ()
    noise: NoiseSpec = NoiseSpec()
    seed: int = 0
    corridor_half_width: float = 1.0
    tracks_per_frame: int = 50
    edge_samples: int = 65
    min_segment_px: float = 10.0


@dataclass(frozen=True)
class FrameBundle:
    timestamp: float
    lidar_points: np.ndarray  # (N, 3) LiDAR frame
    labels: np.ndarray  # (N,) 0 = ground, 1 + object index
    camera_segments: list
    tracks: np.ndarray  # (M, 4): u_prev, v_prev, u_cur, v_cur
    lidar_odometry: RigidTransform  # LiDAR frame -> odometry (world) frame
    camera_odometry: RigidTransform
    lidar_truth: RigidTransform
    camera_truth: RigidTransform


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------


def ground_rotation(spec: SceneSpec) -> np.ndarray:
    """Ground-frame to world rotation (slope of the ground plane)."""
    return rot_x(math.radians(spec.ground_roll_deg)) @ rot_y(math.radians(spec.ground_pitch_deg))


def _trajectory_poses(spec: SceneSpec):
    """Vehicle poses in the ground frame sampled along the waypoints."""
    wp = np.asarray(spec.waypoints, dtype=float).reshape(-1, 2)
    if wp.shape[0] < 2:
        raise InvalidSpecError("need at least two waypoints")
    seg = np.diff(wp, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len < 1e-9):
        raise InvalidSpecError("duplicate consecutive waypoints")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = float(cum[-1])
    step = spec.speed / spec.rate_hz
    n = int(math.floor(total / step)) + 1
    poses = []
    for i in range(n):
        s = min(i * step, total)
        j = int(np.searchsorted(cum, s, side="right") - 1)
        j = min(j, len(seg) - 1)
        alpha = (s - cum[j]) / seg_len[j]
        xy = wp[j] + alpha * seg[j]
        heading = math.atan2(seg[j][1], seg[j][0])
        poses.append(RigidTransform(rot_z(heading), np.array([xy[0], xy[1], 0.0])))
    return poses


def _box_bounds(box: BoxSpec):
    c = np.asarray(box.center, dtype=float)
    h = np.asarray(box.size, dtype=float) / 2.0
    return c - h, c + h


def raycast(spec: SceneSpec, origins: np.ndarray, dirs: np.ndarray):
    """Nearest-hit distances and labels for rays in the ground frame.

    Returns (t, label) with t = inf where nothing is hit inside max_range;
    label 0 is the ground plane, 1 + i the i-th object (boxes first).
    """
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    n = dirs.shape[0]
    if origins.shape[0] == 1:
        origins = np.broadcast_to(origins, dirs.shape)
    best_t = np.full(n, np.inf)
    best_label = np.full(n, -1, dtype=np.int64)

    # ground plane z = 0
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_pl = -origins[:, 2] / dz
    ok = np.isfinite(t_pl) & (t_pl > 1e-6)
    best_t = np.where(ok, t_pl, best_t)
    best_label = np.where(ok, 0, best_label)

    label = 1
    for box in spec.boxes:
        lo, hi = _box_bounds(box)
        t_near = np.full(n, -np.inf)
        t_far = np.full(n, np.inf)
        for a in range(3):
            d = dirs[:, a]
            o = origins[:, a]
            parallel = np.abs(d) < 1e-15
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo[a] - o) / d
                t2 = (hi[a] - o) / d
            tmin = np.minimum(t1, t2)
            tmax = np.maximum(t1, t2)
            inside = (o >= lo[a]) & (o <= hi[a])
            tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
            tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
            t_near = np.maximum(t_near, tmin)
            t_far = np.minimum(t_far, tmax)
        hit = (t_far >= t_near) & (t_near > 1e-6)
        closer = hit & (t_near < best_t)
        best_t = np.where(closer, t_near, best_t)
        best_label = np.where(closer, label, best_label)
        label += 1

    for cyl in spec.cylinders:
        cx, cy = cyl.center_xy
        ox = origins[:, 0] - cx
        oy = origins[:, 1] - cy
        dx, dy = dirs[:, 0], dirs[:, 1]
        a = dx * dx + dy * dy
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - cyl.radius**2
        disc = b * b - 4.0 * a * c
        t_cyl = np.full(n, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            for sign in (-1.0, 1.0):
                t = (-b + sign * sq) / (2.0 * a)
                z = origins[:, 2] + t * dirs[:, 2]
                good = (disc >= 0) & (a > 1e-15) & (t > 1e-6)
                good &= (z >= cyl.base_z) & (z <= cyl.base_z + cyl.height)
                t_cyl = np.where(good & (t < t_cyl), t, t_cyl)
            # end caps
            for zc in (cyl.base_z, cyl.base_z + cyl.height):
                t = (zc - origins[:, 2]) / dirs[:, 2]
                x = origins[:, 0] + t * dirs[:, 0] - cx
                y = origins[:, 1] + t * dirs[:, 1] - cy
                good = np.isfinite(t) & (t > 1e-6) & (x * x + y * y <= cyl.radius**2)
                t_cyl = np.where(good & (t < t_cyl), t, t_cyl)
        closer = (t_cyl < best_t) & np.isfinite(t_cyl)
        best_t = np.where(closer, t_cyl, best_t)
        best_label = np.where(closer, label, best_label)
        label += 1

    out_of_range = best_t > spec.rig.lidar.max_range
    best_t = np.where(out_of_range, np.inf, best_t)
    best_label = np.where(out_of_range, -1, best_label)
    return best_t, best_label


def _box_edges(box: BoxSpec):
    lo, hi = _box_bounds(box)
    x = (lo[0], hi[0])
    y = (lo[1], hi[1])
    z = (lo[2], hi[2])
    edges = []
    # 4 edges along each axis
    for j in (0, 1):
        for kk in (0, 1):
            edges.append((np.array([x[0], y[j], z[kk]]), np.array([x[1], y[j], z[kk]])))
            edges.append((np.array([x[j], y[0], z[kk]]), np.array([x[j], y[1], z[kk]])))
            edges.append((np.array([x[j], y[kk], z[0]]), np.array([x[j], y[kk], z[1]])))
    return edges


def _cylinder_silhouette(cyl: CylinderSpec, viewpoint_xy: np.ndarray):
    """The two vertical tangent lines seen from a ground-frame viewpoint."""
    c = np.asarray(cyl.center_xy, dtype=float)
    v = viewpoint_xy - c
    dist = float(np.linalg.norm(v))
    if dist <= cyl.radius:
        return []
    gamma = math.acos(cyl.radius / dist)
    u = v / dist
    out = []
    for sign in (-1.0, 1.0):
        ca, sa = math.cos(sign * gamma), math.sin(sign * gamma)
        tp = c + cyl.radius * np.array([ca * u[0] - sa * u[1], sa * u[0] + ca * u[1]])
        a = np.array([tp[0], tp[1], cyl.base_z])
        b = np.array([tp[0], tp[1], cyl.base_z + cyl.height])
        out.append((a, b))
    return out


def analytic_silhouette(spec: SceneSpec, viewpoint_ground: np.ndarray):
    """Ground-frame 3D silhouette edges of every object from a viewpoint.

    Box edges are on the silhouette when exactly one adjacent face is
    front-facing; cylinders contribute their two vertical tangent lines.
    Used as the oracle for occlusion-edge accuracy checks.
    """
    vp = np.asarray(viewpoint_ground, dtype=float).reshape(3)
    segments = []
    for box in spec.boxes:
        lo, hi = _box_bounds(box)

        def front(axis, side):
            return vp[axis] > hi[axis] if side else vp[axis] < lo[axis]

        x = (lo[0], hi[0])
        y = (lo[1], hi[1])
        z = (lo[2], hi[2])
        for j in (0, 1):
            for kk in (0, 1):
                # edge along x: between faces (y, j) and (z, kk)
                if front(1, j) != front(2, kk):
                    segments.append((np.array([x[0], y[j], z[kk]]), np.array([x[1], y[j], z[kk]])))
                # edge along y: between faces (x, j) and (z, kk)
                if front(0, j) != front(2, kk):
                    segments.append((np.array([x[j], y[0], z[kk]]), np.array([x[j], y[1], z[kk]])))
                # edge along z: between faces (x, j) and (y, kk)
                if front(0, j) != front(1, kk):
                    segments.append((np.array([x[j], y[kk], z[0]]), np.array([x[j], y[kk], z[1]])))
    for cyl in spec.cylinders:
        segments.extend(_cylinder_silhouette(cyl, vp[:2]))
    return segments


# ---------------------------------------------------------------------------
# frame generation
# ---------------------------------------------------------------------------


def _validate(spec: SceneSpec, poses):
    wp = np.asarray(spec.waypoints, dtype=float).reshape(-1, 2)
    seg = list(zip(wp[:-1], wp[1:]))

    def seg_distance_xy(p, a, b):
        ab = b - a
        tpar = float(np.clip(((p - a) @ ab) / max(ab @ ab, 1e-12), 0.0, 1.0))
        return float(np.linalg.norm(a + tpar * ab - p))

    def rect_segment_distance(lo_xy, hi_xy, a, b):
        ts = np.linspace(0.0, 1.0, 101)
        pts = a[None, :] + ts[:, None] * (b - a)[None, :]
        outside = np.maximum(np.maximum(lo_xy - pts, pts - hi_xy), 0.0)
        return float(np.min(np.linalg.norm(outside, axis=1)))

    for i, box in enumerate(spec.boxes):
        lo, hi = _box_bounds(box)
        if hi[2] <= 0.0 or lo[2] >= 2.0:  # clear of the vehicle body height band
            continue
        for a, b in seg:
            if rect_segment_distance(lo[:2], hi[:2], a, b) < spec.corridor_half_width:
                raise InvalidSpecError(f"box {i} intersects the trajectory corridor")
    for i, cyl in enumerate(spec.cylinders):
        c = np.asarray(cyl.center_xy, dtype=float)
        for a, b in seg:
            if seg_distance_xy(c, a, b) < cyl.radius + spec.corridor_half_width:
                raise InvalidSpecError(f"cylinder {i} intersects the trajectory corridor")

    far = 0.0
    for pose in poses:
        p = pose.translation[:2]
        for box in spec.boxes:
            lo, hi = _box_bounds(box)
            corners = np.array([[x, y] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])])
            far = max(far, float(np.max(np.linalg.norm(corners - p, axis=1))))
        for cyl in spec.cylinders:
            far = max(far, float(np.linalg.norm(np.asarray(cyl.center_xy) - p)) + cyl.radius)
    if far >= spec.rig.lidar.max_range:
        raise InvalidSpecError(
            f"max_range {spec.rig.lidar.max_range} does not cover farthest object at {far:.1f} m"
        )


def _beam_dirs(model: LidarModel) -> np.ndarray:
    az = np.radians(np.arange(0.0, 360.0, model.azimuth_step_deg))
    el = np.radians(model.elevations_deg())
    AZ, EL = np.meshgrid(az, el)
    az_f, el_f = AZ.ravel(), EL.ravel()
    return np.column_stack(
        [np.cos(el_f) * np.cos(az_f), np.cos(el_f) * np.sin(az_f), np.sin(el_f)]
    )


def _project_cam(k: CameraIntrinsics, pose_cam_in_ground: RigidTransform, pts_ground: np.ndarray):
    """Project ground-frame points through a camera pose (camera -> ground)."""
    inv = pose_cam_in_ground.inverse()
    pc = inv.apply(pts_ground)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * pc[:, 0] / z + k.cx
        v = k.fy * pc[:, 1] / z + k.cy
    return np.column_stack([u, v]), z


def _visible_mask(spec, cam_pos, pts, uv, z, k):
    """In front, inside the image, and not occluded by any primitive."""
    ok = (z > 1e-6) & np.isfinite(uv[:, 0])
    ok &= (uv[:, 0] >= 0) & (uv[:, 0] <= k.width - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= k.height - 1)
    idx = np.flatnonzero(ok)
    if idx.size:
        rel = pts[idx] - cam_pos
        dist = np.linalg.norm(rel, axis=1)
        dirs = rel / dist[:, None]
        t_hit, _ = raycast(spec, cam_pos[None, :], dirs)
        ok_idx = t_hit >= dist - 1e-6
        ok[idx] = ok_idx
    return ok


def _wireframe_segments(spec, cam_pose_ground, rng):
    """Visible object wireframe projected into the camera as 2D segments."""
    k = spec.rig.intrinsics
    cam_pos = cam_pose_ground.translation
    edges = []
    for box in spec.boxes:
        edges.extend(_box_edges(box))
    for cyl in spec.cylinders:
        edges.extend(_cylinder_silhouette(cyl, cam_pos[:2]))

    segments = []
    for a, b in edges:
        ts = np.linspace(0.0, 1.0, spec.edge_samples)
        pts = a[None, :] + ts[:, None] * (b - a)[None, :]
        uv, z = _project_cam(k, cam_pose_ground, pts)
        vis = _visible_mask(spec, cam_pos, pts, uv, z, k)
        # consecutive visible runs become separate sub-segments
        start = None
        for i in range(len(ts) + 1):
            on = i < len(ts) and vis[i]
            if on and start is None:
                start = i
            elif not on and start is not None:
                p0, p1 = uv[start], uv[i - 1]
                if np.linalg.norm(p1 - p0) >= spec.min_segment_px:
                    if spec.noise.pixel_sigma > 0.0:
                        p0 = p0 + rng.normal(0.0, spec.noise.pixel_sigma, 2)
                        p1 = p1 + rng.normal(0.0, spec.noise.pixel_sigma, 2)
                        p0 = np.clip(p0, [0, 0], [k.width - 1, k.height - 1])
                        p1 = np.clip(p1, [0, 0], [k.width - 1, k.height - 1])
                    segments.append(EdgeSegment2D(p0, p1, 1.0))
                start = None
    return segments


def _ground_tracks(spec, cam_prev, cam_cur, rng):
    """Pixel pairs of static ground points seen in both camera frames."""
    k = spec.rig.intrinsics
    n_cand = spec.tracks_per_frame * 3
    u = rng.uniform(0.05 * k.width, 0.95 * k.width, n_cand)
    v = rng.uniform(0.5 * k.height, 0.95 * k.height, n_cand)
    dirs_cam = np.column_stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones(n_cand)])
    dirs_cam /= np.linalg.norm(dirs_cam, axis=1, keepdims=True)
    dirs_g = dirs_cam @ cam_cur.rotation.T
    origin = cam_cur.translation
    t_hit, label = raycast(spec, origin[None, :], dirs_g)
    on_ground = (label == 0) & np.isfinite(t_hit)
    pts = origin + t_hit[:, None] * dirs_g

    tracks = []
    idx = np.flatnonzero(on_ground)
    if idx.size:
        uv_prev, z_prev = _project_cam(k, cam_prev, pts[idx])
        vis_prev = _visible_mask(spec, cam_prev.translation, pts[idx], uv_prev, z_prev, k)
        uv_cur = np.column_stack([u[idx], v[idx]])
        for row in np.flatnonzero(vis_prev):
            tracks.append([uv_prev[row, 0], uv_prev[row, 1], uv_cur[row, 0], uv_cur[row, 1]])
            if len(tracks) >= spec.tracks_per_frame:
                break
    out = np.array(tracks, dtype=float).reshape(-1, 4)
    if spec.noise.pixel_sigma > 0.0 and out.size:
        out = out + rng.normal(0.0, spec.noise.pixel_sigma, out.shape)
    return out


def _noisy_pose(pose: RigidTransform, noise: NoiseSpec, rng) -> RigidTransform:
    if noise.odom_sigma_t <= 0.0 and noise.odom_sigma_rot <= 0.0:
        return pose
    dt = rng.normal(0.0, max(noise.odom_sigma_t, 0.0), 3) if noise.odom_sigma_t > 0 else np.zeros(3)
    if noise.odom_sigma_rot > 0:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.normal(0.0, noise.odom_sigma_rot)
        dR = so3_exp(axis * angle)
    else:
        dR = np.eye(3)
    return compose(pose, RigidTransform(dR, dt))


def generate_frames(spec: SceneSpec) -> list[FrameBundle]:
    """Simulate the full trajectory; deterministic per seed."""
    poses_vehicle = _trajectory_poses(spec)
    _validate(spec, poses_vehicle)

    R_wg = ground_rotation(spec)
    T_wg = RigidTransform(R_wg, np.zeros(3))
    lift = RigidTransform(np.eye(3), np.array([0.0, 0.0, spec.rig.lidar_height]))
    E_inv = spec.rig.extrinsic.inverse()  # camera frame -> LiDAR frame

    beam_dirs = _beam_dirs(spec.rig.lidar)
    children = np.random.SeedSequence(spec.seed).spawn(len(poses_vehicle))

    frames = []
    cam_prev_g = None
    for i, pose_v in enumerate(poses_vehicle):
        rng = np.random.default_rng(children[i])
        lidar_g = compose(pose_v, lift)  # LiDAR -> ground frame
        cam_g = compose(lidar_g, E_inv)  # camera -> ground frame

        dirs_g = beam_dirs @ lidar_g.rotation.T
        t_hit, label = raycast(spec, lidar_g.translation[None, :], dirs_g)
        hit = np.isfinite(t_hit)
        pts_lidar = t_hit[hit, None] * beam_dirs[hit]
        labels = label[hit].astype(np.int64)
        if spec.noise.lidar_sigma > 0.0:
            pts_lidar = pts_lidar + rng.normal(0.0, spec.noise.lidar_sigma, pts_lidar.shape)

        segments = _wireframe_segments(spec, cam_g, rng)
        if cam_prev_g is not None:
            tracks = _ground_tracks(spec, cam_prev_g, cam_g, rng)
        else:
            tracks = np.zeros((0, 4))

        lidar_truth_w = compose(T_wg, lidar_g)
        cam_truth_w = compose(T_wg, cam_g)
        frames.append(
            FrameBundle(
                timestamp=i / spec.rate_hz,
                lidar_points=pts_lidar,
                labels=labels,
                camera_segments=segments,
                tracks=tracks,
                lidar_odometry=_noisy_pose(lidar_truth_w, spec.noise, rng),
                camera_odometry=_noisy_pose(cam_truth_w, spec.noise, rng),
                lidar_truth=lidar_truth_w,
                camera_truth=cam_truth_w,
            )
        )
        cam_prev_g = cam_g
    return frames


def perturb_extrinsic(truth: RigidTransform, rot_deg: float, trans_m: float, seed: int) -> RigidTransform:
    """Truth composed with an exact-magnitude random rotation and offset.

    The rotation is applied multiplicatively (geodesic distance to truth is
    exactly ``rot_deg``), the translation additively (Euclidean distance
    exactly ``trans_m``). Deterministic per seed.
    """
    if rot_deg < 0.0 or trans_m < 0.0:
        raise ValueError("perturbation magnitudes must be non-negative")
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    dR = so3_exp(axis * math.radians(rot_deg))
    return RigidTransform(dR @ truth.rotation, truth.translation + trans_m * direction)


def default_rig(
    *,
    lidar_height: float = 1.73,
    cam_height: float = 1.65,
    planar_offset: tuple = (0.3, 0.0),
    extra_rotation: np.ndarray | None = None,
    lidar: LidarModel = LidarModel(),
    intrinsics: CameraIntrinsics = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480),
) -> RigSpec:
    """A forward-looking optical camera rigidly mounted near the LiDAR.

    The nominal camera axes are x-right, y-down, z-forward relative to the
    LiDAR's x-forward, y-left, z-up; ``extra_rotation`` (a 3x3 matrix)
    twists the camera away from that nominal mounting.
    """
    # camera axes expressed in the LiDAR/vehicle frame
    R_lc = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    if extra_rotation is not None:
        R_lc = R_lc @ extra_rotation
    cam_pos_in_lidar = np.array(
        [planar_offset[0], planar_offset[1], cam_height - lidar_height]
    )
    T_lc = RigidTransform(R_lc, cam_pos_in_lidar)  # camera -> LiDAR
    return RigSpec(extrinsic=T_lc.inverse(), lidar_height=lidar_height, intrinsics=intrinsics, lidar=lidar)
