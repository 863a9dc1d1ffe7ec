"""End-to-end calibration driver.

Runs the two stages over a frame sequence: windowed ground-plane pose
estimation on both sensor streams (chained into the initial extrinsic),
then occlusion-edge extraction on the accumulated cloud and point-to-line
refinement against the reference frame's image segments. Works off any
sequence source: a dataset directory or in-memory simulator frames.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .edges import extract_occlusion_edges
from .geometry import CameraIntrinsics, RigidTransform, compose, euler_zyx
from .ground_init import (
    DegenerateMotionError,
    InsufficientTracksError,
    MotionSample,
    ZeroPathError,
    chain_initial_extrinsic,
    estimate_scale,
    segment_ground,
    two_view_ground_reconstruction,
    windowed_ground_pose,
)
from .planes import AlignmentWindow, DegenerateGeometryError, RansacConfig, ransac_plane
from .refine import RefinementResult, RobustKernel, SolverConfig, refine_extrinsic


class AlignmentExhaustedError(RuntimeError):
    """Ground alignment never achieved over the whole sequence."""


@dataclass
class PipelineConfig:
    window_length: int = 10
    alignment_epsilon: float | None = None  # default 0.05 * window_length
    ransac_iterations: int = 500
    ransac_threshold_lidar: float = 0.05
    ransac_threshold_camera: float = 0.03
    min_inlier_fraction: float = 0.3
    accumulation_frames: int = 10
    association_radius_px: float = 20.0
    huber_delta_px: float = 3.0
    max_outer_iterations: int = 10
    max_inner_iterations: int = 50
    cell_size: float = 0.3
    depth_gap_m: float = 0.5
    azimuth_bin_deg: float = 0.25
    min_segment_length_px: float = 10.0
    two_view_threshold_px: float = 1.0
    seed: int = 0
    use_gp_init: bool = True
    initial_extrinsic: RigidTransform | None = None
    reference_frame: int | None = None

    def epsilon(self) -> float:
        return self.alignment_epsilon if self.alignment_epsilon is not None else 0.05 * self.window_length

    @staticmethod
    def from_pairs(pairs) -> "PipelineConfig":
        cfg = PipelineConfig()
        casts = {
            "window_length": int, "ransac_iterations": int, "accumulation_frames": int,
            "max_outer_iterations": int, "max_inner_iterations": int, "seed": int,
            "reference_frame": int,
        }
        for key, value in pairs:
            if key == "initial_extrinsic":
                from .dataio import read_extrinsic

                cfg.initial_extrinsic = read_extrinsic(value)
            elif hasattr(cfg, key):
                setattr(cfg, key, casts.get(key, float)(value))
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cfg


@dataclass
class CalibrationReport:
    translation_error_xyz: tuple | None  # centimeters per axis
    rotation_error_rpy: tuple | None  # degrees (roll, pitch, yaw)
    timing: dict
    converged: bool
    correspondence_count: int
    reference_frame: int

    def to_dict(self) -> dict:
        return {
            "translation_error_cm": list(self.translation_error_xyz) if self.translation_error_xyz else None,
            "rotation_error_deg": list(self.rotation_error_rpy) if self.rotation_error_rpy else None,
            "timing_s": dict(self.timing),
            "converged": bool(self.converged),
            "correspondence_count": int(self.correspondence_count),
            "reference_frame": int(self.reference_frame),
        }


@dataclass
class PipelineResult:
    estimate: RigidTransform
    report: CalibrationReport
    initial_extrinsic: RigidTransform
    refinement: RefinementResult
    reference_frame: int


@dataclass
class SequenceView:
    """Uniform access to a calibration sequence, on disk or in memory."""

    timestamps: np.ndarray
    intrinsics: CameraIntrinsics
    lidar_poses: list
    camera_poses: list
    cloud_fn: object  # i -> (N, 3) LiDAR-frame points
    segments_fn: object  # i -> list[EdgeSegment2D]
    tracks_fn: object  # i -> (M, 4) or None
    truth_extrinsic: RigidTransform | None = None

    @property
    def n_frames(self) -> int:
        return len(self.timestamps)

    @staticmethod
    def from_dataset(ds) -> "SequenceView":
        return SequenceView(
            timestamps=ds.timestamps,
            intrinsics=ds.intrinsics,
            lidar_poses=ds.lidar_poses,
            camera_poses=ds.camera_poses,
            cloud_fn=lambda i: ds.cloud(i)[0],
            segments_fn=ds.segments,
            tracks_fn=ds.tracks,
            truth_extrinsic=ds.truth_extrinsic,
        )

    @staticmethod
    def from_frames(frames, intrinsics, truth_extrinsic=None) -> "SequenceView":
        return SequenceView(
            timestamps=np.array([f.timestamp for f in frames]),
            intrinsics=intrinsics,
            lidar_poses=[f.lidar_odometry for f in frames],
            camera_poses=[f.camera_odometry for f in frames],
            cloud_fn=lambda i: frames[i].lidar_points,
            segments_fn=lambda i: frames[i].camera_segments,
            tracks_fn=lambda i: frames[i].tracks if frames[i].tracks.size else None,
            truth_extrinsic=truth_extrinsic,
        )


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def evaluate_calibration(estimate: RigidTransform, truth: RigidTransform):
    """Per-axis translation error (cm) and roll/pitch/yaw error (degrees).

    Errors are read off ``inverse(truth) * estimate``; rotation uses a ZYX
    Euler extraction and reports absolute values.
    """
    delta = compose(truth.inverse(), estimate)
    trans_cm = tuple(float(abs(v)) * 100.0 for v in delta.translation)
    roll, pitch, yaw = euler_zyx(delta.rotation)
    rot_deg = tuple(abs(math.degrees(a)) for a in (roll, pitch, yaw))
    return trans_cm, rot_deg


def render_overlay(points, image_size, t: RigidTransform, k: CameraIntrinsics, background=None):
    """Depth-colored 2 px dots of projected points over a background.

    Returns an (H, W, 3) uint8 image; deterministic for fixed inputs.
    """
    w, h = image_size
    if background is not None:
        img = np.asarray(background)
        if img.ndim == 2:
            img = np.stack([img, img, img], axis=-1)
        img = np.clip(img * 255.0 if img.dtype != np.uint8 else img, 0, 255).astype(np.uint8).copy()
    else:
        img = np.zeros((h, w, 3), dtype=np.uint8)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        return img

    from .geometry import project_points

    uv, z, valid = project_points(k, t, pts)
    sel = valid & (uv[:, 0] >= 0) & (uv[:, 0] < w - 1) & (uv[:, 1] >= 0) & (uv[:, 1] < h - 1)
    if not np.any(sel):
        return img
    uv, z = uv[sel], z[sel]
    z_lo, z_hi = float(z.min()), float(z.max())
    span = max(z_hi - z_lo, 1e-9)
    tt = (z - z_lo) / span
    colors = np.column_stack(
        [255.0 * (1.0 - tt), 64.0 * np.ones_like(tt), 255.0 * tt]
    ).astype(np.uint8)
    order = np.argsort(-z, kind="stable")  # far first so near dots win
    xs = np.floor(uv[order, 0]).astype(int)
    ys = np.floor(uv[order, 1]).astype(int)
    cs = colors[order]
    for dx in (0, 1):
        for dy in (0, 1):
            img[ys + dy, xs + dx] = cs
    return img


# ---------------------------------------------------------------------------
# ground-plane initialization over a sequence
# ---------------------------------------------------------------------------


def _relative(pose_ref: RigidTransform, pose_j: RigidTransform) -> RigidTransform:
    return compose(pose_ref.inverse(), pose_j)


def _ground_init(view: SequenceView, cfg: PipelineConfig):
    w = AlignmentWindow(cfg.window_length, cfg.epsilon())
    lidar_cfg = RansacConfig(
        inlier_threshold=cfg.ransac_threshold_lidar,
        max_iterations=cfg.ransac_iterations,
        min_inlier_fraction=cfg.min_inlier_fraction,
        seed=cfg.seed,
    )
    cam_cfg = RansacConfig(
        inlier_threshold=cfg.ransac_threshold_camera,
        max_iterations=cfg.ransac_iterations,
        min_inlier_fraction=cfg.min_inlier_fraction,
        seed=cfg.seed + 1,
    )

    entries = []  # per usable frame: directions and planes in that frame's sensor frames
    for k in range(1, view.n_frames):
        lp_prev, lp = view.lidar_poses[k - 1], view.lidar_poses[k]
        cp_prev, cp = view.camera_poses[k - 1], view.camera_poses[k]

        lidar_delta = lp.translation - lp_prev.translation
        cam_delta = cp.translation - cp_prev.translation
        if np.linalg.norm(lidar_delta) < 1e-6 or np.linalg.norm(cam_delta) < 1e-6:
            continue  # stationary frame, skipped from the window
        lidar_dir = lp.rotation.T @ (lidar_delta / np.linalg.norm(lidar_delta))
        cam_dir = cp.rotation.T @ (cam_delta / np.linalg.norm(cam_delta))

        try:
            lidar_plane, _ = ransac_plane(view.cloud_fn(k), lidar_cfg)
        except DegenerateGeometryError:
            continue

        tracks = view.tracks_fn(k)
        if tracks is None or len(tracks) < 8:
            continue
        try:
            t12, pts = two_view_ground_reconstruction(
                tracks, view.intrinsics, seed=cfg.seed, threshold_px=cfg.two_view_threshold_px
            )
        except (InsufficientTracksError, DegenerateMotionError):
            continue
        mu = float(np.linalg.norm(cam_delta))  # camera-odometry units per unit baseline
        try:
            cam_plane_prev, _ = ransac_plane(pts * mu, cam_cfg)
        except DegenerateGeometryError:
            continue
        # re-express the plane from camera k-1 into camera k
        t12_scaled = RigidTransform(t12.rotation, mu * t12.translation)
        cam_plane = cam_plane_prev.transformed(t12_scaled.inverse())

        entries.append(
            {
                "frame": k,
                "lidar_dir": lidar_dir,
                "lidar_plane": lidar_plane,
                "cam_dir": cam_dir,
                "cam_plane": cam_plane,
            }
        )

        if len(entries) < cfg.window_length:
            continue

        window = entries[-cfg.window_length:]
        ref = window[-1]["frame"]
        lp_ref, cp_ref = view.lidar_poses[ref], view.camera_poses[ref]

        lidar_samples, lidar_planes = [], []
        cam_samples, cam_planes = [], []
        for e in window:
            j = e["frame"]
            rel_l = _relative(lp_ref, view.lidar_poses[j])
            rel_c = _relative(cp_ref, view.camera_poses[j])
            dir_l = rel_l.rotation @ e["lidar_dir"]
            dir_c = rel_c.rotation @ e["cam_dir"]
            lidar_samples.append(
                MotionSample(view.timestamps[j], view.lidar_poses[j].translation, dir_l, dir_l)
            )
            cam_samples.append(
                MotionSample(view.timestamps[j], view.camera_poses[j].translation, dir_c, dir_c)
            )
            lidar_planes.append(e["lidar_plane"].transformed(rel_l))
            cam_planes.append(e["cam_plane"].transformed(rel_c))

        frame_ids = [e["frame"] for e in window]
        try:
            scale = estimate_scale(
                [view.camera_poses[j].translation for j in frame_ids],
                [view.lidar_poses[j].translation for j in frame_ids],
            )
        except ZeroPathError:
            continue

        lidar_pose = windowed_ground_pose(lidar_samples, lidar_planes, w, 1.0)
        cam_pose = windowed_ground_pose(cam_samples, cam_planes, w, scale.s)
        if lidar_pose is None or cam_pose is None:
            continue

        t_init = chain_initial_extrinsic(
            cam_pose,
            lidar_pose,
            [m.direction for m in cam_samples],
            [m.direction for m in lidar_samples],
        )
        return t_init, ref

    raise AlignmentExhaustedError(
        "ground alignment never achieved over the sequence; drive on flatter ground "
        "or extend the recording"
    )


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------


def run_calibration(view: SequenceView, cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Calibrate a sequence; raises typed errors on unrecoverable failures."""
    t_start = time.perf_counter()

    if cfg.use_gp_init:
        t_init, ref = _ground_init(view, cfg)
    else:
        t_init = cfg.initial_extrinsic if cfg.initial_extrinsic is not None else RigidTransform.identity()
        ref = cfg.reference_frame if cfg.reference_frame is not None else min(
            cfg.window_length, view.n_frames - 1
        )
    t_init_done = time.perf_counter()

    # accumulate scans into the reference LiDAR frame through odometry
    ref_pose = view.lidar_poses[ref]
    pieces = []
    start = max(0, ref - cfg.accumulation_frames + 1)
    for j in range(start, ref + 1):
        rel = _relative(ref_pose, view.lidar_poses[j])
        pieces.append(rel.apply(view.cloud_fn(j)))
    accumulated = np.vstack(pieces)

    seg = segment_ground(
        accumulated,
        cell_size=cfg.cell_size,
        ransac=RansacConfig(
            inlier_threshold=cfg.ransac_threshold_lidar,
            max_iterations=cfg.ransac_iterations,
            min_inlier_fraction=cfg.min_inlier_fraction,
            seed=cfg.seed,
        ),
    )
    edge_points = extract_occlusion_edges(
        seg, t_init, view.intrinsics,
        azimuth_bin_deg=cfg.azimuth_bin_deg, depth_gap=cfg.depth_gap_m,
    )
    segments = view.segments_fn(ref)

    refinement = refine_extrinsic(
        edge_points,
        segments,
        t_init,
        view.intrinsics,
        RobustKernel("huber", cfg.huber_delta_px),
        SolverConfig(
            max_outer_iterations=cfg.max_outer_iterations,
            max_inner_iterations=cfg.max_inner_iterations,
        ),
        association_radius=cfg.association_radius_px,
    )
    t_done = time.perf_counter()

    trans_err = rot_err = None
    if view.truth_extrinsic is not None:
        trans_err, rot_err = evaluate_calibration(refinement.extrinsic, view.truth_extrinsic)

    report = CalibrationReport(
        translation_error_xyz=trans_err,
        rotation_error_rpy=rot_err,
        timing={
            "init_guess_s": t_init_done - t_start,
            "calibration_s": t_done - t_init_done,
            "total_s": t_done - t_start,
        },
        converged=refinement.converged,
        correspondence_count=refinement.correspondence_count,
        reference_frame=ref,
    )
    return PipelineResult(
        estimate=refinement.extrinsic,
        report=report,
        initial_extrinsic=t_init,
        refinement=refinement,
        reference_frame=ref,
    )
