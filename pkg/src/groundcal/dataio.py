"""Dataset directory formats, config parsing, and format round-trips.

Layout of a dataset directory:

    clouds/000000.txt        one "x y z [label]" line per point (labels only
                             in simulator output)
    segments/000000.csv      "frame,x0,y0,x1,y1,strength" per edge segment
    images/000000.pgm        alternative to segments/ (binary or ascii PGM)
    tracks/000001.csv        "u_prev,v_prev,u_cur,v_cur" linking frame i-1 -> i
    odometry_lidar.txt       "timestamp tx ty tz qx qy qz qw" per frame
    odometry_camera.txt      same format (any consistent scale)
    intrinsics.txt           "fx fy cx cy width height"
    truth_extrinsic.txt      optional 4x4 row-major matrix, one row per line

All floats are written with 17 significant digits so that read(write(x))
round-trips exactly. Frame files share zero-padded numeric stems and
timestamps must be strictly increasing.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .edges import EdgeSegment2D
from .geometry import CameraIntrinsics, RigidTransform
from .sim import (
    BoxSpec,
    CylinderSpec,
    FrameBundle,
    LidarModel,
    NoiseSpec,
    RigSpec,
    SceneSpec,
    default_rig,
)


class DatasetLayoutError(ValueError):
    """Missing or malformed dataset files."""


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# quaternions (x, y, z, w)
# ---------------------------------------------------------------------------


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns (x, y, z, w)."""
    trace = float(np.trace(R))
    if trace > 0:
        s = math.sqrt(trace + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    return np.array([x, y, z, w])


def quat_to_rotation(q) -> np.ndarray:
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


# ---------------------------------------------------------------------------
# individual formats
# ---------------------------------------------------------------------------


def write_cloud(path, points: np.ndarray, labels: np.ndarray | None = None) -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w") as f:
        if labels is None:
            for p in points:
                f.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")
        else:
            for p, lab in zip(points, labels):
                f.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])} {int(lab)}\n")


def read_cloud(path):
    """Returns (points (N, 3), labels (N,) or None)."""
    with open(path) as f:
        first = f.readline()
        if not first.strip():
            return np.zeros((0, 3)), None
        ncol = len(first.split())
        f.seek(0)
        data = np.fromfile(f, sep=" ")
    if ncol not in (3, 4) or data.size % ncol:
        raise DatasetLayoutError(f"{path}: expected 3 or 4 columns")
    data = data.reshape(-1, ncol)
    if ncol == 4:
        return data[:, :3], data[:, 3].astype(np.int64)
    return data, None


def write_odometry(path, timestamps, poses) -> None:
    with open(path, "w") as f:
        for ts, pose in zip(timestamps, poses):
            q = rotation_to_quat(pose.rotation)
            t = pose.translation
            fields = [ts, t[0], t[1], t[2], q[0], q[1], q[2], q[3]]
            f.write(" ".join(_fmt(v) for v in fields) + "\n")


def read_odometry(path):
    """Returns (timestamps, poses); validates strictly increasing stamps."""
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 8:
        raise DatasetLayoutError(f"{path}: expected 8 columns (t xyz quat)")
    ts = data[:, 0]
    if np.any(np.diff(ts) <= 0):
        raise DatasetLayoutError(f"{path}: timestamps must be strictly increasing")
    poses = [RigidTransform(quat_to_rotation(row[4:8]), row[1:4]) for row in data]
    return ts, poses


def write_intrinsics(path, k: CameraIntrinsics) -> None:
    with open(path, "w") as f:
        f.write(
            " ".join(_fmt(v) for v in (k.fx, k.fy, k.cx, k.cy)) + f" {k.width} {k.height}\n"
        )


def read_intrinsics(path) -> CameraIntrinsics:
    vals = np.loadtxt(path)
    if vals.size != 6:
        raise DatasetLayoutError(f"{path}: expected 'fx fy cx cy width height'")
    return CameraIntrinsics(
        fx=float(vals[0]), fy=float(vals[1]), cx=float(vals[2]), cy=float(vals[3]),
        width=int(vals[4]), height=int(vals[5]),
    )


def write_extrinsic(path, t: RigidTransform) -> None:
    with open(path, "w") as f:
        for row in t.matrix():
            f.write(" ".join(_fmt(v) for v in row) + "\n")


def read_extrinsic(path) -> RigidTransform:
    M = np.loadtxt(path)
    if M.shape != (4, 4):
        raise DatasetLayoutError(f"{path}: expected a 4x4 matrix")
    return RigidTransform.from_matrix(M)


def write_segments(path, frame_index: int, segments) -> None:
    with open(path, "w") as f:
        f.write("frame,x0,y0,x1,y1,strength\n")
        for s in segments:
            f.write(
                f"{frame_index},{_fmt(s.p0[0])},{_fmt(s.p0[1])},"
                f"{_fmt(s.p1[0])},{_fmt(s.p1[1])},{_fmt(s.strength)}\n"
            )


def read_segments(path) -> list[EdgeSegment2D]:
    out = []
    with open(path) as f:
        header = f.readline()
        if not header.startswith("frame,"):
            raise DatasetLayoutError(f"{path}: missing segment CSV header")
        for line in f:
            if not line.strip():
                continue
            parts = line.split(",")
            out.append(
                EdgeSegment2D(
                    [float(parts[1]), float(parts[2])],
                    [float(parts[3]), float(parts[4])],
                    float(parts[5]),
                )
            )
    return out


def write_tracks(path, tracks: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write("u_prev,v_prev,u_cur,v_cur\n")
        for row in np.asarray(tracks, dtype=float).reshape(-1, 4):
            f.write(",".join(_fmt(v) for v in row) + "\n")


def read_tracks(path) -> np.ndarray:
    with open(path) as f:
        header = f.readline()
        if not header.startswith("u_prev,"):
            raise DatasetLayoutError(f"{path}: missing tracks CSV header")
        rows = [[float(v) for v in line.split(",")] for line in f if line.strip()]
    return np.array(rows, dtype=float).reshape(-1, 4)


def read_pgm(path) -> np.ndarray:
    """Binary (P5) or ASCII (P2) PGM as a float array in [0, 1]."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"P5", b"P2"):
            raise DatasetLayoutError(f"{path}: not a PGM file")

        def next_token():
            tok = b""
            while True:
                ch = f.read(1)
                if not ch:
                    raise DatasetLayoutError(f"{path}: truncated PGM header")
                if ch == b"#":
                    f.readline()
                    continue
                if ch.isspace():
                    if tok:
                        return tok
                    continue
                tok += ch

        w = int(next_token())
        h = int(next_token())
        maxval = int(next_token())
        if magic == b"P5":
            dtype = np.uint8 if maxval < 256 else ">u2"
            img = np.frombuffer(f.read(), dtype=dtype)[: w * h].reshape(h, w)
        else:
            img = np.array(f.read().split(), dtype=float)[: w * h].reshape(h, w)
    return img.astype(float) / maxval


def write_ppm(path, image: np.ndarray) -> None:
    """Binary PPM (P6) with deterministic bytes."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    with open(path, "wb") as f:
        f.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(np.clip(img, 0, 255).astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    root: str
    timestamps: np.ndarray
    lidar_poses: list
    camera_poses: list
    intrinsics: CameraIntrinsics
    truth_extrinsic: RigidTransform | None
    n_frames: int
    has_segments: bool
    has_images: bool
    has_tracks: bool

    def _stem(self, i: int) -> str:
        return f"{i:06d}"

    def cloud(self, i: int):
        return read_cloud(os.path.join(self.root, "clouds", self._stem(i) + ".txt"))

    def segments(self, i: int) -> list[EdgeSegment2D]:
        if self.has_segments:
            return read_segments(os.path.join(self.root, "segments", self._stem(i) + ".csv"))
        from .edges import extract_image_edges

        img = read_pgm(os.path.join(self.root, "images", self._stem(i) + ".pgm"))
        return extract_image_edges(img)

    def tracks(self, i: int) -> np.ndarray | None:
        if not self.has_tracks:
            return None
        path = os.path.join(self.root, "tracks", self._stem(i) + ".csv")
        if not os.path.exists(path):
            return None
        return read_tracks(path)


def write_dataset(out_dir: str, frames: list[FrameBundle], k: CameraIntrinsics,
                  truth_extrinsic: RigidTransform | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("clouds", "segments", "tracks"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    for i, fr in enumerate(frames):
        stem = f"{i:06d}"
        write_cloud(os.path.join(out_dir, "clouds", stem + ".txt"), fr.lidar_points, fr.labels)
        write_segments(os.path.join(out_dir, "segments", stem + ".csv"), i, fr.camera_segments)
        if i > 0:
            write_tracks(os.path.join(out_dir, "tracks", stem + ".csv"), fr.tracks)
    ts = [fr.timestamp for fr in frames]
    write_odometry(os.path.join(out_dir, "odometry_lidar.txt"), ts, [fr.lidar_odometry for fr in frames])
    write_odometry(os.path.join(out_dir, "odometry_camera.txt"), ts, [fr.camera_odometry for fr in frames])
    write_intrinsics(os.path.join(out_dir, "intrinsics.txt"), k)
    if truth_extrinsic is not None:
        write_extrinsic(os.path.join(out_dir, "truth_extrinsic.txt"), truth_extrinsic)


def load_dataset(root: str) -> Dataset:
    """Validate the layout and read the per-sequence files."""
    for name in ("clouds", "odometry_lidar.txt", "odometry_camera.txt", "intrinsics.txt"):
        if not os.path.exists(os.path.join(root, name)):
            raise DatasetLayoutError(f"dataset is missing {name}")
    has_segments = os.path.isdir(os.path.join(root, "segments"))
    has_images = os.path.isdir(os.path.join(root, "images"))
    if not has_segments and not has_images:
        raise DatasetLayoutError("dataset is missing segments/ (or images/)")
    has_tracks = os.path.isdir(os.path.join(root, "tracks"))

    ts_l, lidar_poses = read_odometry(os.path.join(root, "odometry_lidar.txt"))
    ts_c, camera_poses = read_odometry(os.path.join(root, "odometry_camera.txt"))
    if len(ts_l) != len(ts_c) or np.max(np.abs(ts_l - ts_c)) > 1e-9:
        raise DatasetLayoutError("odometry files disagree on frame timestamps")

    cloud_files = sorted(os.listdir(os.path.join(root, "clouds")))
    if len(cloud_files) != len(ts_l):
        raise DatasetLayoutError(
            f"{len(cloud_files)} cloud files but {len(ts_l)} odometry entries"
        )

    truth_path = os.path.join(root, "truth_extrinsic.txt")
    truth = read_extrinsic(truth_path) if os.path.exists(truth_path) else None
    return Dataset(
        root=root,
        timestamps=ts_l,
        lidar_poses=lidar_poses,
        camera_poses=camera_poses,
        intrinsics=read_intrinsics(os.path.join(root, "intrinsics.txt")),
        truth_extrinsic=truth,
        n_frames=len(ts_l),
        has_segments=has_segments,
        has_images=has_images,
        has_tracks=has_tracks,
    )


# ---------------------------------------------------------------------------
# plain-text key = value configs
# ---------------------------------------------------------------------------


def parse_config_text(text: str) -> list[tuple[str, str]]:
    """Ordered (key, value) pairs; '#' starts a comment; keys may repeat."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DatasetLayoutError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_scene_spec(path: str) -> SceneSpec:
    """SceneSpec from a plain-text key = value file (see README for keys)."""
    with open(path) as f:
        pairs = parse_config_text(f.read())

    scalars: dict[str, str] = {}
    waypoints, boxes, cylinders = [], [], []
    for key, value in pairs:
        if key == "waypoint":
            waypoints.append(tuple(float(v) for v in value.split()))
        elif key == "box":
            vals = [float(v) for v in value.split()]
            if len(vals) != 6:
                raise DatasetLayoutError("box expects 'cx cy cz sx sy sz'")
            boxes.append(BoxSpec(center=tuple(vals[:3]), size=tuple(vals[3:])))
        elif key == "cylinder":
            vals = [float(v) for v in value.split()]
            if len(vals) != 5:
                raise DatasetLayoutError("cylinder expects 'cx cy base_z radius height'")
            cylinders.append(
                CylinderSpec(center_xy=(vals[0], vals[1]), base_z=vals[2], radius=vals[3], height=vals[4])
            )
        else:
            scalars[key] = value

    def get(key, default, cast=float):
        return cast(scalars[key]) if key in scalars else default

    lidar = LidarModel(
        beam_count=get("lidar_beams", 15, int),
        elevation_min_deg=get("lidar_elevation_min_deg", -20.0),
        elevation_max_deg=get("lidar_elevation_max_deg", 8.0),
        azimuth_step_deg=get("lidar_azimuth_step_deg", 0.5),
        max_range=get("lidar_max_range", 80.0),
    )
    if "intrinsics" in scalars:
        vals = [float(v) for v in scalars["intrinsics"].split()]
        intr = CameraIntrinsics(vals[0], vals[1], vals[2], vals[3], int(vals[4]), int(vals[5]))
    else:
        intr = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)

    if "extrinsic" in scalars:
        vals = [float(v) for v in scalars["extrinsic"].split()]
        if len(vals) != 12:
            raise DatasetLayoutError("extrinsic expects 12 values (3x4 row-major)")
        M = np.vstack([np.array(vals).reshape(3, 4), [0.0, 0.0, 0.0, 1.0]])
        rig = RigSpec(
            extrinsic=RigidTransform.from_matrix(M),
            lidar_height=get("lidar_height", 1.73),
            intrinsics=intr,
            lidar=lidar,
        )
    else:
        extra = None
        if "cam_extra_rot_deg" in scalars:
            vals = [float(v) for v in scalars["cam_extra_rot_deg"].split()]
            axis = np.array(vals[:3])
            axis /= np.linalg.norm(axis)
            from .geometry import so3_exp

            extra = so3_exp(axis * math.radians(vals[3]))
        offset = (0.3, 0.0)
        if "cam_offset" in scalars:
            offset = tuple(float(v) for v in scalars["cam_offset"].split())
        rig = default_rig(
            lidar_height=get("lidar_height", 1.73),
            cam_height=get("cam_height", 1.65),
            planar_offset=offset,
            extra_rotation=extra,
            lidar=lidar,
            intrinsics=intr,
        )

    noise = NoiseSpec(
        lidar_sigma=get("lidar_sigma", 0.0),
        pixel_sigma=get("pixel_sigma", 0.0),
        odom_sigma_t=get("odom_sigma_t", 0.0),
        odom_sigma_rot=math.radians(get("odom_sigma_rot_deg", 0.0)),
    )
    return SceneSpec(
        rig=rig,
        waypoints=tuple(waypoints) if waypoints else ((0.0, 0.0), (20.0, 0.0)),
        speed=get("speed", 2.0),
        rate_hz=get("rate_hz", 10.0),
        ground_roll_deg=get("ground_roll_deg", 0.0),
        ground_pitch_deg=get("ground_pitch_deg", 0.0),
        boxes=tuple(boxes),
        cylinders=tuple(cylinders),
        noise=noise,
        seed=get("seed", 0, int),
        corridor_half_width=get("corridor_half_width", 1.0),
        tracks_per_frame=get("tracks_per_frame", 50, int),
        edge_samples=get("edge_samples", 65, int),
        min_segment_px=get("min_segment_px", 10.0),
    )


# ---------------------------------------------------------------------------
# KITTI ingestion (optional adapter; untested without user-supplied data)
# ---------------------------------------------------------------------------


def read_kitti_velodyne(path) -> np.ndarray:
    """KITTI velodyne scan: packed float32 x, y, z, intensity records."""
    data = np.fromfile(path, dtype=np.float32)
    if data.size % 4:
        raise DatasetLayoutError(f"{path}: not a velodyne float32 x,y,z,i file")
    return data.reshape(-1, 4)[:, :3].astype(float)


def read_kitti_calib(path) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            if ":" not in line:
                continue
            key, value = line.split(":", 1)
            try:
                out[key.strip()] = np.array([float(v) for v in value.split()])
            except ValueError:
                continue
    return out


def convert_kitti(kitti_dir: str, out_dir: str) -> None:
    """Map a KITTI raw-style directory onto the dataset layout.

    Converts velodyne binary scans and the velo-to-cam / cam-to-cam calib
    files; odometry must be supplied separately (KITTI raw ground truth
    poses are not bundled here).
    """
    velo_dir = os.path.join(kitti_dir, "velodyne_points", "data")
    if not os.path.isdir(velo_dir):
        raise DatasetLayoutError(f"{kitti_dir}: no velodyne_points/data directory")
    os.makedirs(os.path.join(out_dir, "clouds"), exist_ok=True)
    for i, name in enumerate(sorted(os.listdir(velo_dir))):
        pts = read_kitti_velodyne(os.path.join(velo_dir, name))
        write_cloud(os.path.join(out_dir, "clouds", f"{i:06d}.txt"), pts)

    cam_calib = os.path.join(kitti_dir, "calib_cam_to_cam.txt")
    if os.path.exists(cam_calib):
        calib = read_kitti_calib(cam_calib)
        if "P_rect_02" in calib and "S_rect_02" in calib:
            P = calib["P_rect_02"].reshape(3, 4)
            w, h = calib["S_rect_02"]
            write_intrinsics(
                os.path.join(out_dir, "intrinsics.txt"),
                CameraIntrinsics(P[0, 0], P[1, 1], P[0, 2], P[1, 2], int(w), int(h)),
            )
    velo_calib = os.path.join(kitti_dir, "calib_velo_to_cam.txt")
    if os.path.exists(velo_calib):
        calib = read_kitti_calib(velo_calib)
        if "R" in calib and "T" in calib:
            write_extrinsic(
                os.path.join(out_dir, "truth_extrinsic.txt"),
                RigidTransform(calib["R"].reshape(3, 3), calib["T"].reshape(3)),
            )

    missing = [
        name
        for name in ("odometry_lidar.txt", "odometry_camera.txt")
        if not os.path.exists(os.path.join(out_dir, name))
    ]
    if not any(
        os.path.isdir(os.path.join(out_dir, d)) for d in ("segments", "images")
    ):
        missing.append("segments/ (or images/)")
    if missing:
        raise DatasetLayoutError(
            "KITTI conversion wrote clouds/intrinsics/truth; still missing: "
            + ", ".join(missing)
        )
