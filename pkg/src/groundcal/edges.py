"""2D image edge segments, 3D occlusion edge points, and their association.

The image detector is a deterministic gradient chainer: Sobel gradients,
hysteresis thresholding, non-maximum suppression with parabolic subpixel
refinement, greedy walking along the edge tangent, and least-squares line
fits split wherever a chain bends. Precomputed segments from an external
detector can be ingested through the dataset layer instead.

Occlusion edges are extracted from the viewpoint of the CAMERA: non-ground
cluster points are binned by azimuth about the camera's principal axis, and
both the lateral silhouette extremes of each cluster and the points
bounding large per-bin depth gaps are kept. Extracting from the LiDAR
origin instead yields edges that do not coincide with the image edges once
the sensors are offset, which is exactly what the refinement must avoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import CameraIntrinsics, RigidTransform, project_points


class EmptyProjectionError(ValueError):
    """No cluster point projects in front of the camera."""


@dataclass(frozen=True)
class EdgeSegment2D:
    p0: np.ndarray
    p1: np.ndarray
    strength: float

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=float).reshape(2)
        p1 = np.asarray(self.p1, dtype=float).reshape(2)
        if not np.all(np.isfinite(p0)) or not np.all(np.isfinite(p1)):
            raise ValueError("segment endpoints must be finite")
        if np.linalg.norm(p1 - p0) < 1e-9:
            raise ValueError("segment endpoints coincide")
        p0.setflags(write=False)
        p1.setflags(write=False)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def direction(self) -> np.ndarray:
        d = self.p1 - self.p0
        return d / np.linalg.norm(d)


@dataclass(frozen=True)
class EdgePoint3D:
    position: np.ndarray  # LiDAR frame, meters
    cluster_id: int
    kind: str  # occlusion-left | occlusion-right | depth-discontinuity

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        p.setflags(write=False)
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class Correspondence:
    point: EdgePoint3D
    segment: EdgeSegment2D
    pixel_distance: float
    point_index: int
    segment_index: int


@dataclass(frozen=True)
class EdgeConfig:
    high_fraction: float = 0.2
    low_fraction: float = 0.08
    split_distance: float = 1.5
    min_segment_length: float = 10.0


# ---------------------------------------------------------------------------
# image edge extraction
# ---------------------------------------------------------------------------

_STEPS8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _line_fit_moments(sx, sy, sxx, syy, sxy, n):
    """Direction and centroid of a total-least-squares 2D line fit."""
    mx, my = sx / n, sy / n
    cxx = sxx / n - mx * mx
    cyy = syy / n - my * my
    cxy = sxy / n - mx * my
    # dominant eigenvector of the 2x2 covariance
    tr = cxx + cyy
    det = cxx * cyy - cxy * cxy
    disc = max(0.0, 0.25 * tr * tr - det)
    lam = 0.5 * tr + math.sqrt(disc)
    if abs(cxy) > 1e-15:
        d = np.array([lam - cyy, cxy])
    elif cxx >= cyy:
        d = np.array([1.0, 0.0])
    else:
        d = np.array([0.0, 1.0])
    norm = np.linalg.norm(d)
    if norm < 1e-15:
        d = np.array([1.0, 0.0])
        norm = 1.0
    return d / norm, np.array([mx, my])


def _split_chain(points: np.ndarray, split_distance: float):
    """Greedy prefix runs of a chain that stay within split_distance of a line."""
    runs = []
    start = 0
    n = len(points)
    while start < n:
        end = min(start + 2, n)
        while end < n:
            seg = points[start : end + 1]
            d, c = _line_fit_moments(
                seg[:, 0].sum(), seg[:, 1].sum(),
                (seg[:, 0] ** 2).sum(), (seg[:, 1] ** 2).sum(),
                (seg[:, 0] * seg[:, 1]).sum(), len(seg),
            )
            normal = np.array([-d[1], d[0]])
            if np.max(np.abs((seg - c) @ normal)) > split_distance:
                break
            end += 1
        runs.append((start, end))
        start = end
    return runs


def extract_image_edges(image, cfg: EdgeConfig = EdgeConfig()) -> list[EdgeSegment2D]:
    """Straight edge segments of a grayscale image.

    Deterministic: no randomness anywhere in the chain. Returns segments
    with subpixel endpoints in (x, y) pixel coordinates; an empty list is
    a valid result for featureless images.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or img.shape[0] < 32 or img.shape[1] < 32:
        raise ValueError("image must be a 2D array of at least 32x32 pixels")

    gx = ndimage.sobel(img, axis=1, mode="reflect")
    gy = ndimage.sobel(img, axis=0, mode="reflect")
    mag = np.hypot(gx, gy)
    mag[0, :] = mag[-1, :] = 0.0
    mag[:, 0] = mag[:, -1] = 0.0
    peak = float(mag.max())
    if peak <= 0.0:
        return []

    strong = mag >= cfg.high_fraction * peak
    weak = mag >= cfg.low_fraction * peak
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    keep = np.unique(labels[strong])
    edge_mask = np.isin(labels, keep[keep > 0])

    # non-maximum suppression along the quantized gradient direction
    rows, cols = np.nonzero(edge_mask)
    angle = np.arctan2(gy[rows, cols], gx[rows, cols])
    octant = np.round(angle / (math.pi / 4.0)).astype(int) % 4
    offs = np.array([(0, 1), (1, 1), (1, 0), (1, -1)])  # (dy, dx) per octant
    dy, dx = offs[octant, 0], offs[octant, 1]
    m0 = mag[rows, cols]
    m_plus = mag[rows + dy, cols + dx]
    m_minus = mag[rows - dy, cols - dx]
    keep_nms = (m0 > m_minus) & (m0 >= m_plus)
    rows, cols = rows[keep_nms], cols[keep_nms]
    m0, m_plus, m_minus = m0[keep_nms], m_plus[keep_nms], m_minus[keep_nms]
    dy, dx = dy[keep_nms], dx[keep_nms]

    denom = m_minus - 2.0 * m0 + m_plus
    delta = np.where(np.abs(denom) > 1e-12, 0.5 * (m_minus - m_plus) / denom, 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    sub_x = cols + delta * dx
    sub_y = rows + delta * dy

    thin = np.zeros_like(edge_mask)
    thin[rows, cols] = True
    index_of = {}
    for i in range(len(rows)):
        index_of[(int(rows[i]), int(cols[i]))] = i

    order = np.lexsort((cols, rows, -m0))
    used = np.zeros(len(rows), dtype=bool)

    def walk(i0: int, flip: bool):
        chain = []
        cur = i0
        prev_dir = None
        while True:
            chain.append(cur)
            used[cur] = True
            r, c = int(rows[cur]), int(cols[cur])
            tangent = np.array([-gy[r, c], gx[r, c]])  # (dx, dy) along the edge
            tn = np.linalg.norm(tangent)
            if tn > 0:
                tangent /= tn
            if flip and prev_dir is None:
                tangent = -tangent
            step_dir = prev_dir if prev_dir is not None else tangent
            best, best_dot = -1, 0.25
            for sdy, sdx in _STEPS8:
                nb = index_of.get((r + sdy, c + sdx))
                if nb is None or used[nb]:
                    continue
                d = np.array([sdx, sdy], dtype=float)
                d /= np.linalg.norm(d)
                dot = float(d @ step_dir)
                if dot > best_dot:
                    best, best_dot = nb, dot
            if best < 0:
                # allow one shared terminal pixel (a corner/junction claimed by
                # another chain) when it is a near-straight continuation
                term, term_dot = -1, 0.85
                for sdy, sdx in _STEPS8:
                    nb = index_of.get((r + sdy, c + sdx))
                    if nb is None or nb in chain:
                        continue
                    d = np.array([sdx, sdy], dtype=float)
                    d /= np.linalg.norm(d)
                    dot = float(d @ step_dir)
                    if dot > term_dot:
                        term, term_dot = nb, dot
                if term >= 0:
                    chain.append(term)
                return chain
            nr, nc = int(rows[best]), int(cols[best])
            d = np.array([nc - c, nr - r], dtype=float)
            prev_dir = d / np.linalg.norm(d)
            cur = best

    segments: list[tuple] = []
    h, w = img.shape
    for i0 in order:
        if used[i0]:
            continue
        forward = walk(int(i0), flip=False)
        used[forward[0]] = False  # allow the anchor to seed the reverse walk
        backward = walk(forward[0], flip=True)
        chain_idx = backward[:0:-1] + forward
        if len(chain_idx) < 2:
            continue
        chain = np.column_stack([sub_x[chain_idx], sub_y[chain_idx]])
        strengths = m0[chain_idx]
        for a, b in _split_chain(chain, cfg.split_distance):
            run = chain[a:b]
            if len(run) < 2:
                continue
            d, c = _line_fit_moments(
                run[:, 0].sum(), run[:, 1].sum(),
                (run[:, 0] ** 2).sum(), (run[:, 1] ** 2).sum(),
                (run[:, 0] * run[:, 1]).sum(), len(run),
            )
            t = (run - c) @ d
            p0 = c + t.min() * d
            p1 = c + t.max() * d
            if np.linalg.norm(p1 - p0) < cfg.min_segment_length:
                continue
            segments.append((p0, p1, float(strengths[a:b].mean())))

    # extend segment ends over on-line edge points claimed by other chains
    # (corner pixels are shared between the two sides that meet there)
    all_pts = np.column_stack([sub_x, sub_y])
    out: list[EdgeSegment2D] = []
    for p0, p1, strength in segments:
        d = p1 - p0
        length = np.linalg.norm(d)
        d = d / length
        normal = np.array([-d[1], d[0]])
        rel = all_pts - p0
        lat = np.abs(rel @ normal) <= 0.75
        t = rel @ d
        near = lat & (t >= -3.0) & (t <= length + 3.0)
        if np.any(near):
            t_lo = min(float(t[near].min()), 0.0)
            t_hi = max(float(t[near].max()), float(length))
            p0, p1 = p0 + t_lo * d, p0 + t_hi * d
        p0 = np.clip(p0, [0, 0], [w - 1, h - 1])
        p1 = np.clip(p1, [0, 0], [w - 1, h - 1])
        if np.linalg.norm(p1 - p0) < 1e-9:
            continue
        out.append(EdgeSegment2D(p0, p1, strength))
    return out


# ---------------------------------------------------------------------------
# occlusion edge extraction
# ---------------------------------------------------------------------------


def extract_occlusion_edges(
    seg,
    t_init: RigidTransform,
    k: CameraIntrinsics,
    *,
    azimuth_bin_deg: float = 0.25,
    depth_gap: float = 0.5,
    elevation_band_deg: float = 0.25,
) -> list[EdgePoint3D]:
    """Cluster points on occlusion boundaries as seen from the camera.

    ``t_init`` maps LiDAR-frame points into the camera frame. Two rules
    select points, both over a polar grid about the principal axis:

    - lateral silhouette extremes: per cluster and per elevation band, the
      minimum- and maximum-azimuth points (the vertical silhouette
      columns of each object);
    - depth discontinuities: inside each azimuth bin, both members of any
      elevation-adjacent point pair whose camera range differs by more
      than ``depth_gap`` (occlusion boundaries, including object tops
      against farther structure).

    Returned positions are the original LiDAR-frame coordinates.
    """
    if not seg.clusters:
        raise EmptyProjectionError("segmented cloud has no clusters")
    bin_rad = math.radians(azimuth_bin_deg)
    band_rad = math.radians(elevation_band_deg)

    all_idx = np.concatenate(seg.clusters)
    cluster_of = np.concatenate(
        [np.full(len(c), ci, dtype=np.int64) for ci, c in enumerate(seg.clusters)]
    )
    pts = seg.non_ground[all_idx]
    cam = t_init.apply(pts)
    front = cam[:, 2] > 1e-6
    if not np.any(front):
        raise EmptyProjectionError("every cluster point is behind the camera")

    az = np.arctan2(cam[:, 0], cam[:, 2])
    el = np.arctan2(-cam[:, 1], np.hypot(cam[:, 0], cam[:, 2]))
    rng_ = np.linalg.norm(cam, axis=1)
    bins = np.floor(az / bin_rad).astype(np.int64)
    bands = np.floor(el / band_rad).astype(np.int64)

    kinds = {}

    def mark(sel_index: int, kind: str):
        key = int(all_idx[sel_index])
        prio = {"occlusion-left": 0, "occlusion-right": 1, "depth-discontinuity": 2}
        if key not in kinds or prio[kind] < prio[kinds[key][0]]:
            kinds[key] = (kind, int(cluster_of[sel_index]))

    for ci in range(len(seg.clusters)):
        ids = np.flatnonzero((cluster_of == ci) & front)
        if ids.size == 0:
            continue
        for band in np.unique(bands[ids]):
            row = ids[bands[ids] == band]
            a = az[row]
            mark(int(row[np.argmin(a)]), "occlusion-left")
            mark(int(row[np.argmax(a)]), "occlusion-right")

    fid = np.flatnonzero(front)
    order = np.lexsort((rng_[fid], el[fid], bins[fid]))
    fid = fid[order]
    b = bins[fid]
    r = rng_[fid]
    same_bin = b[1:] == b[:-1]
    gap = np.abs(r[1:] - r[:-1]) > depth_gap
    hit = same_bin & gap
    for i in np.flatnonzero(hit):
        mark(int(fid[i]), "depth-discontinuity")
        mark(int(fid[i + 1]), "depth-discontinuity")

    ordered = sorted(kinds.items(), key=lambda kv: (kv[1][1], kv[0]))
    return [
        EdgePoint3D(position=seg.non_ground[idx], cluster_id=cid, kind=kind)
        for idx, (kind, cid) in ordered
    ]


# ---------------------------------------------------------------------------
# association
# ---------------------------------------------------------------------------


def _local_directions(uv: np.ndarray, groups: np.ndarray, k_neighbors: int = 4):
    """Per-point dominant 2D direction among same-group projected points."""
    dirs = np.full((len(uv), 2), np.nan)
    for g in np.unique(groups):
        ids = np.flatnonzero(groups == g)
        if len(ids) < 3:
            continue
        sub = uv[ids]
        d2 = np.sum((sub[:, None, :] - sub[None, :, :]) ** 2, axis=2)
        kth = min(k_neighbors, len(ids) - 1)
        nn = np.argpartition(d2, kth, axis=1)[:, : kth + 1]
        for row, i in enumerate(ids):
            pts = sub[nn[row]]
            c = pts.mean(axis=0)
            x = pts - c
            cxx = float(x[:, 0] @ x[:, 0])
            cyy = float(x[:, 1] @ x[:, 1])
            cxy = float(x[:, 0] @ x[:, 1])
            tr = cxx + cyy
            disc = max(0.0, 0.25 * tr * tr - (cxx * cyy - cxy * cxy))
            lam = 0.5 * tr + math.sqrt(disc)
            if abs(cxy) > 1e-15:
                v = np.array([lam - cyy, cxy])
            else:
                v = np.array([1.0, 0.0]) if cxx >= cyy else np.array([0.0, 1.0])
            n = np.linalg.norm(v)
            if n > 1e-12:
                dirs[i] = v / n
    return dirs


def associate(
    points: list[EdgePoint3D],
    segments: list[EdgeSegment2D],
    t: RigidTransform,
    k: CameraIntrinsics,
    radius: float,
    *,
    max_angle_deg: float = 30.0,
    extension: float = 0.1,
) -> list[Correspondence]:
    """Pair 3D edge points with the nearest compatible 2D segment line.

    A pairing requires the perpendicular foot to fall inside the segment
    extended by ``extension`` per side, a perpendicular distance within
    ``radius`` pixels, and the point's projected local silhouette
    direction within ``max_angle_deg`` of the segment direction. Ties
    within 1e-9 px go to the lower segment index.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    if not points or not segments:
        return []

    pos = np.array([p.position for p in points])
    uv, _, valid = project_points(k, t, pos)

    p0 = np.array([s.p0 for s in segments])
    d = np.array([s.direction for s in segments])
    lengths = np.array([s.length for s in segments])
    normal = np.column_stack([-d[:, 1], d[:, 0]])

    group_ids: dict[tuple, int] = {}
    groups = np.array(
        [group_ids.setdefault((p.cluster_id, p.kind), len(group_ids)) for p in points],
        dtype=np.int64,
    )
    local = _local_directions(np.nan_to_num(uv), groups)
    cos_gate = math.cos(math.radians(max_angle_deg))

    out: list[Correspondence] = []
    rel0 = uv[:, None, :] - p0[None, :, :]  # (N, S, 2)
    perp = np.abs(np.einsum("nsk,sk->ns", rel0, normal))
    tpar = np.einsum("nsk,sk->ns", rel0, d)
    ok_foot = (tpar >= -extension * lengths) & (tpar <= (1.0 + extension) * lengths)
    ok_rad = perp <= radius
    align = np.abs(np.einsum("nk,sk->ns", np.nan_to_num(local), d))
    has_dir = np.isfinite(local[:, 0])
    ok_dir = np.where(has_dir[:, None], align >= cos_gate, True)

    ok = ok_foot & ok_rad & ok_dir & valid[:, None]
    for i in range(len(points)):
        cand = np.flatnonzero(ok[i])
        if cand.size == 0:
            continue
        dmin = perp[i, cand].min()
        j = int(cand[perp[i, cand] <= dmin + 1e-9][0])
        out.append(
            Correspondence(
                point=points[i],
                segment=segments[j],
                pixel_distance=float(perp[i, j]),
                point_index=i,
                segment_index=j,
            )
        )
    return out
