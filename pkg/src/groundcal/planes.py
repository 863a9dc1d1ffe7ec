"""Seeded RANSAC plane fitting and the sliding-window ground-alignment test.

RANSAC determinism contract: all 3-point hypotheses are generated up front
from the config seed and indexed 0..max_iterations-1. The winner is the
hypothesis with the most inliers and, on ties, the lowest index, so the
result cannot depend on evaluation order or thread scheduling. When the
number of distinct point triples is within the iteration budget the
generator enumerates every triple instead of sampling, which makes the
search exhaustive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .geometry import Plane

_COLLINEAR_EPS = 1e-9
_HYPOTHESIS_CHUNK = 64


class DegenerateGeometryError(ValueError):
    """Too few points, all-collinear samples, or consensus below the floor."""


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = 0.05
    max_iterations: int = 500
    min_inlier_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.inlier_threshold <= 0.0:
            raise ValueError("inlier_threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not (0.0 < self.min_inlier_fraction <= 1.0):
            raise ValueError("min_inlier_fraction must be in (0, 1]")


@dataclass(frozen=True)
class AlignmentWindow:
    window_length: int = 10
    epsilon: float = 0.5

    def __post_init__(self):
        if self.window_length < 2:
            raise ValueError("window_length must be at least 2")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")


def _sample_triples(n_points: int, cfg: RansacConfig) -> np.ndarray:
    """Hypothesis index triples, enumerated when the budget allows."""
    n_triples = math.comb(n_points, 3)
    if n_triples <= cfg.max_iterations:
        return np.array(list(combinations(range(n_points), 3)), dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    triples = np.empty((cfg.max_iterations, 3), dtype=np.int64)
    for i in range(cfg.max_iterations):
        triples[i] = rng.choice(n_points, size=3, replace=False)
    return triples


def fit_plane_lsq(points: np.ndarray) -> Plane:
    """Least-squares plane: smallest eigenvector of the point scatter."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]
    return Plane(normal, -float(normal @ centroid))


def ransac_plane(points, cfg: RansacConfig) -> tuple[Plane, np.ndarray]:
    """Largest-consensus plane over seeded 3-point hypotheses.

    Returns the least-squares refit of the winning hypothesis's inlier set
    together with the inlier indices. Deterministic for a fixed seed.

    Raises DegenerateGeometryError when fewer than 3 points are given, every
    sampled triple is collinear, or the best inlier fraction falls below
    ``cfg.min_inlier_fraction``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    if n < 3:
        raise DegenerateGeometryError(f"need at least 3 points, got {n}")

    triples = _sample_triples(n, cfg)
    p0 = pts[triples[:, 0]]
    edges1 = pts[triples[:, 1]] - p0
    edges2 = pts[triples[:, 2]] - p0
    normals = np.cross(edges1, edges2)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms > _COLLINEAR_EPS
    if not np.any(valid):
        raise DegenerateGeometryError("all hypothesis triples are collinear")

    unit = np.zeros_like(normals)
    unit[valid] = normals[valid] / norms[valid, None]
    offsets = -np.einsum("ij,ij->i", unit, p0)

    counts = np.full(triples.shape[0], -1, dtype=np.int64)
    for start in range(0, triples.shape[0], _HYPOTHESIS_CHUNK):
        stop = min(start + _HYPOTHESIS_CHUNK, triples.shape[0])
        block = np.abs(pts @ unit[start:stop].T + offsets[start:stop])
        counts[start:stop] = np.count_nonzero(block <= cfg.inlier_threshold, axis=0)
    counts[~valid] = -1

    best = int(np.argmax(counts))  # ties resolve to the lowest index
    if counts[best] < cfg.min_inlier_fraction * n:
        raise DegenerateGeometryError(
            f"best consensus {counts[best]}/{n} below min fraction {cfg.min_inlier_fraction}"
        )

    dist = np.abs(pts @ unit[best] + offsets[best])
    inliers = np.flatnonzero(dist <= cfg.inlier_threshold)
    return fit_plane_lsq(pts[inliers]), inliers


def alignment_check(directions, planes, w: AlignmentWindow) -> bool:
    """True when recent motion stays aligned with the ground plane.

    Sums |v_t . n_t| over the most recent ``w.window_length`` frames and
    compares against ``w.epsilon``. Absolute values prevent oscillating
    motion from cancelling the sum.
    """
    dirs = np.asarray(directions, dtype=float).reshape(-1, 3)
    if dirs.shape[0] != len(planes):
        raise ValueError(
            f"directions ({dirs.shape[0]}) and planes ({len(planes)}) must have equal length"
        )
    if dirs.shape[0] < w.window_length:
        raise ValueError(
            f"need at least window_length={w.window_length} samples, got {dirs.shape[0]}"
        )
    total = 0.0
    for i in range(dirs.shape[0] - w.window_length, dirs.shape[0]):
        total += abs(float(dirs[i] @ planes[i].normal))
    return total <= w.epsilon
