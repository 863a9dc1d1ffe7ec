"""Robust point-to-line reprojection refinement of the extrinsic.

Minimizes the perpendicular pixel distance between projected 3D occlusion
edge points and their associated 2D edge lines with Levenberg-Marquardt
over a 6-DoF twist. The estimate is updated multiplicatively on the left,
T <- exp(xi) * T, and the analytic Jacobian is taken at xi = 0 in that
convention. Association is pose-dependent, so an outer loop re-associates
with the current estimate and stops once the correspondence set repeats.

Accumulation into the normal equations sorts the per-correspondence terms
before summing, which makes the result invariant to the order of the
input correspondence list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .edges import associate
from .geometry import CameraIntrinsics, RigidTransform, compose, exp_twist, project


class InsufficientCorrespondencesError(ValueError):
    """Fewer than 6 correspondences available (6-DoF observability)."""


class RankDeficientError(ValueError):
    """Damped normal equations numerically singular (degenerate geometry)."""


@dataclass(frozen=True)
class RobustKernel:
    kind: str = "huber"  # huber | none
    delta: float = 3.0

    def __post_init__(self):
        if self.kind not in ("huber", "none"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "huber" and self.delta <= 0.0:
            raise ValueError("huber delta must be positive")

    def cost(self, r: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return 0.5 * r * r
        a = np.abs(r)
        return np.where(a <= self.delta, 0.5 * r * r, self.delta * a - 0.5 * self.delta**2)

    def weight(self, r: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return np.ones_like(r)
        a = np.abs(r)
        return np.minimum(1.0, self.delta / np.maximum(a, 1e-300))


@dataclass(frozen=True)
class SolverConfig:
    max_outer_iterations: int = 10
    max_inner_iterations: int = 50
    initial_lambda: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    convergence_tol_twist: float = 1e-8
    convergence_tol_cost: float = 1e-10

    def __post_init__(self):
        if min(
            self.max_outer_iterations, self.max_inner_iterations, self.initial_lambda,
            self.lambda_up, self.lambda_down, self.convergence_tol_twist,
            self.convergence_tol_cost,
        ) <= 0:
            raise ValueError("all solver parameters must be positive")
        if not (self.lambda_up > 1.0 > self.lambda_down > 0.0):
            raise ValueError("need lambda_up > 1 > lambda_down > 0")


@dataclass(frozen=True)
class RefinementResult:
    extrinsic: RigidTransform
    final_cost: float
    iterations_used: int
    inlier_count: int
    converged: bool
    correspondence_count: int
    cost_history: list = field(default_factory=list)  # accepted costs per outer round


def _stable_sum(x: np.ndarray) -> float:
    return float(np.sum(np.sort(x)))


def point_to_line_residual(point, segment, t: RigidTransform, k: CameraIntrinsics):
    """Signed perpendicular pixel distance, or None when behind the camera.

    The sign follows the segment's left normal; only the magnitude enters
    the cost.
    """
    pos = getattr(point, "position", point)
    uv = project(k, t, pos)
    if uv is None:
        return None
    d = segment.p1 - segment.p0
    d = d / np.linalg.norm(d)
    normal = np.array([-d[1], d[0]])
    return float(normal @ (uv - segment.p0))


def _paired_arrays(points, segments):
    pos = np.array([getattr(p, "position", p) for p in points], dtype=float).reshape(-1, 3)
    p0 = np.array([s.p0 for s in segments], dtype=float).reshape(-1, 2)
    p1 = np.array([s.p1 for s in segments], dtype=float).reshape(-1, 2)
    d = p1 - p0
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    normals = np.column_stack([-d[:, 1], d[:, 0]])
    return pos, p0, normals


def _residuals(pos, p0, normals, t: RigidTransform, k: CameraIntrinsics):
    Y = t.apply(pos)
    z = Y[:, 2]
    valid = z > 1e-6
    zs = np.where(valid, z, 1.0)
    u = k.fx * Y[:, 0] / zs + k.cx
    v = k.fy * Y[:, 1] / zs + k.cy
    r = normals[:, 0] * (u - p0[:, 0]) + normals[:, 1] * (v - p0[:, 1])
    return np.where(valid, r, 0.0), valid, Y


def _jacobian_rows(Y: np.ndarray, normals: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Rows d(residual)/d(twist) at xi = 0 for camera-frame points Y."""
    z = Y[:, 2]
    inv_z = 1.0 / z
    # d(pixel)/dY
    dp = np.zeros((len(Y), 2, 3))
    dp[:, 0, 0] = k.fx * inv_z
    dp[:, 0, 2] = -k.fx * Y[:, 0] * inv_z * inv_z
    dp[:, 1, 1] = k.fy * inv_z
    dp[:, 1, 2] = -k.fy * Y[:, 1] * inv_z * inv_z
    # dY/dxi for the left update exp(xi) * T: [-skew(Y) | I]
    dY = np.zeros((len(Y), 3, 6))
    dY[:, 0, 1] = Y[:, 2]
    dY[:, 0, 2] = -Y[:, 1]
    dY[:, 1, 0] = -Y[:, 2]
    dY[:, 1, 2] = Y[:, 0]
    dY[:, 2, 0] = Y[:, 1]
    dY[:, 2, 1] = -Y[:, 0]
    dY[:, 0, 3] = 1.0
    dY[:, 1, 4] = 1.0
    dY[:, 2, 5] = 1.0
    return np.einsum("nk,nkj,njm->nm", normals, dp, dY)


def cost_and_jacobian(points, segments, t: RigidTransform, k: CameraIntrinsics, kernel: RobustKernel):
    """Robust cost, N x 6 Jacobian and residuals for a fixed pairing.

    ``points[i]`` pairs with ``segments[i]``. Rows whose point falls
    behind the camera are dropped. Jacobian columns follow the twist
    ordering (rx, ry, rz, tx, ty, tz) about the current estimate.
    """
    if len(points) != len(segments):
        raise ValueError("points and segments must be paired one-to-one")
    pos, p0, normals = _paired_arrays(points, segments)
    r, valid, Y = _residuals(pos, p0, normals, t, k)
    r, Y, normals = r[valid], Y[valid], normals[valid]
    J = _jacobian_rows(Y, normals, k)
    cost = _stable_sum(kernel.cost(r))
    return cost, J, r


def _normal_equations(J: np.ndarray, r: np.ndarray, w: np.ndarray):
    H = np.zeros((6, 6))
    g = np.zeros(6)
    for a in range(6):
        wj = w * J[:, a]
        for b in range(a, 6):
            H[a, b] = H[b, a] = _stable_sum(wj * J[:, b])
        g[a] = _stable_sum(wj * r)
    return H, g


def _lm_inner(pos, p0, normals, t: RigidTransform, k: CameraIntrinsics, kernel: RobustKernel, cfg: SolverConfig):
    """One LM run over a fixed pairing: (t, accepted costs, iterations, converged)."""

    def evaluate(trans):
        r, valid, Y = _residuals(pos, p0, normals, trans, k)
        cost = _stable_sum(kernel.cost(r[valid]))
        return cost, r[valid], Y[valid], normals[valid]

    lam = cfg.initial_lambda
    cost, r, Y, nrm = evaluate(t)
    history = [cost]
    converged = False
    iterations = 0

    for _ in range(cfg.max_inner_iterations):
        iterations += 1
        J = _jacobian_rows(Y, nrm, k)
        w = kernel.weight(r)
        H, g = _normal_equations(J, r, w)
        A = H + lam * np.diag(np.diag(H))
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > 1e12:
            raise RankDeficientError(
                f"damped normal equations condition {cond:.3g}; geometry is degenerate"
            )
        try:
            delta = np.linalg.solve(A, -g)
        except np.linalg.LinAlgError as exc:
            raise RankDeficientError(str(exc)) from exc

        step = float(np.linalg.norm(delta))
        if step < cfg.convergence_tol_twist:
            converged = True
            break

        candidate = compose(exp_twist(delta), t)
        cost_new, r_new, Y_new, nrm_new = evaluate(candidate)
        if cost_new < cost:
            rel = (cost - cost_new) / max(cost, 1e-300)
            t, cost, r, Y, nrm = candidate, cost_new, r_new, Y_new, nrm_new
            history.append(cost)
            lam = max(lam * cfg.lambda_down, 1e-12)
            if rel < cfg.convergence_tol_cost:
                converged = True
                break
        else:
            lam *= cfg.lambda_up
            if lam > 1e10:
                break
    return t, history, iterations, converged


def refine_extrinsic(
    points,
    segments,
    t_init: RigidTransform,
    k: CameraIntrinsics,
    kernel: RobustKernel = RobustKernel(),
    cfg: SolverConfig = SolverConfig(),
    *,
    association_radius: float = 20.0,
) -> RefinementResult:
    """Refine a LiDAR-to-camera extrinsic against image edge segments.

    Outer rounds re-associate ``points`` to ``segments`` with the current
    estimate (association is pose dependent); inner rounds run damped
    least squares on the fixed pairing. Terminates early when the
    correspondence set stops changing.

    Raises InsufficientCorrespondencesError when fewer than 6 pairs
    survive association, and RankDeficientError on degenerate geometry
    (for example, when every matched segment is parallel).
    """
    t = t_init
    history: list[list[float]] = []
    total_iterations = 0
    converged = False
    pairing_prev: tuple | None = None
    corr: list = []

    for _ in range(cfg.max_outer_iterations):
        corr = associate(points, segments, t, k, association_radius)
        if len(corr) < 6:
            raise InsufficientCorrespondencesError(
                f"only {len(corr)} correspondences; need at least 6"
            )
        pairing = tuple((c.point_index, c.segment_index) for c in corr)
        if pairing == pairing_prev:
            break
        pairing_prev = pairing

        pos, p0, normals = _paired_arrays(
            [c.point for c in corr], [c.segment for c in corr]
        )
        t, costs, iters, converged = _lm_inner(pos, p0, normals, t, k, kernel, cfg)
        history.append(costs)
        total_iterations += iters

    r_final, valid, _ = _residuals(pos, p0, normals, t, k)
    r_final = r_final[valid]
    if kernel.kind == "huber":
        inliers = int(np.count_nonzero(np.abs(r_final) < kernel.delta))
    else:
        inliers = int(r_final.size)

    return RefinementResult(
        extrinsic=t,
        final_cost=history[-1][-1],
        iterations_used=total_iterations,
        inlier_count=inliers,
        converged=converged,
        correspondence_count=len(corr),
        cost_history=history,
    )
