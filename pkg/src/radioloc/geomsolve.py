"""Non-cooperative position solvers.

Range trilateration and iterative weighted least squares (Levenberg-damped
Gauss-Newton), the Foy Taylor-series TDoA solver, weighted GDOP,
covariance-weighted fusion of anchor groups, similarity alignment of a
relative embedding onto anchors and moving-average track smoothing.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (AllGroupsFailed, DegenerateAnchors, LocalizationError,
                     NoConvergence, SingularGeometry)

_RANK_TOL = 1e-9


@dataclass
class SolverReport:
    estimate: np.ndarray
    iterations: int
    converged: bool
    residual_norm: float
    covariance: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        cov = None
        if self.covariance is not None:
            cov = [float(v) for v in np.asarray(self.covariance).ravel()]
        return {
            "estimate": [float(v) for v in self.estimate],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "residual": float(self.residual_norm),
            "covariance": cov,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def affine_rank(points, rtol=_RANK_TOL) -> int:
    """Dimension of the affine hull of ``points``."""
    p = np.asarray(points, dtype=float)
    if len(p) < 2:
        return 0
    s = np.linalg.svd(p - p.mean(axis=0), compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _unit_rows(x, anchors):
    diff = x[None, :] - anchors
    dist = np.linalg.norm(diff, axis=1)
    safe = np.where(dist > 0, dist, 1.0)
    return diff / safe[:, None], dist


def _check_solvable(anchors, ranges, d):
    if len(anchors) < d + 1:
        raise SingularGeometry(f"need at least {d + 1} anchors in {d}D, got {len(anchors)}")
    if len(ranges) != len(anchors):
        raise ValueError("one range per anchor is required")
    if np.any(~(np.asarray(ranges) > 0)):
        raise ValueError("ranges must be positive")
    if affine_rank(anchors) < d:
        raise SingularGeometry("anchors do not span the space (collinear/coplanar)")


def _damped_gauss_newton(anchors, ranges, weights, x0, max_iter, tol):
    lam = 1e-3
    x = np.array(x0, dtype=float)
    u, dist = _unit_rows(x, anchors)
    res = ranges - dist
    cost = float(res @ (weights * res))
    it = 0
    converged = False
    while it < max_iter:
        A = u.T @ (weights[:, None] * u)
        g = u.T @ (weights * res)
        if np.linalg.cond(A) > 1e12:
            raise SingularGeometry("range Jacobian is rank deficient")
        if not np.any(g):
            converged = True
            break
        it += 1
        dx = np.linalg.solve(A + lam * np.diag(np.diag(A)), g)
        step = float(np.linalg.norm(dx))
        x_new = x + dx
        u_new, dist_new = _unit_rows(x_new, anchors)
        res_new = ranges - dist_new
        cost_new = float(res_new @ (weights * res_new))
        if cost_new <= cost:
            lam = max(lam / 10.0, 1e-12)
            x, u, dist, res, cost = x_new, u_new, dist_new, res_new, cost_new
        else:
            lam *= 10.0
        if step < tol:
            converged = True
            break
        if lam > 1e12:
            # stalled: no descent even for vanishing steps
            converged = step < 1e3 * tol
            break
    return x, res, it, converged


def _range_weighted_centroid(anchors, ranges):
    w = 1.0 / np.asarray(ranges)
    return (w[:, None] * anchors).sum(axis=0) / w.sum()


def linearized_position(anchor_positions, ranges, weights=None):
    """Closed-form LS fix from range equations differenced against their mean."""
    a = np.asarray(anchor_positions, float)
    r = np.asarray(ranges, float)
    w = np.ones_like(r) if weights is None else np.asarray(weights, float)
    q = np.sum(a ** 2, axis=1) - r ** 2
    A = 2.0 * (a - a.mean(axis=0))
    b = q - q.mean()
    sw = np.sqrt(w)
    return np.linalg.lstsq(sw[:, None] * A, sw * b, rcond=None)[0]


def iterative_wls(anchor_positions, ranges, weights, init=None, max_iter=100,
                  tol=1e-10, strict=False) -> SolverReport:
    """Weighted range least squares by damped Gauss-Newton.

    Minimizes ``sum_i w_i (r_i - ||x - a_i||)^2``. The returned covariance is
    ``s^2 (H^T W H)^-1`` where ``s^2`` is the weighted residual variance
    (``1`` when the system is exactly determined).

    Raises:
        SingularGeometry: too few or collinear anchors, or a rank deficient
            Jacobian along the way.
        NoConvergence: only with ``strict=True``; otherwise a non-converged
            run comes back with ``converged=False``.
    """
    anchors = np.atleast_2d(np.asarray(anchor_positions, dtype=float))
    ranges = np.asarray(ranges, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    d = anchors.shape[1]
    _check_solvable(anchors, ranges, d)
    if len(weights) != len(ranges) or np.any(~np.isfinite(weights)) or np.any(weights <= 0):
        raise ValueError("weights must be positive and finite, one per range")
    if init is None:
        x0 = _range_weighted_centroid(anchors, ranges)
        x, res, it, converged = _damped_gauss_newton(anchors, ranges, weights, x0, max_iter, tol)
        cost = float(res @ (weights * res))
        if cost > 1e-20 * float(ranges @ ranges):
            # second start from the linearized solution guards against mirror minima
            x1 = linearized_position(anchors, ranges, weights)
            alt = _damped_gauss_newton(anchors, ranges, weights, x1, max_iter, tol)
            if float(alt[1] @ (weights * alt[1])) < cost:
                x, res, it, converged = alt
    else:
        x0 = np.asarray(init, float)
        x, res, it, converged = _damped_gauss_newton(anchors, ranges, weights, x0, max_iter, tol)
    if not converged and strict:
        raise NoConvergence(f"no convergence after {max_iter} iterations")
    u, _ = _unit_rows(x, anchors)
    A = u.T @ (weights[:, None] * u)
    dof = len(ranges) - d
    s2 = float(res @ (weights * res)) / dof if dof > 0 else 1.0
    s2 = max(s2, np.finfo(float).eps)
    cov = s2 * np.linalg.inv(A)
    return SolverReport(x, it, converged, float(np.linalg.norm(res)), cov)


def trilaterate(anchor_positions, ranges, init=None, max_iter=100, tol=1e-10,
                strict=False) -> SolverReport:
    """Unweighted multilateration, see ``iterative_wls``."""
    ranges = np.asarray(ranges, dtype=float).ravel()
    return iterative_wls(anchor_positions, ranges, np.ones_like(ranges), init,
                         max_iter, tol, strict)


@dataclass(frozen=True)
class TdoaSet:
    """Range differences ``||x - a_i|| - ||x - a_ref||`` in meters."""

    reference_anchor: int
    diffs: dict
    anchor_positions: dict

    def __post_init__(self):
        if self.reference_anchor in self.diffs:
            raise ValueError("reference anchor must not carry a difference")
        missing = set(self.diffs) - set(self.anchor_positions)
        if missing or self.reference_anchor not in self.anchor_positions:
            raise ValueError("anchor positions missing for some ids")

    @classmethod
    def from_arrays(cls, reference_position, anchor_positions, diffs):
        pos = {0: np.asarray(reference_position, float)}
        d = {}
        for k, (p, v) in enumerate(zip(anchor_positions, diffs), start=1):
            pos[k] = np.asarray(p, float)
            d[k] = float(v)
        return cls(0, d, pos)

    @classmethod
    def exact(cls, anchor_positions, target, reference=0):
        """Noise-free differences for ``target`` (useful for testing)."""
        anchors = np.asarray(anchor_positions, float)
        r = np.linalg.norm(anchors - np.asarray(target, float), axis=1)
        diffs = {i: float(r[i] - r[reference]) for i in range(len(anchors)) if i != reference}
        return cls(reference, diffs, {i: a for i, a in enumerate(anchors)})

    def arrays(self):
        ids = sorted(self.diffs)
        ref = np.asarray(self.anchor_positions[self.reference_anchor], float)
        anchors = np.array([self.anchor_positions[i] for i in ids], float)
        diffs = np.array([self.diffs[i] for i in ids], float)
        return ref, anchors, diffs


def foy_tdoa(tdoa: TdoaSet, init, max_iter=50, tol=1e-9) -> SolverReport:
    """Foy's Taylor-series iteration on range differences.

    Each step linearizes ``h_i(x) = ||x - a_i|| - ||x - a_ref||`` at the
    current iterate and takes the least-squares correction. Stops once the
    correction is shorter than ``tol``; running out of iterations is
    reported through ``converged=False``.
    """
    ref, anchors, diffs = tdoa.arrays()
    x = np.asarray(init, dtype=float).copy()
    d = len(x)
    if len(diffs) < d:
        raise SingularGeometry(f"need at least {d} range differences")
    if not np.all(np.isfinite(x)):
        raise ValueError("init must be finite")
    if affine_rank(np.vstack([ref, anchors])) < d:
        raise SingularGeometry("anchors do not span the space")
    converged = False
    it = 0
    res = None
    for it in range(1, max_iter + 1):
        u, dist = _unit_rows(x, anchors)
        u_ref, dist_ref = _unit_rows(x, ref[None, :])
        J = u - u_ref
        res = diffs - (dist - dist_ref[0])
        s = np.linalg.svd(J, compute_uv=False)
        if s[-1] <= 1e-12 * max(s[0], 1e-300):
            raise SingularGeometry("TDoA Jacobian is rank deficient")
        dx = np.linalg.lstsq(J, res, rcond=None)[0]
        x = x + dx
        if not np.all(np.isfinite(x)):
            break
        if np.linalg.norm(dx) < tol:
            converged = True
            break
    u, dist = _unit_rows(x, anchors)
    _, dist_ref = _unit_rows(x, ref[None, :])
    res = diffs - (dist - dist_ref[0])
    return SolverReport(x, it, converged, float(np.linalg.norm(res)))


def wgdop(anchor_positions, weights, at) -> float:
    """Weighted GDOP ``sqrt(trace((H^T W H)^-1))`` of the range Jacobian at ``at``."""
    anchors = np.atleast_2d(np.asarray(anchor_positions, float))
    w = np.asarray(weights, float).ravel()
    H, dist = _unit_rows(np.asarray(at, float), anchors)
    if np.any(dist == 0):
        raise SingularGeometry("evaluation point coincides with an anchor")
    A = H.T @ (w[:, None] * H)
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        raise SingularGeometry("geometry matrix is singular")
    return float(np.sqrt(np.trace(np.linalg.inv(A))))


def fuse_gaussians(means, covariances):
    """Information-form fusion; returns the fused mean and covariance."""
    info = np.zeros_like(np.asarray(covariances[0], float))
    vec = np.zeros(len(means[0]))
    for m, c in zip(means, covariances):
        inv = np.linalg.inv(c)
        info += inv
        vec += inv @ np.asarray(m, float)
    cov = np.linalg.inv(info)
    return cov @ vec, cov


def group_fuse(groups, init=None) -> SolverReport:
    """Solve each anchor group by WLS and fuse the estimates by covariance.

    ``groups`` is a sequence of ``(anchor_positions, ranges, weights)``.
    Failed groups are dropped with a warning as long as one survives.
    """
    reports = []
    for k, (anchors, ranges, weights) in enumerate(groups):
        try:
            rep = iterative_wls(anchors, ranges, weights, init)
        except LocalizationError as exc:
            warnings.warn(f"group {k} dropped: {exc}")
            continue
        if not rep.converged:
            warnings.warn(f"group {k} dropped: no convergence")
            continue
        reports.append(rep)
    if not reports:
        raise AllGroupsFailed("no group produced a position")
    if len(reports) == 1:
        return reports[0]
    x, cov = fuse_gaussians([r.estimate for r in reports], [r.covariance for r in reports])
    return SolverReport(
        x,
        max(r.iterations for r in reports),
        True,
        float(np.sqrt(sum(r.residual_norm ** 2 for r in reports))),
        cov,
        {"n_groups": len(reports)},
    )


@dataclass(frozen=True)
class AlignmentTransform:
    """``y = scale * rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float
    reflection: bool

    def apply(self, points):
        p = np.asarray(points, float)
        return self.scale * p @ self.rotation.T + self.translation


def procrustes_align(relative, anchor_ids, anchor_truth, allow_reflection=True,
                     allow_scaling=True):
    """Fit a similarity transform on the anchors and apply it to every point.

    Returns ``(transform, aligned_points)``.
    """
    rel = np.asarray(relative, float)
    src = rel[np.asarray(anchor_ids)]
    dst = np.asarray(anchor_truth, float)
    d = rel.shape[1]
    if len(src) < d + 1 or affine_rank(src, 1e-8) < d or affine_rank(dst, 1e-8) < d:
        raise DegenerateAnchors("anchors do not span the space")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    S0, D0 = src - mu_s, dst - mu_d
    U, sv, Vt = np.linalg.svd(D0.T @ S0 / len(src))
    flip = np.ones(d)
    if not allow_reflection and np.linalg.det(U) * np.linalg.det(Vt) < 0:
        flip[-1] = -1.0
    R = U @ np.diag(flip) @ Vt
    var_s = float((S0 ** 2).sum() / len(src))
    scale = float((sv * flip).sum() / var_s) if allow_scaling else 1.0
    t = mu_d - scale * R @ mu_s
    tf = AlignmentTransform(R, t, scale, bool(np.linalg.det(R) < 0))
    return tf, tf.apply(rel)


def smooth_track(points, window: int):
    """Centered moving average; windows are clipped at the track ends."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    p = np.asarray(points, float)
    squeeze = p.ndim == 1
    if squeeze:
        p = p[:, None]
    n = len(p)
    h = window // 2
    out = np.empty_like(p)
    for i in range(n):
        out[i] = p[max(0, i - h):min(n, i + h + 1)].mean(axis=0)
    return out[:, 0] if squeeze else out
