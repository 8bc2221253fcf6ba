"""Depth evaluation metrics.

All pixel metrics run over the joint evaluation set (gt > 0 and
pred > 0).  Threshold accuracy uses the strict inequality
max(pred/gt, gt/pred) < tau.  The geometric metric samples virtual
triangles and measures the mean angle between predicted and ground-truth
plane normals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .depth_core import CameraIntrinsics, DepthMap, make_rng

DEFAULT_TAUS = (1.25, 1.25 ** 2, 1.25 ** 3)

VN_MIN_SIDE_M = 0.05
VN_ANGLE_BOUNDS_DEG = (15.0, 150.0)
VN_ATTEMPT_FACTOR = 10


@dataclass
class MetricReport:
    absrel: float
    mae: float
    rmse: float
    delta: dict[float, float]
    vn_angle: Optional[float]
    n_eval: int


def eval_pair(pred: DepthMap, gt: DepthMap,
              taus: tuple[float, ...] = DEFAULT_TAUS,
              intrinsics: Optional[CameraIntrinsics] = None,
              seed=0, vn_triplets: int = 512) -> MetricReport:
    """Per-image metrics; vn_angle is computed only when intrinsics are given."""
    if pred.shape != gt.shape:
        raise ValueError(
            f"pred {pred.width}x{pred.height} does not match gt {gt.width}x{gt.height}")
    if not taus:
        raise ValueError("need at least one delta threshold")
    mask = (gt.values > 0) & (pred.values > 0)
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise ValueError("empty evaluation set (no pixel valid in both maps)")
    p = pred.values[mask]
    g = gt.values[mask]
    err = p - g
    absrel = float(np.mean(np.abs(err) / g))
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    ratio = np.maximum(p / g, g / p)
    delta = {float(tau): float(np.mean(ratio < tau)) for tau in taus}
    vn = None
    if intrinsics is not None:
        vn = virtual_normal_divergence(pred, gt, intrinsics, seed, vn_triplets)
    return MetricReport(absrel, mae, rmse, delta, vn, n)


def virtual_normal_divergence(pred: DepthMap, gt: DepthMap,
                              intrinsics: CameraIntrinsics, seed=0,
                              n_triplets: int = 512) -> float:
    """Mean angle between pred and gt virtual plane normals, in radians.

    Triplets of jointly valid pixels are drawn with the seeded generator
    and accepted when the ground-truth triangle is well-conditioned: all
    side lengths at least 0.05 m and all interior angles within
    [15, 150] degrees.  Acceptance looks at ground truth only, so the
    accepted triplet set depends on (gt, seed) alone.  Rejected draws are
    retried up to 10 * n_triplets total attempts.  Angles are folded to
    [0, pi/2] by taking |cos|.
    """
    if pred.shape != gt.shape:
        raise ValueError("pred and gt dimensions differ")
    if n_triplets < 1:
        raise ValueError("n_triplets must be positive")
    mask = (gt.values > 0) & (pred.values > 0)
    idx = np.flatnonzero(mask.ravel())
    if idx.size < 3:
        raise ValueError(f"need at least 3 jointly valid pixels, got {idx.size}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    h, w = gt.shape
    vs_all, us_all = np.unravel_index(idx, gt.shape)
    gt_flat = gt.values.ravel()[idx]
    pred_flat = pred.values.ravel()[idx]
    xs_n = (us_all - intrinsics.cx) / intrinsics.fx
    ys_n = (vs_all - intrinsics.cy) / intrinsics.fy

    cos_lo = np.cos(np.deg2rad(VN_ANGLE_BOUNDS_DEG[0]))
    cos_hi = np.cos(np.deg2rad(VN_ANGLE_BOUNDS_DEG[1]))
    angles = []
    max_attempts = VN_ATTEMPT_FACTOR * n_triplets
    for _ in range(max_attempts):
        if len(angles) >= n_triplets:
            break
        trio = rng.integers(0, idx.size, size=3)
        if trio[0] == trio[1] or trio[0] == trio[2] or trio[1] == trio[2]:
            continue
        pg = _points3d(trio, xs_n, ys_n, gt_flat)
        if not _triangle_ok(pg, cos_lo, cos_hi):
            continue
        pp = _points3d(trio, xs_n, ys_n, pred_flat)
        ng = np.cross(pg[1] - pg[0], pg[2] - pg[0])
        np_ = np.cross(pp[1] - pp[0], pp[2] - pp[0])
        norm_g = np.linalg.norm(ng)
        norm_p = np.linalg.norm(np_)
        if norm_p == 0.0:
            # Degenerate predicted triangle: count as maximally divergent.
            angles.append(np.pi / 2)
            continue
        cosang = abs(float(np.dot(ng, np_))) / (norm_g * norm_p)
        angles.append(float(np.arccos(min(1.0, cosang))))
    if not angles:
        raise ValueError("no acceptable triplets found")
    return float(np.mean(angles))


def _points3d(trio, xs_n, ys_n, depth_flat) -> np.ndarray:
    d = depth_flat[trio]
    return np.column_stack([xs_n[trio] * d, ys_n[trio] * d, d])


def _triangle_ok(p: np.ndarray, cos_lo: float, cos_hi: float) -> bool:
    e01 = p[1] - p[0]
    e12 = p[2] - p[1]
    e20 = p[0] - p[2]
    a = np.linalg.norm(e01)
    b = np.linalg.norm(e12)
    c = np.linalg.norm(e20)
    if min(a, b, c) < VN_MIN_SIDE_M:
        return False
    # Interior angle at each vertex via cosines; bounds given as cosines
    # (cos is decreasing, so angle in [lo, hi] <=> cos in [cos_hi, cos_lo]).
    cos0 = float(np.dot(e01, -e20)) / (a * c)
    cos1 = float(np.dot(-e01, e12)) / (a * b)
    cos2 = float(np.dot(-e12, e20)) / (b * c)
    for cosv in (cos0, cos1, cos2):
        if not (cos_hi <= cosv <= cos_lo):
            return False
    return True


def aggregate(reports: list[MetricReport]) -> MetricReport:
    """Unweighted mean over images; n_eval sums.

    vn_angle averages over the reports that carry one (None when none do).
    All reports must share the same delta thresholds.
    """
    if not reports:
        raise ValueError("nothing to aggregate")
    tau_set = set(reports[0].delta)
    for r in reports[1:]:
        if set(r.delta) != tau_set:
            raise ValueError("reports carry different delta thresholds")
    taus = sorted(tau_set)
    vn_vals = [r.vn_angle for r in reports if r.vn_angle is not None]
    return MetricReport(
        absrel=float(np.mean([r.absrel for r in reports])),
        mae=float(np.mean([r.mae for r in reports])),
        rmse=float(np.mean([r.rmse for r in reports])),
        delta={tau: float(np.mean([r.delta[tau] for r in reports])) for tau in taus},
        vn_angle=float(np.mean(vn_vals)) if vn_vals else None,
        n_eval=sum(r.n_eval for r in reports),
    )
