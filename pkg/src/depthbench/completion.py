"""Non-neural depth completion.

The guidance path aligns a dense relative-depth map to the sparse metric
samples with a (optionally RANSAC-robust) scale/shift fit, then corrects
the aligned base with an inverse-distance-weighted field interpolating
the per-inlier residuals.  Because an inlier pixel is an exact IDW hit,
its sparse value is reproduced verbatim in the output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .depth_core import DepthMap, make_rng


@dataclass(frozen=True)
class CompletionConfig:
    robust: bool = True
    ransac_iters: int = 256
    inlier_tol: float = 0.05
    idw_k: int = 16
    idw_power: float = 2.0
    min_depth_clamp: float = 0.001
    refine_iters: int = 1

    def __post_init__(self):
        if self.ransac_iters < 1:
            raise ValueError("ransac_iters must be at least 1")
        if self.inlier_tol <= 0:
            raise ValueError("inlier_tol must be positive")
        if self.idw_k < 1:
            raise ValueError("idw_k must be at least 1")
        if self.idw_power <= 0:
            raise ValueError("idw_power must be positive")
        if self.min_depth_clamp <= 0:
            raise ValueError("min_depth_clamp must be positive")
        if self.refine_iters < 1:
            raise ValueError("refine_iters must be at least 1")


@dataclass(frozen=True, eq=False)
class AlignmentParams:
    """Affine alignment guidance -> metric: d ~ scale * g + shift.

    ``inliers`` holds sorted row-major flat indices of the sparse pixels
    the fit trusts; ``residual_rms`` is the RMS misfit over them.
    """

    scale: float
    shift: float
    inliers: np.ndarray
    residual_rms: float


def _joint_valid(guidance: DepthMap, sparse: DepthMap):
    if guidance.shape != sparse.shape:
        raise ValueError(
            f"guidance {guidance.width}x{guidance.height} does not match "
            f"sparse {sparse.width}x{sparse.height}")
    mask = (guidance.values > 0) & (sparse.values > 0)
    idx = np.flatnonzero(mask.ravel())
    return guidance.values.ravel()[idx], sparse.values.ravel()[idx], idx


def _ls_fit(g: np.ndarray, d: np.ndarray) -> tuple[float, float]:
    gm, dm = g.mean(), d.mean()
    gc = g - gm
    var = float(np.dot(gc, gc))
    if var == 0.0:
        raise ValueError("guidance has zero variance over the joint-valid set")
    s = float(np.dot(gc, d - dm)) / var
    return s, dm - s * gm


def fit_scale_shift(guidance: DepthMap, sparse: DepthMap) -> AlignmentParams:
    """Least-squares scale/shift aligning guidance to the sparse samples."""
    g, d, idx = _joint_valid(guidance, sparse)
    if idx.size < 2:
        raise ValueError(f"need at least 2 joint-valid pixels, got {idx.size}")
    s, t = _ls_fit(g, d)
    rms = float(np.sqrt(np.mean((s * g + t - d) ** 2)))
    return AlignmentParams(s, t, idx, rms)


def fit_scale_shift_robust(guidance: DepthMap, sparse: DepthMap,
                           config: CompletionConfig = CompletionConfig(),
                           seed=0) -> AlignmentParams:
    """RANSAC scale/shift fit tolerant of corrupted sparse samples.

    Each iteration fits an exact model to 2 random joint-valid pixels
    (pairs with equal guidance are skipped) and counts samples within
    ``inlier_tol`` relative error.  The largest consensus set (ties:
    lower RMS) is refit by least squares.  When no pair produces at
    least 2 inliers the plain fit is returned.
    """
    g, d, idx = _joint_valid(guidance, sparse)
    n = idx.size
    if n < 2:
        raise ValueError(f"need at least 2 joint-valid pixels, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    best_count = 0
    best_rms = np.inf
    best_mask: Optional[np.ndarray] = None
    for _ in range(config.ransac_iters):
        i, j = rng.choice(n, size=2, replace=False)
        if g[i] == g[j]:
            continue
        s = (d[j] - d[i]) / (g[j] - g[i])
        t = d[i] - s * g[i]
        resid = s * g + t - d
        inl = np.abs(resid) / d <= config.inlier_tol
        count = int(inl.sum())
        if count < 2:
            continue
        rms = float(np.sqrt(np.mean(resid[inl] ** 2)))
        if count > best_count or (count == best_count and rms < best_rms):
            best_count, best_rms, best_mask = count, rms, inl
    if best_mask is None:
        return fit_scale_shift(guidance, sparse)
    # The generating pair is always in its own consensus set, so the
    # refit sees at least two distinct guidance values.
    s, t = _ls_fit(g[best_mask], d[best_mask])
    rms = float(np.sqrt(np.mean((s * g[best_mask] + t - d[best_mask]) ** 2)))
    return AlignmentParams(s, t, idx[best_mask], rms)


def _idw_field(points_vu: np.ndarray, values: np.ndarray, shape: tuple[int, int],
               k: int, power: float) -> np.ndarray:
    """Dense IDW interpolation of scattered per-pixel values.

    Weights are 1 / distance**power over the k nearest sample pixels
    (Euclidean pixel distance); a query pixel coinciding with a sample
    takes that sample's value verbatim.
    """
    h, w = shape
    k_eff = min(k, len(points_vu))
    tree = cKDTree(points_vu)
    vv, uu = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    queries = np.column_stack([vv.ravel(), uu.ravel()])
    dist, nidx = tree.query(queries, k=k_eff, workers=-1)
    if k_eff == 1:
        dist = dist[:, None]
        nidx = nidx[:, None]
    exact = dist[:, 0] == 0.0
    with np.errstate(divide="ignore"):
        weights = 1.0 / dist ** power
    neighbor_vals = values[nidx]
    out = np.empty(h * w)
    rest = ~exact
    out[rest] = (np.sum(weights[rest] * neighbor_vals[rest], axis=1)
                 / np.sum(weights[rest], axis=1))
    out[exact] = neighbor_vals[exact, 0]
    return out.reshape(shape)


def complete_with_guidance(sparse: DepthMap, guidance: DepthMap,
                           config: CompletionConfig = CompletionConfig(),
                           seed=0) -> DepthMap:
    """Densify sparse metric depth using a dense relative-depth guidance map.

    Steps: fit scale/shift (robust per config), form the aligned base
    scale * guidance + shift, interpolate the sparse-minus-base residuals
    of the fit's inliers by IDW, add, and clamp to ``min_depth_clamp``.
    Every output pixel is valid; inlier sparse pixels (at or above the
    clamp) come back verbatim.
    """
    if guidance.valid_count() != guidance.width * guidance.height:
        raise ValueError("guidance map must be dense (valid everywhere)")
    if config.robust:
        params = fit_scale_shift_robust(guidance, sparse, config, seed)
    else:
        params = fit_scale_shift(guidance, sparse)
    base = params.scale * guidance.values + params.shift
    vs, us = np.unravel_index(params.inliers, sparse.shape)
    residuals = sparse.values[vs, us] - base[vs, us]
    points = np.column_stack([vs.astype(np.float64), us.astype(np.float64)])
    field_ = _idw_field(points, residuals, sparse.shape, config.idw_k, config.idw_power)
    return DepthMap(np.maximum(base + field_, config.min_depth_clamp))


def complete_idw(sparse: DepthMap,
                 config: CompletionConfig = CompletionConfig()) -> DepthMap:
    """Guidance-free fallback: fill invalid pixels by IDW over valid ones."""
    flat = sparse.values.ravel()
    valid_idx = np.flatnonzero(flat > 0)
    if valid_idx.size == 0:
        raise ValueError("cannot complete a map with no valid pixels")
    vs, us = np.unravel_index(valid_idx, sparse.shape)
    points = np.column_stack([vs.astype(np.float64), us.astype(np.float64)])
    field_ = _idw_field(points, flat[valid_idx], sparse.shape,
                        config.idw_k, config.idw_power)
    out = np.where(sparse.values > 0, sparse.values, field_)
    return DepthMap(np.maximum(out, config.min_depth_clamp))


def complete_nearest(sparse: DepthMap,
                     config: CompletionConfig = CompletionConfig()) -> DepthMap:
    """Nearest-valid-pixel fill (IDW with k = 1)."""
    one_nn = CompletionConfig(robust=config.robust, ransac_iters=config.ransac_iters,
                              inlier_tol=config.inlier_tol, idw_k=1,
                              idw_power=config.idw_power,
                              min_depth_clamp=config.min_depth_clamp,
                              refine_iters=config.refine_iters)
    return complete_idw(sparse, one_nn)


def iterate(sparse: DepthMap, guidance: DepthMap,
            config: CompletionConfig = CompletionConfig(), seed=0) -> DepthMap:
    """Run guided completion ``refine_iters`` times, feeding each output
    back as the next round's guidance map."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    current = guidance
    out = None
    for _ in range(config.refine_iters):
        out = complete_with_guidance(sparse, current, config, rng)
        current = out
    return out
