"""Sparsity pattern synthesis: turn dense ground truth into sparse inputs.

Patterns are described by :class:`SparsitySpec` trees.  Point kinds
(``uniform``, ``features``) sample pixels from ground truth; mask kinds
(``hole_polygon``, ``keep_polygon``, ``hole_distance``) zero out regions.
A ``composite`` applies children in order: point children contribute the
union of their samples, mask children filter the running result.  When a
composite (or a lone mask kind) contains no point child, masking starts
from the dense ground truth.  Outlier injection, if configured, always
runs last.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .depth_core import DepthMap, GrayImage, make_rng

POINT_KINDS = ("uniform", "features")
MASK_KINDS = ("hole_polygon", "keep_polygon", "hole_distance")
SPARSITY_KINDS = POINT_KINDS + MASK_KINDS + ("composite",)

# FAST segment-test circle: 16 (du, dv) offsets at radius 3, starting at
# twelve o'clock and proceeding clockwise.
FAST_CIRCLE = (
    (0, -3), (1, -3), (2, -2), (3, -1),
    (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1),
    (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)

FAST_ARC_LENGTH = 9
DEFAULT_FAST_THRESHOLD = 20.0


@dataclass(frozen=True)
class Keypoint:
    """FAST corner: pixel position and segment-test score."""

    u: int
    v: int
    score: float


@dataclass(frozen=True)
class SparsitySpec:
    """Declarative sparsity pattern; ranges are sampled at synthesis time."""

    kind: str
    point_count_range: Optional[tuple[int, int]] = None
    fast_threshold_range: Optional[tuple[float, float]] = None
    polygon_vertex_range: Optional[tuple[int, int]] = None
    polygon_area_fraction_range: Optional[tuple[float, float]] = None
    distance_percentile_range: Optional[tuple[float, float]] = None
    children: tuple["SparsitySpec", ...] = ()
    outlier_ratio: float = 0.0
    outlier_factor_range: tuple[float, float] = (0.1, 2.0)

    def __post_init__(self):
        if self.kind not in SPARSITY_KINDS:
            raise ValueError(f"unknown sparsity kind {self.kind!r}")
        if self.kind in POINT_KINDS and self.point_count_range is None:
            object.__setattr__(self, "point_count_range", (2500, 2500))
        if self.kind == "features" and self.fast_threshold_range is None:
            object.__setattr__(self, "fast_threshold_range",
                               (DEFAULT_FAST_THRESHOLD, DEFAULT_FAST_THRESHOLD))
        if self.kind in ("hole_polygon", "keep_polygon"):
            if self.polygon_vertex_range is None:
                object.__setattr__(self, "polygon_vertex_range", (3, 8))
            if self.polygon_area_fraction_range is None:
                object.__setattr__(self, "polygon_area_fraction_range", (0.05, 0.3))
        if self.kind == "hole_distance" and self.distance_percentile_range is None:
            object.__setattr__(self, "distance_percentile_range", (30.0, 90.0))
        object.__setattr__(self, "children", tuple(self.children))
        self._validate()

    def _validate(self):
        if self.point_count_range is not None:
            lo, hi = self.point_count_range
            if lo < 0 or lo > hi:
                raise ValueError(f"bad point_count_range {self.point_count_range}")
        if self.fast_threshold_range is not None:
            lo, hi = self.fast_threshold_range
            if lo < 0 or lo > hi:
                raise ValueError(f"bad fast_threshold_range {self.fast_threshold_range}")
        if self.polygon_vertex_range is not None:
            lo, hi = self.polygon_vertex_range
            if lo < 3 or lo > hi:
                raise ValueError(f"bad polygon_vertex_range {self.polygon_vertex_range}")
        if self.polygon_area_fraction_range is not None:
            lo, hi = self.polygon_area_fraction_range
            if not (0 < lo <= hi < 1):
                raise ValueError(
                    f"bad polygon_area_fraction_range {self.polygon_area_fraction_range}")
        if self.distance_percentile_range is not None:
            lo, hi = self.distance_percentile_range
            if not (0 < lo <= hi <= 100):
                raise ValueError(
                    f"bad distance_percentile_range {self.distance_percentile_range}")
        if not (0 <= self.outlier_ratio < 1):
            raise ValueError(f"outlier_ratio must be in [0, 1), got {self.outlier_ratio}")
        lo, hi = self.outlier_factor_range
        if not (0 < lo <= hi):
            raise ValueError(f"bad outlier_factor_range {self.outlier_factor_range}")
        if self.kind == "composite":
            if not self.children:
                raise ValueError("composite spec needs at least one child")
            for child in self.children:
                if child.kind == "composite":
                    raise ValueError("composite children must be leaf specs")
        elif self.children:
            raise ValueError(f"kind {self.kind!r} takes no children")

    def uses_features(self) -> bool:
        return self.kind == "features" or any(
            c.kind == "features" for c in self.children)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(seed)


def _round_half_away(x: float) -> int:
    return int(np.sign(x) * np.floor(abs(x) + 0.5))


# ---------------------------------------------------------------------------
# Point sampling

def sample_uniform(gt: DepthMap, n: int, seed) -> DepthMap:
    """Keep ``n`` valid pixels chosen uniformly without replacement."""
    if n < 0:
        raise ValueError("n must be non-negative")
    flat = gt.values.ravel()
    valid_idx = np.flatnonzero(flat > 0)
    if n > valid_idx.size:
        raise ValueError(f"requested {n} points but only {valid_idx.size} valid pixels")
    rng = _as_rng(seed)
    chosen = rng.choice(valid_idx, size=n, replace=False)
    out = np.zeros_like(flat)
    out[chosen] = flat[chosen]
    return DepthMap(out.reshape(gt.shape))


def detect_fast(img: GrayImage, threshold: float = DEFAULT_FAST_THRESHOLD,
                nms: bool = True) -> list[Keypoint]:
    """FAST-9 corner detection on the 16-pixel Bresenham circle.

    A pixel is a corner when some contiguous circular arc of at least 9
    circle pixels is entirely brighter than I(p) + threshold or entirely
    darker than I(p) - threshold.  The score is the summed absolute
    intensity excess over the threshold on the maximal such arc.  With
    ``nms``, only strict 3x3 score maxima survive; score ties are broken
    in favor of the smaller row-major pixel index.  Keypoints keep a
    3-pixel margin from every border and are returned in row-major order.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    h, w = img.pixels.shape
    if h < 7 or w < 7:
        raise ValueError(f"image {w}x{h} too small for a radius-3 circle test")
    arr = img.pixels.astype(np.float64)
    center = arr[3:h - 3, 3:w - 3]
    circle = np.stack([arr[3 + dv:h - 3 + dv, 3 + du:w - 3 + du]
                       for du, dv in FAST_CIRCLE])
    bright = circle > center + threshold
    dark = circle < center - threshold

    def has_arc(member: np.ndarray) -> np.ndarray:
        tiled = np.concatenate([member, member[:FAST_ARC_LENGTH - 1]], axis=0)
        csum = np.cumsum(tiled, axis=0, dtype=np.int8)
        csum = np.concatenate([np.zeros((1,) + member.shape[1:], dtype=np.int8), csum])
        window = csum[FAST_ARC_LENGTH:] - csum[:-FAST_ARC_LENGTH]
        return (window == FAST_ARC_LENGTH).any(axis=0)

    corner = has_arc(bright) | has_arc(dark)
    vs, us = np.nonzero(corner)
    keypoints = []
    for v0, u0 in zip(vs, us):
        members_b = bright[:, v0, u0]
        members = members_b if _has_run(members_b) else dark[:, v0, u0]
        run = _maximal_run(members)
        excess = np.abs(circle[run, v0, u0] - center[v0, u0]) - threshold
        keypoints.append(Keypoint(int(u0) + 3, int(v0) + 3, float(excess.sum())))
    if nms and keypoints:
        keypoints = _nms_3x3(keypoints, w, h)
    return keypoints


def _has_run(members: np.ndarray) -> bool:
    tiled = np.concatenate([members, members[:FAST_ARC_LENGTH - 1]])
    run = 0
    for m in tiled:
        run = run + 1 if m else 0
        if run >= FAST_ARC_LENGTH:
            return True
    return False


def _maximal_run(members: np.ndarray) -> np.ndarray:
    """Indices of the longest contiguous circular run of True values.

    Callers guarantee the run is at least 9 long, which makes it unique
    (two disjoint such runs would need 20 of the 16 positions).
    """
    n = members.size
    if members.all():
        return np.arange(n)
    best_start, best_len = 0, 0
    for start in range(n):
        if members[start] and not members[start - 1]:
            length = 0
            while members[(start + length) % n]:
                length += 1
            if length > best_len:
                best_start, best_len = start, length
    return np.arange(best_start, best_start + best_len) % n


def _nms_3x3(keypoints: list[Keypoint], w: int, h: int) -> list[Keypoint]:
    score = np.zeros((h, w))
    for kp in keypoints:
        score[kp.v, kp.u] = kp.score
    kept = []
    for kp in keypoints:
        flat = kp.v * w + kp.u
        best = True
        for dv in (-1, 0, 1):
            for du in (-1, 0, 1):
                if dv == 0 and du == 0:
                    continue
                nu, nv = kp.u + du, kp.v + dv
                if not (0 <= nu < w and 0 <= nv < h):
                    continue
                s = score[nv, nu]
                if s > kp.score or (s == kp.score and s > 0 and nv * w + nu < flat):
                    best = False
                    break
            if not best:
                break
        if best:
            kept.append(kp)
    return kept


def sample_features(gt: DepthMap, img: GrayImage,
                    fast_threshold: float = DEFAULT_FAST_THRESHOLD,
                    max_points: Optional[int] = None) -> DepthMap:
    """Keep depth at FAST corners of the paired intensity image.

    Corners without valid depth are dropped.  When more than
    ``max_points`` remain, the highest-scoring corners win (score ties:
    smaller row-major index).
    """
    if (img.height, img.width) != gt.shape:
        raise ValueError(
            f"image {img.width}x{img.height} does not match depth {gt.width}x{gt.height}")
    kps = [kp for kp in detect_fast(img, fast_threshold, nms=True)
           if gt.values[kp.v, kp.u] > 0]
    if max_points is not None and len(kps) > max_points:
        kps = sorted(kps, key=lambda kp: (-kp.score, kp.v * gt.width + kp.u))[:max_points]
    out = np.zeros(gt.shape)
    for kp in kps:
        out[kp.v, kp.u] = gt.values[kp.v, kp.u]
    return DepthMap(out)


# ---------------------------------------------------------------------------
# Region masks

def mask_polygon(depth: DepthMap, vertices: np.ndarray, mode: str) -> DepthMap:
    """Zero pixels relative to a polygon (even-odd rule).

    ``vertices`` is a (K, 3<=K) sequence of (u, v) corners in pixel
    coordinates.  A pixel center counts as inside when it lies strictly
    interior under the even-odd rule or exactly on a polygon edge.
    ``mode`` is ``remove_inside`` or ``keep_inside``.
    """
    if mode not in ("remove_inside", "keep_inside"):
        raise ValueError(f"unknown polygon mode {mode!r}")
    verts = np.asarray(vertices, dtype=np.float64)
    if verts.ndim != 2 or verts.shape[0] < 3 or verts.shape[1] != 2:
        raise ValueError(f"polygon needs shape (K>=3, 2), got {verts.shape}")
    if not np.all(np.isfinite(verts)):
        raise ValueError("polygon vertices must be finite")
    inside = _polygon_inside_mask(verts, depth.width, depth.height)
    out = depth.values.copy()
    if mode == "remove_inside":
        out[inside] = 0.0
    else:
        out[~inside] = 0.0
    return DepthMap(out)


def _polygon_inside_mask(verts: np.ndarray, w: int, h: int) -> np.ndarray:
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    inside = np.zeros((h, w), dtype=bool)
    boundary = np.zeros((h, w), dtype=bool)
    k = verts.shape[0]
    for i in range(k):
        au, av = verts[i]
        bu, bv = verts[(i + 1) % k]
        # Even-odd crossing count for a ray toward +u.
        straddles = (av > vv) != (bv > vv)
        with np.errstate(divide="ignore", invalid="ignore"):
            xing = np.where(straddles, (bu - au) * (vv - av) / (bv - av) + au, np.nan)
        inside ^= straddles & (uu < xing)
        # Pixel centers exactly on the edge segment count as inside.
        cross = (bu - au) * (vv - av) - (bv - av) * (uu - au)
        on_line = cross == 0.0
        in_box = ((uu >= min(au, bu)) & (uu <= max(au, bu))
                  & (vv >= min(av, bv)) & (vv <= max(av, bv)))
        boundary |= on_line & in_box
    return inside | boundary


def mask_distance(depth: DepthMap, cutoff: float, mode: str = "percentile") -> DepthMap:
    """Zero pixels farther than a cutoff.

    ``percentile`` mode takes the nearest-rank percentile of the valid
    depths (cutoff in (0, 100]); ``absolute`` mode uses the cutoff in
    meters directly.  Pixels strictly beyond the cutoff are zeroed.
    """
    if mode == "percentile":
        if not (0 < cutoff <= 100):
            raise ValueError(f"percentile cutoff must be in (0, 100], got {cutoff}")
        vals = depth.values[depth.values > 0]
        if vals.size == 0:
            raise ValueError("no valid pixels to take a percentile over")
        cut = nearest_rank_percentile(vals, cutoff)
    elif mode == "absolute":
        if cutoff < 0:
            raise ValueError(f"absolute cutoff must be non-negative, got {cutoff}")
        cut = cutoff
    else:
        raise ValueError(f"unknown distance mode {mode!r}")
    out = depth.values.copy()
    out[out > cut] = 0.0
    return DepthMap(out)


def nearest_rank_percentile(values: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile: element ceil(pct/100 * N) of the sorted values."""
    vals = np.sort(np.asarray(values).ravel())
    if vals.size == 0:
        raise ValueError("empty value set")
    rank = int(np.ceil(pct / 100.0 * vals.size))
    rank = min(max(rank, 1), vals.size)
    return float(vals[rank - 1])


# ---------------------------------------------------------------------------
# Outliers and top-level synthesis

def inject_outliers(depth: DepthMap, ratio: float,
                    factor_range: tuple[float, float] = (0.1, 2.0),
                    seed=0) -> DepthMap:
    """Corrupt round(ratio * valid_count) valid pixels by random scale factors.

    The count rounds half away from zero; each selected pixel is
    multiplied by an independent uniform draw from ``factor_range``.
    """
    if not (0 <= ratio < 1):
        raise ValueError(f"outlier ratio must be in [0, 1), got {ratio}")
    lo, hi = factor_range
    if not (0 < lo <= hi):
        raise ValueError(f"bad factor range {factor_range}")
    rng = _as_rng(seed)
    flat = depth.values.copy().ravel()
    valid_idx = np.flatnonzero(flat > 0)
    count = _round_half_away(ratio * valid_idx.size)
    if count == 0:
        return DepthMap(flat.reshape(depth.shape))
    chosen = rng.choice(valid_idx, size=count, replace=False)
    factors = rng.uniform(lo, hi, size=count)
    flat[chosen] *= factors
    return DepthMap(flat.reshape(depth.shape))


def synthesize(gt: DepthMap, spec: SparsitySpec, seed,
               img: Optional[GrayImage] = None) -> DepthMap:
    """Materialize a sparsity spec against dense ground truth.

    Range parameters are drawn from the seeded generator in tree order,
    so a fixed (gt, spec, seed, img) triple always produces the same map.
    """
    rng = _as_rng(seed)
    if spec.uses_features():
        if img is None:
            raise ValueError("spec uses FAST features but no intensity image was given")
        if (img.height, img.width) != gt.shape:
            raise ValueError("intensity image dimensions do not match ground truth")

    children = spec.children if spec.kind == "composite" else (spec,)
    has_points = any(c.kind in POINT_KINDS for c in children)
    acc = np.zeros(gt.shape) if has_points else gt.values.copy()
    current = DepthMap(acc)
    for child in children:
        current = _apply_leaf(current, child, gt, img, rng)
    if spec.outlier_ratio > 0:
        current = inject_outliers(current, spec.outlier_ratio,
                                  spec.outlier_factor_range, rng)
    return current


def _apply_leaf(current: DepthMap, node: SparsitySpec, gt: DepthMap,
                img: Optional[GrayImage], rng: np.random.Generator) -> DepthMap:
    if node.kind == "uniform":
        lo, hi = node.point_count_range
        n = int(rng.integers(lo, hi + 1))
        return _union(current, sample_uniform(gt, n, rng))
    if node.kind == "features":
        tlo, thi = node.fast_threshold_range
        thr = float(rng.uniform(tlo, thi))
        plo, phi = node.point_count_range
        max_pts = int(rng.integers(plo, phi + 1))
        return _union(current, sample_features(gt, img, thr, max_pts))
    if node.kind in ("hole_polygon", "keep_polygon"):
        poly = _draw_polygon(rng, gt.width, gt.height,
                             node.polygon_vertex_range,
                             node.polygon_area_fraction_range)
        mode = "remove_inside" if node.kind == "hole_polygon" else "keep_inside"
        return mask_polygon(current, poly, mode)
    if node.kind == "hole_distance":
        plo, phi = node.distance_percentile_range
        pct = float(rng.uniform(plo, phi))
        return mask_distance(current, pct, "percentile")
    raise ValueError(f"cannot apply spec kind {node.kind!r}")  # pragma: no cover


def _union(a: DepthMap, b: DepthMap) -> DepthMap:
    return DepthMap(np.where(b.values > 0, b.values, a.values))


def _draw_polygon(rng: np.random.Generator, w: int, h: int,
                  vertex_range: tuple[int, int],
                  area_range: tuple[float, float],
                  max_attempts: int = 64) -> np.ndarray:
    """Random simple polygon with area fraction near the requested range.

    Vertices are drawn uniformly in the image and ordered by angle around
    their centroid.  Rejection sampling enforces the area fraction; after
    ``max_attempts`` misses the closest attempt is accepted.
    """
    k = int(rng.integers(vertex_range[0], vertex_range[1] + 1))
    lo, hi = area_range
    best, best_miss = None, np.inf
    for _ in range(max_attempts):
        pts = np.column_stack([rng.uniform(0, w - 1, size=k),
                               rng.uniform(0, h - 1, size=k)])
        centroid = pts.mean(axis=0)
        angles = np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0])
        poly = pts[np.argsort(angles)]
        frac = _shoelace_area(poly) / (w * h)
        if lo <= frac <= hi:
            return poly
        miss = lo - frac if frac < lo else frac - hi
        if miss < best_miss:
            best, best_miss = poly, miss
    return best


def _shoelace_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))
