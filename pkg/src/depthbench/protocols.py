"""Deterministic benchmark degradation protocols.

Each generator turns dense (or semi-dense) ground truth into the sparse
input of one benchmark track.  None of them draws random numbers: the
same inputs always give the same degraded map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .depth_core import DepthMap
from .sparsity import nearest_rank_percentile

PROTOCOL_NAMES = ("unpaired_fov", "sparse_tof", "short_range", "noisy")


@dataclass(frozen=True)
class ProtocolConfig:
    """Knobs for the degradation protocols; defaults match the benchmark."""

    border_fraction: float = 0.125
    tof_stride: int = 3
    tof_distant_percentile: float = 90.0
    short_range_fraction: float = 0.5
    noisy_inconsistency_tau: float = 0.2

    def __post_init__(self):
        if not (0 < self.border_fraction < 1):
            raise ValueError(f"border_fraction must be in (0, 1), got {self.border_fraction}")
        if self.tof_stride < 2:
            raise ValueError(f"tof_stride must be at least 2, got {self.tof_stride}")
        if not (0 < self.tof_distant_percentile <= 100):
            raise ValueError(
                f"tof_distant_percentile must be in (0, 100], got {self.tof_distant_percentile}")
        if not (0 < self.short_range_fraction < 1):
            raise ValueError(
                f"short_range_fraction must be in (0, 1), got {self.short_range_fraction}")
        if self.noisy_inconsistency_tau <= 0:
            raise ValueError(
                f"noisy_inconsistency_tau must be positive, got {self.noisy_inconsistency_tau}")


def gen_unpaired_fov(gt: DepthMap, config: ProtocolConfig = ProtocolConfig()) -> DepthMap:
    """Blank a border band on all four sides, keeping the interior rectangle.

    The band width is round(border_fraction * dimension) per side, ties
    rounding up.  An image too small to keep any interior is an error.
    """
    h, w = gt.shape
    band_v = int(np.floor(config.border_fraction * h + 0.5))
    band_u = int(np.floor(config.border_fraction * w + 0.5))
    if 2 * band_v >= h or 2 * band_u >= w:
        raise ValueError(
            f"image {w}x{h} degenerate under border bands {band_u}x{band_v} per side")
    out = np.zeros(gt.shape)
    out[band_v:h - band_v, band_u:w - band_u] = gt.values[band_v:h - band_v, band_u:w - band_u]
    return DepthMap(out)


def gen_sparse_tof(gt: DepthMap, config: ProtocolConfig = ProtocolConfig()) -> DepthMap:
    """Decimate to a regular lattice, then drop the most distant samples.

    Keeps pixels with u % stride == 0 and v % stride == 0, then zeroes
    kept depths above the nearest-rank ``tof_distant_percentile`` of the
    kept depths.
    """
    h, w = gt.shape
    stride = config.tof_stride
    lattice = np.zeros(gt.shape, dtype=bool)
    lattice[::stride, ::stride] = True
    out = np.where(lattice, gt.values, 0.0)
    kept = out[out > 0]
    if kept.size:
        cut = nearest_rank_percentile(kept, config.tof_distant_percentile)
        out[out > cut] = 0.0
    return DepthMap(out)


def gen_short_range(gt: DepthMap, config: ProtocolConfig = ProtocolConfig()) -> DepthMap:
    """Zero the floor(fraction * valid_count) deepest valid pixels.

    Ties at the cutoff depth are resolved by zeroing larger row-major
    indices first, so the survivor set is deterministic.
    """
    flat = gt.values.copy().ravel()
    valid_idx = np.flatnonzero(flat > 0)
    k = int(np.floor(config.short_range_fraction * valid_idx.size))
    if k > 0:
        # Ascending by (depth, row-major index); the tail holds the k to drop.
        order = np.lexsort((valid_idx, flat[valid_idx]))
        flat[valid_idx[order[-k:]]] = 0.0
    return DepthMap(flat.reshape(gt.shape))


def gen_noisy(gt: DepthMap, noisy: DepthMap,
              config: ProtocolConfig = ProtocolConfig()) -> DepthMap:
    """Keep noisy-source depths that are consistent with ground truth.

    A pixel survives when both maps are valid and the relative error
    |noisy - gt| / gt is at most ``noisy_inconsistency_tau``; the noisy
    value (not the ground truth) is kept, so surviving pixels still carry
    their measurement error.
    """
    if noisy.shape != gt.shape:
        raise ValueError(
            f"noisy map {noisy.width}x{noisy.height} does not match gt {gt.width}x{gt.height}")
    both = (gt.values > 0) & (noisy.values > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(noisy.values - gt.values) / gt.values
    keep = both & (rel <= config.noisy_inconsistency_tau)
    return DepthMap(np.where(keep, noisy.values, 0.0))


def apply_protocol(name: str, gt: DepthMap, config: ProtocolConfig = ProtocolConfig(),
                   noisy: Optional[DepthMap] = None) -> DepthMap:
    """Dispatch a protocol by name; ``noisy`` is required for the noisy track."""
    if name == "unpaired_fov":
        return gen_unpaired_fov(gt, config)
    if name == "sparse_tof":
        return gen_sparse_tof(gt, config)
    if name == "short_range":
        return gen_short_range(gt, config)
    if name == "noisy":
        if noisy is None:
            raise ValueError("the noisy protocol requires a paired noisy depth map")
        return gen_noisy(gt, noisy, config)
    raise ValueError(f"unknown protocol {name!r}")
