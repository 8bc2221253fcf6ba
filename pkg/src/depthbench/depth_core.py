"""Depth map carriers and file I/O.

Conventions used across the toolkit:

* A depth map is a 2-D float array in meters, row-major, top-to-bottom.
  The value 0.0 marks an invalid (missing) pixel; every stored value is
  finite and non-negative.
* Pixel coordinates are (u, v) = (column, row); the origin is the top-left
  pixel center.

Supported on-disk formats:

``png16``
    16-bit grayscale PNG.  Stored value = round(depth / scale), so the
    default scale of 0.001 encodes millimeters.  Values that do not fit
    in 16 bits raise :class:`DepthFormatError`.
``pfm``
    Portable Float Map, single channel ("Pf").  The sign of the scale
    line selects endianness (negative = little-endian); its magnitude is
    not applied to the samples.  PFM files store rows bottom-to-top; maps
    are normalized to top-to-bottom in memory.
``rawf32``
    8-byte header (uint32 width, uint32 height, little-endian) followed
    by width*height little-endian float32 samples, row-major.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

DEPTH_FORMATS = ("png16", "pfm", "rawf32")

#: File extension used when writing each format.
FORMAT_EXTENSIONS = {"png16": ".png", "pfm": ".pfm", "rawf32": ".rawf32"}

DEFAULT_PNG16_SCALE = 0.001


class DepthFormatError(ValueError):
    """Raised for malformed depth files or values a format cannot hold."""


class DepthMap:
    """Immutable 2-D metric depth image; 0.0 marks invalid pixels."""

    __slots__ = ("values",)

    def __init__(self, values: np.ndarray):
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"depth map must be 2-D and non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("depth map contains non-finite values")
        if np.any(arr < 0):
            raise ValueError("depth map contains negative values")
        if arr is values or np.shares_memory(arr, values):
            arr = arr.copy()
        arr.setflags(write=False)
        self.values = arr

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def valid_mask(self) -> np.ndarray:
        return self.values > 0

    def valid_count(self) -> int:
        return int(np.count_nonzero(self.values))

    def __eq__(self, other) -> bool:
        return isinstance(other, DepthMap) and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"DepthMap({self.width}x{self.height}, {self.valid_count()} valid)"


class GrayImage:
    """Immutable 2-D uint8 intensity image."""

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.ascontiguousarray(pixels)
        if arr.dtype != np.uint8:
            raise ValueError(f"gray image must be uint8, got {arr.dtype}")
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"gray image must be 2-D and non-empty, got shape {arr.shape}")
        if arr is pixels or np.shares_memory(arr, pixels):
            arr = arr.copy()
        arr.setflags(write=False)
        self.pixels = arr

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __repr__(self) -> str:
        return f"GrayImage({self.width}x{self.height})"


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")


def to_gray(rgb: np.ndarray) -> GrayImage:
    """Convert an (H, W, 3) uint8 RGB array to BT.601 luma.

    luma = round(0.299 R + 0.587 G + 0.114 B), clamped to [0, 255].
    """
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 array, got shape {arr.shape} dtype {arr.dtype}")
    f = arr.astype(np.float64)
    luma = 0.299 * f[:, :, 0] + 0.587 * f[:, :, 1] + 0.114 * f[:, :, 2]
    out = np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)
    return GrayImage(out)


def unproject(depth: DepthMap, intrinsics: CameraIntrinsics, u: int, v: int) -> np.ndarray:
    """Back-project pixel (u, v) to a camera-space 3-D point.

    X = (u - cx) * d / fx, Y = (v - cy) * d / fy, Z = d.
    Raises ValueError for out-of-bounds or invalid (zero-depth) pixels.
    """
    if not (0 <= u < depth.width and 0 <= v < depth.height):
        raise ValueError(f"pixel ({u}, {v}) outside {depth.width}x{depth.height} image")
    d = depth.values[v, u]
    if d <= 0:
        raise ValueError(f"pixel ({u}, {v}) has no valid depth")
    return np.array([
        (u - intrinsics.cx) * d / intrinsics.fx,
        (v - intrinsics.cy) * d / intrinsics.fy,
        d,
    ])


def unproject_points(depth: DepthMap, intrinsics: CameraIntrinsics,
                     us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Vectorized :func:`unproject` for index arrays; returns (N, 3)."""
    d = depth.values[vs, us]
    if np.any(d <= 0):
        raise ValueError("unproject_points requires valid depth at every pixel")
    return np.stack([
        (us - intrinsics.cx) * d / intrinsics.fx,
        (vs - intrinsics.cy) * d / intrinsics.fy,
        d,
    ], axis=-1)


# ---------------------------------------------------------------------------
# Seeding

_SEED_MAX = 2 ** 64


def check_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise ValueError(f"seed must be an integer, got {type(seed).__name__}")
    if not (0 <= seed < _SEED_MAX):
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return int(seed)


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(check_seed(seed)))


def derive_seed(seed: int, *parts: str) -> int:
    """Stable 64-bit sub-seed from a root seed and string labels.

    Uses BLAKE2b so derived streams do not depend on process salt or
    traversal order; the same (seed, labels) always yields the same value.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(check_seed(seed).to_bytes(8, "little"))
    for part in parts:
        h.update(b"\x00")
        h.update(part.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


# ---------------------------------------------------------------------------
# File I/O

def save_depth(depth: DepthMap, path: str | Path, format: str,
               scale: float = DEFAULT_PNG16_SCALE) -> None:
    """Write a depth map; ``scale`` (meters per stored unit) applies to png16 only."""
    path = Path(path)
    if format == "png16":
        _save_png16(depth, path, scale)
    elif format == "pfm":
        _save_pfm(depth, path)
    elif format == "rawf32":
        _save_rawf32(depth, path)
    else:
        raise DepthFormatError(f"unknown depth format {format!r}")


def load_depth(path: str | Path, format: str,
               scale: float = DEFAULT_PNG16_SCALE) -> DepthMap:
    """Read a depth map; non-finite or negative samples load as invalid (0)."""
    path = Path(path)
    if format == "png16":
        arr = _load_png16(path, scale)
    elif format == "pfm":
        arr = _load_pfm(path)
    elif format == "rawf32":
        arr = _load_rawf32(path)
    else:
        raise DepthFormatError(f"unknown depth format {format!r}")
    arr[~np.isfinite(arr)] = 0.0
    arr[arr < 0] = 0.0
    return DepthMap(arr)


def _save_png16(depth: DepthMap, path: Path, scale: float) -> None:
    if scale <= 0:
        raise DepthFormatError("png16 scale must be positive")
    units = np.floor(depth.values / scale + 0.5)
    if np.any(units > 0xFFFF):
        raise DepthFormatError(
            f"depth {depth.values.max():g} m does not fit in 16 bits at scale {scale:g}")
    Image.fromarray(units.astype(np.uint16)).save(path, format="PNG")


def _load_png16(path: Path, scale: float) -> np.ndarray:
    if scale <= 0:
        raise DepthFormatError("png16 scale must be positive")
    try:
        with Image.open(path) as im:
            if im.mode not in ("I;16", "I;16B", "I"):
                raise DepthFormatError(f"{path}: expected 16-bit grayscale PNG, got mode {im.mode}")
            arr = np.asarray(im, dtype=np.float64)
    except DepthFormatError:
        raise
    except Exception as exc:
        raise DepthFormatError(f"{path}: cannot read PNG ({exc})") from exc
    if arr.ndim != 2:
        raise DepthFormatError(f"{path}: expected single-channel PNG")
    return arr * scale


def _save_pfm(depth: DepthMap, path: Path) -> None:
    # Negative scale line = little-endian payload; rows written bottom-to-top.
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{depth.width} {depth.height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(depth.values).astype("<f4").tobytes())


def _read_pfm_token(f) -> bytes:
    token = b""
    while True:
        c = f.read(1)
        if c == b"":
            raise DepthFormatError("truncated PFM header")
        if c in b" \t\r\n":
            if token:
                return token
            continue
        token += c


def _load_pfm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        ident = _read_pfm_token(f)
        if ident == b"PF":
            raise DepthFormatError(f"{path}: color PFM not supported for depth")
        if ident != b"Pf":
            raise DepthFormatError(f"{path}: not a PFM file (header {ident!r})")
        try:
            width = int(_read_pfm_token(f))
            height = int(_read_pfm_token(f))
            scale = float(_read_pfm_token(f))
        except ValueError as exc:
            raise DepthFormatError(f"{path}: malformed PFM header") from exc
        if width <= 0 or height <= 0:
            raise DepthFormatError(f"{path}: bad PFM dimensions {width}x{height}")
        if scale == 0:
            raise DepthFormatError(f"{path}: PFM scale line must be nonzero")
        dtype = "<f4" if scale < 0 else ">f4"
        payload = f.read(width * height * 4)
        if len(payload) != width * height * 4:
            raise DepthFormatError(f"{path}: PFM payload shorter than {width}x{height} samples")
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return np.flipud(arr).astype(np.float64)


def _save_rawf32(depth: DepthMap, path: Path) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<II", depth.width, depth.height))
        f.write(depth.values.astype("<f4").tobytes())


def _load_rawf32(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise DepthFormatError(f"{path}: rawf32 header truncated")
    width, height = struct.unpack("<II", data[:8])
    if width == 0 or height == 0:
        raise DepthFormatError(f"{path}: bad rawf32 dimensions {width}x{height}")
    expected = 8 + width * height * 4
    if len(data) != expected:
        raise DepthFormatError(
            f"{path}: rawf32 size mismatch (expected {expected} bytes, got {len(data)})")
    arr = np.frombuffer(data[8:], dtype="<f4").reshape(height, width)
    return arr.astype(np.float64)
