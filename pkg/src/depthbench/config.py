"""Experiment configuration: a single YAML (or JSON) file plus CLI overrides.

Top-level keys: ``seed``, ``out``, ``jobs``, ``dataset``, ``protocol``,
``sparsity``, ``completion``, ``metrics``, ``sweep``, ``sparse_dir``,
``pred_dir``.  Section keys mirror the corresponding dataclass fields;
unknown keys are rejected so typos fail fast.  Relative paths resolve
against the config file's directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .completion import CompletionConfig
from .depth_core import DEPTH_FORMATS, CameraIntrinsics, check_seed
from .metrics import DEFAULT_TAUS
from .protocols import PROTOCOL_NAMES, ProtocolConfig
from .sparsity import SparsitySpec

COMPLETION_METHODS = ("guidance", "idw", "nearest")
SWEEP_AXES = ("points", "outlier_ratio")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


@dataclass
class DatasetConfig:
    root: Path
    depth_dir: str = "depth"
    rgb_dir: str = "rgb"
    guidance_dir: str = "guidance"
    noisy_dir: str = "noisy"
    depth_format: str = "png16"
    depth_scale: float = 0.001
    guidance_format: Optional[str] = None
    guidance_scale: Optional[float] = None
    split: Optional[Path] = None
    intrinsics: Optional[CameraIntrinsics] = None

    def __post_init__(self):
        if self.depth_format not in DEPTH_FORMATS:
            raise ConfigError(f"depth_format must be one of {DEPTH_FORMATS}, "
                              f"got {self.depth_format!r}")
        if self.guidance_format is None:
            self.guidance_format = self.depth_format
        elif self.guidance_format not in DEPTH_FORMATS:
            raise ConfigError(f"guidance_format must be one of {DEPTH_FORMATS}, "
                              f"got {self.guidance_format!r}")
        if self.guidance_scale is None:
            self.guidance_scale = self.depth_scale
        if self.depth_scale <= 0 or self.guidance_scale <= 0:
            raise ConfigError("depth/guidance scale must be positive")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    out: Path = Path("out")
    seed: Optional[int] = None
    jobs: int = 1
    protocol_name: Optional[str] = None
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    sparsity: Optional[SparsitySpec] = None
    method: str = "guidance"
    completion: CompletionConfig = field(default_factory=CompletionConfig)
    taus: tuple[float, ...] = DEFAULT_TAUS
    vn_triplets: int = 0
    sparse_dir: Optional[Path] = None
    pred_dir: Optional[Path] = None
    sweep_axis: Optional[str] = None
    sweep_grid: tuple = ()

    def __post_init__(self):
        if self.seed is not None:
            self.seed = check_seed(self.seed)
        if self.jobs < 1:
            raise ConfigError(f"jobs must be at least 1, got {self.jobs}")
        if self.protocol_name is not None and self.protocol_name not in PROTOCOL_NAMES:
            raise ConfigError(f"protocol must be one of {PROTOCOL_NAMES}, "
                              f"got {self.protocol_name!r}")
        if self.method not in COMPLETION_METHODS:
            raise ConfigError(f"method must be one of {COMPLETION_METHODS}, "
                              f"got {self.method!r}")
        if not self.taus:
            raise ConfigError("metrics.taus must not be empty")
        for tau in self.taus:
            if not tau > 1:
                raise ConfigError(f"delta thresholds must exceed 1, got {tau}")
        if self.vn_triplets < 0:
            raise ConfigError("metrics.vn_triplets must not be negative")
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}, "
                              f"got {self.sweep_axis!r}")


def _require_mapping(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(value).__name__}")
    return value


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _as_range(value, where: str) -> tuple:
    if (not isinstance(value, (list, tuple))) or len(value) != 2:
        raise ConfigError(f"{where} must be a [min, max] pair, got {value!r}")
    return tuple(value)


def _build_sparsity(section: dict, where: str = "sparsity") -> SparsitySpec:
    _require_mapping(section, where)
    allowed = {"kind", "point_count_range", "fast_threshold_range",
               "polygon_vertex_range", "polygon_area_fraction_range",
               "distance_percentile_range", "children",
               "outlier_ratio", "outlier_factor_range"}
    _check_keys(section, allowed, where)
    if "kind" not in section:
        raise ConfigError(f"{where} needs a 'kind'")
    kwargs: dict[str, Any] = {"kind": section["kind"]}
    for key in ("point_count_range", "fast_threshold_range", "polygon_vertex_range",
                "polygon_area_fraction_range", "distance_percentile_range",
                "outlier_factor_range"):
        if key in section and section[key] is not None:
            kwargs[key] = _as_range(section[key], f"{where}.{key}")
    if "outlier_ratio" in section:
        kwargs["outlier_ratio"] = float(section["outlier_ratio"])
    if "children" in section:
        children = section["children"]
        if not isinstance(children, list):
            raise ConfigError(f"{where}.children must be a list")
        kwargs["children"] = tuple(
            _build_sparsity(_require_mapping(c, f"{where}.children[{i}]"),
                            f"{where}.children[{i}]")
            for i, c in enumerate(children))
    try:
        return SparsitySpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _build_dataset(section: dict, base: Path) -> DatasetConfig:
    _require_mapping(section, "dataset")
    allowed = {"root", "depth_dir", "rgb_dir", "guidance_dir", "noisy_dir",
               "depth_format", "depth_scale", "guidance_format", "guidance_scale",
               "split", "intrinsics"}
    _check_keys(section, allowed, "dataset")
    if "root" not in section:
        raise ConfigError("dataset.root is required")
    kwargs = dict(section)
    kwargs["root"] = _resolve(base, section["root"])
    if section.get("split") is not None:
        kwargs["split"] = _resolve(base, section["split"])
    if section.get("intrinsics") is not None:
        intr = _require_mapping(section["intrinsics"], "dataset.intrinsics")
        _check_keys(intr, {"fx", "fy", "cx", "cy"}, "dataset.intrinsics")
        try:
            kwargs["intrinsics"] = CameraIntrinsics(**{k: float(v) for k, v in intr.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"dataset.intrinsics: {exc}") from exc
    try:
        return DatasetConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"dataset: {exc}") from exc


def _resolve(base: Path, p) -> Path:
    path = Path(str(p))
    return path if path.is_absolute() else (base / path)


def _build_section(section: dict, cls, where: str, skip: set[str] = frozenset()):
    _require_mapping(section, where)
    fields = {f.name for f in dataclasses.fields(cls)} - skip
    _check_keys(section, fields, where)
    try:
        return cls(**{k: v for k, v in section.items() if k not in skip})
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON ({exc})") from exc
    if raw is None:
        raw = {}
    _require_mapping(raw, str(path))
    return build_config(raw, base=path.parent)


def build_config(raw: dict, base: Path = Path(".")) -> ExperimentConfig:
    allowed = {"seed", "out", "jobs", "dataset", "protocol", "sparsity",
               "completion", "metrics", "sweep", "sparse_dir", "pred_dir"}
    _check_keys(raw, allowed, "config")
    if "dataset" not in raw:
        raise ConfigError("config needs a 'dataset' section")
    kwargs: dict[str, Any] = {"dataset": _build_dataset(raw["dataset"], base)}
    if raw.get("seed") is not None:
        kwargs["seed"] = raw["seed"]
    kwargs["out"] = _resolve(base, raw.get("out", "out"))
    if "jobs" in raw:
        kwargs["jobs"] = int(raw["jobs"])
    if raw.get("protocol") is not None:
        section = dict(_require_mapping(raw["protocol"], "protocol"))
        name = section.pop("name", None)
        if name is None:
            raise ConfigError("protocol section needs a 'name'")
        kwargs["protocol_name"] = name
        kwargs["protocol"] = _build_section(section, ProtocolConfig, "protocol")
    if raw.get("sparsity") is not None:
        if raw.get("protocol") is not None:
            raise ConfigError("config defines both 'protocol' and 'sparsity'; pick one")
        kwargs["sparsity"] = _build_sparsity(raw["sparsity"])
    if raw.get("completion") is not None:
        section = dict(_require_mapping(raw["completion"], "completion"))
        if "method" in section:
            kwargs["method"] = section.pop("method")
        kwargs["completion"] = _build_section(section, CompletionConfig, "completion")
    if raw.get("metrics") is not None:
        section = _require_mapping(raw["metrics"], "metrics")
        _check_keys(section, {"taus", "vn_triplets"}, "metrics")
        if "taus" in section:
            taus = section["taus"]
            if not isinstance(taus, list) or not taus:
                raise ConfigError("metrics.taus must be a non-empty list")
            kwargs["taus"] = tuple(float(t) for t in taus)
        if "vn_triplets" in section:
            kwargs["vn_triplets"] = int(section["vn_triplets"])
    if raw.get("sweep") is not None:
        section = _require_mapping(raw["sweep"], "sweep")
        _check_keys(section, {"axis", "grid"}, "sweep")
        if "axis" not in section or "grid" not in section:
            raise ConfigError("sweep section needs 'axis' and 'grid'")
        grid = section["grid"]
        if not isinstance(grid, list) or not grid:
            raise ConfigError("sweep.grid must be a non-empty list")
        kwargs["sweep_axis"] = section["axis"]
        kwargs["sweep_grid"] = tuple(grid)
    for key in ("sparse_dir", "pred_dir"):
        if raw.get(key) is not None:
            kwargs[key] = _resolve(base, raw[key])
    try:
        return ExperimentConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(cfg: ExperimentConfig, seed: Optional[int] = None,
                    out: Optional[str] = None, method: Optional[str] = None,
                    protocol: Optional[str] = None,
                    jobs: Optional[int] = None) -> ExperimentConfig:
    """CLI flags win over config file keys."""
    if seed is not None:
        try:
            cfg.seed = check_seed(seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if out is not None:
        cfg.out = Path(out)
    if method is not None:
        if method not in COMPLETION_METHODS:
            raise ConfigError(f"method must be one of {COMPLETION_METHODS}")
        cfg.method = method
    if protocol is not None:
        if protocol not in PROTOCOL_NAMES:
            raise ConfigError(f"protocol must be one of {PROTOCOL_NAMES}")
        cfg.protocol_name = protocol
    if jobs is not None:
        if jobs < 1:
            raise ConfigError("jobs must be at least 1")
        cfg.jobs = jobs
    return cfg


def config_snapshot(cfg: ExperimentConfig) -> dict:
    """JSON-serializable view of the resolved configuration."""

    def convert(value):
        if isinstance(value, Path):
            return str(value)
        if isinstance(value, tuple):
            return [convert(v) for v in value]
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {f.name: convert(getattr(value, f.name))
                    for f in dataclasses.fields(value)}
        return value

    return convert(cfg)
