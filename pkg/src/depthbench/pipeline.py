"""Batch machinery behind the CLI commands.

Images are discovered by shared file stem across the dataset
subdirectories and always processed in sorted-id order with per-image
seeds derived from (root seed, stage, id), so results do not depend on
traversal or worker scheduling.  A failure on one image marks that image
failed and the run continues; manifests list every file a run wrote.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image

from ._version import __version__
from .completion import complete_idw, complete_nearest, iterate
from .config import ConfigError, ExperimentConfig, config_snapshot
from .depth_core import (FORMAT_EXTENSIONS, DepthMap, derive_seed, load_depth,
                         save_depth, to_gray)
from .metrics import MetricReport, aggregate, eval_pair
from .protocols import apply_protocol
from .reporting import (fmt_num, render_bar_chart, render_line_chart,
                        write_csv, write_markdown_table)
from .sparsity import POINT_KINDS, SparsitySpec, synthesize

RGB_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


class RunError(RuntimeError):
    """A run could not produce any result (distinct from per-image failures)."""


@dataclass
class ImageEntry:
    id: str
    depth_path: Path
    rgb_path: Optional[Path] = None
    guidance_path: Optional[Path] = None
    noisy_path: Optional[Path] = None


@dataclass
class ImageResult:
    id: str
    ok: bool
    error: Optional[str] = None
    outputs: list[str] = field(default_factory=list)
    info: dict = field(default_factory=dict)
    report: Optional[MetricReport] = None


@dataclass
class RunOutcome:
    results: list[ImageResult]
    outputs: list[str]
    n_failed: int
    aggregate: Optional[MetricReport] = None

    @property
    def n_ok(self) -> int:
        return len(self.results) - self.n_failed


# ---------------------------------------------------------------------------
# Dataset discovery

def scan_dataset(cfg: ExperimentConfig, need_rgb: bool = False,
                 need_guidance: bool = False,
                 need_noisy: bool = False) -> list[ImageEntry]:
    """Pair files by shared stem; missing required pairs are config errors."""
    ds = cfg.dataset
    depth_dir = ds.root / ds.depth_dir
    if not depth_dir.is_dir():
        raise ConfigError(f"depth directory {depth_dir} does not exist")
    ext = FORMAT_EXTENSIONS[ds.depth_format]
    ids = sorted(p.stem for p in depth_dir.glob(f"*{ext}") if p.is_file())
    if not ids:
        raise ConfigError(f"no {ds.depth_format} depth files in {depth_dir}")
    if ds.split is not None:
        if not ds.split.is_file():
            raise ConfigError(f"split file {ds.split} does not exist")
        stems = [line.strip() for line in ds.split.read_text(encoding="utf-8").splitlines()
                 if line.strip()]
        missing = sorted(set(stems) - set(ids))
        if missing:
            raise ConfigError(f"split lists ids with no depth file: {', '.join(missing)}")
        ids = sorted(set(stems))

    entries = []
    for id_ in ids:
        entry = ImageEntry(id=id_, depth_path=depth_dir / f"{id_}{ext}")
        if need_rgb:
            entry.rgb_path = _find_stem(ds.root / ds.rgb_dir, id_, RGB_EXTENSIONS)
            if entry.rgb_path is None:
                raise ConfigError(f"no RGB image for id {id_!r} in {ds.root / ds.rgb_dir}")
        if need_guidance:
            gext = FORMAT_EXTENSIONS[ds.guidance_format]
            entry.guidance_path = _find_stem(ds.root / ds.guidance_dir, id_, (gext,))
            if entry.guidance_path is None:
                raise ConfigError(
                    f"no guidance map for id {id_!r} in {ds.root / ds.guidance_dir}")
        if need_noisy:
            entry.noisy_path = _find_stem(ds.root / ds.noisy_dir, id_, (ext,))
            if entry.noisy_path is None:
                raise ConfigError(f"no noisy map for id {id_!r} in {ds.root / ds.noisy_dir}")
        entries.append(entry)
    return entries


def _find_stem(directory: Path, stem: str, exts: tuple[str, ...]) -> Optional[Path]:
    for ext in exts:
        candidate = directory / f"{stem}{ext}"
        if candidate.is_file():
            return candidate
    return None


def _load_rgb_gray(path: Path):
    with Image.open(path) as im:
        return to_gray(np.asarray(im.convert("RGB")))


# ---------------------------------------------------------------------------
# Per-image execution

def _run_images(entries: list[ImageEntry],
                worker: Callable[[ImageEntry], ImageResult],
                jobs: int) -> list[ImageResult]:
    def safe(entry: ImageEntry) -> ImageResult:
        try:
            return worker(entry)
        except Exception as exc:
            return ImageResult(entry.id, ok=False, error=f"{type(exc).__name__}: {exc}")

    if jobs <= 1:
        return [safe(e) for e in entries]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(safe, entries))


def _write_manifest(out_dir: Path, name: str, command: str, cfg: ExperimentConfig,
                    results: list[ImageResult], outputs: list[str]) -> str:
    outputs = sorted(set(outputs) | {name})
    doc = {
        "tool": "depthbench",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": config_snapshot(cfg),
        "images": [_image_record(r) for r in results],
        "outputs": outputs,
    }
    path = out_dir / name
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return name


def _image_record(r: ImageResult) -> dict:
    rec = {"id": r.id, "status": "ok" if r.ok else "failed"}
    if r.error is not None:
        rec["error"] = r.error
    if r.outputs:
        rec["outputs"] = sorted(r.outputs)
    rec.update(r.info)
    return rec


def _rel(path: Path, base: Path) -> str:
    return path.relative_to(base).as_posix()


# ---------------------------------------------------------------------------
# synth

def run_synth(cfg: ExperimentConfig) -> RunOutcome:
    """Degrade every ground-truth map per the configured protocol or spec."""
    ds = cfg.dataset
    use_protocol = cfg.protocol_name is not None
    if not use_protocol and cfg.sparsity is None:
        raise ConfigError("synth needs a 'protocol' or 'sparsity' section (or --protocol)")
    if not use_protocol and cfg.seed is None:
        raise ConfigError("sparsity synthesis is stochastic; a seed is required")
    need_rgb = (not use_protocol) and cfg.sparsity.uses_features()
    need_noisy = use_protocol and cfg.protocol_name == "noisy"
    entries = scan_dataset(cfg, need_rgb=need_rgb, need_noisy=need_noisy)

    out_dir = cfg.out
    sparse_dir = out_dir / "sparse"
    sparse_dir.mkdir(parents=True, exist_ok=True)
    ext = FORMAT_EXTENSIONS[ds.depth_format]

    def worker(entry: ImageEntry) -> ImageResult:
        gt = load_depth(entry.depth_path, ds.depth_format, ds.depth_scale)
        if use_protocol:
            noisy = (load_depth(entry.noisy_path, ds.depth_format, ds.depth_scale)
                     if need_noisy else None)
            result = apply_protocol(cfg.protocol_name, gt, cfg.protocol, noisy=noisy)
        else:
            img = _load_rgb_gray(entry.rgb_path) if need_rgb else None
            seed_i = derive_seed(cfg.seed, "synth", entry.id)
            result = synthesize(gt, cfg.sparsity, seed_i, img)
        out_path = sparse_dir / f"{entry.id}_sparse{ext}"
        save_depth(result, out_path, ds.depth_format, ds.depth_scale)
        return ImageResult(entry.id, ok=True, outputs=[_rel(out_path, out_dir)],
                           info={"valid_count": result.valid_count()})

    results = _run_images(entries, worker, cfg.jobs)
    outputs = [o for r in results for o in r.outputs]
    _write_manifest(out_dir, "synth_manifest.json", "synth", cfg, results, outputs)
    n_failed = sum(not r.ok for r in results)
    return RunOutcome(results, sorted(outputs + ["synth_manifest.json"]), n_failed)


# ---------------------------------------------------------------------------
# complete

def run_complete(cfg: ExperimentConfig) -> RunOutcome:
    """Densify every sparse map with the configured method."""
    ds = cfg.dataset
    need_guidance = cfg.method == "guidance"
    if need_guidance and cfg.completion.robust and cfg.seed is None:
        raise ConfigError("robust guidance completion is stochastic; a seed is required")
    entries = scan_dataset(cfg, need_guidance=need_guidance)
    sparse_dir = cfg.sparse_dir if cfg.sparse_dir is not None else cfg.out / "sparse"
    if not sparse_dir.is_dir():
        raise ConfigError(f"sparse input directory {sparse_dir} does not exist")

    out_dir = cfg.out
    completed_dir = out_dir / "completed"
    completed_dir.mkdir(parents=True, exist_ok=True)
    ext = FORMAT_EXTENSIONS[ds.depth_format]

    def worker(entry: ImageEntry) -> ImageResult:
        sparse_path = _find_stem(sparse_dir, f"{entry.id}_sparse", (ext,)) \
            or _find_stem(sparse_dir, entry.id, (ext,))
        if sparse_path is None:
            raise FileNotFoundError(f"no sparse map for id {entry.id!r} in {sparse_dir}")
        sparse = load_depth(sparse_path, ds.depth_format, ds.depth_scale)
        if cfg.method == "guidance":
            guidance = load_depth(entry.guidance_path, ds.guidance_format,
                                  ds.guidance_scale)
            seed_i = derive_seed(cfg.seed if cfg.seed is not None else 0,
                                 "complete", entry.id)
            result = iterate(sparse, guidance, cfg.completion, seed_i)
        elif cfg.method == "idw":
            result = complete_idw(sparse, cfg.completion)
        else:
            result = complete_nearest(sparse, cfg.completion)
        out_path = completed_dir / f"{entry.id}_completed{ext}"
        save_depth(result, out_path, ds.depth_format, ds.depth_scale)
        return ImageResult(entry.id, ok=True, outputs=[_rel(out_path, out_dir)])

    results = _run_images(entries, worker, cfg.jobs)
    outputs = [o for r in results for o in r.outputs]
    _write_manifest(out_dir, "complete_manifest.json", "complete", cfg, results, outputs)
    n_failed = sum(not r.ok for r in results)
    return RunOutcome(results, sorted(outputs + ["complete_manifest.json"]), n_failed)


# ---------------------------------------------------------------------------
# eval

def run_eval(cfg: ExperimentConfig) -> RunOutcome:
    """Score predictions against ground truth; write CSV, Markdown, and chart."""
    ds = cfg.dataset
    vn_enabled = cfg.vn_triplets > 0
    if vn_enabled and ds.intrinsics is None:
        raise ConfigError("metrics.vn_triplets > 0 requires dataset.intrinsics")
    if vn_enabled and cfg.seed is None:
        raise ConfigError("virtual-normal sampling is stochastic; a seed is required")
    entries = scan_dataset(cfg)
    pred_dir = cfg.pred_dir if cfg.pred_dir is not None else cfg.out / "completed"
    if not pred_dir.is_dir():
        raise ConfigError(f"prediction directory {pred_dir} does not exist")

    out_dir = cfg.out
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = FORMAT_EXTENSIONS[ds.depth_format]

    def worker(entry: ImageEntry) -> ImageResult:
        pred_path = _find_stem(pred_dir, f"{entry.id}_completed", (ext,)) \
            or _find_stem(pred_dir, entry.id, (ext,))
        if pred_path is None:
            raise FileNotFoundError(f"no prediction for id {entry.id!r} in {pred_dir}")
        pred = load_depth(pred_path, ds.depth_format, ds.depth_scale)
        gt = load_depth(entry.depth_path, ds.depth_format, ds.depth_scale)
        report = eval_pair(
            pred, gt, cfg.taus,
            intrinsics=ds.intrinsics if vn_enabled else None,
            seed=derive_seed(cfg.seed if cfg.seed is not None else 0, "eval", entry.id),
            vn_triplets=cfg.vn_triplets if vn_enabled else 1,
        )
        return ImageResult(entry.id, ok=True, report=report)

    results = _run_images(entries, worker, cfg.jobs)
    ok_results = [r for r in results if r.ok]
    if not ok_results:
        details = "; ".join(f"{r.id}: {r.error}" for r in results[:5])
        raise RunError(f"every image failed evaluation ({details})")
    agg = aggregate([r.report for r in ok_results])

    header = ["id", "n_eval", "absrel", "mae", "rmse"]
    header += [f"delta_{fmt_num(tau)}" for tau in cfg.taus]
    if vn_enabled:
        header.append("vn_angle")
    rows = []
    for r in ok_results:
        row = [r.id, r.report.n_eval, r.report.absrel, r.report.mae, r.report.rmse]
        row += [r.report.delta[float(tau)] for tau in cfg.taus]
        if vn_enabled:
            row.append(r.report.vn_angle)
        rows.append(row)
    outputs = []
    write_csv(out_dir / "metrics.csv", header, rows)
    outputs.append("metrics.csv")

    md_header = ["images", "failed"] + header[1:]
    md_row = [len(ok_results), sum(not r.ok for r in results), agg.n_eval,
              agg.absrel, agg.mae, agg.rmse]
    md_row += [agg.delta[float(tau)] for tau in cfg.taus]
    if vn_enabled:
        md_row.append(agg.vn_angle)
    write_markdown_table(out_dir / "report.md", "Evaluation report", md_header, [md_row])
    outputs.append("report.md")

    render_bar_chart(out_dir / "absrel_per_image.svg",
                     [r.id for r in ok_results],
                     [r.report.absrel for r in ok_results],
                     ylabel="AbsRel", title="AbsRel per image")
    outputs.append("absrel_per_image.svg")

    for r in ok_results:
        r.info = {"absrel": r.report.absrel, "n_eval": r.report.n_eval}
    _write_manifest(out_dir, "eval_manifest.json", "eval", cfg, results, outputs)
    n_failed = sum(not r.ok for r in results)
    return RunOutcome(results, sorted(outputs + ["eval_manifest.json"]), n_failed, agg)


# ---------------------------------------------------------------------------
# sweep

def _sweep_spec(cfg: ExperimentConfig, value) -> SparsitySpec:
    base = cfg.sparsity if cfg.sparsity is not None else SparsitySpec("uniform")
    if cfg.sweep_axis == "points":
        if base.kind not in POINT_KINDS:
            raise ConfigError(
                f"sweep over points needs a point-sampling sparsity kind, got {base.kind!r}")
        n = int(value)
        if n != value or n < 0:
            raise ConfigError(f"points grid values must be non-negative integers, got {value!r}")
        return dataclasses.replace(base, point_count_range=(n, n))
    ratio = float(value)
    return dataclasses.replace(base, outlier_ratio=ratio)


def run_sweep(cfg: ExperimentConfig) -> RunOutcome:
    """synth -> complete -> eval per grid value, with a shared root seed."""
    if cfg.sweep_axis is None or not cfg.sweep_grid:
        raise ConfigError("sweep needs a 'sweep' section with 'axis' and 'grid'")
    if cfg.seed is None:
        raise ConfigError("sweep synthesizes sparsity; a seed is required")
    if len(set(cfg.sweep_grid)) != len(cfg.sweep_grid):
        raise ConfigError("sweep.grid values must be unique")
    if cfg.protocol_name is not None:
        raise ConfigError("sweep varies a sparsity spec; remove 'protocol' or --protocol")

    out_dir = cfg.out
    out_dir.mkdir(parents=True, exist_ok=True)
    grid_rows = []
    all_results: list[ImageResult] = []
    outputs: list[str] = []
    n_failed = 0
    for value in cfg.sweep_grid:
        spec = _sweep_spec(cfg, value)
        tag = f"sweep_{cfg.sweep_axis}_{fmt_num(value)}"
        sub_cfg = dataclasses.replace(
            cfg, sparsity=spec, out=out_dir / tag,
            sparse_dir=None, pred_dir=None, sweep_axis=None, sweep_grid=())
        try:
            for outcome in (run_synth(sub_cfg), run_complete(sub_cfg)):
                n_failed += outcome.n_failed
                all_results.extend(outcome.results)
                outputs += [f"{tag}/{o}" for o in outcome.outputs]
            eval_outcome = run_eval(sub_cfg)
        except RunError as exc:
            n_failed += 1
            all_results.append(ImageResult(f"{tag}", ok=False, error=str(exc)))
            continue
        n_failed += eval_outcome.n_failed
        all_results.extend(eval_outcome.results)
        outputs += [f"{tag}/{o}" for o in eval_outcome.outputs]
        agg = eval_outcome.aggregate
        grid_rows.append([value, agg.absrel, agg.rmse, agg.delta[float(cfg.taus[0])]])

    if not grid_rows:
        raise RunError("every sweep grid value failed")

    delta_name = f"delta_{fmt_num(cfg.taus[0])}"
    header = [cfg.sweep_axis, "absrel", "rmse", delta_name]
    write_csv(out_dir / "sweep.csv", header, grid_rows)
    outputs.append("sweep.csv")
    render_line_chart(
        out_dir / "sweep.svg",
        x=[row[0] for row in grid_rows],
        series={"absrel": [row[1] for row in grid_rows],
                "rmse": [row[2] for row in grid_rows],
                delta_name: [row[3] for row in grid_rows]},
        xlabel=cfg.sweep_axis, ylabel="metric value",
        title=f"Metrics vs {cfg.sweep_axis}")
    outputs.append("sweep.svg")
    _write_manifest(out_dir, "sweep_manifest.json", "sweep", cfg, all_results, outputs)
    return RunOutcome(all_results, sorted(outputs + ["sweep_manifest.json"]), n_failed)
