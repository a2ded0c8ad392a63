"""Batch engine behind the CLI: corrupt, defend, evaluate, report.

Each input gets its own child seed (SeedSequence spawn in input order), so
reports are reproducible for a fixed base seed regardless of worker count.
The `seconds` column is wall time and is the one column excluded when
comparing reports for determinism.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from sklearn.pipeline import Pipeline

from .corruption import (
    adaptive_attack,
    add_outliers,
    deform,
    jitter_on_surface,
    remove_local_part,
)
from .errors import PcrestoreError
from .fields import OccupancyField
from .metrics import chamfer, hausdorff, uniformity_cv
from .remesh import MarchingCubesRestorer
from .restore import OptimizationRestorer
from .sor import StatisticalOutlierFilter
from .io import write_points
from .validation import check_points

REPORT_COLUMNS = (
    "file",
    "variant",
    "seed",
    "N_in",
    "N_out",
    "chamfer_x1e3",
    "hausdorff",
    "uniformity_cv",
    "seconds",
    "error",
)

VARIANTS = ("none", "sor", "opt", "mesh", "sor+opt", "sor+mesh")

CORRUPTION_NAMES = ("outliers", "jitter", "remove", "deform", "adaptive")


@dataclass(frozen=True)
class StageSpec:
    """One corruption stage: a name plus keyword parameters."""

    name: str
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.name not in CORRUPTION_NAMES:
            raise ValueError(
                f"unknown corruption {self.name!r}, available: {', '.join(CORRUPTION_NAMES)}"
            )


def parse_corruption(text: str) -> StageSpec:
    """Parse 'name:key=value,key=value' into a StageSpec.

    Values parse as float when possible, else stay strings (e.g.
    remove:mode=farthest). The name alone means all defaults.
    """
    name, _, rest = text.partition(":")
    params: dict = {}
    if rest:
        for item in rest.split(","):
            key, sep, value = item.partition("=")
            if not sep or not key:
                raise ValueError(f"bad corruption parameter {item!r} in {text!r}")
            try:
                params[key] = float(value)
            except ValueError:
                params[key] = value
    return StageSpec(name.strip(), params)


def apply_corruption(points, stage: StageSpec, field: OccupancyField | None, tau: float, rng):
    p = dict(stage.params)
    if stage.name == "outliers":
        out, _ = add_outliers(
            points, fraction=p.pop("fraction", 0.1), magnitude=p.pop("magnitude", 0.3), rng=rng
        )
    elif stage.name == "jitter":
        _need_field(stage, field)
        out = jitter_on_surface(points, field, sigma=p.pop("sigma", 0.02), rng=rng)
    elif stage.name == "remove":
        out, _ = remove_local_part(
            points, radius=p.pop("radius", 0.3), mode=p.pop("mode", "random"), rng=rng
        )
    elif stage.name == "deform":
        axis = {"x": (1, 0, 0), "y": (0, 1, 0), "z": (0, 0, 1)}[str(p.pop("axis", "z"))]
        out = deform(
            points,
            amplitude=p.pop("amplitude", 0.1),
            frequency=p.pop("frequency", 4.0),
            axis=axis,
            rng=rng,
        )
    else:  # adaptive
        _need_field(stage, field)
        out = adaptive_attack(
            points,
            field,
            tau=tau,
            budget=p.pop("budget", 2e-3),
            iterations=int(p.pop("iterations", 40)),
            step=p.pop("step", 0.02),
            rng=rng,
        )
    if p:
        raise ValueError(f"unknown parameters for {stage.name}: {sorted(p)}")
    return out


def _need_field(stage: StageSpec, field) -> None:
    if field is None:
        raise ValueError(f"corruption {stage.name!r} needs an occupancy field")


@dataclass(frozen=True)
class PipelineOptions:
    variant: str = "sor+opt"
    corruptions: tuple[StageSpec, ...] = ()
    tau: float = 0.2
    lam: float = 500.0
    h: float = 0.03
    k_rep: int = 5
    learning_rate: float = 0.01
    iterations: int = 200
    target_count: int = 1024
    knn_refresh: int = 1
    sor_k: int = 2
    sor_alpha: float = 1.1
    grid_res: int = 64
    metrics_k: int = 5
    seed: int = 0
    jobs: int = 1
    out_dir: str | None = None
    fmt: str = "xyz"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}, available: {', '.join(VARIANTS)}"
            )


def make_defense(variant: str, field: OccupancyField | None, opts: PipelineOptions, rng) -> Pipeline:
    """Build the defense variant as an sklearn Pipeline of transformers."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    steps = []
    if variant in ("sor", "sor+opt", "sor+mesh"):
        steps.append(("sor", StatisticalOutlierFilter(k=opts.sor_k, alpha=opts.sor_alpha)))
    if variant in ("opt", "sor+opt"):
        steps.append(
            (
                "restore",
                OptimizationRestorer(
                    field=field,
                    tau=opts.tau,
                    lam=opts.lam,
                    h=opts.h,
                    k_rep=opts.k_rep,
                    learning_rate=opts.learning_rate,
                    iterations=opts.iterations,
                    target_count=opts.target_count,
                    knn_refresh=opts.knn_refresh,
                    seed=rng,
                ),
            )
        )
    if variant in ("mesh", "sor+mesh"):
        steps.append(
            (
                "remesh",
                MarchingCubesRestorer(
                    field=field,
                    resolution=opts.grid_res,
                    iso=opts.tau,
                    target_count=opts.target_count,
                    seed=rng,
                ),
            )
        )
    if not steps:
        steps.append(("identity", "passthrough"))
    return Pipeline(steps)


@dataclass(frozen=True)
class PipelineInput:
    label: str
    points: np.ndarray


def process_one(
    item: PipelineInput,
    field: OccupancyField | None,
    opts: PipelineOptions,
    seed_seq: np.random.SeedSequence,
) -> dict:
    """Corrupt, defend, and score one cloud; never raises for per-cloud errors."""
    start = time.perf_counter()
    row = {c: "" for c in REPORT_COLUMNS}
    row["file"] = item.label
    row["variant"] = opts.variant
    row["seed"] = opts.seed
    try:
        rng = np.random.default_rng(seed_seq)
        clean = check_points(item.points)
        cloud = clean
        for stage in opts.corruptions:
            cloud = apply_corruption(cloud, stage, field, opts.tau, rng)
        row["N_in"] = cloud.shape[0]
        defense = make_defense(opts.variant, field, opts, rng)
        restored = defense.fit_transform(cloud)
        row["N_out"] = restored.shape[0]
        row["chamfer_x1e3"] = repr(chamfer(restored, clean) * 1e3)
        row["hausdorff"] = repr(hausdorff(restored, clean))
        row["uniformity_cv"] = repr(uniformity_cv(restored, opts.metrics_k))
        if opts.out_dir:
            os.makedirs(opts.out_dir, exist_ok=True)
            stem = os.path.splitext(os.path.basename(item.label))[0] or "cloud"
            ext = "xyz" if opts.fmt == "xyz" else "ply"
            out_path = os.path.join(opts.out_dir, f"{stem}.{opts.variant}.{ext}")
            write_points(out_path, restored, opts.fmt)
    except (PcrestoreError, ValueError, KeyError, OSError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["seconds"] = f"{time.perf_counter() - start:.3f}"
    return row


def run_pipeline(
    inputs: list[PipelineInput], field: OccupancyField | None, opts: PipelineOptions
) -> list[dict]:
    seeds = np.random.SeedSequence(opts.seed).spawn(len(inputs))
    if opts.jobs <= 1:
        return [process_one(item, field, opts, s) for item, s in zip(inputs, seeds)]
    with ThreadPoolExecutor(max_workers=opts.jobs) as pool:
        return list(
            pool.map(lambda args: process_one(args[0], field, opts, args[1]), zip(inputs, seeds))
        )


def sweep_lambda(
    inputs: list[PipelineInput],
    field: OccupancyField | None,
    opts: PipelineOptions,
    lambdas,
) -> list[dict]:
    """Run the pipeline once per lambda; rows keep the fixed schema with the
    lambda recorded in the variant column (e.g. "sor+opt:lam100")."""
    rows = []
    for lam in lambdas:
        sub = replace(opts, lam=float(lam))
        for row in run_pipeline(inputs, field, sub):
            row["variant"] = f"{opts.variant}:lam{lam:g}"
            rows.append(row)
    return rows


def write_report(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def report_text(rows) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in REPORT_COLUMNS))
    return "\n".join(lines)
