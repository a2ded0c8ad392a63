"""Command line interface.

Subcommands: corrupt, defend, mesh, eval, pipeline, sweep-lambda. Inputs
come from point cloud files (.xyz/.ply) or built-in fixtures; fields from
JSON CSG specs, binary MLP weight files, or fixture names. Batch commands
write the fixed-schema CSV report and exit nonzero if any file failed.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .errors import PcrestoreError
from .fields import load_field
from .fixtures import FIXTURE_SPECS, fixture_field, fixture_names, reference_cloud
from .geometry import normalize_unit_sphere
from .io import read_points, write_obj, write_points
from .metrics import evaluate
from .pipeline import (
    PipelineInput,
    PipelineOptions,
    REPORT_COLUMNS,
    VARIANTS,
    make_defense,
    parse_corruption,
    report_text,
    run_pipeline,
    sweep_lambda,
    write_report,
)
from .remesh import GridSpec, marching_cubes
from .validation import as_rng


def _add_field_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--field", help="occupancy field: JSON CSG spec or MLP weight file")
    p.add_argument(
        "--fixture",
        choices=fixture_names(),
        help="built-in fixture; provides the field and, for generated inputs, the clouds",
    )


def _add_io_args(p: argparse.ArgumentParser, multiple: bool = False) -> None:
    if multiple:
        p.add_argument("--in", dest="inputs", nargs="+", default=[], help="input cloud files")
    else:
        p.add_argument("--in", dest="inputs", help="input cloud file")
    p.add_argument("--format", dest="fmt", choices=("xyz", "ply", "ply-ascii"), default="xyz")
    p.add_argument("--seed", type=int, default=0)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, default=0.2, help="occupancy iso level")
    p.add_argument("--lambda", dest="lam", type=float, default=500.0, help="repulsion weight")
    p.add_argument("--h", type=float, default=0.03, help="repulsion radius scale")
    p.add_argument("--k-rep", type=int, default=5, help="repulsion neighbor count")
    p.add_argument("--lr", type=float, default=0.01, help="Adam learning rate")
    p.add_argument("--iters", type=int, default=200, help="optimization iterations")
    p.add_argument("--target-count", type=int, default=1024)
    p.add_argument("--knn-refresh", type=int, default=1)
    p.add_argument("--sor-k", type=int, default=2)
    p.add_argument("--sor-alpha", type=float, default=1.1)
    p.add_argument("--grid-res", type=int, default=64, help="marching cubes cells per axis")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcrestore", description="Point cloud restoration against adversarial corruption"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corrupt", help="apply synthetic corruptions to a cloud")
    _add_io_args(p)
    _add_field_args(p)
    p.add_argument("--count", type=int, default=1024, help="points when generating from a fixture")
    p.add_argument(
        "--corrupt",
        dest="corruptions",
        action="append",
        default=[],
        metavar="NAME[:k=v,...]",
        help="corruption stage, repeatable; names: outliers, jitter, remove, deform, adaptive",
    )
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--out", required=True)

    p = sub.add_parser("defend", help="restore a cloud with one defense variant")
    _add_io_args(p)
    _add_field_args(p)
    p.add_argument("--variant", choices=VARIANTS, default="sor+opt")
    _add_config_args(p)
    p.add_argument("--normalize", action="store_true", help="normalize into the unit sphere first")
    p.add_argument("--out", required=True)

    p = sub.add_parser("mesh", help="extract the iso-surface of a field as OBJ")
    _add_field_args(p)
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--grid-res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample", type=int, help="also sample this many surface points")
    p.add_argument("--points-out", help="where to write sampled points")
    p.add_argument("--format", dest="fmt", choices=("xyz", "ply", "ply-ascii"), default="xyz")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="metrics of a cloud against a reference cloud")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metrics-k", type=int, default=5)
    p.add_argument("--report", help="write a one-row CSV here")

    p = sub.add_parser("pipeline", help="corrupt, defend, and score a batch")
    _add_io_args(p, multiple=True)
    _add_field_args(p)
    p.add_argument("--count", type=int, default=1024)
    p.add_argument("--corrupt", dest="corruptions", action="append", default=[],
                   metavar="NAME[:k=v,...]")
    p.add_argument("--variant", choices=VARIANTS, default="sor+opt")
    _add_config_args(p)
    p.add_argument("--metrics-k", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", help="write restored clouds here")
    p.add_argument("--report", required=True, help="CSV report path")

    p = sub.add_parser("sweep-lambda", help="pipeline repeated over several lambda values")
    _add_io_args(p, multiple=True)
    _add_field_args(p)
    p.add_argument("--count", type=int, default=1024)
    p.add_argument("--corrupt", dest="corruptions", action="append", default=[],
                   metavar="NAME[:k=v,...]")
    p.add_argument("--variant", choices=VARIANTS, default="opt")
    _add_config_args(p)
    p.add_argument("--lambdas", default="0,100,500,1000",
                   help="comma-separated lambda values")
    p.add_argument("--metrics-k", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir")
    p.add_argument("--report", required=True)
    return parser


def _resolve_field(args):
    if getattr(args, "field", None):
        return load_field(args.field)
    if getattr(args, "fixture", None):
        return fixture_field(args.fixture)
    return None


def _gather_inputs(args, field_required: bool = False) -> list[PipelineInput]:
    inputs: list[PipelineInput] = []
    paths = args.inputs if isinstance(args.inputs, list) else ([args.inputs] if args.inputs else [])
    for path in paths:
        inputs.append(PipelineInput(label=path, points=read_points(path)))
    if not inputs and getattr(args, "fixture", None):
        pts = reference_cloud(
            args.fixture, count=args.count, tau=args.tau, rng=as_rng(args.seed)
        )
        inputs.append(PipelineInput(label=f"fixture:{args.fixture}", points=pts))
    if not inputs:
        raise ValueError("no inputs: pass --in files or --fixture")
    return inputs


def _options_from_args(args, variant=None) -> PipelineOptions:
    return PipelineOptions(
        variant=variant or args.variant,
        corruptions=tuple(parse_corruption(c) for c in args.corruptions),
        tau=args.tau,
        lam=args.lam,
        h=args.h,
        k_rep=args.k_rep,
        learning_rate=args.lr,
        iterations=args.iters,
        target_count=args.target_count,
        knn_refresh=args.knn_refresh,
        sor_k=args.sor_k,
        sor_alpha=args.sor_alpha,
        grid_res=args.grid_res,
        metrics_k=args.metrics_k,
        seed=args.seed,
        jobs=args.jobs,
        out_dir=args.out_dir,
        fmt=args.fmt,
    )


def _cmd_corrupt(args) -> int:
    field = _resolve_field(args)
    item = _gather_inputs(args)[0]
    rng = as_rng(args.seed)
    cloud = item.points
    from .pipeline import apply_corruption

    for spec in (parse_corruption(c) for c in args.corruptions):
        cloud = apply_corruption(cloud, spec, field, args.tau, rng)
    write_points(args.out, cloud, args.fmt)
    print(f"wrote {cloud.shape[0]} points to {args.out}")
    return 0


def _cmd_defend(args) -> int:
    field = _resolve_field(args)
    item = _gather_inputs(args)[0]
    cloud = item.points
    if args.normalize:
        cloud, _ = normalize_unit_sphere(cloud)
    if args.variant != "sor" and args.variant != "none" and field is None:
        raise ValueError(f"variant {args.variant!r} needs --field or --fixture")
    opts = PipelineOptions(
        variant=args.variant,
        tau=args.tau,
        lam=args.lam,
        h=args.h,
        k_rep=args.k_rep,
        learning_rate=args.lr,
        iterations=args.iters,
        target_count=args.target_count,
        knn_refresh=args.knn_refresh,
        sor_k=args.sor_k,
        sor_alpha=args.sor_alpha,
        grid_res=args.grid_res,
        seed=args.seed,
        fmt=args.fmt,
    )
    defense = make_defense(args.variant, field, opts, as_rng(args.seed))
    restored = defense.fit_transform(cloud)
    write_points(args.out, restored, args.fmt)
    print(f"wrote {restored.shape[0]} points to {args.out}")
    return 0


def _cmd_mesh(args) -> int:
    field = _resolve_field(args)
    if field is None:
        raise ValueError("mesh needs --field or --fixture")
    mesh = marching_cubes(field, GridSpec(resolution=args.grid_res), iso=args.tau)
    write_obj(args.out, mesh)
    print(
        f"wrote mesh with {mesh.vertices.shape[0]} vertices, "
        f"{mesh.faces.shape[0]} faces to {args.out}"
    )
    if args.sample:
        if not args.points_out:
            raise ValueError("--sample needs --points-out")
        from .geometry import sample_mesh_surface

        pts = sample_mesh_surface(mesh, args.sample, as_rng(args.seed))
        write_points(args.points_out, pts, args.fmt)
        print(f"wrote {pts.shape[0]} sampled points to {args.points_out}")
    return 0


def _cmd_eval(args) -> int:
    cloud = read_points(args.inputs)
    ref = read_points(args.ref)
    report = evaluate(cloud, ref, k=args.metrics_k)
    print(f"chamfer_x1e3   {report.chamfer * 1e3:.6f}")
    print(f"hausdorff      {report.hausdorff:.6f}")
    print(f"uniformity_cv  {report.uniformity_cv:.6f}")
    print(f"counts         {report.count_a} vs {report.count_b}")
    if args.report:
        row = {c: "" for c in REPORT_COLUMNS}
        row.update(
            file=args.inputs,
            variant="eval",
            seed="",
            N_in=report.count_a,
            N_out=report.count_a,
            chamfer_x1e3=repr(report.chamfer * 1e3),
            hausdorff=repr(report.hausdorff),
            uniformity_cv=repr(report.uniformity_cv),
            seconds="0.000",
        )
        write_report(args.report, [row])
    return 0


def _cmd_pipeline(args) -> int:
    field = _resolve_field(args)
    inputs = _gather_inputs(args)
    opts = _options_from_args(args)
    rows = run_pipeline(inputs, field, opts)
    write_report(args.report, rows)
    print(report_text(rows))
    return 1 if any(r["error"] for r in rows) else 0


def _cmd_sweep(args) -> int:
    field = _resolve_field(args)
    inputs = _gather_inputs(args)
    opts = _options_from_args(args)
    lambdas = [float(v) for v in str(args.lambdas).split(",") if v != ""]
    if not lambdas:
        raise ValueError("--lambdas must name at least one value")
    rows = sweep_lambda(inputs, field, opts, lambdas)
    write_report(args.report, rows)
    print(report_text(rows))
    return 1 if any(r["error"] for r in rows) else 0


_COMMANDS = {
    "corrupt": _cmd_corrupt,
    "defend": _cmd_defend,
    "mesh": _cmd_mesh,
    "eval": _cmd_eval,
    "pipeline": _cmd_pipeline,
    "sweep-lambda": _cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (PcrestoreError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
