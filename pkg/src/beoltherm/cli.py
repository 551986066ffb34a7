"""Command-line entry point: ``beoltherm <subcommand> ...``.

Failures print ``beoltherm: [stage] message`` on stderr and exit with
status 1; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import vtkio
from .farm import ConductivityMap
from .gdsii import read_gdsii, write_gdsii
from .homogenize import extract_tensor, HomogenizationOptions
from .macro import MacroModel, sample_plane, solve_macro
from .pipeline import ARTIFACTS, PipelineError, RunConfig, build_mesh, run_pipeline
from .rve import RveSpec, build_rve, metal_fraction
from .stack import load_stack
from .synthetic import SyntheticLayoutSpec, generate_synthetic_layout


def _window(text: str) -> tuple[float, float, float]:
    try:
        cx, cy, half = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected cx,cy,half in micrometres") from None
    if half <= 0:
        raise argparse.ArgumentTypeError("half size must be positive")
    return cx, cy, half


def _stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, f"{type(exc).__name__}: {exc}") from exc


def _read_json(path: str):
    return json.loads(Path(path).read_text())


def _load_inputs(args):
    db = _stage("layout", read_gdsii, args.layout)
    _stage("layout", db.validate)
    stack = _stage("stack", lambda p: load_stack(Path(p).read_text()), args.stack)
    return db, stack


def cmd_gen_layout(args) -> int:
    spec = _stage("config", lambda p: SyntheticLayoutSpec.from_dict(_read_json(p)), args.spec)
    db = _stage("layout", generate_synthetic_layout, spec)
    data = write_gdsii(db)
    _stage("export", Path(args.out).write_bytes, data)
    print(f"wrote {args.out} ({len(data)} bytes, {len(db.cells)} cells)")
    return 0


def cmd_homogenize(args) -> int:
    db, stack = _load_inputs(args)
    cx, cy, half = args.window
    spec = _stage("rve", RveSpec, (cx, cy), half, args.voxels, args.voxels_z)
    grid = _stage("rve", build_rve, db, stack, spec)
    opts = HomogenizationOptions(args.bc, args.tol)
    tensor = _stage("homogenize", extract_tensor, grid, opts)
    names = [f"k{c}" for c in tensor.COMPONENTS]
    print(" ".join(f"{n:>24}" for n in names))
    print(" ".join(f"{v:>24.17g}" for v in tensor.components()))
    return 0


def cmd_inspect_rve(args) -> int:
    db, stack = _load_inputs(args)
    cx, cy, half = args.window
    spec = _stage("rve", RveSpec, (cx, cy), half, args.voxels, args.voxels_z)
    grid = _stage("rve", build_rve, db, stack, spec)
    _stage("export", vtkio.write_voxel_grid, grid, args.out, f"RVE at ({cx:g}, {cy:g}) half {half:g} um")
    print(f"wrote {args.out}: {grid.nx} x {grid.ny} x {grid.nz} voxels")
    for i, layer in enumerate(stack.layers):
        print(f"  {layer.name:<8} {layer.kind:<10} metal fraction {metal_fraction(grid, i):.4f}")
    return 0


def cmd_solve(args) -> int:
    cfg = RunConfig.load(args.config)
    stack = _stage("stack", lambda: load_stack(
        cfg.raw["stack"] if isinstance(cfg.raw["stack"], dict) else (cfg.base / cfg.raw["stack"]).read_text()))
    if "footprint_um" not in cfg.raw:
        raise PipelineError("config", "solve needs footprint_um in the config")
    footprint = tuple(map(float, cfg.raw["footprint_um"]))
    origin = tuple(map(float, cfg.raw.get("origin_um", (0.0, 0.0))))
    mesh = _stage("mesh", build_mesh, cfg, stack, footprint, origin)
    cmap = _stage("map", ConductivityMap.read_csv, args.map)
    cent = mesh.column_centroids()
    if len(cent) != len(cmap) or not np.allclose(np.sort(np.unique(cent[:, 0])), cmap.xs, atol=1e-9) \
            or not np.allclose(np.sort(np.unique(cent[:, 1])), cmap.ys, atol=1e-9):
        raise PipelineError("map", f"map samples ({len(cmap.xs)} x {len(cmap.ys)}) do not match the mesh columns")
    model = _stage("macro", MacroModel.from_columns, mesh, cmap.tensors)
    temp = _stage("macro", solve_macro, model, cfg.boundary, float(cfg.solver["tol"]), cfg.solver.get("max_iter"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = cfg.planes.get("resolution")
    _stage("export", vtkio.write_temperature_vtk, temp, out / "temperature.vtk")
    _stage("export", vtkio.write_plane_csv, sample_plane(temp, mesh.interfaces[0], res), out / "plane_TT.csv")
    _stage("export", vtkio.write_plane_csv, sample_plane(temp, float(mesh.grid.zs[0]), res), out / "plane_BB.csv")
    print(f"T range {temp.values.min():.6f} .. {temp.values.max():.6f} C; "
          f"power in {temp.power_in * 1e3:.6g} mW; balance error {temp.balance_error:.2e}")
    return 0


def cmd_pipeline(args) -> int:
    t0 = time.perf_counter()

    def log(msg: str) -> None:
        if not args.quiet:
            print(f"[{time.perf_counter() - t0:8.1f}s] {msg}", file=sys.stderr)

    result = run_pipeline(args.config, args.out, jobs=args.jobs, cache_dir=args.cache_dir,
                          use_cache=not args.no_cache, log=log)
    m = result.manifest
    print(f"wrote {len(ARTIFACTS)} artifacts to {result.out_dir}")
    print(f"  map: {m['conductivity_map']['samples']} samples, {m['conductivity_map']['distinct_tensors']} distinct RVEs")
    print(f"  T range {m['macro']['temperature_range_c'][0]:.6f} .. {m['macro']['temperature_range_c'][1]:.6f} C")
    print(f"  cache: {m['runtime']['cache']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beoltherm", description="Layout-driven multiscale thermal analysis of chip interconnect stacks.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-layout", help="write a synthetic 11-level layout as GDSII")
    g.add_argument("--spec", required=True, help="synthetic layout spec (JSON)")
    g.add_argument("--out", required=True, help="output .gds path")
    g.set_defaults(func=cmd_gen_layout)

    def rve_args(sp):
        sp.add_argument("--layout", required=True, help="GDSII file")
        sp.add_argument("--stack", required=True, help="layer stack (JSON)")
        sp.add_argument("--window", required=True, type=_window, help="cx,cy,half in um")
        sp.add_argument("--voxels", type=int, default=40, help="voxels per window edge (default 40)")
        sp.add_argument("--voxels-z", type=int, default=2, help="voxels per process layer (default 2)")

    h = sub.add_parser("homogenize", help="homogenized conductivity of one RVE window")
    rve_args(h)
    h.add_argument("--bc", choices=("kubc", "pbc"), default="kubc")
    h.add_argument("--tol", type=float, default=1e-10)
    h.set_defaults(func=cmd_homogenize)

    i = sub.add_parser("inspect-rve", help="dump an RVE voxel grid as VTK")
    rve_args(i)
    i.add_argument("--out", required=True, help="output .vtk path")
    i.set_defaults(func=cmd_inspect_rve)

    s = sub.add_parser("solve", help="macroscale solve from an existing conductivity map")
    s.add_argument("--map", required=True, help="conductivity_map.csv from a pipeline run")
    s.add_argument("--config", required=True, help="run config supplying mesh and boundary data")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("pipeline", help="full run from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--cache-dir", default=None, help="tensor cache (default $BEOLTHERM_CACHE or ~/.cache/beoltherm)")
    r.add_argument("--no-cache", action="store_true")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except PipelineError as exc:
        print(f"beoltherm: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"beoltherm: [io] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
