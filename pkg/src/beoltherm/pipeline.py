"""End-to-end run: layout and stack in, conductivity map and temperature fields out.

A run is described by a JSON config (paths are relative to the config
file)::

    {
      "name": "demo",
      "layout": {"synthetic": "layout_spec.json"} | {"gds": "chip.gds"},
      "stack": "stack.json",
      "footprint_um": [100, 100], "origin_um": [0, 0],
      "mesh": {"elements_xy": [50, 50], "beol_layers": 2, "feol_layers": 2, "grading": 1.5},
      "rve": {"half_size": 1.0, "voxels_per_edge_xy": 40, "voxels_per_layer_z": 2, "bc": "pbc"},
      "boundary": {
        "flux": {"kind": "uniform", "phi_w_per_mm2": 0.1256},
        "convection": {"h": "caption", "t_amb_c": 40.0}
      },
      "solver": {"tol": 1e-10},
      "planes": {"resolution": [101, 101]}
    }

``convection.h`` is required and is either a number in W/(K mm^2) or the
name of a preset in :data:`beoltherm.macro.H_PRESETS`.
"""

from __future__ import annotations

import copy
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import vtkio
from .farm import ConductivityMap, FarmStats, RveOptions, TensorCache, build_conductivity_map, sha256_bytes, stack_digest
from .gdsii import LayoutDatabase, parse_gdsii, write_gdsii
from .macro import (
    H_PRESETS,
    BoundarySpec,
    CircularPatch,
    Convection,
    DirichletPatch,
    MacroMesh,
    MacroModel,
    PatchFlux,
    TemperatureField,
    UniformFlux,
    build_macro_mesh,
    microbump_patches,
    sample_plane,
    solve_macro,
)
from .stack import LayerStack, load_stack
from .synthetic import SyntheticLayoutSpec, generate_synthetic_layout

ARTIFACTS = (
    "conductivity_map.csv",
    "conductivity_map.vtk",
    "temperature.vtk",
    "plane_TT.csv",
    "plane_BB.csv",
    "manifest.json",
)


class PipelineError(RuntimeError):
    """Failure in one named stage of a run."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def default_cache_dir() -> Path:
    env = os.environ.get("BEOLTHERM_CACHE")
    if env:
        return Path(env)
    base = os.environ.get("XDG_CACHE_HOME") or Path.home() / ".cache"
    return Path(base) / "beoltherm"


# ---------------------------------------------------------------------------
# config parsing


def _load_json(ref, base: Path, stage: str):
    if isinstance(ref, dict):
        return ref
    path = base / ref
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise PipelineError(stage, f"cannot read {path}: {exc}") from exc


def load_layout(spec: dict, base: Path) -> tuple[LayoutDatabase, str, dict]:
    """Return the database, the digest of its GDSII bytes and a source description."""
    if "gds" in spec:
        path = base / spec["gds"]
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise PipelineError("layout", f"cannot read {path}: {exc}") from exc
        try:
            db = parse_gdsii(data)
            db.validate()
        except Exception as exc:
            raise PipelineError("layout", f"{path}: {exc}") from exc
        return db, sha256_bytes(data), {"gds": str(spec["gds"])}
    if "synthetic" in spec:
        doc = _load_json(spec["synthetic"], base, "layout")
        try:
            syn = SyntheticLayoutSpec.from_dict(doc)
            db = generate_synthetic_layout(syn)
        except Exception as exc:
            raise PipelineError("layout", f"synthetic layout: {exc}") from exc
        return db, sha256_bytes(write_gdsii(db)), {"synthetic": syn.to_dict()}
    raise PipelineError("config", "layout needs a 'gds' or 'synthetic' entry")


def parse_boundary(doc: dict) -> BoundarySpec:
    """Boundary data from the config's ``boundary`` section."""
    flux = None
    f = doc.get("flux")
    if f is not None:
        kind = f.get("kind", "uniform")
        phi = float(f["phi_w_per_mm2"])
        if kind == "uniform":
            flux = UniformFlux(phi)
        elif kind == "patches":
            patches = f.get("patches", "microbumps")
            if patches == "microbumps":
                plist = microbump_patches()
            else:
                plist = tuple(CircularPatch(tuple(map(float, p["center"])), float(p["diameter"])) for p in patches)
            flux = PatchFlux(plist, phi)
        else:
            raise ValueError(f"unknown flux kind {kind!r}")
    conv = None
    c = doc.get("convection")
    if c is not None:
        if "h" not in c:
            raise ValueError("convection needs an explicit film coefficient 'h'")
        h = c["h"]
        if isinstance(h, str):
            if h not in H_PRESETS:
                raise ValueError(f"unknown h preset {h!r}; choose from {sorted(H_PRESETS)}")
            h = H_PRESETS[h]
        conv = Convection(float(h), float(c.get("t_amb_c", 40.0)))
    dirichlet = []
    for d in doc.get("dirichlet", ()):
        patch = d.get("patch")
        if patch is not None:
            patch = CircularPatch(tuple(map(float, patch["center"])), float(patch["diameter"]))
        dirichlet.append(DirichletPatch(d["surface"], float(d["temperature_c"]), patch))
    return BoundarySpec(flux, conv, tuple(dirichlet))


@dataclass
class RunConfig:
    raw: dict
    base: Path
    rve: RveOptions
    boundary: BoundarySpec
    mesh: dict
    solver: dict
    planes: dict
    cache_dir: Path | None

    @classmethod
    def from_dict(cls, raw: dict, base=".") -> "RunConfig":
        base = Path(base)
        try:
            rve = RveOptions.from_dict(raw.get("rve"))
            boundary = parse_boundary(raw.get("boundary", {}))
            mesh = dict(raw.get("mesh", {}))
            solver = {"tol": 1e-10, "max_iter": None, **raw.get("solver", {})}
            planes = dict(raw.get("planes", {}))
        except (TypeError, ValueError, KeyError) as exc:
            raise PipelineError("config", str(exc)) from exc
        if "layout" not in raw or "stack" not in raw:
            raise PipelineError("config", "config needs 'layout' and 'stack'")
        cache_dir = raw.get("cache_dir")
        return cls(copy.deepcopy(raw), base, rve, boundary, mesh, solver, planes,
                   base / cache_dir if cache_dir else None)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise PipelineError("config", f"cannot read {path}: {exc}") from exc
        return cls.from_dict(raw, path.parent)


# ---------------------------------------------------------------------------
# stages


def _footprint(cfg: RunConfig, db: LayoutDatabase, source: dict):
    if "footprint_um" in cfg.raw:
        return tuple(map(float, cfg.raw["footprint_um"])), tuple(map(float, cfg.raw.get("origin_um", (0.0, 0.0))))
    if "synthetic" in source:
        s = source["synthetic"]
        return tuple(s["footprint_um"]), tuple(s["origin_um"])
    ext = db.extent_um()
    if ext is None:
        raise PipelineError("mesh", "empty layout and no footprint_um in the config")
    return (ext[2] - ext[0], ext[3] - ext[1]), (ext[0], ext[1])


def build_mesh(cfg: RunConfig, stack: LayerStack, footprint, origin) -> MacroMesh:
    opts = {"elements_xy": (50, 50), "beol_layers": 2, "feol_layers": 2, "grading": 1.5, **cfg.mesh}
    opts["elements_xy"] = tuple(opts["elements_xy"])
    thick = (stack.total_thickness, *cfg.raw.get("feol_silicon_um", (1.5, 773.5)))
    return build_macro_mesh(footprint, thick, origin=origin, **opts)


@dataclass
class RunResult:
    out_dir: Path
    cmap: ConductivityMap
    field: TemperatureField
    planes: dict
    manifest: dict
    stats: FarmStats = field(default_factory=FarmStats)


def _summary(values) -> list[float]:
    return [float(np.min(values)), float(np.max(values))]


def run_pipeline(config, out_dir, jobs: int = 1, cache_dir=None, use_cache: bool = True,
                 log=None) -> RunResult:
    """Execute every stage and write the artifacts in :data:`ARTIFACTS` to ``out_dir``."""
    cfg = config if isinstance(config, RunConfig) else RunConfig.load(config)
    say = log or (lambda msg: None)
    timings: dict[str, float] = {}
    t_start = time.perf_counter()

    def mark(stage: str, t0: float) -> None:
        timings[stage] = round(time.perf_counter() - t0, 6)

    t0 = time.perf_counter()
    db, layout_hash, source = load_layout(cfg.raw["layout"], cfg.base)
    mark("layout", t0)

    t0 = time.perf_counter()
    try:
        stack = load_stack(_load_json(cfg.raw["stack"], cfg.base, "stack"))
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("stack", str(exc)) from exc
    mark("stack", t0)

    t0 = time.perf_counter()
    try:
        footprint, origin = _footprint(cfg, db, source)
        mesh = build_mesh(cfg, stack, footprint, origin)
        cfg.boundary.validate(mesh.footprint)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("mesh", str(exc)) from exc
    mark("mesh", t0)

    t0 = time.perf_counter()
    cache = None
    if use_cache:
        root = Path(cache_dir) if cache_dir else cfg.cache_dir or default_cache_dir()
        try:
            cache = TensorCache(root)
        except OSError as exc:
            raise PipelineError("rve-farm", f"cannot create cache at {root}: {exc}") from exc
    stats = FarmStats()
    try:
        cmap = build_conductivity_map(db, stack, mesh, cfg.rve, jobs=jobs, cache=cache,
                                      layout_hash=layout_hash, stats=stats, progress=say)
    except Exception as exc:
        raise PipelineError("rve-farm", str(exc)) from exc
    mark("rve_farm", t0)

    t0 = time.perf_counter()
    try:
        model = MacroModel.from_columns(mesh, cmap.tensors)
        temp = solve_macro(model, cfg.boundary, tol=float(cfg.solver["tol"]), max_iter=cfg.solver.get("max_iter"))
    except Exception as exc:
        raise PipelineError("macro", str(exc)) from exc
    if temp.balance_error > 1e-6:
        raise PipelineError("macro", f"energy balance off by {temp.balance_error:.3e}")
    mark("macro", t0)

    t0 = time.perf_counter()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        res = cfg.planes.get("resolution")
        planes = {
            "TT": sample_plane(temp, mesh.interfaces[0], res),
            "BB": sample_plane(temp, float(mesh.grid.zs[0]), res),
        }
        cmap.write_csv(out / "conductivity_map.csv")
        vtkio.write_conductivity_map_vtk(cmap, out / "conductivity_map.vtk")
        vtkio.write_temperature_vtk(temp, out / "temperature.vtk")
        vtkio.write_plane_csv(planes["TT"], out / "plane_TT.csv")
        vtkio.write_plane_csv(planes["BB"], out / "plane_BB.csv")
    except OSError as exc:
        raise PipelineError("export", str(exc)) from exc
    mark("export", t0)

    g = mesh.grid
    comps = cmap.components_flat()
    manifest = {
        "name": cfg.raw.get("name", ""),
        "config": cfg.raw,
        "inputs": {
            "layout_source": source,
            "layout_sha256": layout_hash,
            "stack_sha256": stack_digest(stack),
            "stack": stack.to_document(),
        },
        "conductivity_map": {
            "samples": len(cmap),
            "grid": [len(cmap.xs), len(cmap.ys)],
            "sha256": cmap.digest(),
            "rve_options": cfg.rve.key(),
            "component_range": {c: _summary(comps[:, i]) for i, c in enumerate(cmap.COMPONENTS)},
            **cmap.reports,
        },
        "macro": {
            "nodes": g.n_nodes,
            "elements": g.n_elements,
            "z_nodes": [float(z) for z in g.zs],
            "solver": temp.report.as_dict(),
            "solver_tol": float(cfg.solver["tol"]),
            "power_in_w": temp.power_in,
            "power_convected_w": temp.power_convected,
            "power_dirichlet_w": temp.power_dirichlet,
            "balance_error": temp.balance_error,
            "temperature_range_c": _summary(temp.values),
        },
        "planes": {name: {"z_um": float(p.z), "range_c": _summary(p.values)} for name, p in planes.items()},
        "artifacts": {name: sha256_bytes((out / name).read_bytes()) for name in ARTIFACTS[:-1]},
    }
    timings["total"] = round(time.perf_counter() - t_start, 6)
    # everything above is reproducible; only this section changes between identical runs
    manifest["runtime"] = {"timings_s": timings, "cache": stats.as_dict(), "jobs": jobs,
                           "cache_dir": str(cache.root) if cache else None}
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise PipelineError("export", str(exc)) from exc
    return RunResult(out, cmap, temp, planes, manifest, stats)
