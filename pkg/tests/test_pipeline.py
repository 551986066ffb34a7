import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from beoltherm import cli
from beoltherm.farm import ConductivityMap, FarmError, FarmStats, RveOptions, TensorCache, build_conductivity_map
from beoltherm.gdsii import Boundary, Cell, LayoutDatabase, write_gdsii
from beoltherm.macro import build_macro_mesh
from beoltherm.pipeline import ARTIFACTS, PipelineError, RunConfig, run_pipeline
from beoltherm.stack import demo_stack_document
from beoltherm.synthetic import SyntheticLayoutSpec
from beoltherm.vtkio import read_vtk_scalars


def _small_config(tmp_path, **over):
    """A 20 x 20 um synthetic run on a 10 x 10 mesh with coarse RVEs."""
    spec = SyntheticLayoutSpec(footprint_um=(20.0, 20.0))
    (tmp_path / "layout.json").write_text(json.dumps(spec.to_dict()))
    (tmp_path / "stack.json").write_text(json.dumps(demo_stack_document()))
    cfg = {
        "name": "small",
        "layout": {"synthetic": "layout.json"},
        "stack": "stack.json",
        "mesh": {"elements_xy": [10, 10]},
        "rve": {"voxels_per_edge_xy": 40, "voxels_per_layer_z": 1, "bc": "pbc"},
        "boundary": {"flux": {"kind": "uniform", "phi_w_per_mm2": 0.1256},
                     "convection": {"h": "caption", "t_amb_c": 40.0}},
        "planes": {"resolution": [21, 21]},
    }
    cfg.update(over)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def _read(out):
    return {name: (out / name).read_bytes() for name in ARTIFACTS}


def test_small_run_writes_exactly_six_artifacts(tmp_path):
    cfg = _small_config(tmp_path)
    result = run_pipeline(cfg, tmp_path / "out", cache_dir=tmp_path / "cache")
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == sorted(ARTIFACTS)
    m = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert m["conductivity_map"]["samples"] == 100
    assert m["macro"]["balance_error"] <= 1e-6
    assert m["macro"]["power_in_w"] == pytest.approx(0.1256 * 0.02 * 0.02, rel=1e-12)
    for name, digest in m["artifacts"].items():
        assert len(digest) == 64 and name in ARTIFACTS
    header = (tmp_path / "out" / "conductivity_map.csv").read_text().splitlines()[0]
    assert header == "x_um,y_um,kxx,kyy,kzz,kxy,kxz,kyz"
    assert (tmp_path / "out" / "plane_BB.csv").read_text().startswith("x_um,y_um,temperature_C\n")
    np.testing.assert_array_equal(read_vtk_scalars(tmp_path / "out" / "temperature.vtk", "temperature"),
                                  result.field.values)
    np.testing.assert_array_equal(read_vtk_scalars(tmp_path / "out" / "conductivity_map.vtk", "kappa_zz"),
                                  result.cmap.components_flat()[:, 2])
    again = ConductivityMap.read_csv(tmp_path / "out" / "conductivity_map.csv")
    np.testing.assert_array_equal(again.tensors, result.cmap.tensors)


def test_rerun_hits_cache_and_reproduces_files(tmp_path):
    cfg = _small_config(tmp_path)
    first = run_pipeline(cfg, tmp_path / "a", cache_dir=tmp_path / "cache")
    second = run_pipeline(cfg, tmp_path / "b", cache_dir=tmp_path / "cache")
    s = second.stats
    assert s.index_hits == s.windows == 100 and s.rasterized == 0
    assert s.tensor_hits == s.distinct_grids and s.solved == 0
    a, b = _read(tmp_path / "a"), _read(tmp_path / "b")
    for name in ARTIFACTS[:-1]:
        assert a[name] == b[name], name
    ma, mb = json.loads(a["manifest.json"]), json.loads(b["manifest.json"])
    ma.pop("runtime"), mb.pop("runtime")
    assert ma == mb
    assert first.stats.solved == first.stats.distinct_grids > 0


def test_cached_tensors_equal_fresh_ones(tmp_path):
    cfg = _small_config(tmp_path)
    run_pipeline(cfg, tmp_path / "warm", cache_dir=tmp_path / "cache")
    cached = run_pipeline(cfg, tmp_path / "cached", cache_dir=tmp_path / "cache")
    fresh = run_pipeline(cfg, tmp_path / "fresh", use_cache=False)
    assert cached.cmap.tensors.tobytes() == fresh.cmap.tensors.tobytes()
    # losing the tensor files forces a rebuild from the window index
    shutil.rmtree(tmp_path / "cache" / "tensors")
    (tmp_path / "cache" / "tensors").mkdir()
    rebuilt = run_pipeline(cfg, tmp_path / "rebuilt", cache_dir=tmp_path / "cache")
    assert rebuilt.stats.index_hits == 100 and rebuilt.stats.solved == rebuilt.stats.distinct_grids
    assert rebuilt.cmap.tensors.tobytes() == fresh.cmap.tensors.tobytes()


def test_jobs_do_not_change_the_map(synthetic_db, demo_stack):
    mesh = build_macro_mesh((6.0, 4.0), elements_xy=(3, 2), origin=(47.0, 13.0))
    opts = RveOptions(voxels_per_edge_xy=16, voxels_per_layer_z=1)
    one = build_conductivity_map(synthetic_db, demo_stack, mesh, opts, jobs=1)
    two = build_conductivity_map(synthetic_db, demo_stack, mesh, opts, jobs=2)
    assert one.tensors.tobytes() == two.tensors.tobytes()
    assert one.provenance == two.provenance


def test_full_sheet_metal_gives_identical_tensors(tmp_path, demo_stack):
    # every metal layer is one plate larger than the chip
    bounds = tuple(Boundary(layer, 0, ((-5000, -5000), (25000, -5000), (25000, 25000), (-5000, 25000)))
                   for layer in range(10, 21))
    db = LayoutDatabase(1e-3, 1e-9, {"TOP": Cell("TOP", bounds)})
    (tmp_path / "sheet.gds").write_bytes(write_gdsii(db))
    cfg = _small_config(tmp_path, layout={"gds": "sheet.gds"}, footprint_um=[20.0, 20.0])
    result = run_pipeline(cfg, tmp_path / "out", use_cache=False)
    t = result.cmap.tensors
    assert np.abs(t - t[0]).max() <= 1e-10 * np.abs(t[0]).max()
    assert result.stats.distinct_grids == 1
    # all-copper levels under the oxide cap
    assert t[0, 0, 0] == pytest.approx((2.3 * 400.0 + 2.0 * 1.4) / 4.3, rel=1e-9)


def test_failed_extraction_names_the_window(synthetic_db, demo_stack):
    mesh = build_macro_mesh((2.0, 2.0), elements_xy=(1, 1), origin=(50.0, 50.0))
    with pytest.raises(FarmError, match=r"window centre \(51.0, 51.0\)") as info:
        build_conductivity_map(synthetic_db, demo_stack, mesh, RveOptions(voxels_per_edge_xy=8, max_iter=1))
    assert info.value.window == (51.0, 51.0)


def test_irregular_centres_rejected(synthetic_db, demo_stack):
    with pytest.raises(FarmError, match="regular"):
        build_conductivity_map(synthetic_db, demo_stack, np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]]))


def test_cache_stores_exact_floats(tmp_path):
    from beoltherm.homogenize import ConductivityTensor
    from beoltherm.linalg import SolveReport

    cache = TensorCache(tmp_path)
    m = np.random.default_rng(0).standard_normal((3, 3))
    t = ConductivityTensor(m, m * (1 + 1e-15), (SolveReport(3, 1.23e-11, True),))
    cache.put_tensor("k", t)
    back = cache.get_tensor("k")
    assert back.matrix.tobytes() == m.tobytes() and back.reports == t.reports
    assert cache.get_tensor("missing") is None


def test_stats_serialize():
    assert FarmStats(windows=3).as_dict()["windows"] == 3


@pytest.mark.parametrize("boundary, message", [
    ({"convection": {"t_amb_c": 40.0}}, "explicit film coefficient"),
    ({"convection": {"h": "datasheet"}}, "unknown h preset"),
    ({"flux": {"kind": "ring", "phi_w_per_mm2": 1.0}, "convection": {"h": 4.0}}, "unknown flux kind"),
])
def test_config_errors_are_stage_tagged(tmp_path, boundary, message):
    cfg = _small_config(tmp_path, boundary=boundary)
    with pytest.raises(PipelineError, match=r"\[config\] .*" + message) as info:
        RunConfig.load(cfg)
    assert info.value.stage == "config"


def test_stage_errors(tmp_path):
    cfg = _small_config(tmp_path, stack="missing.json")
    with pytest.raises(PipelineError, match=r"^\[stack\] cannot read"):
        run_pipeline(cfg, tmp_path / "out", use_cache=False)
    cfg = _small_config(tmp_path, layout={"gds": "nothing.gds"})
    with pytest.raises(PipelineError, match=r"^\[layout\]"):
        run_pipeline(cfg, tmp_path / "out", use_cache=False)
    cfg = _small_config(tmp_path, boundary={"flux": {"kind": "patches", "phi_w_per_mm2": 1.0}, "convection": {"h": 4.0}})
    with pytest.raises(PipelineError, match=r"^\[mesh\] .*outside the footprint"):
        run_pipeline(cfg, tmp_path / "out", use_cache=False)


def test_demo_patch_run_peaks_over_patches(demo_runs):
    result, _ = demo_runs("demo_patches")
    bb = result.planes["BB"]
    v = bb.values
    # strict local maxima of the B-B image
    inner = v[1:-1, 1:-1]
    peak = np.ones_like(inner, dtype=bool)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx or dy:
                peak &= inner > v[1 + dx:v.shape[0] - 1 + dx, 1 + dy:v.shape[1] - 1 + dy]
    i, j = np.nonzero(peak)
    found = sorted(zip(bb.x[i + 1], bb.y[j + 1]))
    assert len(found) == 4
    for (x, y), (px, py) in zip(found, sorted([(30, 30), (30, 70), (70, 30), (70, 70)])):
        assert abs(x - px) <= 5.0 and abs(y - py) <= 5.0


# ---------------------------------------------------------------------------
# command line


def _cli(capsys, *argv):
    code = cli.main(list(map(str, argv)))
    out, err = capsys.readouterr()
    return code, out, err


def test_cli_gen_layout_homogenize_and_inspect(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(SyntheticLayoutSpec(footprint_um=(10.0, 10.0)).to_dict()))
    stack = tmp_path / "stack.json"
    stack.write_text(json.dumps(demo_stack_document()))
    gds = tmp_path / "l.gds"
    code, out, _ = _cli(capsys, "gen-layout", "--spec", spec, "--out", gds)
    assert code == 0 and gds.stat().st_size > 0 and "wrote" in out

    code, out, _ = _cli(capsys, "homogenize", "--layout", gds, "--stack", stack, "--window", "5,5,1",
                        "--voxels", 16, "--voxels-z", 1, "--bc", "pbc")
    assert code == 0
    head, values = out.strip().splitlines()
    assert head.split() == ["kxx", "kyy", "kzz", "kxy", "kxz", "kyz"]
    comps = [float(v) for v in values.split()]
    assert len(comps) == 6 and comps[2] < min(comps[:2])

    vtk = tmp_path / "rve.vtk"
    code, out, _ = _cli(capsys, "inspect-rve", "--layout", gds, "--stack", stack, "--window", "5,5,1",
                        "--voxels", 8, "--out", vtk)
    assert code == 0 and "8 x 8 x 24 voxels" in out
    assert len(read_vtk_scalars(vtk, "material_id")) == 8 * 8 * 24


def test_cli_pipeline_then_solve(tmp_path, capsys):
    cfg = _small_config(tmp_path)
    code, out, err = _cli(capsys, "pipeline", "--config", cfg, "--out", tmp_path / "run",
                          "--cache-dir", tmp_path / "cache", "--jobs", 1)
    assert code == 0 and "wrote 6 artifacts" in out and "rasterizing" in err
    raw = json.loads(cfg.read_text())
    raw["footprint_um"] = [20.0, 20.0]
    cfg.write_text(json.dumps(raw))
    code, out, _ = _cli(capsys, "solve", "--map", tmp_path / "run" / "conductivity_map.csv",
                        "--config", cfg, "--out", tmp_path / "solve")
    assert code == 0 and "balance error" in out
    np.testing.assert_array_equal(read_vtk_scalars(tmp_path / "solve" / "temperature.vtk", "temperature"),
                                  read_vtk_scalars(tmp_path / "run" / "temperature.vtk", "temperature"))


def test_cli_errors(tmp_path, capsys):
    code, _, err = _cli(capsys, "pipeline", "--config", tmp_path / "absent.json", "--out", tmp_path / "o")
    assert code == 1 and err.startswith("beoltherm: [config] cannot read")
    bad = tmp_path / "bad.gds"
    bad.write_bytes(b"\x00\x06\x00\x02\x02\x58")
    code, _, err = _cli(capsys, "homogenize", "--layout", bad, "--stack", bad, "--window", "0,0,1")
    assert code == 1 and err.startswith("beoltherm: [layout]")
    with pytest.raises(SystemExit) as info:
        cli.main(["homogenize", "--window", "1,2"])
    assert info.value.code == 2


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "beoltherm.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("gen-layout", "homogenize", "inspect-rve", "solve", "pipeline"):
        assert sub in proc.stdout
