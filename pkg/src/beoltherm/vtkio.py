"""Legacy-ASCII VTK and CSV writers for grids, maps and temperature fields.

Floats are written with 17 significant digits so that files round-trip
exactly and repeated runs produce byte-identical output.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .hexfem import TensorGrid

VTK_HEXAHEDRON = 12


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def _lines(values, per_line: int = 9) -> str:
    flat = np.ravel(values)
    return "\n".join(_fmt(flat[i:i + per_line]) for i in range(0, len(flat), per_line))


def _header(title: str, dataset: str) -> list[str]:
    return ["# vtk DataFile Version 3.0", title[:255], "ASCII", f"DATASET {dataset}"]


def _write(path, lines: list[str]) -> None:
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def voxel_grid_vtk(grid, title: str = "voxel RVE") -> str:
    """Rectilinear-grid dump of a VoxelGrid with material ids and conductivity per cell.

    The z spacing follows the layer stack and is generally non-uniform, so a
    rectilinear grid is used rather than structured points.
    """
    xs, ys, zs = grid.node_coordinates()
    out = _header(title, "RECTILINEAR_GRID")
    out.append(f"DIMENSIONS {len(xs)} {len(ys)} {len(zs)}")
    for name, c in (("X", xs), ("Y", ys), ("Z", zs)):
        out.append(f"{name}_COORDINATES {len(c)} double")
        out.append(_lines(c))
    out.append(f"CELL_DATA {grid.material_id.size}")
    out.append("SCALARS material_id int 1")
    out.append("LOOKUP_TABLE default")
    ids = grid.material_id.ravel(order="F")
    out.extend(" ".join(str(int(v)) for v in ids[i:i + 20]) for i in range(0, len(ids), 20))
    out.append("SCALARS conductivity double 1")
    out.append("LOOKUP_TABLE default")
    out.append(_lines(grid.kappa()))
    return "\n".join(out)


def write_voxel_grid(grid, path, title: str = "voxel RVE") -> None:
    _write(path, [voxel_grid_vtk(grid, title)])


def write_conductivity_map_vtk(cmap, path, title: str = "homogenized BEOL conductivity") -> None:
    """Map samples as an image (one point per sample) with component scalars and a tensor field."""
    xs, ys = cmap.xs, cmap.ys
    dx = xs[1] - xs[0] if len(xs) > 1 else 1.0
    dy = ys[1] - ys[0] if len(ys) > 1 else 1.0
    out = _header(title, "STRUCTURED_POINTS")
    out.append(f"DIMENSIONS {len(xs)} {len(ys)} 1")
    out.append(f"ORIGIN {_fmt([xs[0], ys[0], 0.0])}")
    out.append(f"SPACING {_fmt([dx, dy, 1.0])}")
    n = len(xs) * len(ys)
    out.append(f"POINT_DATA {n}")
    # VTK image points run x fastest, as does the map's flat ordering
    comps = cmap.components_flat()
    for c, name in enumerate(cmap.COMPONENTS):
        out.append(f"SCALARS kappa_{name} double 1")
        out.append("LOOKUP_TABLE default")
        out.append(_lines(comps[:, c]))
    out.append("TENSORS kappa double")
    out.extend(_lines(t, 3) for t in cmap.tensors_flat())
    _write(path, out)


def write_temperature_vtk(field, path, title: str = "temperature") -> None:
    """Unstructured hexahedral mesh with nodal temperature and element region ids."""
    g: TensorGrid = field.mesh.grid
    pts = g.node_points()
    conn = g.connectivity()
    out = _header(title, "UNSTRUCTURED_GRID")
    out.append(f"POINTS {g.n_nodes} double")
    out.extend(_fmt(p) for p in pts)
    out.append(f"CELLS {g.n_elements} {g.n_elements * 9}")
    out.extend("8 " + " ".join(map(str, row)) for row in conn)
    out.append(f"CELL_TYPES {g.n_elements}")
    out.extend([str(VTK_HEXAHEDRON)] * g.n_elements)
    out.append(f"CELL_DATA {g.n_elements}")
    out.append("SCALARS region int 1")
    out.append("LOOKUP_TABLE default")
    region = field.mesh.element_region
    out.extend(" ".join(map(str, region[i:i + 20])) for i in range(0, len(region), 20))
    out.append(f"POINT_DATA {g.n_nodes}")
    out.append("SCALARS temperature double 1")
    out.append("LOOKUP_TABLE default")
    out.append(_lines(field.values))
    _write(path, out)


def plane_csv(sample, value_name: str = "temperature_C") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x_um", "y_um", value_name])
    for x, y, v in sample.rows():
        w.writerow([format(float(x), ".17g"), format(float(y), ".17g"), format(float(v), ".17g")])
    return buf.getvalue()


def write_plane_csv(sample, path, value_name: str = "temperature_C") -> None:
    Path(path).write_text(plane_csv(sample, value_name), encoding="ascii", newline="\n")


def read_vtk_scalars(path, name: str) -> np.ndarray:
    """Read one SCALARS block back from a legacy ASCII file written here."""
    tokens = Path(path).read_text().split("\n")
    for i, line in enumerate(tokens):
        parts = line.split()
        if len(parts) >= 2 and parts[0] == "SCALARS" and parts[1] == name:
            vals: list[float] = []
            for body in tokens[i + 2:]:
                head = body.split()[:1]
                if head and not _is_number(head[0]):
                    break
                vals.extend(float(v) for v in body.split())
            return np.array(vals)
    raise KeyError(f"no SCALARS {name!r} in {path}")


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True
