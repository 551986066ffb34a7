"""Synthetic 11-level interconnect layouts.

Five line levels alternate between x- and y-running line banks; six via
levels place square vias on the line-crossing lattice. Rectangular
low-density regions can strip vias (and optionally lines) to imitate
sparse areas of a real die.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .gdsii import Boundary, Cell, LayoutDatabase, StructRef


@dataclass(frozen=True)
class SyntheticLayoutSpec:
    footprint_um: tuple[float, float] = (100.0, 100.0)
    origin_um: tuple[float, float] = (0.0, 0.0)
    line_width_um: float = 0.2
    line_pitch_um: float = 0.4
    first_line_direction: str = "y"  # direction M1 lines run along; alternates upward
    via_size_um: float = 0.1
    via_pitch_um: float = 0.4
    via_density: float = 1.0  # fraction of lattice sites populated
    low_density_regions: tuple[tuple[float, float, float, float], ...] = ()
    regions_drop_lines: bool = False
    via_layers: tuple[int, ...] = (10, 12, 14, 16, 18, 20)
    line_layers: tuple[int, ...] = (11, 13, 15, 17, 19)
    datatype: int = 0
    db_unit_um: float = 0.001
    min_feature_um: float = 0.1  # two 50 nm voxels
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.line_width_um < self.line_pitch_um:
            raise ValueError("need 0 < line width < line pitch")
        if self.first_line_direction not in ("x", "y"):
            raise ValueError("first_line_direction must be 'x' or 'y'")
        if len(self.via_layers) != 6 or len(self.line_layers) != 5:
            raise ValueError("expected 6 via layers and 5 line layers")
        if not 0.0 <= self.via_density <= 1.0:
            raise ValueError("via_density must lie in [0, 1]")
        ratio = self.via_pitch_um / self.line_pitch_um
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("via pitch must be a whole multiple of the line pitch")
        small = {
            "line width": self.line_width_um,
            "line spacing": self.line_pitch_um - self.line_width_um,
        }
        if self.via_density > 0:
            small["via size"] = self.via_size_um
            small["via spacing"] = self.via_pitch_um - self.via_size_um
        for what, size in small.items():
            if size < self.min_feature_um - 1e-12:
                raise ValueError(f"{what} {size:g} um is below the {self.min_feature_um:g} um resolution limit")
        if self.via_size_um > self.line_width_um:
            raise ValueError("vias wider than lines are not supported")

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticLayoutSpec":
        doc = dict(doc)
        for key in ("footprint_um", "origin_um", "via_layers", "line_layers"):
            if key in doc:
                doc[key] = tuple(doc[key])
        if "low_density_regions" in doc:
            doc["low_density_regions"] = tuple(tuple(map(float, r)) for r in doc["low_density_regions"])
        return cls(**doc)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


def _in_regions(x, y, regions) -> np.ndarray:
    hit = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    for x0, y0, x1, y1 in regions:
        hit |= (x >= x0) & (x < x1) & (y >= y0) & (y < y1)
    return hit


def _intervals_outside(lo: float, hi: float, cuts) -> list[tuple[float, float]]:
    spans = [(lo, hi)]
    for c0, c1 in sorted(cuts):
        nxt = []
        for a, b in spans:
            if c1 <= a or c0 >= b:
                nxt.append((a, b))
                continue
            if c0 > a:
                nxt.append((a, c0))
            if c1 < b:
                nxt.append((c1, b))
        spans = nxt
    return spans


def generate_synthetic_layout(spec: SyntheticLayoutSpec = SyntheticLayoutSpec()) -> LayoutDatabase:
    """Build the layout database for ``spec`` (deterministic for a fixed spec)."""
    u = spec.db_unit_um

    def db(v: float) -> int:
        return int(round(v / u))

    ox, oy = spec.origin_um
    lx, ly = spec.footprint_um
    half_w = 0.5 * spec.line_width_um
    rng = np.random.default_rng(spec.seed)

    top_boundaries: list[Boundary] = []
    directions = []
    d = spec.first_line_direction
    for _ in range(5):
        directions.append(d)
        d = "x" if d == "y" else "y"

    for layer, direction in zip(spec.line_layers, directions):
        across = ly if direction == "x" else lx
        along0, along1 = (ox, ox + lx) if direction == "x" else (oy, oy + ly)
        start = oy if direction == "x" else ox
        count = int(np.floor(across / spec.line_pitch_um + 1e-9)) + 1
        for k in range(count):
            c = start + k * spec.line_pitch_um
            cuts = []
            if spec.regions_drop_lines:
                for x0, y0, x1, y1 in spec.low_density_regions:
                    lo, hi = (y0, y1) if direction == "x" else (x0, x1)
                    if lo <= c < hi:
                        cuts.append((x0, x1) if direction == "x" else (y0, y1))
            for a, b in _intervals_outside(along0, along1, cuts):
                if direction == "x":
                    x0, x1, y0, y1 = a, b, c - half_w, c + half_w
                else:
                    x0, x1, y0, y1 = c - half_w, c + half_w, a, b
                pts = ((db(x0), db(y0)), (db(x1), db(y0)), (db(x1), db(y1)), (db(x0), db(y1)))
                top_boundaries.append(Boundary(layer, spec.datatype, pts))

    cells: dict[str, Cell] = {}
    refs: list[StructRef] = []
    hv = 0.5 * spec.via_size_um
    pitch = spec.via_pitch_um
    nxs = int(np.floor(lx / pitch + 1e-9)) + 1
    nys = int(np.floor(ly / pitch + 1e-9)) + 1
    sx = ox + pitch * np.arange(nxs)
    sy = oy + pitch * np.arange(nys)
    SX, SY = np.meshgrid(sx, sy, indexing="ij")
    for layer in spec.via_layers:
        name = f"VIA{layer}"
        square = ((db(-hv), db(-hv)), (db(hv), db(-hv)), (db(hv), db(hv)), (db(-hv), db(hv)))
        cells[name] = Cell(name, (Boundary(layer, spec.datatype, square),))
        if spec.via_density <= 0:
            continue
        keep = ~_in_regions(SX, SY, spec.low_density_regions)
        if spec.via_density < 1:
            keep &= rng.random(SX.shape) < spec.via_density
        for j in range(nys):
            i = 0
            while i < nxs:
                if not keep[i, j]:
                    i += 1
                    continue
                run = i
                while run < nxs and keep[run, j]:
                    run += 1
                origin = (db(sx[i]), db(sy[j]))
                if run - i == 1:
                    refs.append(StructRef(name, origin))
                else:
                    refs.append(StructRef(name, origin, columns=run - i, rows=1,
                                          column_step=(db(pitch), 0), row_step=(0, db(pitch))))
                i = run

    cells["TOP"] = Cell("TOP", tuple(top_boundaries), (), tuple(refs))
    layout = LayoutDatabase(spec.db_unit_um, spec.db_unit_um * 1e-6, cells, "TOP", "SYNTH")
    layout.validate()
    return layout
