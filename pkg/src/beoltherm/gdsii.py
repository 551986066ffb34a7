"""GDSII stream reading/writing and flattened, windowed polygon queries.

Only the subset of the stream format needed for Manhattan interconnect is
supported: BOUNDARY, PATH, SREF and AREF elements with orthogonal
transforms and unit magnification. TEXT, NODE and BOX elements and any
unrecognised record types are skipped and counted in
``LayoutDatabase.skipped_records``.
"""

from __future__ import annotations

import io
import math
import struct
import threading
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import geometry

__all__ = [
    "Boundary",
    "Cell",
    "GdsiiError",
    "LayoutDatabase",
    "Path",
    "StructRef",
    "UnsupportedFeatureError",
    "parse_gdsii",
    "query_window",
    "read_gdsii",
    "write_gdsii",
]


class GdsiiError(ValueError):
    """Malformed or inconsistent GDSII content."""


class UnsupportedFeatureError(GdsiiError):
    """Legal GDSII that uses a feature outside the supported subset."""


# record types
HEADER, BGNLIB, LIBNAME, UNITS, ENDLIB = 0x00, 0x01, 0x02, 0x03, 0x04
BGNSTR, STRNAME, ENDSTR = 0x05, 0x06, 0x07
BOUNDARY, PATH, SREF, AREF, TEXT = 0x08, 0x09, 0x0A, 0x0B, 0x0C
LAYER, DATATYPE, WIDTH, XY, ENDEL = 0x0D, 0x0E, 0x0F, 0x10, 0x11
SNAME, COLROW, NODE = 0x12, 0x13, 0x15
STRANS, MAG, ANGLE, PATHTYPE, BOX = 0x1A, 0x1B, 0x1C, 0x21, 0x2D

# data types
NODATA, BITARRAY, INT2, INT4, REAL4, REAL8, ASCII = 0, 1, 2, 3, 4, 5, 6

_SKIPPED_ELEMENTS = (TEXT, NODE, BOX)
_MAX_XY_POINTS = 8191
_TIMESTAMP = (2000, 1, 1, 0, 0, 0)


# ---------------------------------------------------------------------------
# 8-byte excess-64 base-16 reals


def real8_encode(value: float) -> bytes:
    if value == 0:
        return bytes(8)
    sign = 0x80 if value < 0 else 0
    value = abs(value)
    mant, exp2 = math.frexp(value)  # value = mant * 2**exp2, 0.5 <= mant < 1
    exp16 = -((-exp2) // 4)  # ceil(exp2 / 4)
    frac = math.ldexp(mant, exp2 - 4 * exp16)  # in [1/16, 1)
    digits = int(math.ldexp(frac, 56))
    if not 0 <= exp16 + 64 < 128:
        raise GdsiiError(f"real {value!r} out of GDSII range")
    return bytes([sign | (exp16 + 64)]) + digits.to_bytes(7, "big")


def real8_decode(raw: bytes) -> float:
    sign = -1.0 if raw[0] & 0x80 else 1.0
    exp16 = (raw[0] & 0x7F) - 64
    digits = int.from_bytes(raw[1:8], "big")
    return sign * math.ldexp(digits, 4 * exp16 - 56)


# ---------------------------------------------------------------------------
# data model


@dataclass(frozen=True)
class Boundary:
    layer: int
    datatype: int
    points: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class Path:
    layer: int
    datatype: int
    width: int
    points: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class StructRef:
    """Placement of another cell: mirror about x, then rotate, then translate.

    ``columns``/``rows`` > 1 (or a non-None step) makes this an AREF whose
    instance (c, r) sits at ``origin + c * column_step + r * row_step``.
    """

    cell: str
    origin: tuple[int, int]
    rotation: int = 0  # quarter turns, counter-clockwise
    mirror: bool = False
    columns: int = 1
    rows: int = 1
    column_step: tuple[int, int] | None = None
    row_step: tuple[int, int] | None = None

    @property
    def is_array(self) -> bool:
        return self.column_step is not None

    def matrix(self) -> np.ndarray:
        c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][self.rotation % 4]
        rot = np.array([[c, -s], [s, c]], dtype=np.int64)
        if self.mirror:
            rot = rot @ np.array([[1, 0], [0, -1]], dtype=np.int64)
        return rot

    def offsets(self) -> list[tuple[int, int]]:
        if not self.is_array:
            return [self.origin]
        ox, oy = self.origin
        (cx, cy), (rx, ry) = self.column_step, self.row_step
        return [
            (ox + c * cx + r * rx, oy + c * cy + r * ry)
            for r in range(self.rows)
            for c in range(self.columns)
        ]


@dataclass(frozen=True)
class Cell:
    name: str
    boundaries: tuple[Boundary, ...] = ()
    paths: tuple[Path, ...] = ()
    refs: tuple[StructRef, ...] = ()


@dataclass(eq=False)
class _FlatLayer:
    """Flattened shapes as shared templates placed at integer offsets (db units)."""

    templates: list  # float (k, 2) arrays, transformed into top-cell orientation
    template_index: np.ndarray  # (n,) template of each instance
    offsets: np.ndarray  # (n, 2)
    bbox: np.ndarray  # (n, 4) xmin, ymin, xmax, ymax

    def __post_init__(self):
        is_rect = np.array([geometry.is_axis_rectangle(t) for t in self.templates], dtype=bool)
        self.is_rect = is_rect[self.template_index] if len(self.template_index) else np.zeros(0, dtype=bool)

    def __len__(self) -> int:
        return len(self.template_index)

    def polygon(self, i: int) -> np.ndarray:
        return self.templates[self.template_index[i]] + self.offsets[i]


@dataclass
class LayoutDatabase:
    """Parsed layout. Treat as immutable once built; queries cache flattened layers."""

    user_unit_per_db_unit: float
    meters_per_db_unit: float
    cells: dict[str, Cell] = field(default_factory=dict)
    top_cell: str | None = None
    name: str = "LIB"
    skipped_records: int = field(default=0, compare=False)
    _flat: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.meters_per_db_unit > 0 and self.user_unit_per_db_unit > 0):
            raise GdsiiError("unit scales must be positive")
        if self.top_cell is None and self.cells:
            roots = root_cells(self.cells)
            self.top_cell = roots[-1] if roots else None

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_flat"] = {}
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    @property
    def um_per_db_unit(self) -> float:
        return self.meters_per_db_unit * 1e6

    def validate(self) -> None:
        for cell in self.cells.values():
            for ref in cell.refs:
                if ref.cell not in self.cells:
                    raise GdsiiError(f"cell {cell.name!r} references unknown cell {ref.cell!r}")
        cycle = find_cycle(self.cells)
        if cycle:
            raise GdsiiError("cyclic cell references: " + " -> ".join(cycle))
        if self.top_cell is not None:
            if self.top_cell not in self.cells:
                raise GdsiiError(f"top cell {self.top_cell!r} not in library")
            if self.top_cell not in root_cells(self.cells):
                raise GdsiiError(f"top cell {self.top_cell!r} is referenced by another cell")

    def flat_layer(self, layer: int, datatype: int) -> _FlatLayer:
        key = (layer, datatype)
        with self._lock:
            flat = self._flat.get(key)
            if flat is None:
                flat = self._flatten(layer, datatype)
                self._flat[key] = flat
        return flat

    def extent_um(self) -> tuple[float, float, float, float] | None:
        """Bounding box of all geometry in the top cell, in micrometres."""
        if "extent" not in self._flat:
            boxes = [self.flat_layer(*k).bbox for k in self.layers()]
            boxes = [b for b in boxes if len(b)]
            extent = None
            if boxes:
                allb = np.vstack(boxes) * self.um_per_db_unit
                extent = (allb[:, 0].min(), allb[:, 1].min(), allb[:, 2].max(), allb[:, 3].max())
            with self._lock:
                self._flat["extent"] = extent
        return self._flat["extent"]

    def layers(self) -> list[tuple[int, int]]:
        found = set()
        for cell in self.cells.values():
            found.update((b.layer, b.datatype) for b in cell.boundaries)
            found.update((p.layer, p.datatype) for p in cell.paths)
        return sorted(found)

    def _flatten(self, layer: int, datatype: int) -> _FlatLayer:
        # content(cell) = (templates, template index, offsets) in the cell's frame
        memo: dict[str, tuple[list, np.ndarray, np.ndarray]] = {}

        def content(name: str):
            if name in memo:
                return memo[name]
            cell = self.cells[name]
            templates = [
                np.array(b.points, dtype=float)
                for b in cell.boundaries
                if b.layer == layer and b.datatype == datatype
            ]
            templates += [
                geometry.path_outline(np.array(p.points, dtype=float), p.width)
                for p in cell.paths
                if p.layer == layer and p.datatype == datatype
            ]
            index = [np.arange(len(templates))]
            offsets = [np.zeros((len(templates), 2))]
            for ref in cell.refs:
                ctemp, cidx, coff = content(ref.cell)
                if not len(cidx):
                    continue
                m = ref.matrix().astype(float)
                base = len(templates)
                templates += [t @ m.T for t in ctemp]
                inst = np.array(ref.offsets(), dtype=float)
                moved = (coff @ m.T)[None, :, :] + inst[:, None, :]
                index.append(np.tile(cidx + base, len(inst)))
                offsets.append(moved.reshape(-1, 2))
            result = (templates, np.concatenate(index), np.concatenate(offsets))
            memo[name] = result
            return result

        if self.top_cell is None:
            templates, idx, off = [], np.zeros(0, dtype=np.int64), np.zeros((0, 2))
        else:
            templates, idx, off = content(self.top_cell)
        if templates:
            tb = np.array([[*t.min(axis=0), *t.max(axis=0)] for t in templates])
            bbox = tb[idx] + np.hstack([off, off])
        else:
            bbox = np.empty((0, 4))
        return _FlatLayer(templates, idx.astype(np.int64), off, bbox)


def root_cells(cells: dict[str, Cell]) -> list[str]:
    referenced = {r.cell for c in cells.values() for r in c.refs}
    return [name for name in cells if name not in referenced]


def find_cycle(cells: dict[str, Cell]) -> list[str] | None:
    """Return one reference cycle as a closed name list, or None."""
    state: dict[str, int] = {}
    for start in cells:
        if state.get(start):
            continue
        trail = [start]
        iters = [iter(cells[start].refs)]
        state[start] = 1
        while iters:
            ref = next(iters[-1], None)
            if ref is None:
                state[trail.pop()] = 2
                iters.pop()
                continue
            nxt = ref.cell
            if nxt not in cells:
                continue
            if state.get(nxt) == 1:
                return trail[trail.index(nxt):] + [nxt]
            if not state.get(nxt):
                state[nxt] = 1
                trail.append(nxt)
                iters.append(iter(cells[nxt].refs))
    return None


# ---------------------------------------------------------------------------
# reading


def _records(data: bytes) -> Iterator[tuple[int, int, int, object]]:
    pos = 0
    n = len(data)
    while pos < n:
        if pos + 4 > n:
            raise GdsiiError(f"truncated record header at byte {pos}")
        length, rtype, dtype = struct.unpack_from(">HBB", data, pos)
        if length < 4 or pos + length > n:
            raise GdsiiError(f"truncated record at byte {pos} (declared length {length})")
        body = data[pos + 4 : pos + length]
        if dtype == INT2:
            value = np.frombuffer(body, dtype=">i2").astype(np.int64)
        elif dtype == INT4:
            value = np.frombuffer(body, dtype=">i4").astype(np.int64)
        elif dtype == REAL8:
            value = [real8_decode(body[i : i + 8]) for i in range(0, len(body), 8)]
        elif dtype == ASCII:
            value = body.rstrip(b"\0").decode("ascii", errors="replace")
        elif dtype == BITARRAY:
            value = struct.unpack(">H", body)[0] if len(body) == 2 else 0
        else:
            value = body
        yield pos, rtype, dtype, value
        pos += length
        if rtype == ENDLIB:
            return


def _points(value, offset) -> tuple[tuple[int, int], ...]:
    arr = np.asarray(value)
    if arr.size % 2:
        raise GdsiiError(f"odd coordinate count in XY record at byte {offset}")
    return tuple((int(x), int(y)) for x, y in arr.reshape(-1, 2))


def parse_gdsii(data: bytes) -> LayoutDatabase:
    """Parse a GDSII byte stream into a validated :class:`LayoutDatabase`."""
    recs = _records(bytes(data))
    units = None
    libname = "LIB"
    cells: dict[str, Cell] = {}
    skipped = 0
    ended = False

    def expect_next():
        try:
            return next(recs)
        except StopIteration:
            raise GdsiiError("stream ended before ENDLIB") from None

    def read_element(kind, start, count_unknown=True):
        nonlocal skipped
        attrs: dict = {}
        while True:
            off, rtype, _, value = expect_next()
            if rtype == ENDEL:
                return attrs
            if rtype in (LAYER, DATATYPE, WIDTH, PATHTYPE, STRANS, COLROW):
                attrs[rtype] = value
            elif rtype in (MAG, ANGLE):
                attrs[rtype] = value[0]
            elif rtype == SNAME:
                attrs[SNAME] = value
            elif rtype == XY:
                attrs[XY] = _points(value, off)
            elif rtype in (BGNSTR, ENDSTR, ENDLIB, BOUNDARY, PATH, SREF, AREF):
                raise GdsiiError(f"element starting at byte {start} not terminated by ENDEL (byte {off})")
            elif count_unknown:
                skipped += 1

    def transform(attrs, start):
        flags = int(attrs.get(STRANS, 0))
        if flags & 0x0006:
            raise UnsupportedFeatureError(f"absolute magnification/angle at byte {start}")
        mag = attrs.get(MAG, 1.0)
        if mag != 1.0:
            raise UnsupportedFeatureError(f"magnification {mag} at byte {start}; only 1 is supported")
        angle = attrs.get(ANGLE, 0.0)
        quarter = angle / 90.0
        if abs(quarter - round(quarter)) > 1e-9:
            raise UnsupportedFeatureError(f"rotation {angle} deg at byte {start}; only multiples of 90")
        return int(round(quarter)) % 4, bool(flags & 0x8000)

    def read_cell(start):
        nonlocal skipped
        name = None
        boundaries, paths, refs = [], [], []
        while True:
            off, rtype, _, value = expect_next()
            if rtype == STRNAME:
                name = value
            elif rtype == ENDSTR:
                break
            elif rtype == BOUNDARY:
                a = read_element(rtype, off)
                pts = a.get(XY, ())
                if len(pts) < 4 or pts[0] != pts[-1]:
                    raise GdsiiError(f"BOUNDARY at byte {off} is not a closed ring of >= 3 points")
                pts = pts[:-1]
                _validate_polygon(pts, off)
                boundaries.append(Boundary(_int(a, LAYER, off), _int(a, DATATYPE, off), pts))
            elif rtype == PATH:
                a = read_element(rtype, off)
                pts = a.get(XY, ())
                width = abs(int(a[WIDTH][0])) if WIDTH in a else 0
                if PATHTYPE in a and int(a[PATHTYPE][0]) not in (0, 1, 2, 4):
                    raise GdsiiError(f"invalid PATHTYPE at byte {off}")
                if width == 0:
                    skipped += 1  # zero-width paths carry no area
                    continue
                if len(set(pts)) < 2:
                    raise GdsiiError(f"PATH at byte {off} has fewer than two distinct points")
                paths.append(Path(_int(a, LAYER, off), _int(a, DATATYPE, off), width, pts))
            elif rtype == SREF:
                a = read_element(rtype, off)
                rot, mirror = transform(a, off)
                if SNAME not in a or len(a.get(XY, ())) != 1:
                    raise GdsiiError(f"SREF at byte {off} lacks SNAME or single XY point")
                refs.append(StructRef(a[SNAME], a[XY][0], rot, mirror))
            elif rtype == AREF:
                a = read_element(rtype, off)
                rot, mirror = transform(a, off)
                pts = a.get(XY, ())
                if SNAME not in a or COLROW not in a or len(pts) != 3:
                    raise GdsiiError(f"AREF at byte {off} lacks SNAME, COLROW or 3-point XY")
                cols, rows = int(a[COLROW][0]), int(a[COLROW][1])
                if cols < 1 or rows < 1:
                    raise GdsiiError(f"AREF at byte {off} has non-positive COLROW")
                (ox, oy), (cx, cy), (rx, ry) = pts
                steps = []
                for (px, py), k in (((cx - ox, cy - oy), cols), ((rx - ox, ry - oy), rows)):
                    if px % k or py % k:
                        raise UnsupportedFeatureError(f"AREF at byte {off} has non-integer pitch")
                    steps.append((px // k, py // k))
                refs.append(StructRef(a[SNAME], (ox, oy), rot, mirror, cols, rows, steps[0], steps[1]))
            elif rtype in _SKIPPED_ELEMENTS:
                read_element(rtype, off, count_unknown=False)  # one count per skipped element
                skipped += 1
            else:
                skipped += 1
        if not name:
            raise GdsiiError(f"structure at byte {start} has no STRNAME")
        if name in cells:
            raise GdsiiError(f"duplicate structure name {name!r}")
        cells[name] = Cell(name, tuple(boundaries), tuple(paths), tuple(refs))

    for off, rtype, _, value in recs:
        if rtype == UNITS:
            if len(value) != 2:
                raise GdsiiError(f"UNITS record at byte {off} must hold two reals")
            units = value
        elif rtype == LIBNAME:
            libname = value
        elif rtype == BGNSTR:
            read_cell(off)
        elif rtype == ENDLIB:
            ended = True
        elif rtype in (HEADER, BGNLIB):
            pass
        else:
            skipped += 1
    if units is None:
        raise GdsiiError("missing UNITS record")
    if not ended:
        raise GdsiiError("stream ended before ENDLIB")
    db = LayoutDatabase(units[0], units[1], cells, None, libname, skipped)
    db.validate()
    return db


def read_gdsii(path) -> LayoutDatabase:
    with open(path, "rb") as fh:
        return parse_gdsii(fh.read())


def _int(attrs, key, off) -> int:
    if key not in attrs:
        raise GdsiiError(f"element at byte {off} lacks required record 0x{key:02X}")
    return int(attrs[key][0])


def _validate_polygon(pts, off) -> None:
    arr = geometry.dedupe(np.array(pts, dtype=float))
    if len(arr) < 3:
        raise GdsiiError(f"polygon at byte {off} has fewer than 3 distinct vertices")
    if geometry.signed_area(arr) == 0:
        raise GdsiiError(f"polygon at byte {off} has zero area")
    if not geometry.is_simple(arr):
        raise GdsiiError(f"polygon at byte {off} is self-intersecting")


# ---------------------------------------------------------------------------
# writing


def _rec(rtype: int, dtype: int, payload: bytes = b"") -> bytes:
    if len(payload) % 2:
        payload += b"\0"
    if len(payload) + 4 > 0xFFFF:
        raise GdsiiError(f"record 0x{rtype:02X} too long")
    return struct.pack(">HBB", len(payload) + 4, rtype, dtype) + payload


def _int2(*vals) -> bytes:
    return struct.pack(f">{len(vals)}h", *vals)


def _xy(points) -> bytes:
    if len(points) > _MAX_XY_POINTS:
        raise GdsiiError(f"XY record with {len(points)} points exceeds {_MAX_XY_POINTS}")
    flat = [c for p in points for c in p]
    return _rec(XY, INT4, struct.pack(f">{len(flat)}i", *flat))


def write_gdsii(db: LayoutDatabase) -> bytes:
    """Serialize ``db``; the top cell is written last so re-parsing recovers it."""
    db.validate()
    out = io.BytesIO()
    out.write(_rec(HEADER, INT2, _int2(600)))
    out.write(_rec(BGNLIB, INT2, _int2(*_TIMESTAMP, *_TIMESTAMP)))
    out.write(_rec(LIBNAME, ASCII, db.name.encode("ascii")))
    out.write(_rec(UNITS, REAL8, real8_encode(db.user_unit_per_db_unit) + real8_encode(db.meters_per_db_unit)))
    order = [n for n in db.cells if n != db.top_cell]
    if db.top_cell is not None:
        order.append(db.top_cell)
    for name in order:
        cell = db.cells[name]
        if len(name) > 32:
            raise GdsiiError(f"cell name {name!r} longer than 32 characters")
        out.write(_rec(BGNSTR, INT2, _int2(*_TIMESTAMP, *_TIMESTAMP)))
        out.write(_rec(STRNAME, ASCII, name.encode("ascii")))
        for b in cell.boundaries:
            out.write(_rec(BOUNDARY, NODATA))
            out.write(_rec(LAYER, INT2, _int2(b.layer)))
            out.write(_rec(DATATYPE, INT2, _int2(b.datatype)))
            out.write(_xy(b.points + (b.points[0],)))
            out.write(_rec(ENDEL, NODATA))
        for p in cell.paths:
            if p.width <= 0:
                raise GdsiiError("path width must be positive")
            out.write(_rec(PATH, NODATA))
            out.write(_rec(LAYER, INT2, _int2(p.layer)))
            out.write(_rec(DATATYPE, INT2, _int2(p.datatype)))
            out.write(_rec(PATHTYPE, INT2, _int2(0)))
            out.write(_rec(WIDTH, INT4, struct.pack(">i", p.width)))
            out.write(_xy(p.points))
            out.write(_rec(ENDEL, NODATA))
        for r in cell.refs:
            out.write(_rec(AREF if r.is_array else SREF, NODATA))
            out.write(_rec(SNAME, ASCII, r.cell.encode("ascii")))
            if r.mirror:
                out.write(_rec(STRANS, BITARRAY, struct.pack(">H", 0x8000)))
            if r.rotation % 4:
                if not r.mirror:
                    out.write(_rec(STRANS, BITARRAY, struct.pack(">H", 0)))
                out.write(_rec(ANGLE, REAL8, real8_encode(90.0 * (r.rotation % 4))))
            if r.is_array:
                out.write(_rec(COLROW, INT2, _int2(r.columns, r.rows)))
                ox, oy = r.origin
                (cx, cy), (rx, ry) = r.column_step, r.row_step
                out.write(_xy([(ox, oy), (ox + r.columns * cx, oy + r.columns * cy), (ox + r.rows * rx, oy + r.rows * ry)]))
            else:
                out.write(_xy([r.origin]))
            out.write(_rec(ENDEL, NODATA))
        out.write(_rec(ENDSTR, NODATA))
    out.write(_rec(ENDLIB, NODATA))
    return out.getvalue()


# ---------------------------------------------------------------------------
# queries


def query_window(db: LayoutDatabase, layer: int, datatype: int, window) -> list[np.ndarray]:
    """Polygons on ``(layer, datatype)`` clipped to ``window``.

    ``window`` is ``(xmin, ymin, xmax, ymax)`` in micrometres. Hierarchy is
    flattened and paths are expanded to outlines before clipping. Results are
    float arrays in micrometres.
    """
    xmin, ymin, xmax, ymax = window
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("window must have positive area")
    flat = db.flat_layer(layer, datatype)
    if not len(flat):
        return []
    s = db.um_per_db_unit
    bb = flat.bbox * s
    hit = np.nonzero((bb[:, 2] > xmin) & (bb[:, 0] < xmax) & (bb[:, 3] > ymin) & (bb[:, 1] < ymax))[0]
    # axis rectangles clip to their bounding-box intersection
    lo = np.maximum(bb[hit, :2], (xmin, ymin))
    hi = np.minimum(bb[hit, 2:], (xmax, ymax))
    out = []
    for n, i in enumerate(hit):
        if flat.is_rect[i]:
            (x0, y0), (x1, y1) = lo[n], hi[n]
            if x1 > x0 and y1 > y0:
                out.append(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]))
        else:
            out.extend(geometry.clip_to_window(flat.polygon(i) * s, window))
    return out
