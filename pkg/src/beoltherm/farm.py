"""Per-column conductivity maps from many independent RVE extractions.

Each in-plane column of BEOL macro elements gets one RVE centred on the
column's centroid. The RVE spans the full process stack, so both BEOL
element layers of a column share its tensor.

Work is split into two stages that both run on a worker pool:

1. rasterize every window into a voxel grid;
2. homogenize every distinct grid.

Windows of a periodic layout often rasterize to identical grids, so stage 2
works on grid content hashes and solves each distinct grid once. Results
land in a dictionary keyed by window, so job count and completion order
cannot change the output.

An optional on-disk cache stores tensors by grid hash (plus solver
options) and, per layout/stack/options triple, the window -> grid-hash
index, so unchanged reruns skip both stages.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .gdsii import LayoutDatabase, write_gdsii
from .homogenize import ConductivityTensor, HomogenizationOptions, extract_tensor
from .linalg import SolveReport
from .rve import RveSpec, VoxelGrid, build_rve
from .stack import LayerStack

COMPONENTS = ConductivityTensor.COMPONENTS


class FarmError(RuntimeError):
    def __init__(self, message: str, window=None):
        super().__init__(message)
        self.window = window


@dataclass(frozen=True)
class RveOptions:
    half_size: float = 1.0
    voxels_per_edge_xy: int = 40
    voxels_per_layer_z: int = 2
    bc: str = "kubc"
    tol: float = 1e-10
    max_iter: int | None = None

    def __post_init__(self):
        # validate eagerly rather than inside a worker
        self.spec((0.0, 0.0))
        self.homogenization()

    def spec(self, center) -> RveSpec:
        return RveSpec((float(center[0]), float(center[1])), self.half_size,
                       self.voxels_per_edge_xy, self.voxels_per_layer_z)

    def homogenization(self) -> HomogenizationOptions:
        return HomogenizationOptions(self.bc, self.tol, self.max_iter)

    def key(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict | None) -> "RveOptions":
        return cls(**(doc or {}))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _digest(obj) -> str:
    return sha256_bytes(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode())


def _pt(center) -> tuple[float, float]:
    return (float(center[0]), float(center[1]))


def window_key(center, half: float) -> str:
    return ",".join(float(v).hex() for v in (center[0], center[1], half))


# ---------------------------------------------------------------------------
# map container


@dataclass
class ConductivityMap:
    xs: np.ndarray  # sample centre x, one per element column
    ys: np.ndarray
    tensors: np.ndarray  # (len(xs) * len(ys), 3, 3), x fastest
    provenance: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)

    COMPONENTS = COMPONENTS

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        self.tensors = np.asarray(self.tensors, dtype=float)
        if self.tensors.shape != (len(self.xs) * len(self.ys), 3, 3):
            raise ValueError("need one 3x3 tensor per (x, y) sample")

    def __len__(self) -> int:
        return len(self.tensors)

    def centers(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.column_stack([X.ravel(order="F"), Y.ravel(order="F")])

    def tensors_flat(self) -> np.ndarray:
        return self.tensors

    def components_flat(self) -> np.ndarray:
        """(n, 6) in the order xx, yy, zz, xy, xz, yz."""
        t = self.tensors
        return np.column_stack([t[:, 0, 0], t[:, 1, 1], t[:, 2, 2], t[:, 0, 1], t[:, 0, 2], t[:, 1, 2]])

    def component_image(self, comp: str) -> np.ndarray:
        """One component as an (nx, ny) array."""
        c = self.components_flat()[:, COMPONENTS.index(comp)]
        return c.reshape((len(self.xs), len(self.ys)), order="F")

    def digest(self) -> str:
        return sha256_bytes(np.ascontiguousarray(self.tensors).tobytes())

    def to_csv(self) -> str:
        lines = ["x_um,y_um," + ",".join(f"k{c}" for c in COMPONENTS)]
        for (x, y), comps in zip(self.centers(), self.components_flat()):
            lines.append(",".join(format(float(v), ".17g") for v in (x, y, *comps)))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="ascii", newline="\n")

    @classmethod
    def read_csv(cls, path) -> "ConductivityMap":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        xs = np.unique(data[:, 0])
        ys = np.unique(data[:, 1])
        if len(xs) * len(ys) != len(data):
            raise ValueError(f"{path}: samples do not form a full x-y grid")
        order = np.lexsort((data[:, 0], data[:, 1]))  # y major, x fastest
        comps = data[order, 2:]
        if comps.shape[1] != 6:
            raise ValueError(f"{path}: expected 6 tensor components per row")
        return cls(xs, ys, np.array([ConductivityTensor.from_components(c).matrix for c in comps]))


# ---------------------------------------------------------------------------
# disk cache


class TensorCache:
    """Directory-backed cache of tensors and window indices.

    Values are stored as ``float.hex`` strings, so cached tensors are
    bit-identical to freshly computed ones.
    """

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "tensors").mkdir(parents=True, exist_ok=True)
        (self.root / "windows").mkdir(parents=True, exist_ok=True)

    @staticmethod
    def tensor_key(grid_hash: str, options: RveOptions) -> str:
        return _digest({"grid": grid_hash, "homogenization": options.homogenization().key()})

    def _atomic_write(self, path: Path, doc) -> None:
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
        os.replace(tmp, path)

    def get_tensor(self, key: str) -> ConductivityTensor | None:
        path = self.root / "tensors" / f"{key}.json"
        if not path.exists():
            return None
        doc = json.loads(path.read_text())
        matrix = np.array([float.fromhex(v) for v in doc["matrix"]]).reshape(3, 3)
        flux = np.array([float.fromhex(v) for v in doc["flux_matrix"]]).reshape(3, 3)
        reports = tuple(SolveReport(r["iterations"], float.fromhex(r["residual"]), r["converged"])
                        for r in doc["reports"])
        return ConductivityTensor(matrix, flux, reports)

    def put_tensor(self, key: str, tensor: ConductivityTensor) -> None:
        doc = {
            "matrix": [float(v).hex() for v in tensor.matrix.ravel()],
            "flux_matrix": [float(v).hex() for v in tensor.flux_matrix.ravel()],
            "reports": [{"iterations": r.iterations, "residual": float(r.residual).hex(),
                         "converged": r.converged} for r in tensor.reports],
        }
        self._atomic_write(self.root / "tensors" / f"{key}.json", doc)

    def load_index(self, run_key: str) -> dict:
        path = self.root / "windows" / f"{run_key}.json"
        return json.loads(path.read_text()) if path.exists() else {}

    def save_index(self, run_key: str, index: dict) -> None:
        self._atomic_write(self.root / "windows" / f"{run_key}.json", index)


# ---------------------------------------------------------------------------
# workers

_WORKER: dict = {}


def _init_worker(db: LayoutDatabase, stack: LayerStack, options: RveOptions) -> None:
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
    _WORKER.update(db=db, stack=stack, options=options)


def _rasterize(center) -> tuple[str, VoxelGrid]:
    opts = _WORKER["options"]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            grid = build_rve(_WORKER["db"], _WORKER["stack"], opts.spec(center))
    except Exception as exc:  # report the window, keep the cause
        raise FarmError(f"RVE build failed at window centre {_pt(center)}: {exc}", _pt(center)) from exc
    return grid.content_hash(), grid


def _homogenize(item) -> ConductivityTensor:
    center, grid = item
    try:
        return extract_tensor(grid, _WORKER["options"].homogenization())
    except Exception as exc:
        raise FarmError(f"RVE extraction failed at window centre {_pt(center)}: {exc}", _pt(center)) from exc


def _imap(fn, items, jobs: int, initargs):
    """Ordered lazy map over ``items`` in-process (jobs == 1) or on a process pool."""
    if not items:
        return
    if jobs <= 1:
        _init_worker(*initargs)
        try:
            for it in items:
                yield fn(it)
        finally:
            _WORKER.clear()
        return
    chunk = max(1, min(16, len(items) // (4 * jobs)))
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=initargs) as pool:
        yield from pool.map(fn, items, chunksize=chunk)


def _map(fn, items, jobs: int, initargs) -> list:
    return list(_imap(fn, items, jobs, initargs))


# ---------------------------------------------------------------------------
# driver


@dataclass
class FarmStats:
    windows: int = 0
    index_hits: int = 0
    rasterized: int = 0
    distinct_grids: int = 0
    tensor_hits: int = 0
    solved: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def layout_digest(db: LayoutDatabase) -> str:
    return sha256_bytes(write_gdsii(db))


def stack_digest(stack: LayerStack) -> str:
    return sha256_bytes(stack.dumps().encode())


def build_conductivity_map(db: LayoutDatabase, stack: LayerStack, centers_xy, options: RveOptions | None = None,
                           jobs: int = 1, cache: TensorCache | None = None, layout_hash: str | None = None,
                           stats: FarmStats | None = None, progress=None) -> ConductivityMap:
    """Homogenized tensor for every sample centre on a regular x-y grid.

    ``centers_xy`` is either an (n, 2) array of column centroids in x-fastest
    order or a macro mesh (its column centroids are used). ``layout_hash``
    should be the digest of the layout file when there is one; otherwise the
    database is serialized and hashed.
    """
    options = options or RveOptions()
    if hasattr(centers_xy, "column_centroids"):
        centers_xy = centers_xy.column_centroids()
    centers = np.asarray(centers_xy, dtype=float)
    xs = np.unique(centers[:, 0])
    ys = np.unique(centers[:, 1])
    if len(xs) * len(ys) != len(centers):
        raise FarmError("sample centres do not form a regular x-y grid")
    stats = stats if stats is not None else FarmStats()
    stats.windows = len(centers)
    say = progress or (lambda msg: None)

    provenance = {
        "layout_sha256": layout_hash or layout_digest(db),
        "stack_sha256": stack_digest(stack),
        "rve_options": options.key(),
    }
    run_key = _digest(provenance)
    keys = [window_key(c, options.half_size) for c in centers]
    index = cache.load_index(run_key) if cache else {}
    initargs = (db, stack, options)

    # stage 1: rasterize windows not already indexed
    todo = [i for i, k in enumerate(keys) if k not in index]
    stats.index_hits = len(keys) - len(todo)
    say(f"rasterizing {len(todo)} of {len(keys)} windows")
    grids: dict[str, tuple] = {}
    for i, (ghash, grid) in zip(todo, _imap(_rasterize, [_pt(centers[i]) for i in todo], jobs, initargs)):
        index[keys[i]] = ghash
        grids.setdefault(ghash, (_pt(centers[i]), grid))
        stats.rasterized += 1

    # stage 2: homogenize each distinct grid that is not cached
    distinct = sorted(set(index[k] for k in keys))
    stats.distinct_grids = len(distinct)
    tensors: dict[str, ConductivityTensor] = {}
    missing = []
    for ghash in distinct:
        cached = cache.get_tensor(TensorCache.tensor_key(ghash, options)) if cache else None
        if cached is not None:
            tensors[ghash] = cached
        else:
            missing.append(ghash)
    stats.tensor_hits = len(distinct) - len(missing)
    lost = {g for g in missing if g not in grids}
    if lost:
        # the index is cached but some tensors are not: rasterize those windows again
        redo = [i for i, k in enumerate(keys) if index[k] in lost]
        for i, (ghash, grid) in zip(redo, _map(_rasterize, [_pt(centers[i]) for i in redo], jobs, initargs)):
            if ghash != index[keys[i]]:
                raise FarmError(f"stale cache index for window centre {_pt(centers[i])}", _pt(centers[i]))
            grids.setdefault(ghash, (_pt(centers[i]), grid))
        stats.rasterized += len(redo)
    say(f"homogenizing {len(missing)} distinct grids ({stats.tensor_hits} cached)")
    try:
        for ghash, tensor in zip(missing, _imap(_homogenize, [grids[g] for g in missing], jobs, initargs)):
            tensors[ghash] = tensor
            stats.solved += 1
            if cache:
                cache.put_tensor(TensorCache.tensor_key(ghash, options), tensor)
    finally:
        if cache:
            cache.save_index(run_key, index)

    # gather by window; centres arrive x fastest, which is the map order
    order = np.lexsort((centers[:, 0], centers[:, 1]))
    matrices = np.array([tensors[index[keys[i]]].matrix for i in order])
    reports = [r for g in distinct for r in tensors[g].reports]
    summary = {
        "distinct_tensors": len(distinct),
        "max_iterations": max((r.iterations for r in reports), default=0),
        "max_residual": max((r.residual for r in reports), default=0.0),
        "max_route_discrepancy": max((tensors[g].route_discrepancy for g in distinct), default=0.0),
    }
    return ConductivityMap(xs, ys, matrices, provenance, summary)
