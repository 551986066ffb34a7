"""Voxel RVE construction from layout windows and a layer stack."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .gdsii import LayoutDatabase, query_window
from .stack import LayerStack


@dataclass(frozen=True)
class RveSpec:
    center: tuple[float, float]  # um, chip coordinates
    half_size: float = 1.0
    voxels_per_edge_xy: int = 40
    voxels_per_layer_z: int = 2

    def __post_init__(self):
        if not self.half_size > 0:
            raise ValueError("half_size must be positive")
        if self.voxels_per_edge_xy < 1 or self.voxels_per_layer_z < 1:
            raise ValueError("voxel counts must be >= 1")

    @property
    def window(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        h = self.half_size
        return (cx - h, cy - h, cx + h, cy + h)


@dataclass(eq=False)
class VoxelGrid:
    """Structured material grid; voxel ``(i, j, k)`` spans x-slab i, y-slab j, z-slab k."""

    dx: float
    dy: float
    dz: np.ndarray  # (nz,) um
    material_id: np.ndarray  # (nx, ny, nz) uint8
    conductivities: np.ndarray  # id -> W/(m K)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    material_names: tuple[str, ...] = ()
    slab_layer: np.ndarray | None = None  # (nz,) process-layer index of each z-slab
    metal_ids: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.dz = np.asarray(self.dz, dtype=float)
        self.material_id = np.asarray(self.material_id)
        self.conductivities = np.asarray(self.conductivities, dtype=float)
        if self.material_id.ndim != 3 or self.material_id.shape[2] != len(self.dz):
            raise ValueError("material_id must be (nx, ny, nz) with nz == len(dz)")
        if self.material_id.min() < 0 or self.material_id.max() >= len(self.conductivities):
            raise ValueError("material id out of range")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.material_id.shape

    @property
    def nx(self) -> int:
        return self.material_id.shape[0]

    @property
    def ny(self) -> int:
        return self.material_id.shape[1]

    @property
    def nz(self) -> int:
        return self.material_id.shape[2]

    def node_coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x0, y0, z0 = self.origin
        xs = x0 + self.dx * np.arange(self.nx + 1)
        ys = y0 + self.dy * np.arange(self.ny + 1)
        zs = z0 + np.concatenate([[0.0], np.cumsum(self.dz)])
        return xs, ys, zs

    def kappa(self) -> np.ndarray:
        """Per-voxel isotropic conductivity, flattened in element order (x fastest)."""
        return self.conductivities[self.material_id].ravel(order="F")

    @property
    def volume(self) -> float:
        return self.nx * self.dx * self.ny * self.dy * float(self.dz.sum())

    def content_hash(self) -> str:
        """Digest of everything that determines the homogenized tensor."""
        h = hashlib.sha256()
        h.update(np.asarray(self.material_id.shape, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.material_id, dtype=np.uint8).tobytes())
        h.update(np.array([self.dx, self.dy], dtype=float).tobytes())
        h.update(self.dz.tobytes())
        h.update(self.conductivities.tobytes())
        return h.hexdigest()

    @classmethod
    def uniform(cls, shape, size, conductivity: float) -> "VoxelGrid":
        nx, ny, nz = shape
        lx, ly, lz = size
        return cls(lx / nx, ly / ny, np.full(nz, lz / nz), np.zeros(shape, dtype=np.uint8), [conductivity])


def _stack_material_table(stack: LayerStack):
    names = tuple(stack.materials)
    ids = {name: i for i, name in enumerate(names)}
    k = np.array([stack.materials[n].conductivity for n in names])
    return names, ids, k


def build_rve(db: LayoutDatabase, stack: LayerStack, spec: RveSpec) -> VoxelGrid:
    """Rasterize the layout window around ``spec.center`` through the full stack.

    Voxels whose centre lies inside a clipped polygon of a line/via layer take
    that layer's metal; everything else takes the layer background.
    """
    n = spec.voxels_per_edge_xy
    xmin, ymin, xmax, ymax = spec.window
    dx = (xmax - xmin) / n
    dy = (ymax - ymin) / n
    xc = xmin + dx * (np.arange(n) + 0.5)
    yc = ymin + dy * (np.arange(n) + 0.5)

    names, ids, k = _stack_material_table(stack)
    sub = spec.voxels_per_layer_z
    dz = np.concatenate([np.full(sub, layer.thickness / sub) for layer in stack.layers])
    slab_layer = np.repeat(np.arange(len(stack.layers)), sub)
    material_id = np.empty((n, n, len(dz)), dtype=np.uint8)

    extent = db.extent_um()
    outside = extent is None or not (
        extent[2] > xmin and extent[0] < xmax and extent[3] > ymin and extent[1] < ymax
    )
    if outside:
        warnings.warn(f"RVE window {spec.window} lies outside the layout extent; using dielectric only")

    min_area = dx * dy * 1e-6
    for li, layer in enumerate(stack.layers):
        slabs = slab_layer == li
        bg = ids[layer.background.name]
        if not layer.has_metal or outside:
            material_id[:, :, slabs] = bg
            continue
        polys = [
            p
            for p in query_window(db, layer.gds_layer, layer.gds_datatype, spec.window)
            if geometry.signed_area(p) >= min_area
        ]
        mask = geometry.rasterize(polys, xc, yc)
        plane = np.where(mask, ids[layer.metal.name], bg).astype(np.uint8)
        material_id[:, :, slabs] = plane[:, :, None]

    metal_ids = frozenset(ids[layer.metal.name] for layer in stack.layers if layer.has_metal)
    return VoxelGrid(dx, dy, dz, material_id, k, (xmin, ymin, 0.0), names, slab_layer, metal_ids)


def metal_fraction(grid: VoxelGrid, layer_index: int) -> float:
    """Fraction of the voxels in one process layer that are metal."""
    if grid.slab_layer is None:
        raise ValueError("grid has no process-layer mapping")
    slabs = grid.slab_layer == layer_index
    if not slabs.any():
        raise IndexError(f"no z-slabs for layer {layer_index}")
    ids = grid.material_id[:, :, slabs]
    return float(np.isin(ids, list(grid.metal_ids)).mean())
