"""Chip-scale steady heat conduction on a graded three-region hex prism.

Regions bottom-up: BEOL, FEOL, bulk silicon. The bottom face (bottom of the
BEOL) takes the applied heat flux, the top face (back of the silicon) a
convective heat-sink condition, and the vertical sides are adiabatic.

Internally everything is in micrometres and watts: conductivities in
W/(m K), fluxes in W/mm^2 and film coefficients in W/(K mm^2) are all
multiplied by 1e-6 to land in W/(um K), W/um^2 and W/(K um^2).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

from .hexfem import TensorGrid, gauss_points_1d, quad_shape_functions
from .linalg import SolveReport, SolverError, apply_dirichlet, cg_solve

UM_SCALE = 1e-6  # W/(m K) -> W/(um K); W/mm^2 -> W/um^2; W/(K mm^2) -> W/(K um^2)

SILICON_K = 139.4
SILICON_THICKNESS = 773.5
FEOL_THICKNESS = 1.5
BEOL_THICKNESS = 4.3

BEOL, FEOL, SILICON = 0, 1, 2
REGION_NAMES = ("BEOL", "FEOL", "silicon")

# The film coefficient appears as 4.0 W/(K mm^2) in the chip-figure caption
# and as 4.0 mW/(K mm^2) in the boundary-condition text.
H_PRESETS = {"caption": 4.0, "text": 4.0e-3}


class MacroError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# mesh


@dataclass
class MacroMesh:
    grid: TensorGrid
    layer_region: np.ndarray  # (nz,) region id of each element layer
    interfaces: tuple[float, float]  # z of BEOL/FEOL and FEOL/silicon interfaces

    @property
    def footprint(self) -> tuple[float, float, float, float]:
        g = self.grid
        return (g.xs[0], g.ys[0], g.xs[-1], g.ys[-1])

    @property
    def element_region(self) -> np.ndarray:
        return self.layer_region[self.grid.element_ijk()[2]]

    def region_layers(self, region: int) -> np.ndarray:
        return np.nonzero(self.layer_region == region)[0]

    def column_centroids(self) -> np.ndarray:
        """In-plane element centroids (nx*ny, 2), x fastest."""
        g = self.grid
        xc = 0.5 * (g.xs[1:] + g.xs[:-1])
        yc = 0.5 * (g.ys[1:] + g.ys[:-1])
        X, Y = np.meshgrid(xc, yc, indexing="ij")
        return np.column_stack([X.ravel(order="F"), Y.ravel(order="F")])


def graded_layers(thickness: float, ratio: float, *, layers: int | None = None,
                  first: float | None = None) -> np.ndarray:
    """Layer thicknesses growing geometrically by ``ratio`` and summing to ``thickness``.

    With ``layers`` the first layer is chosen so the series fits exactly.
    With ``first`` the series starts there and the last layer absorbs the
    remainder (with a warning when the fit is not exact).
    """
    if ratio < 1:
        raise ValueError("grading ratio must be >= 1")
    if layers is not None:
        if layers < 1:
            raise ValueError("need at least one layer")
        if ratio == 1:
            return np.full(layers, thickness / layers)
        h0 = thickness * (ratio - 1) / (ratio**layers - 1)
        h = h0 * ratio ** np.arange(layers)
        h[-1] = thickness - h[:-1].sum()
        return h
    if first is None or first <= 0:
        raise ValueError("give either layers or a positive first layer size")
    h = []
    total = 0.0
    while total + first * ratio ** len(h) < thickness * (1 - 1e-12):
        h.append(first * ratio ** len(h))
        total += h[-1]
    rest = thickness - total
    if rest > 0:
        if h and rest < 0.5 * h[-1]:
            h[-1] += rest
        else:
            h.append(rest)
    if not math.isclose(h[-1], first * ratio ** (len(h) - 1), rel_tol=1e-9):
        warnings.warn(f"graded mesh: last layer adjusted to {h[-1]:.6g} um to fit {thickness:g} um")
    return np.array(h)


def build_macro_mesh(
    footprint=(100.0, 100.0),
    thicknesses=(BEOL_THICKNESS, FEOL_THICKNESS, SILICON_THICKNESS),
    *,
    elements_xy=(50, 50),
    beol_layers: int = 2,
    feol_layers: int = 2,
    grading: float = 1.5,
    silicon_layers: int | None = None,
    first_silicon_dz: float | None = None,
    origin=(0.0, 0.0),
) -> MacroMesh:
    """Structured hex mesh, uniform in-plane, fine in BEOL/FEOL, graded through silicon.

    By default the first silicon layer is no thicker than an FEOL layer and
    the layer count is the smallest that reaches the silicon thickness with
    the given ratio.
    """
    lx, ly = footprint
    t_beol, t_feol, t_si = thicknesses
    if min(lx, ly, t_beol, t_feol, t_si) <= 0:
        raise ValueError("dimensions must be positive")
    if min(beol_layers, feol_layers) < 1:
        raise ValueError("need at least one element layer per region")
    nx, ny = elements_xy
    ox, oy = origin
    dz_feol = t_feol / feol_layers
    if silicon_layers is None and first_silicon_dz is None:
        if grading == 1:
            silicon_layers = max(1, math.ceil(t_si / dz_feol))
        else:
            silicon_layers = max(1, math.ceil(math.log(1 + t_si * (grading - 1) / dz_feol) / math.log(grading)))
    h_si = graded_layers(t_si, grading, layers=silicon_layers, first=first_silicon_dz)
    dz = np.concatenate([np.full(beol_layers, t_beol / beol_layers), np.full(feol_layers, dz_feol), h_si])
    zs = np.concatenate([[0.0], np.cumsum(dz)])
    zs[beol_layers] = t_beol
    zs[beol_layers + feol_layers] = t_beol + t_feol
    zs[-1] = t_beol + t_feol + t_si
    grid = TensorGrid(np.linspace(ox, ox + lx, nx + 1), np.linspace(oy, oy + ly, ny + 1), zs)
    regions = np.concatenate([np.full(beol_layers, BEOL), np.full(feol_layers, FEOL), np.full(len(h_si), SILICON)])
    return MacroMesh(grid, regions, (t_beol, t_beol + t_feol))


# ---------------------------------------------------------------------------
# model and boundary conditions


@dataclass
class MacroModel:
    mesh: MacroMesh
    kappa: np.ndarray  # (n_el, 3, 3) W/(m K)
    body_load: float = 0.0  # W/um^3, uniform

    def __post_init__(self):
        n = self.mesh.grid.n_elements
        if self.kappa.shape != (n, 3, 3):
            raise ValueError(f"kappa must have shape ({n}, 3, 3)")

    @classmethod
    def from_columns(cls, mesh: MacroMesh, beol_tensors, k_feol: float = SILICON_K,
                     k_silicon: float = SILICON_K) -> "MacroModel":
        """BEOL elements take the tensor of their in-plane column (nx*ny, 3, 3)."""
        g = mesh.grid
        beol_tensors = np.asarray(beol_tensors, dtype=float)
        if beol_tensors.shape == (3, 3):
            beol_tensors = np.broadcast_to(beol_tensors, (g.nx * g.ny, 3, 3))
        if beol_tensors.shape != (g.nx * g.ny, 3, 3):
            raise ValueError("need one 3x3 tensor per in-plane element column")
        i, j, _ = g.element_ijk()
        region = mesh.element_region
        kappa = np.zeros((g.n_elements, 3, 3))
        kappa[region == FEOL] = k_feol * np.eye(3)
        kappa[region == SILICON] = k_silicon * np.eye(3)
        col = i + g.nx * j
        kappa[region == BEOL] = beol_tensors[col[region == BEOL]]
        for t in kappa[region == BEOL][:: max(1, g.nx * g.ny // 64)]:
            if np.linalg.eigvalsh(0.5 * (t + t.T)).min() <= 0:
                raise ValueError("BEOL conductivity tensor is not positive definite")
        return cls(mesh, kappa)

    @classmethod
    def isotropic(cls, mesh: MacroMesh, k: float = SILICON_K) -> "MacroModel":
        return cls(mesh, np.broadcast_to(k * np.eye(3), (mesh.grid.n_elements, 3, 3)).copy())


@dataclass(frozen=True)
class CircularPatch:
    center: tuple[float, float]
    diameter: float

    def contains(self, x, y):
        r = 0.5 * self.diameter
        return (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 <= r * r


@dataclass(frozen=True)
class UniformFlux:
    phi: float  # W/mm^2 into the bottom face


@dataclass(frozen=True)
class PatchFlux:
    patches: tuple[CircularPatch, ...]
    phi: float  # W/mm^2 inside each patch


@dataclass(frozen=True)
class Convection:
    h: float  # W/(K mm^2)
    t_amb: float  # deg C


@dataclass(frozen=True)
class DirichletPatch:
    surface: str  # "top" or "bottom"
    temperature: float
    patch: CircularPatch | None = None  # whole surface when None


Flux = Union[UniformFlux, PatchFlux]


@dataclass(frozen=True)
class BoundarySpec:
    flux: Flux | None = None
    convection: Convection | None = None
    dirichlet: tuple[DirichletPatch, ...] = ()

    def validate(self, footprint) -> None:
        x0, y0, x1, y1 = footprint
        if self.convection is not None and self.convection.h < 0:
            raise ValueError("film coefficient must be >= 0")
        patches = list(self.flux.patches) if isinstance(self.flux, PatchFlux) else []
        patches += [d.patch for d in self.dirichlet if d.patch is not None]
        for p in patches:
            r = 0.5 * p.diameter
            cx, cy = p.center
            if cx - r < x0 or cx + r > x1 or cy - r < y0 or cy + r > y1:
                raise ValueError(f"patch {p} extends outside the footprint")
        for d in self.dirichlet:
            if d.surface not in ("top", "bottom"):
                raise ValueError("Dirichlet surface must be 'top' or 'bottom'")


def microbump_patches(center=(50.0, 50.0), pitch: float = 40.0, diameter: float = 20.0) -> tuple[CircularPatch, ...]:
    """Four circular contact patches on a square of side ``pitch`` around ``center``."""
    cx, cy = center
    h = 0.5 * pitch
    return tuple(CircularPatch((cx + sx * h, cy + sy * h), diameter) for sy in (-1, 1) for sx in (-1, 1))


# ---------------------------------------------------------------------------
# assembly and solve


@dataclass
class MacroSystem:
    matrix: sp.csr_matrix  # with Dirichlet rows eliminated
    rhs: np.ndarray
    raw_matrix: sp.csr_matrix  # before Dirichlet elimination
    raw_rhs: np.ndarray
    flux_load: np.ndarray  # nodal applied heat (surface flux plus body load), W
    robin_matrix: sp.csr_matrix
    robin_load: np.ndarray
    fixed: np.ndarray  # Dirichlet node indices
    reference: float = 0.0  # unknowns are T - reference, deg C

    @property
    def power_in(self) -> float:
        return float(self.flux_load.sum())


def _surface_quadrature(grid: TensorGrid, order: int):
    """Physical quadrature points and weights on every in-plane quad (n_q, m)."""
    g, w = gauss_points_1d(order)
    xi = np.array([[a, b] for b in g for a in g])
    wq = np.array([wa * wb for wb in w for wa in w])
    x0, y0, a, b = grid.xy_quad_geometry()
    px = x0[:, None] + a[:, None] * xi[None, :, 0]
    py = y0[:, None] + b[:, None] * xi[None, :, 1]
    weights = (a * b)[:, None] * wq[None, :]
    return px, py, weights, quad_shape_functions(xi)


def _surface_load(grid: TensorGrid, k: int, density, order: int) -> np.ndarray:
    px, py, wts, N = _surface_quadrature(grid, order)
    vals = density(px, py) * wts
    f = np.zeros(grid.n_nodes)
    np.add.at(f, grid.z_face_quads(k).ravel(), (vals @ N).ravel())
    return f


def assemble_macro(model: MacroModel, bc: BoundarySpec, flux_order: int = 4) -> MacroSystem:
    """Galerkin system for the conduction problem with the given boundary data.

    The unknowns are temperatures relative to ``reference`` (the ambient
    temperature when a film is present). Subtracting the ambient analytically
    keeps the right-hand side free of the large ``h T_amb`` term, which would
    otherwise set a round-off floor far above the solver tolerance.
    """
    mesh = model.mesh
    grid = mesh.grid
    bc.validate(mesh.footprint)
    K = grid.assemble(model.kappa, scale=UM_SCALE)
    body = np.zeros(grid.n_nodes)
    if model.body_load:
        body = model.body_load * grid.nodal_volume_weights()
    rhs = body.copy()

    flux = np.zeros(grid.n_nodes)
    if isinstance(bc.flux, UniformFlux):
        phi = bc.flux.phi * UM_SCALE
        flux = _surface_load(grid, 0, lambda x, y: np.full(x.shape, phi), 2)
    elif isinstance(bc.flux, PatchFlux):
        phi = bc.flux.phi * UM_SCALE
        patches = bc.flux.patches

        def density(x, y):
            inside = np.zeros(x.shape, dtype=bool)
            for p in patches:
                inside |= p.contains(x, y)
            return phi * inside

        flux = _surface_load(grid, 0, density, flux_order)
    rhs += flux

    n = grid.n_nodes
    if bc.convection is not None and bc.convection.h > 0:
        reference = float(bc.convection.t_amb)
    elif bc.dirichlet:
        reference = float(np.mean([d.temperature for d in bc.dirichlet]))
    else:
        reference = 0.0
    robin = sp.csr_matrix((n, n))
    robin_load = np.zeros(n)
    if bc.convection is not None and bc.convection.h > 0:
        h = bc.convection.h * UM_SCALE
        px, py, wts, N = _surface_quadrature(grid, 2)
        me = h * np.einsum("eq,qa,qb->eab", wts, N, N)
        quads = grid.z_face_quads(grid.nz)
        rows = np.repeat(quads, 4, axis=1).ravel()
        cols = np.tile(quads, (1, 4)).ravel()
        robin = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        robin = ((robin + robin.T) * 0.5).tocsr()
        robin_load = _surface_load(grid, grid.nz, lambda x, y: np.full(x.shape, h * (bc.convection.t_amb - reference)), 2)

    A = (K + robin).tocsr()
    rhs = rhs + robin_load

    fixed = {}
    for d in bc.dirichlet:
        k = 0 if d.surface == "bottom" else grid.nz
        nodes = grid.face_nodes(2, 0 if k == 0 else 1)
        pts = grid.node_points()[nodes]
        if d.patch is not None:
            nodes = nodes[d.patch.contains(pts[:, 0], pts[:, 1])]
        for node in nodes:
            fixed[int(node)] = d.temperature - reference
    if not fixed and robin.nnz == 0:
        raise MacroError("no Dirichlet patch and zero film coefficient: temperature is not anchored")
    A_d, rhs_d = apply_dirichlet(A, rhs, list(fixed.items()))
    return MacroSystem(A_d, rhs_d, A, rhs, flux + body, robin, robin_load,
                       np.array(sorted(fixed), dtype=np.int64), reference)


@dataclass
class TemperatureField:
    mesh: MacroMesh
    values: np.ndarray  # nodal deg C
    report: SolveReport
    power_in: float  # W
    power_convected: float  # W leaving through the top film
    power_dirichlet: float  # W leaving through fixed-temperature nodes
    extras: dict = field(default_factory=dict)

    @property
    def balance_error(self) -> float:
        """``|in - out| / scale``; a held patch that injects heat has negative outflow."""
        out = self.power_convected + self.power_dirichlet
        ref = max(abs(self.power_in), abs(self.power_convected), abs(self.power_dirichlet))
        return abs(self.power_in - out) / ref if ref else 0.0

    def nodal_grid(self) -> np.ndarray:
        g = self.mesh.grid
        return self.values.reshape((g.nx + 1, g.ny + 1, g.nz + 1), order="F")


def solve_macro(model: MacroModel, bc: BoundarySpec, tol: float = 1e-10,
                max_iter: int | None = None, system: MacroSystem | None = None) -> TemperatureField:
    system = system or assemble_macro(model, bc)
    x0 = np.zeros(len(system.rhs))
    if len(system.fixed):
        x0[system.fixed] = system.rhs[system.fixed]
    rise, report = cg_solve(system.matrix, system.rhs, tol, max_iter, x0=x0)
    if not report.converged:
        raise SolverError("macroscale solve did not converge", report)
    convected = float((system.robin_matrix @ rise).sum() - system.robin_load.sum())
    reaction = 0.0
    if len(system.fixed):
        # the constraint injects A T - b at each held node; outflow is its negative
        r = system.raw_matrix @ rise - system.raw_rhs
        reaction = -float(r[system.fixed].sum())
    return TemperatureField(model.mesh, rise + system.reference, report, system.power_in, convected, reaction)


@dataclass
class PlaneSample:
    z: float
    x: np.ndarray
    y: np.ndarray
    values: np.ndarray  # (len(x), len(y))

    def rows(self):
        for j, yv in enumerate(self.y):
            for i, xv in enumerate(self.x):
                yield xv, yv, self.values[i, j]


def sample_plane(field: TemperatureField, z: float, resolution=None) -> PlaneSample:
    """Interpolate the nodal field onto a regular in-plane grid at height ``z``.

    ``resolution`` is ``(nx, ny)`` sample counts spanning the footprint edges;
    the default hits every mesh node column.
    """
    g = field.mesh.grid
    if not g.zs[0] <= z <= g.zs[-1]:
        raise ValueError(f"z = {z} outside the domain [{g.zs[0]}, {g.zs[-1]}]")
    if resolution is None:
        xs, ys = g.xs, g.ys
    else:
        xs = np.linspace(g.xs[0], g.xs[-1], resolution[0])
        ys = np.linspace(g.ys[0], g.ys[-1], resolution[1])
    interp = RegularGridInterpolator((g.xs, g.ys, g.zs), field.nodal_grid())
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, z)])
    return PlaneSample(z, xs, ys, interp(pts).reshape(X.shape))
