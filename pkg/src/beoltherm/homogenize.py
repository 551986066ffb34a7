"""Homogenized conductivity of a voxel RVE.

The subscale temperature is split into an affine part driven by an applied
macroscopic gradient ``G`` and a fluctuation,

    T(x) = G . (x - x_c) + T_fluct(x),

where ``x_c`` is the RVE centroid. Two boundary treatments keep the
fluctuation's boundary integral zero:

* ``kubc``: the fluctuation vanishes on the whole RVE boundary.
* ``pbc``: the fluctuation is periodic across opposite faces.

After the solve the fluctuation is shifted by a constant so that its volume
average is zero, which makes the RVE mean temperature equal the macroscopic
one. A constant shift leaves both boundary conditions satisfied.

The homogenized tensor comes from the energy form over the three unit load
cases, ``kappa_ij V = T_i^T K T_j``. With interior equilibrium this is the
boundary Schur complement (static condensation) evaluated on the imposed
boundary data, computed here without forming the dense Schur matrix. The
flux average ``kappa e_j = <kappa_s grad T_j>`` is computed as a
cross-check.

Lengths are in micrometres and conductivities in W/(m K). Because the
applied gradients are 1 K/um and the energy is divided by the volume in
um^3, the extracted tensor is in W/(m K) without further scaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .hexfem import TensorGrid
from .linalg import SolveReport, SolverError, cg_solve
from .rve import VoxelGrid

BC_KINDS = ("kubc", "pbc")


class HomogenizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class HomogenizationOptions:
    bc: str = "kubc"
    tol: float = 1e-10
    max_iter: int | None = None
    route_tolerance: float = 1e-6  # flux vs energy disagreement that aborts extraction

    def __post_init__(self):
        if self.bc not in BC_KINDS:
            raise ValueError(f"bc must be one of {BC_KINDS}, got {self.bc!r}")

    def key(self) -> dict:
        return {"bc": self.bc, "tol": self.tol, "max_iter": self.max_iter}


@dataclass
class SubscaleField:
    gradient: np.ndarray  # applied G, K/um
    temperature: np.ndarray  # nodal T^s
    fluctuation: np.ndarray  # nodal T_fluct
    report: SolveReport


@dataclass(frozen=True)
class ConductivityTensor:
    matrix: np.ndarray  # 3x3, W/(m K)
    flux_matrix: np.ndarray | None = field(default=None, compare=False)
    reports: tuple = field(default=(), compare=False)

    COMPONENTS = ("xx", "yy", "zz", "xy", "xz", "yz")
    _IDX = {"xx": (0, 0), "yy": (1, 1), "zz": (2, 2), "xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}

    def __getitem__(self, comp: str) -> float:
        return float(self.matrix[self._IDX[comp]])

    def components(self) -> np.ndarray:
        """``(kxx, kyy, kzz, kxy, kxz, kyz)``."""
        return np.array([self.matrix[self._IDX[c]] for c in self.COMPONENTS])

    @classmethod
    def from_components(cls, comps) -> "ConductivityTensor":
        xx, yy, zz, xy, xz, yz = map(float, comps)
        return cls(np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]]))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    @property
    def route_discrepancy(self) -> float:
        if self.flux_matrix is None:
            return 0.0
        return float(np.abs(self.flux_matrix - self.matrix).max() / np.abs(self.matrix).max())


class SubscaleProblem:
    """Assembled RVE operator plus the boundary-condition bookkeeping for one BC kind."""

    def __init__(self, grid: VoxelGrid, opts: HomogenizationOptions):
        self.grid = grid
        self.opts = opts
        xs, ys, zs = grid.node_coordinates()
        self.mesh = TensorGrid(xs, ys, zs)
        self.kappa_e = grid.kappa()
        self.K = self.mesh.assemble(self.kappa_e)
        self.volume = float(np.sum(self.mesh.element_volumes()))
        self.centroid = 0.5 * np.array([xs[0] + xs[-1], ys[0] + ys[-1], zs[0] + zs[-1]])
        self.rel = self.mesh.node_points() - self.centroid
        self.weights = self.mesh.nodal_volume_weights()
        if opts.bc == "kubc":
            self.free = np.nonzero(~self.mesh.boundary_mask())[0]
            self.K_free = self.K[self.free][:, self.free].tocsr()
        else:
            self.P = self._periodic_map()
            Kr = (self.P.T @ self.K @ self.P).tocsr()
            Kr = ((Kr + Kr.T) * 0.5).tocsr()
            # reduced dof 0 is the anchor that removes the constant nullspace
            self.K_free = Kr[1:, 1:].tocsr()

    def _periodic_map(self) -> sp.csr_matrix:
        m = self.mesh
        nx, ny, nz = m.nx, m.ny, m.nz
        i, j, k = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij")
        red = (i % nx) + nx * ((j % ny) + ny * (k % nz))
        red = red.ravel(order="F")
        return sp.csr_matrix((np.ones(m.n_nodes), (np.arange(m.n_nodes), red)), shape=(m.n_nodes, nx * ny * nz))

    def mean(self, nodal: np.ndarray) -> float:
        return float(self.weights @ nodal) / self.volume

    def solve(self, G) -> SubscaleField:
        G = np.asarray(G, dtype=float)
        affine = self.rel @ G
        n = self.mesh.n_nodes
        fluct = np.zeros(n)
        if self.opts.bc == "kubc":
            if len(self.free):
                rhs = -(self.K @ affine)[self.free]
                sol, report = cg_solve(self.K_free, rhs, self.opts.tol, self.opts.max_iter)
                fluct[self.free] = sol
            else:
                report = SolveReport(0, 0.0, True)
        else:
            rhs = -(self.P.T @ (self.K @ affine))[1:]
            if len(rhs):
                sol, report = cg_solve(self.K_free, rhs, self.opts.tol, self.opts.max_iter)
                fluct = self.P @ np.concatenate([[0.0], sol])
            else:
                report = SolveReport(0, 0.0, True)
        if not report.converged:
            raise SolverError(f"subscale solve did not converge for G = {G.tolist()}", report)
        fluct = fluct - self.mean(fluct)
        return SubscaleField(G, affine + fluct, fluct, report)

    def averages(self, temperature: np.ndarray):
        """Volume averages ``(<grad T>, <q>, <q . grad T>)`` by the assembly quadrature."""
        gint = self.mesh.gradient_integrals(temperature)
        mean_grad = gint.sum(axis=0) / self.volume
        mean_q = -(self.kappa_e[:, None] * gint).sum(axis=0) / self.volume
        mean_q_dot_grad = -float(temperature @ (self.K @ temperature)) / self.volume
        return mean_grad, mean_q, mean_q_dot_grad


def assemble_subscale(grid: VoxelGrid) -> sp.csr_matrix:
    """Conductance matrix of the voxel grid (singular: constants are in its nullspace)."""
    xs, ys, zs = grid.node_coordinates()
    return TensorGrid(xs, ys, zs).assemble(grid.kappa())


def solve_loadcase(grid: VoxelGrid, G, opts: HomogenizationOptions | None = None,
                   problem: SubscaleProblem | None = None) -> SubscaleField:
    opts = opts or HomogenizationOptions()
    problem = problem or SubscaleProblem(grid, opts)
    return problem.solve(G)


def extract_tensor(grid: VoxelGrid, opts: HomogenizationOptions | None = None,
                   problem: SubscaleProblem | None = None) -> ConductivityTensor:
    """Homogenized conductivity tensor of ``grid`` in W/(m K)."""
    opts = opts or HomogenizationOptions()
    problem = problem or SubscaleProblem(grid, opts)
    fields = [problem.solve(e) for e in np.eye(3)]
    T = np.column_stack([f.temperature for f in fields])
    KT = problem.K @ T
    energy = (T.T @ KT) / problem.volume
    flux = np.column_stack([-problem.averages(f.temperature)[1] for f in fields])

    scale = np.abs(energy).max()
    asym = np.abs(energy - energy.T).max()
    if asym > 1e-8 * scale:
        raise HomogenizationError(f"energy form asymmetric by {asym:.3e} (scale {scale:.3e})")
    kappa = 0.5 * (energy + energy.T)
    gap = np.abs(flux - kappa).max()
    if gap > opts.route_tolerance * scale:
        raise HomogenizationError(f"flux and energy routes disagree by {gap:.3e} (scale {scale:.3e})")
    if np.linalg.eigvalsh(kappa).min() <= 0:
        raise HomogenizationError("homogenized tensor is not positive definite")
    return ConductivityTensor(kappa, flux, tuple(f.report for f in fields))


def verify_hill_mandel(grid: VoxelGrid, G, field: SubscaleField,
                       opts: HomogenizationOptions | None = None,
                       problem: SubscaleProblem | None = None) -> float:
    """Relative gap ``|<q . grad T> - <q> . <grad T>| / |<q> . <grad T>|``."""
    problem = problem or SubscaleProblem(grid, opts or HomogenizationOptions())
    mean_grad, mean_q, mean_qg = problem.averages(field.temperature)
    macro = float(mean_q @ mean_grad)
    if macro == 0.0:
        return abs(mean_qg)
    return abs(mean_qg - macro) / abs(macro)
