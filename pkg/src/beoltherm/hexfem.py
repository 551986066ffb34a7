"""Trilinear hexahedra on tensor-product grids.

Nodes are numbered ``i + (nx+1) * (j + (ny+1) * k)`` and elements
``i + nx * (j + ny * k)`` (x fastest). Local node order follows VTK_HEXAHEDRON:
the bottom face counter-clockwise, then the top face.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

CORNERS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]
)
QUAD_CORNERS = CORNERS[:4, :2]
_GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def gauss_points_1d(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def shape_functions(xi: np.ndarray) -> np.ndarray:
    """Trilinear shape values at reference points ``xi`` (m, 3) in [0, 1]^3 -> (m, 8)."""
    c = CORNERS[None, :, :]
    x = xi[:, None, :]
    return np.prod(np.where(c == 1, x, 1.0 - x), axis=2)


def shape_gradients(xi: np.ndarray) -> np.ndarray:
    """Reference gradients (m, 8, 3)."""
    c = CORNERS[None, :, :]
    x = xi[:, None, :]
    f = np.where(c == 1, x, 1.0 - x)
    df = np.where(c == 1, 1.0, -1.0) * np.ones_like(x)
    g = np.empty(f.shape)
    for d in range(3):
        others = [e for e in range(3) if e != d]
        g[..., d] = df[..., d] * f[..., others[0]] * f[..., others[1]]
    return g


def _gauss_cube():
    pts = np.array([[a, b, c] for c in _GAUSS2 for b in _GAUSS2 for a in _GAUSS2])
    return pts, np.full(8, 1.0 / 8.0)


def reference_stiffness() -> np.ndarray:
    """``R[i, j, a, b] = int_[0,1]^3 dN_a/dxi_i dN_b/dxi_j`` by 2x2x2 Gauss."""
    pts, w = _gauss_cube()
    g = shape_gradients(pts)
    return np.einsum("q,qai,qbj->ijab", w, g, g)


def reference_gradient_integral() -> np.ndarray:
    """``D[i, a] = int_[0,1]^3 dN_a/dxi_i`` (exact with 2-point Gauss)."""
    pts, w = _gauss_cube()
    return np.einsum("q,qai->ia", w, shape_gradients(pts))


_R = reference_stiffness()
_D = reference_gradient_integral()


class TensorGrid:
    """Hexahedral mesh on the tensor product of node coordinate arrays."""

    def __init__(self, xs, ys, zs):
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.zs = np.asarray(zs, dtype=float)
        for a in (self.xs, self.ys, self.zs):
            if a.ndim != 1 or len(a) < 2 or np.any(np.diff(a) <= 0):
                raise ValueError("node coordinates must be strictly increasing with >= 2 entries")

    @property
    def nx(self) -> int:
        return len(self.xs) - 1

    @property
    def ny(self) -> int:
        return len(self.ys) - 1

    @property
    def nz(self) -> int:
        return len(self.zs) - 1

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1) * (self.nz + 1)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny * self.nz

    def node_index(self, i, j, k):
        return np.asarray(i) + (self.nx + 1) * (np.asarray(j) + (self.ny + 1) * np.asarray(k))

    def node_points(self) -> np.ndarray:
        X, Y, Z = np.meshgrid(self.xs, self.ys, self.zs, indexing="ij")
        return np.column_stack([X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")])

    def element_ijk(self):
        i, j, k = np.meshgrid(np.arange(self.nx), np.arange(self.ny), np.arange(self.nz), indexing="ij")
        return i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")

    def connectivity(self) -> np.ndarray:
        i, j, k = self.element_ijk()
        return np.stack([self.node_index(i + c[0], j + c[1], k + c[2]) for c in CORNERS], axis=1)

    def element_sizes(self) -> np.ndarray:
        i, j, k = self.element_ijk()
        return np.column_stack([np.diff(self.xs)[i], np.diff(self.ys)[j], np.diff(self.zs)[k]])

    def element_centroids(self) -> np.ndarray:
        i, j, k = self.element_ijk()
        mid = lambda a: 0.5 * (a[1:] + a[:-1])  # noqa: E731
        return np.column_stack([mid(self.xs)[i], mid(self.ys)[j], mid(self.zs)[k]])

    def element_volumes(self) -> np.ndarray:
        return np.prod(self.element_sizes(), axis=1)

    def element_matrices(self, kappa) -> np.ndarray:
        """Element conductance matrices (n_el, 8, 8).

        ``kappa`` is a scalar, a per-element array (n_el,) of isotropic values,
        or per-element tensors (n_el, 3, 3).
        """
        h = self.element_sizes()
        vol = np.prod(h, axis=1)
        kappa = np.asarray(kappa, dtype=float)
        if kappa.ndim == 0:
            kappa = np.full(self.n_elements, float(kappa))
        if kappa.ndim == 1:
            coef = np.zeros((self.n_elements, 3, 3))
            for d in range(3):
                coef[:, d, d] = kappa * vol / h[:, d] ** 2
        else:
            coef = kappa * (vol[:, None, None] / (h[:, :, None] * h[:, None, :]))
        ke = np.einsum("eij,ijab->eab", coef, _R)
        return 0.5 * (ke + ke.transpose(0, 2, 1))

    def assemble(self, kappa, scale: float = 1.0) -> sp.csr_matrix:
        """Global conductance matrix, exactly symmetric."""
        ke = self.element_matrices(kappa) * scale
        conn = self.connectivity()
        rows = np.repeat(conn, 8, axis=1).ravel()
        cols = np.tile(conn, (1, 8)).ravel()
        A = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(self.n_nodes, self.n_nodes)).tocsr()
        A = ((A + A.T) * 0.5).tocsr()
        A.sort_indices()
        return A

    def gradient_integrals(self, values: np.ndarray) -> np.ndarray:
        """``int_e grad u dV`` for every element (n_el, 3) of a nodal field ``u``."""
        h = self.element_sizes()
        vol = np.prod(h, axis=1)
        ue = values[self.connectivity()]
        return np.einsum("ia,ea->ei", _D, ue) * (vol[:, None] / h)

    def nodal_volume_weights(self) -> np.ndarray:
        """``int N_a dV`` per node, so that ``w @ u`` integrates a nodal field."""
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.connectivity().ravel(), np.repeat(self.element_volumes() / 8.0, 8))
        return w

    def face_nodes(self, axis: int, side: int) -> np.ndarray:
        """Node indices on the face ``axis`` = min (side 0) or max (side 1)."""
        n = [self.nx + 1, self.ny + 1, self.nz + 1]
        ranges = [np.arange(m) for m in n]
        ranges[axis] = np.array([0 if side == 0 else n[axis] - 1])
        I, J, K = np.meshgrid(*ranges, indexing="ij")
        return self.node_index(I.ravel(order="F"), J.ravel(order="F"), K.ravel(order="F"))

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        for axis in range(3):
            for side in (0, 1):
                mask[self.face_nodes(axis, side)] = True
        return mask

    def z_face_quads(self, k: int) -> np.ndarray:
        """Node indices (nx*ny, 4) of the quads on node plane ``k``, counter-clockwise."""
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        i, j = i.ravel(order="F"), j.ravel(order="F")
        return np.stack([self.node_index(i + c[0], j + c[1], k) for c in QUAD_CORNERS], axis=1)

    def xy_quad_geometry(self):
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        i, j = i.ravel(order="F"), j.ravel(order="F")
        return self.xs[i], self.ys[j], np.diff(self.xs)[i], np.diff(self.ys)[j]


def quad_shape_functions(xi: np.ndarray) -> np.ndarray:
    c = QUAD_CORNERS[None, :, :]
    x = xi[:, None, :]
    return np.prod(np.where(c == 1, x, 1.0 - x), axis=2)
