"""Jacobi-preconditioned conjugate gradients and symmetric Dirichlet elimination.

System matrices are ``scipy.sparse.csr_matrix`` instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class SolverError(RuntimeError):
    def __init__(self, message: str, report: "SolveReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float  # final |b - Ax| / |b|
    converged: bool

    def as_dict(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual, "converged": self.converged}


def cg_solve(A, b, tol: float = 1e-10, max_iter: int | None = None, x0=None):
    """Solve ``A x = b`` for SPD ``A``.

    Returns ``(x, SolveReport)``. Convergence is judged on the true residual
    ``|b - A x| / |b|``; if the recurrence drifts below ``tol`` while the true
    residual has not, the iteration restarts from the current iterate. A
    restart that fails to halve the true residual means the round-off floor
    has been reached; the solve then stops early. Non-convergence is
    reported, not raised.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has a non-positive diagonal entry; not SPD")
    inv_diag = 1.0 / diag

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    it = 0
    last_true = np.inf
    while True:
        z = inv_diag * r
        p = z.copy()
        rz = r @ z
        rnorm = np.linalg.norm(r)
        while rnorm > tol * bnorm and it < max_iter:
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0:
                raise SolverError("non-positive curvature in CG; matrix not SPD",
                                  SolveReport(it, rnorm / bnorm, False))
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            z = inv_diag * r
            rz_new = r @ z
            p *= rz_new / rz
            p += z
            rz = rz_new
            rnorm = np.linalg.norm(r)
        r = b - A @ x
        true_res = np.linalg.norm(r) / bnorm
        if true_res <= tol:
            return x, SolveReport(it, float(true_res), True)
        if it >= max_iter or true_res > 0.5 * last_true:
            return x, SolveReport(it, float(true_res), False)
        last_true = true_res


def apply_dirichlet(A, b, fixed):
    """Impose ``x[i] = v`` for ``(i, v)`` in ``fixed`` by symmetric elimination.

    Fixed rows and columns are zeroed and given a unit diagonal; the right-hand
    side of the free equations absorbs the known values. Returns a new
    ``(A, b)``; the inputs are not modified.
    """
    A = sp.csr_matrix(A)
    b = np.array(b, dtype=float)
    if not len(fixed):
        return A.copy(), b
    values: dict[int, float] = {}
    for idx, val in fixed:
        idx = int(idx)
        if not 0 <= idx < A.shape[0]:
            raise IndexError(f"fixed index {idx} out of range")
        if idx in values and values[idx] != val:
            raise ValueError(f"conflicting values for fixed index {idx}")
        values[idx] = float(val)
    idx = np.fromiter(values.keys(), dtype=np.int64)
    val = np.fromiter(values.values(), dtype=float)
    xfix = np.zeros(A.shape[0])
    xfix[idx] = val
    mask = np.zeros(A.shape[0], dtype=bool)
    mask[idx] = True

    b = b - A @ xfix
    b[idx] = val
    keep = sp.diags((~mask).astype(float))
    A = (keep @ A @ keep + sp.diags(mask.astype(float))).tocsr()
    A.eliminate_zeros()
    return A, b


def max_asymmetry(A) -> float:
    A = sp.csr_matrix(A)
    d = abs(A - A.T)
    return float(d.max()) if d.nnz else 0.0
