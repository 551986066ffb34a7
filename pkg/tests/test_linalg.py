import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from beoltherm.linalg import SolverError, apply_dirichlet, cg_solve, max_asymmetry


def _laplacian_1d(n):
    main = np.full(n, 2.0)
    off = np.full(n - 1, -1.0)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def test_1d_laplacian_matches_dense_solve():
    A = _laplacian_1d(10)
    b = np.arange(1.0, 11.0)
    x, report = cg_solve(A, b, tol=1e-12)
    ref = np.linalg.solve(A.toarray(), b)
    assert report.converged
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) <= 1e-10
    # exact arithmetic needs at most n iterations; allow one restart
    assert report.iterations <= 20


def test_zero_rhs_returns_zero():
    x, report = cg_solve(_laplacian_1d(5), np.zeros(5))
    assert np.all(x == 0) and report.iterations == 0 and report.converged


def test_indefinite_matrix_raises():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(SolverError, match="not SPD"):
        cg_solve(A, np.array([1.0, -1.0]))
    with pytest.raises(SolverError, match="non-positive diagonal"):
        cg_solve(sp.csr_matrix(np.diag([1.0, -1.0])), np.ones(2))


def test_iteration_cap_reports_nonconvergence():
    x, report = cg_solve(_laplacian_1d(200), np.ones(200), tol=1e-12, max_iter=5)
    assert not report.converged and report.iterations == 5
    assert report.residual == pytest.approx(np.linalg.norm(np.ones(200) - _laplacian_1d(200) @ x) / np.sqrt(200))


@st.composite
def spd_systems(draw):
    n = draw(st.integers(2, 30))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    A = M @ M.T + n * np.eye(n)
    return sp.csr_matrix(A), rng.standard_normal(n)


@settings(max_examples=60, deadline=None)
@given(spd_systems())
def test_report_matches_true_residual(system):
    A, b = system
    x, report = cg_solve(A, b, tol=1e-10)
    true = np.linalg.norm(b - A @ x) / np.linalg.norm(b)
    assert report.residual == pytest.approx(true, rel=1e-12, abs=1e-300)
    assert report.converged == (report.residual <= 1e-10)
    assert report.converged
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), rtol=1e-7, atol=1e-9)


def _dense_dirichlet(A, b, fixed):
    """Reduced solve on the free unknowns, then scatter."""
    n = len(b)
    idx = np.array([i for i, _ in fixed])
    val = np.array([v for _, v in fixed])
    free = np.setdiff1d(np.arange(n), idx)
    x = np.zeros(n)
    x[idx] = val
    x[free] = np.linalg.solve(A[np.ix_(free, free)], b[free] - A[np.ix_(free, idx)] @ val)
    return x


@settings(max_examples=40, deadline=None)
@given(spd_systems(), st.data())
def test_dirichlet_elimination_matches_reduced_solve(system, data):
    A, b = system
    n = len(b)
    idx = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n - 1, unique=True))
    fixed = [(i, data.draw(st.floats(-5, 5))) for i in idx]
    Ad, bd = apply_dirichlet(A, b, fixed)
    assert max_asymmetry(Ad) == 0.0
    x = np.linalg.solve(Ad.toarray(), bd)
    np.testing.assert_allclose(x, _dense_dirichlet(A.toarray(), b, fixed), rtol=1e-9, atol=1e-9)
    for i, v in fixed:
        assert x[i] == pytest.approx(v)


def test_dirichlet_leaves_inputs_untouched():
    A = _laplacian_1d(4)
    b = np.ones(4)
    before = A.toarray().copy()
    apply_dirichlet(A, b, [(0, 2.0)])
    np.testing.assert_array_equal(A.toarray(), before)
    np.testing.assert_array_equal(b, np.ones(4))


def test_dirichlet_duplicates():
    A = _laplacian_1d(4)
    Ad, bd = apply_dirichlet(A, np.zeros(4), [(1, 3.0), (1, 3.0)])
    assert bd[1] == 3.0
    with pytest.raises(ValueError, match="conflicting"):
        apply_dirichlet(A, np.zeros(4), [(1, 3.0), (1, 4.0)])
    with pytest.raises(IndexError):
        apply_dirichlet(A, np.zeros(4), [(4, 0.0)])
