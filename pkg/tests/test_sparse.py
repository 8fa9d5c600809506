import numpy as np
import pytest
import scipy.sparse as sp

from safem import sparse as S


def _random_spd(n, rng):
    M = rng.standard_normal((n, n))
    return M.T @ M + np.eye(n)


def _csr(dense):
    return S.from_triplets(*dense.shape, rows=np.nonzero(dense)[0], cols=np.nonzero(dense)[1],
                           values=dense[np.nonzero(dense)])


def test_duplicates_summed():
    A = S.from_triplets(1, 1, [(0, 0, 1.0), (0, 0, 2.0)])
    assert A.nnz == 1
    assert A[0, 0] == 3.0


def test_empty_triplets():
    A = S.from_triplets(2, 2, [])
    assert np.array_equal(S.matvec(A, np.array([1.0, 2.0])), np.zeros(2))


def test_identity_triplets():
    A = S.from_triplets(2, 2, [(0, 0, 1.0), (1, 1, 1.0)])
    x = np.random.default_rng(0).standard_normal(2)
    assert np.array_equal(S.matvec(A, x), x)


def test_canonical_layout():
    A = S.from_triplets(3, 3, [(2, 1, 1.0), (0, 2, 1.0), (0, 0, 1.0), (2, 1, 4.0)])
    assert A.has_canonical_format
    assert np.all(np.diff(A.indptr) >= 0)
    for i in range(3):
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        assert np.all(np.diff(cols) > 0)


def test_out_of_range():
    with pytest.raises(IndexError):
        S.from_triplets(2, 2, [(2, 0, 1.0)])


def test_matvec_examples():
    A = S.from_triplets(2, 2, [(0, 0, 2.0), (1, 1, 3.0)])
    assert np.array_equal(S.matvec(A, np.ones(2)), [2.0, 3.0])
    with pytest.raises(ValueError):
        S.matvec(A, np.ones(3))


def test_matvec_vs_dense():
    rng = np.random.default_rng(1)
    for _ in range(20):
        D = rng.standard_normal((5, 5))
        x = rng.standard_normal(5)
        y = S.matvec(_csr(D), x)
        ref = D @ x
        assert np.linalg.norm(y - ref) <= 1e-14 * np.linalg.norm(ref) * 5


def test_richardson_identity_exact():
    A = sp.identity(3, format="csr")
    rhs = np.array([1.0, -2.0, 3.0])
    x = np.array([7.0, 7.0, 7.0])
    assert np.array_equal(S.stationary_sweep("richardson", A, rhs, x, omega=1.0), rhs)


def test_gauss_seidel_hand():
    A = _csr(np.array([[2.0, 1.0], [1.0, 2.0]]))
    x = S.stationary_sweep("gauss_seidel", A, np.array([3.0, 3.0]), np.zeros(2))
    assert np.allclose(x, [1.5, 0.75], rtol=0, atol=1e-15)


def test_jacobi_diagonal_exact():
    A = _csr(np.diag([2.0, 5.0, 0.5]))
    rhs = np.array([1.0, 1.0, 1.0])
    x = S.stationary_sweep("jacobi", A, rhs, np.zeros(3), omega=1.0)
    assert np.allclose(x, [0.5, 0.2, 2.0], rtol=1e-15)


def test_zero_diagonal_rejected():
    A = _csr(np.array([[0.0, 1.0], [1.0, 2.0]]))
    for kind in ("jacobi", "gauss_seidel"):
        with pytest.raises(ZeroDivisionError):
            S.stationary_sweep(kind, A, np.ones(2), np.zeros(2))


def test_lambda_max_estimate():
    A = _csr(np.diag([1.0, 2.0, 10.0]))
    assert S.estimate_lambda_max(A) == pytest.approx(10.0, rel=1e-6)


def test_cg_identity_one_iteration():
    A = sp.identity(4, format="csr")
    rhs = np.arange(1.0, 5.0)
    x, k = S.cg_solve(A, rhs)
    assert k == 1
    assert np.allclose(x, rhs)


@pytest.mark.parametrize("pre", [None, "jacobi"])
def test_cg_random_spd(pre):
    rng = np.random.default_rng(2)
    D = _random_spd(10, rng)
    rhs = rng.standard_normal(10)
    x, k = S.cg_solve(_csr(D), rhs, preconditioner=pre, max_iters=10)
    assert k <= 10
    assert np.linalg.norm(rhs - D @ x) <= 1e-12 * np.linalg.norm(rhs) * 10
    assert np.allclose(x, np.linalg.solve(D, rhs), rtol=1e-10)


def test_cg_energy_error_monotone():
    rng = np.random.default_rng(3)
    for _ in range(10):
        D = _random_spd(15, rng)
        rhs = rng.standard_normal(15)
        xs = np.linalg.solve(D, rhs)
        cg = S.ConjugateGradient(_csr(D), rhs, rng.standard_normal(15), "jacobi")
        prev = np.sqrt((xs - cg.x) @ D @ (xs - cg.x))
        for _ in range(15):
            e = xs - cg.step()
            err = np.sqrt(e @ D @ e)
            assert err <= prev * (1 + 1e-12) + 1e-14
            prev = err


def test_cg_rejects_nonsymmetric():
    A = _csr(np.array([[2.0, 1.0], [0.0, 2.0]]))
    with pytest.raises(ValueError):
        S.cg_solve(A, np.ones(2))


def test_cg_callback_stops():
    rng = np.random.default_rng(4)
    D = _random_spd(8, rng)
    seen = []
    S.cg_solve(_csr(D), np.ones(8), callback=lambda x, k: seen.append(k) or k == 3)
    assert seen == [1, 2, 3]


def test_direct_examples():
    assert np.array_equal(S.direct_oracle_solve(sp.identity(3, format="csr"), [1.0, 2.0, 3.0]),
                          [1.0, 2.0, 3.0])
    A = _csr(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(S.direct_oracle_solve(A, [3.0, 3.0]), [1.0, 1.0], rtol=1e-15)


def test_direct_singular():
    A = _csr(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(S.SolverError):
        S.direct_oracle_solve(A, [1.0, 2.0])


def test_direct_large_sparse_nonsymmetric():
    n = 3000
    main = 4.0 * np.ones(n)
    A = sp.diags([main, -np.ones(n - 1), -2.0 * np.ones(n - 1)], [0, 1, -1], format="csr")
    rhs = np.random.default_rng(5).standard_normal(n)
    x = S.direct_oracle_solve(A, rhs)
    assert np.linalg.norm(A @ x - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_gauss_seidel_energy_stable():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 12))
        D = _random_spd(n, rng)
        rhs = rng.standard_normal(n)
        xs = np.linalg.solve(D, rhs)
        x = rng.standard_normal(n)
        y = S.gauss_seidel(_csr(D), rhs, x)
        before = np.sqrt((xs - x) @ D @ (xs - x))
        after = np.sqrt((xs - y) @ D @ (xs - y))
        worst = max(worst, after / before)
    assert worst <= 1 + 1e-12


def test_matrix_market(tmp_path):
    A = S.from_triplets(2, 3, [(0, 0, 1.5), (1, 2, -2.0)])
    path = tmp_path / "a.mtx"
    S.write_matrix_market(A, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("%%MatrixMarket matrix coordinate real general")
    body = [ln for ln in lines if not ln.startswith("%")]
    assert body[0].split() == ["2", "3", "2"]
    assert body[1].split()[:2] == ["1", "1"]
    assert body[2].split()[:2] == ["2", "3"]
