import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from sobodelay import fem
from sobodelay.errors import ConfigError, InvalidArgumentError, IterativeFailure, SingularMatrixError
from sobodelay.linalg import SolveConfig, matvec, solve
from sobodelay.mesh import build_unit_square_tri_mesh


def _spd():
    space = fem.build_space(build_unit_square_tri_mesh(4), 2)
    return fem.assemble_A(space, 1.0)


@pytest.mark.parametrize("method", ["direct", "cg"])
def test_solve_matches_dense(method):
    A = _spd()
    b = np.random.default_rng(0).standard_normal(A.shape[0])
    x = solve(A, b, SolveConfig(method=method))
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), rtol=1e-8)


@given(st.integers(0, 2**32 - 1))
def test_direct_solve_residual(seed):
    A = _spd()
    b = np.random.default_rng(seed).standard_normal(A.shape[0])
    x = solve(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_zero_rhs():
    A = _spd()
    assert np.all(solve(A, np.zeros(A.shape[0])) == 0)


def test_singular_matrix():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularMatrixError):
        solve(A, np.array([1.0, 0.0]))


def test_cg_iteration_cap():
    A = _spd()
    b = np.ones(A.shape[0])
    with pytest.raises(IterativeFailure) as info:
        solve(A, b, SolveConfig(method="cg", max_iters=1))
    assert info.value.residual > 0


def test_shape_checks():
    A = _spd()
    with pytest.raises(InvalidArgumentError):
        solve(A, np.ones(3))
    with pytest.raises(InvalidArgumentError):
        matvec(A, np.ones(3))
    np.testing.assert_allclose(matvec(A, np.ones(A.shape[0])), A @ np.ones(A.shape[0]))


@pytest.mark.parametrize("kw", [{"method": "lu"}, {"rel_tol": 0}, {"max_iters": 0}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SolveConfig(**kw)
