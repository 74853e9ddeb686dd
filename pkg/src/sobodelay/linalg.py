"""Sparse linear algebra used inside each Newton iteration."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, InvalidArgumentError, IterativeFailure, SingularMatrixError

DIRECT = "direct"
CG = "cg"


@dataclass(frozen=True)
class SolveConfig:
    """Linear solver settings.

    ``max_iters=None`` means ``10 * n`` for an ``n x n`` system.
    """

    method: str = DIRECT
    rel_tol: float = 1e-12
    max_iters: int | None = None

    def __post_init__(self):
        if self.method not in (DIRECT, CG):
            raise ConfigError(f"unknown solve method {self.method!r}")
        if not self.rel_tol > 0:
            raise ConfigError("rel_tol must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")


def matvec(A, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if A.shape[1] != x.shape[0]:
        raise InvalidArgumentError(f"dimension mismatch: {A.shape} times {x.shape}")
    return A @ x


def _cg(A, b, tol, max_iters):
    # Jacobi-preconditioned conjugate gradients
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise InvalidArgumentError("CG needs a positive diagonal")
    inv_d = 1.0 / diag
    x = np.zeros_like(b)
    r = b.copy()
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    bnorm = np.linalg.norm(b)
    target = tol * bnorm
    for _ in range(max_iters):
        if np.linalg.norm(r) <= target:
            return x
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(b - A @ x)
    if res <= target:
        return x
    raise IterativeFailure(f"CG did not converge in {max_iters} iterations (residual {res:.3e})", res)


def solve(A, b, cfg: SolveConfig | None = None) -> np.ndarray:
    """Solve ``A x = b`` to ``||A x - b|| <= rel_tol ||b||``.

    The direct path factorises with SuperLU and applies up to two steps of
    iterative refinement if the first residual misses the tolerance.
    """
    cfg = cfg or SolveConfig()
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or b.shape != (n,):
        raise InvalidArgumentError(f"need square A and matching b, got {A.shape} and {b.shape}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    A = sp.csc_matrix(A)
    if cfg.method == CG:
        return _cg(A.tocsr(), b, cfg.rel_tol, cfg.max_iters or 10 * n)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            lu = spla.splu(A)
    except (RuntimeError, spla.MatrixRankWarning) as exc:
        raise SingularMatrixError(f"sparse factorization failed: {exc}") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("factorization produced non-finite solution")
    for _ in range(2):
        r = b - A @ x
        if np.linalg.norm(r) <= cfg.rel_tol * bnorm:
            break
        x = x + lu.solve(r)
    return x
