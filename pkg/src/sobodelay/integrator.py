"""Three-level implicit time stepping with trapezoidal distributed-delay quadrature.

Given ``v^{n-1}`` and ``v^n`` the step finds ``w = v^{n+1}`` with

    3 A w + 2 alpha sigma K w - 2 sigma (F(w), phi) = A (4 v^n - v^{n-1})

on interior DOFs, where ``A = M + beta K`` and ``F(w)`` is ``f`` evaluated
with ``z`` replaced by the composite trapezoid sum over the states
``v^{n+1-m}, ..., v^{n+1}``.  Dirichlet values are imposed strongly.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import fem
from .errors import ConfigError, InvalidArgumentError, NonlinearFailure, StateError, StepFailure
from .linalg import SolveConfig, solve
from .problems import ProblemSpec

CRANK_NICOLSON = "crank-nicolson-substepped"
EXACT_SEED = "exact-seed"
FULL_NEWTON = "full-newton"
PICARD = "picard-lagged-z"

MAX_HALVINGS = 8


def _as_integer_ratio(num, den, label):
    """``num/den`` as an int, requiring integrality to 1e-12 relative."""
    if isinstance(num, (int, Fraction)) and isinstance(den, (int, Fraction)):
        q = Fraction(num) / Fraction(den)
        if q.denominator != 1:
            raise ConfigError(f"{label} = {q} is not an integer")
        return int(q)
    q = float(num) / float(den)
    k = round(q)
    if k < 1 or abs(q - k) > 1e-12 * max(1.0, abs(q)):
        raise ConfigError(f"{label} = {q!r} is not an integer")
    return int(k)


@dataclass(frozen=True)
class SchemeConfig:
    """Time grid and nonlinear-solver settings.

    Build with :meth:`for_problem`, which enforces ``sigma = tau/m`` and
    ``sigma = T_f/N`` for integers ``m >= 1``, ``N >= 2``.
    """

    sigma: float
    m: int
    N: int
    newton_tol: float
    newton_max_iters: int = 25
    startup_mode: str = CRANK_NICOLSON
    linearization: str = FULL_NEWTON
    solver: SolveConfig = field(default_factory=SolveConfig)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.m < 1:
            raise ConfigError("m = tau/sigma must be >= 1")
        if self.N < 2:
            raise ConfigError("N = T_f/sigma must be >= 2")
        if self.startup_mode not in (CRANK_NICOLSON, EXACT_SEED):
            raise ConfigError(f"unknown startup mode {self.startup_mode!r}")
        if self.linearization not in (FULL_NEWTON, PICARD):
            raise ConfigError(f"unknown linearization {self.linearization!r}")
        if not self.newton_tol > 0 or self.newton_max_iters < 1:
            raise ConfigError("newton_tol must be positive and newton_max_iters >= 1")

    @property
    def tau(self) -> float:
        return self.m * self.sigma

    @property
    def T_f(self) -> float:
        return self.N * self.sigma

    @classmethod
    def for_problem(cls, spec: ProblemSpec, sigma, *, T_f=None, newton_tol=None, **kwargs):
        T_f = spec.T_f if T_f is None else T_f
        try:
            m = _as_integer_ratio(_exactish(spec.tau), sigma, "tau/sigma (sigma = tau/m)")
            N = _as_integer_ratio(_exactish(T_f), sigma, "T_f/sigma (sigma = T_f/N)")
        except ZeroDivisionError:
            raise ConfigError("sigma must be positive") from None
        sigma = float(sigma)
        if newton_tol is None:
            newton_tol = max(1e-12, 1e-3 * sigma**3)
        return cls(sigma=sigma, m=m, N=N, newton_tol=newton_tol, **kwargs)


def _exactish(value):
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return value


class DelayHistory:
    """Ring buffer of the ``m + 1`` most recent states ``v^{n-m}, ..., v^n``.

    Each entry also caches the state's values at the quadrature points.
    """

    def __init__(self, space: fem.FESpace, m: int, sigma: float):
        self.space = space
        self.m = m
        self.sigma = sigma
        self._buf = deque(maxlen=m + 1)
        self.n = None

    def push(self, n: int, coeffs: np.ndarray) -> None:
        if self.n is not None and n != self.n + 1:
            raise StateError(f"history expects step {self.n + 1}, got {n}")
        coeffs = np.array(coeffs, dtype=float)
        coeffs.setflags(write=False)
        self._buf.append((n, coeffs, self.space.values_at_quad(coeffs)))
        self.n = n

    def __len__(self):
        return len(self._buf)

    @property
    def full(self) -> bool:
        return len(self._buf) == self.m + 1

    @property
    def times(self):
        return [k * self.sigma for k, _, _ in self._buf]

    @property
    def states(self):
        return [c for _, c, _ in self._buf]

    def newest(self):
        return self._buf[-1][1]

    def entries(self):
        return list(self._buf)


def trapezoid_weights(m: int, sigma: float) -> np.ndarray:
    """Composite trapezoid weights on ``m + 1`` equispaced nodes, oldest first."""
    w = np.full(m + 1, sigma)
    w[0] = w[-1] = sigma / 2
    return w


def bdf2_combination(v_next, v_curr, v_prev) -> np.ndarray:
    """``3 v_next - 4 v_curr + v_prev``; divide by ``2 sigma`` for the derivative."""
    v_next, v_curr, v_prev = (np.asarray(v, dtype=float) for v in (v_next, v_curr, v_prev))
    if not v_next.shape == v_curr.shape == v_prev.shape:
        raise InvalidArgumentError("state vectors have different lengths")
    return 3 * v_next - 4 * v_curr + v_prev


def delay_quadrature_terms(history: DelayHistory, candidate_next, n: int):
    """States ``v^{n+1-m} ... v^{n+1}`` with their trapezoid weights.

    Returns a list of ``(t_k, coeffs, weight)``, oldest first; the last entry
    is ``candidate_next`` at ``t_{n+1}``.
    """
    m, sigma = history.m, history.sigma
    if history.n != n or len(history) < m:
        raise StateError(f"history does not hold the {m} states ending at step {n}")
    weights = trapezoid_weights(m, sigma)
    window = history.entries()[-m:]
    terms = [(k * sigma, c, w) for (k, c, _), w in zip(window, weights[:-1])]
    terms.append(((n + 1) * sigma, np.asarray(candidate_next, dtype=float), weights[-1]))
    return terms


@dataclass
class StepState:
    space: fem.FESpace
    history: DelayHistory
    v_prev: np.ndarray
    v_curr: np.ndarray
    n: int
    M: sp.csr_matrix
    K: sp.csr_matrix
    A: sp.csr_matrix

    @property
    def t(self) -> float:
        return self.n * self.history.sigma


def make_state(space: fem.FESpace, spec: ProblemSpec, cfg: SchemeConfig) -> StepState:
    """Fresh state at ``n = 0`` with the history interpolated from ``u0``."""
    history = init_history(space, spec, cfg)
    M = fem.assemble_mass(space)
    K = fem.assemble_stiffness(space)
    A = (M + spec.beta * K).tocsr()
    v0 = history.newest()
    prev = history.states[-2] if len(history) > 1 else v0
    return StepState(space, history, np.array(prev), np.array(v0), 0, M, K, A)


def init_history(space: fem.FESpace, spec: ProblemSpec, cfg: SchemeConfig) -> DelayHistory:
    """Interpolants of ``u0`` at ``t = -m sigma, ..., 0``."""
    history = DelayHistory(space, cfg.m, cfg.sigma)
    for k in range(-cfg.m, 1):
        history.push(k, fem.interpolate(space, spec.u0, k * cfg.sigma))
    return history


def _check_finite(space, arr, what, step):
    bad = ~np.isfinite(arr)
    if bad.any():
        c, q = (int(i) for i in np.argwhere(bad)[0])
        x = space.quad().x[:, c, q]
        raise StepFailure(f"non-finite {what} at x={x.tolist()} (cell {c})", step=step)


class _StepOperator:
    """Residual and Jacobian of one three-level step, with the history part of ``z`` cached."""

    def __init__(self, state: StepState, spec: ProblemSpec, cfg: SchemeConfig):
        if state.history.n != state.n:
            raise StateError("state and history are out of sync")
        self.state = state
        self.spec = spec
        self.cfg = cfg
        space = state.space
        self.table = space.quad()
        self.x = self.table.x
        self.t_next = (state.n + 1) * cfg.sigma
        self.step = state.n + 1
        sigma = cfg.sigma
        terms = delay_quadrature_terms(state.history, state.v_curr, state.n)
        self.w_end = terms[-1][2]
        qvals = {k * sigma: q for k, _, q in state.history.entries()}
        z = np.zeros(self.table.wdet.shape)
        for t_k, _, weight in terms[:-1]:
            z = z + weight * spec.g(self.x, self.t_next, t_k, qvals[t_k])
        _check_finite(space, z, "g", self.step)
        self.z_hist = z
        self.sigma = sigma
        self.lhs = (3 * state.A + 2 * spec.alpha * sigma * state.K).tocsr()
        self.rhs = state.A @ (4 * state.v_curr - state.v_prev)
        self.bdofs = space.boundary_dofs
        self.bvals = fem.interpolate(space, spec.rho, self.t_next)[self.bdofs]

    def z(self, wq):
        return self.z_hist + self.w_end * self.spec.g(self.x, self.t_next, self.t_next, wq)

    def residual(self, w):
        space, spec = self.state.space, self.spec
        wq = space.values_at_quad(w, self.table)
        zq = self.z(wq)
        F = spec.f(self.x, self.t_next, wq, zq)
        _check_finite(space, F, "f", self.step)
        r = self.lhs @ w - 2 * self.sigma * fem.assemble_load(space, F) - self.rhs
        r[self.bdofs] = w[self.bdofs] - self.bvals
        return r

    def jacobian(self, w):
        space, spec = self.state.space, self.spec
        wq = space.values_at_quad(w, self.table)
        zq = self.z(wq)
        weight = spec.df_dv(self.x, self.t_next, wq, zq)
        if self.cfg.linearization == FULL_NEWTON:
            weight = weight + spec.df_dz(self.x, self.t_next, wq, zq) * self.w_end * spec.dg_dv(
                self.x, self.t_next, self.t_next, wq
            )
        J = self.lhs - 2 * self.sigma * fem.assemble_weighted_mass(space, weight)
        return _constrain_rows(J, self.bdofs)


def _constrain_rows(J, bdofs):
    n = J.shape[0]
    keep = np.ones(n)
    keep[bdofs] = 0.0
    return (sp.diags(keep) @ J + sp.diags(1.0 - keep)).tocsr()


def residual(state: StepState, w, spec: ProblemSpec, cfg: SchemeConfig) -> np.ndarray:
    """Step residual for the candidate ``w`` of ``v^{n+1}``."""
    return _StepOperator(state, spec, cfg).residual(np.asarray(w, dtype=float))


def _check_derivatives(spec: ProblemSpec, cfg: SchemeConfig):
    if spec.df_dv is None:
        raise ConfigError(f"problem {spec.name} lacks df_dv")
    if cfg.linearization == FULL_NEWTON and (spec.df_dz is None or spec.dg_dv is None):
        raise ConfigError("full Newton needs df_dv, df_dz and dg_dv")


def jacobian(state: StepState, w, spec: ProblemSpec, cfg: SchemeConfig) -> sp.csr_matrix:
    """Derivative of :func:`residual` (rows of Dirichlet DOFs are identity rows)."""
    _check_derivatives(spec, cfg)
    return _StepOperator(state, spec, cfg).jacobian(np.asarray(w, dtype=float))


@dataclass
class NewtonResult:
    w: np.ndarray
    iterations: int
    residual_norm: float
    history: list


def _newton(residual_fn, jacobian_fn, w0, space, cfg: SchemeConfig, step=None) -> NewtonResult:
    """Damped Newton iteration; always takes at least one update."""
    free = space.free_dofs
    bdofs = space.boundary_dofs
    w = np.array(w0, dtype=float)
    r = residual_fn(w)
    rnorm = float(np.linalg.norm(r))
    norms = [rnorm]
    for it in range(1, cfg.newton_max_iters + 1):
        J = jacobian_fn(w)
        delta = np.empty_like(w)
        delta[bdofs] = -r[bdofs]
        rhs = -r[free]
        if bdofs.size:
            rhs = rhs - J[free][:, bdofs] @ delta[bdofs]
        delta[free] = solve(J[free][:, free], rhs, cfg.solver)
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = w + lam * delta
            r_trial = residual_fn(trial)
            t_norm = float(np.linalg.norm(r_trial))
            if t_norm <= rnorm or t_norm <= cfg.newton_tol:
                break
            lam /= 2
        w, r, rnorm = trial, r_trial, t_norm
        norms.append(rnorm)
        if rnorm <= cfg.newton_tol:
            return NewtonResult(w, it, rnorm, norms)
        # residual floor: update already at rounding level
        if np.max(np.abs(lam * delta)) <= 8 * np.finfo(float).eps * max(1.0, np.max(np.abs(w))):
            return NewtonResult(w, it, rnorm, norms)
    raise NonlinearFailure(
        f"Newton did not reach tol {cfg.newton_tol:.3e} in {cfg.newton_max_iters} iterations"
        + (f" at step {step}" if step is not None else "")
        + f" (last residual {rnorm:.3e})",
        norms,
    )


def newton_step_solve(state: StepState, spec: ProblemSpec, cfg: SchemeConfig, guess=None) -> NewtonResult:
    """Solve one three-level step, starting from ``2 v^n - v^{n-1}``."""
    op = _StepOperator(state, spec, cfg)
    w0 = 2 * state.v_curr - state.v_prev if guess is None else np.array(guess, dtype=float)
    w0[op.bdofs] = op.bvals
    return _newton(op.residual, op.jacobian, w0, state.space, cfg, step=op.step)


# -- startup ---------------------------------------------------------------


class _CNSubstep:
    """One Crank-Nicolson sub-step from time ``s`` to ``s + delta`` inside ``(0, sigma]``.

    The delay integral at time ``s'`` is the trapezoid sum on the nodes
    ``s' - j sigma`` (``j = 0..m``); every node but ``j = 0`` lies in the
    history interval, where ``u0`` is interpolated.
    """

    def __init__(self, state, spec, cfg, s, delta, v, Fv_load):
        space = state.space
        self.space, self.spec, self.cfg = space, spec, cfg
        self.table = space.quad()
        self.x = self.table.x
        self.s1 = s + delta
        self.delta = delta
        self.v = v
        self.weights = trapezoid_weights(cfg.m, cfg.sigma)
        self.z_hist = self._history_part(self.s1)
        self.lhs = (state.A + 0.5 * spec.alpha * delta * state.K).tocsr()
        self.rhs = state.A @ v - 0.5 * spec.alpha * delta * (state.K @ v) + 0.5 * delta * Fv_load
        self.bdofs = space.boundary_dofs
        self.bvals = fem.interpolate(space, spec.rho, self.s1)[self.bdofs]

    def _history_part(self, s):
        z = np.zeros(self.table.wdet.shape)
        for j in range(1, self.cfg.m + 1):
            sj = s - j * self.cfg.sigma
            uq = self.space.values_at_quad(fem.interpolate(self.space, self.spec.u0, sj), self.table)
            z = z + self.weights[::-1][j] * self.spec.g(self.x, s, sj, uq)
        return z

    def load(self, w):
        wq = self.space.values_at_quad(w, self.table)
        zq = self.z_hist + self.weights[-1] * self.spec.g(self.x, self.s1, self.s1, wq)
        F = self.spec.f(self.x, self.s1, wq, zq)
        _check_finite(self.space, F, "f", 1)
        return fem.assemble_load(self.space, F)

    def residual(self, w):
        r = self.lhs @ w - 0.5 * self.delta * self.load(w) - self.rhs
        r[self.bdofs] = w[self.bdofs] - self.bvals
        return r

    def jacobian(self, w):
        spec = self.spec
        wq = self.space.values_at_quad(w, self.table)
        zq = self.z_hist + self.weights[-1] * spec.g(self.x, self.s1, self.s1, wq)
        weight = spec.df_dv(self.x, self.s1, wq, zq)
        if self.cfg.linearization == FULL_NEWTON:
            weight = weight + spec.df_dz(self.x, self.s1, wq, zq) * self.weights[-1] * spec.dg_dv(
                self.x, self.s1, self.s1, wq
            )
        J = self.lhs - 0.5 * self.delta * fem.assemble_weighted_mass(self.space, weight)
        return _constrain_rows(J, self.bdofs)


def crank_nicolson_substeps(sigma: float) -> int:
    return max(1, math.ceil(1.0 / sigma - 1e-9))


def startup_first_step(state: StepState, spec: ProblemSpec, cfg: SchemeConfig) -> NewtonResult:
    """Compute ``v^1`` from the history.

    ``exact-seed`` interpolates the exact solution at ``t = sigma``;
    ``crank-nicolson-substepped`` takes ``ceil(1/sigma)`` Crank-Nicolson
    sub-steps of the same weak form.
    """
    if state.n != 0:
        raise StateError("startup must run from n = 0")
    space = state.space
    if cfg.startup_mode == EXACT_SEED:
        if spec.exact is None:
            raise ConfigError("exact-seed startup needs an exact solution")
        return NewtonResult(fem.interpolate(space, spec.exact, cfg.sigma), 0, 0.0, [])
    n_sub = crank_nicolson_substeps(cfg.sigma)
    delta = cfg.sigma / n_sub
    v = np.array(state.v_curr)
    probe = _CNSubstep(state, spec, cfg, -delta, delta, v, np.zeros_like(v))
    Fv = probe.load(v)
    iters = 0
    norms = []
    for k in range(n_sub):
        sub = _CNSubstep(state, spec, cfg, k * delta, delta, v, Fv)
        w0 = v.copy()
        w0[sub.bdofs] = sub.bvals
        res = _newton(sub.residual, sub.jacobian, w0, space, cfg, step=1)
        iters += res.iterations
        norms.extend(res.history)
        v = res.w
        Fv = sub.load(v)
    return NewtonResult(v, iters, norms[-1] if norms else 0.0, norms)


# -- marching ---------------------------------------------------------------


@dataclass
class StepRecord:
    n: int
    t: float
    newton_iters: int
    residual_norm: float
    beta_norm: float


Observer = Callable[[int, float, np.ndarray], None]


def beta_norm(state: StepState, v) -> float:
    """``sqrt(v' A v)``; ``inf`` once the state has overflowed."""
    with np.errstate(all="ignore"):
        val = float(v @ (state.A @ v))
    if not math.isfinite(val):
        return math.inf
    return math.sqrt(max(0.0, val))


def _advance(state: StepState, v_next):
    state.history.push(state.n + 1, v_next)
    state.v_prev = state.v_curr
    state.v_curr = np.array(v_next)
    state.n += 1


def run(space: fem.FESpace, spec: ProblemSpec, cfg: SchemeConfig, observer: Optional[Observer] = None):
    """March from ``t = 0`` to ``T_f``: startup, then ``N - 1`` three-level steps.

    Returns ``(state, records)``; ``records[k]`` describes ``v^{k+1}``.
    The observer is called as ``observer(n, t_n, v^n)`` for ``n = 1..N``.
    """
    _check_derivatives(spec, cfg)
    if cfg.startup_mode == EXACT_SEED and spec.exact is None:
        raise ConfigError("exact-seed startup needs an exact solution")
    state = make_state(space, spec, cfg)
    records = []

    def accept(result):
        _advance(state, result.w)
        records.append(
            StepRecord(state.n, state.t, result.iterations, result.residual_norm, beta_norm(state, state.v_curr))
        )
        if observer is not None:
            observer(state.n, state.t, state.v_curr.copy())

    try:
        accept(startup_first_step(state, spec, cfg))
        for _ in range(cfg.N - 1):
            accept(newton_step_solve(state, spec, cfg))
    except (StepFailure, ConfigError):
        raise
    except Exception as exc:
        raise StepFailure(f"step {state.n + 1} failed: {exc}", step=state.n + 1) from exc
    return state, records


def run_explicit_euler(space: fem.FESpace, spec: ProblemSpec, cfg: SchemeConfig, observer=None):
    """Forward-Euler comparison scheme, used as a negative control for stability probes.

    ``A (v^{n+1} - v^n) = sigma (-alpha K v^n + (F(v^n), phi))`` with the
    delay integral from the trapezoid rule on the available states.  Does
    not raise on blow-up; non-finite states simply propagate.
    """
    state = make_state(space, spec, cfg)
    table = space.quad()
    weights = trapezoid_weights(cfg.m, cfg.sigma)
    free = space.free_dofs
    bdofs = space.boundary_dofs
    A_ff = state.A[free][:, free]
    records = []
    with np.errstate(all="ignore"):
        for _ in range(cfg.N):
            t = state.t
            entries = state.history.entries()[-(cfg.m + 1):]
            z = sum(w * spec.g(table.x, t, k * cfg.sigma, q) for (k, _, q), w in zip(entries, weights))
            vq = space.values_at_quad(state.v_curr, table)
            F = spec.f(table.x, t, vq, z)
            if np.all(np.isfinite(F)):
                load = fem.assemble_load(space, F)
            else:
                load = np.full(space.n_dofs, np.nan)
            rhs = cfg.sigma * (-spec.alpha * (state.K @ state.v_curr) + load)
            v_next = state.v_curr.copy()
            v_next[bdofs] = fem.interpolate(space, spec.rho, t + cfg.sigma)[bdofs]
            if np.all(np.isfinite(rhs)):
                delta_b = v_next[bdofs] - state.v_curr[bdofs]
                r = rhs[free] - state.A[free][:, bdofs] @ delta_b
                v_next[free] = state.v_curr[free] + solve(A_ff, r, cfg.solver)
            else:
                v_next[free] = np.nan
            _advance(state, v_next)
            records.append(StepRecord(state.n, state.t, 0, 0.0, beta_norm(state, v_next)))
            if observer is not None:
                observer(state.n, state.t, v_next.copy())
    return state, records
