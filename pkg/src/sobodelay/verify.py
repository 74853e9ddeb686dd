"""Self-check suites run by ``sobodelay verify``.

Each suite returns a :class:`SuiteResult`; none of them raise on a failed
check.  ``inject_fault="trapezoid"`` perturbs the delay quadrature weights
so callers can confirm the suites notice.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass
from unittest import mock

import numpy as np

from . import fem, integrator, problems
from .mesh import build_interval_mesh, build_unit_square_tri_mesh


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _smallest_eigenvalue(A, iters=30, seed=0):
    # inverse power iteration on an SPD matrix
    from scipy.sparse.linalg import splu

    lu = splu(A.tocsc())
    x = np.random.default_rng(seed).standard_normal(A.shape[0])
    lam = math.nan
    for _ in range(iters):
        y = lu.solve(x)
        x = y / np.linalg.norm(y)
        lam = x @ (A @ x)
    return lam


def _spaces():
    yield fem.build_space(build_interval_mesh(0.0, 1.0, 8), 4)
    yield fem.build_space(build_unit_square_tri_mesh(4), 3)


def suite_matrix(beta=1.0):
    rng = np.random.default_rng(1)
    worst = 0.0
    for space in _spaces():
        M = fem.assemble_mass(space)
        K = fem.assemble_stiffness(space)
        A = fem.assemble_A(space, beta)
        if abs(A - (M + beta * K)).max() > 0:
            return False, "A differs from M + beta K"
        if (A - A.T).nnz and abs(A - A.T).max() > 0:
            return False, "A is not exactly symmetric"
        lam = _smallest_eigenvalue(A)
        if not lam > 0:
            return False, f"smallest eigenvalue estimate {lam} not positive"
        # beta-norm identity against an independent, higher-order quadrature
        table = space.quad(2 * space.degree + 6)
        for _ in range(5):
            u = rng.standard_normal(space.n_dofs)
            lhs = u @ (A @ u)
            val = space.values_at_quad(u, table)
            grad = space.gradients_at_quad(u, table)
            rhs = np.sum(table.wdet * val**2) + beta * np.sum(table.wdet * np.sum(grad**2, axis=0))
            worst = max(worst, abs(lhs - rhs) / abs(rhs))
    ok = worst <= 1e-12
    return ok, f"max relative beta-norm identity gap {worst:.2e}"


def suite_energy_bound(pairs=1000):
    """``|u' A w| <= sqrt(2) |u|_A |w|_A`` on random pairs of widely varying scale."""
    space = fem.build_space(build_interval_mesh(0.0, 1.0, 6), 3)
    A = fem.assemble_A(space, 1.0)
    rng = np.random.default_rng(2)
    failures = 0
    for _ in range(pairs):
        u, w = rng.standard_normal((2, space.n_dofs)) * rng.lognormal(size=(2, 1))
        lhs = abs(u @ (A @ w))
        bound = math.sqrt(2) * math.sqrt(u @ (A @ u)) * math.sqrt(w @ (A @ w))
        failures += lhs > bound
    return failures == 0, f"{failures} failures over {pairs} pairs"


GREEN_CASES = (
    ("u=x^2, w=x", 1, lambda x, t: x[0] ** 2, lambda x, t: x[0], lambda x: 2.0 + 0 * x[0]),
    ("u=const", 1, lambda x, t: 3.0 + 0 * x[0], lambda x, t: np.sin(x[0]) + 0.5, lambda x: 0 * x[0]),
    ("u=x^2+y^2, w=1", 2, lambda x, t: x[0] ** 2 + x[1] ** 2, lambda x, t: 1.0 + 0 * x[0], lambda x: 4.0 + 0 * x[0]),
)


def suite_green():
    worst = 0.0
    labels = []
    for label, dim, u, w, lap in GREEN_CASES:
        mesh = build_interval_mesh(0.0, 1.0, 4) if dim == 1 else build_unit_square_tri_mesh(3)
        space = fem.build_space(mesh, 2)
        res = fem.green_identity_residual(space, fem.interpolate(space, u), fem.interpolate(space, w), lap)
        worst = max(worst, res)
        labels.append(f"{label}: {res:.1e}")
    return worst < 1e-10, "; ".join(labels)


def _history_for(m, sigma, n, values):
    space = fem.build_space(build_interval_mesh(0.0, 1.0, 1), 1)
    hist = integrator.DelayHistory(space, m, sigma)
    for k in range(n - m, n + 1):
        hist.push(k, np.full(space.n_dofs, values(k * sigma)))
    return hist


def suite_exactness():
    msgs = []
    worst = 0.0
    for t, sigma in ((1.0, 0.25), (0.3, 0.01), (2.5, 0.125)):
        combo = integrator.bdf2_combination(np.array([t**2]), np.array([(t - sigma) ** 2]), np.array([(t - 2 * sigma) ** 2]))
        worst = max(worst, abs(combo[0] / (2 * sigma) - 2 * t))
    msgs.append(f"BDF2 on t^2: {worst:.1e}")
    ok = worst <= 1e-12
    worst = 0.0
    for m in (1, 2, 4, 7):
        sigma = 1.0 / m
        n = m - 1
        hist = _history_for(m, sigma, n, lambda s: s)
        terms = integrator.delay_quadrature_terms(hist, np.full(2, 1.0), n)
        value = sum(w * c[0] for _, c, w in terms)
        worst = max(worst, abs(value - 0.5))
    msgs.append(f"trapezoid on s over [0,1]: {worst:.1e}")
    ok = ok and worst <= 1e-12
    return ok, "; ".join(msgs)


def suite_delay_weights():
    worst = 0.0
    for m in (1, 2, 4, 10):
        tau = 1.0
        sigma = tau / m
        hist = _history_for(m, sigma, 3, lambda s: 1.0)
        terms = integrator.delay_quadrature_terms(hist, np.zeros(2), 3)
        worst = max(worst, abs(sum(w for _, _, w in terms) - tau))
    return worst <= 1e-13, f"max |sum(weights) - tau| = {worst:.1e}"


def jacobian_fd_gap(spec=None, degree=3, n_cells=3, sigma=0.25, linearization=integrator.FULL_NEWTON, seed=3):
    """Worst column-wise relative gap between the Jacobian and central differences."""
    spec = spec or problems.example1()
    space = fem.build_space(build_interval_mesh(0.0, 1.0, n_cells), degree)
    cfg = integrator.SchemeConfig.for_problem(spec, sigma, linearization=linearization)
    state = integrator.make_state(space, spec, cfg)
    rng = np.random.default_rng(seed)
    w = state.v_curr + 0.3 * rng.standard_normal(space.n_dofs)
    J = integrator.jacobian(state, w, spec, cfg).toarray()
    worst = 0.0
    for j in range(space.n_dofs):
        eps = 1e-6 * max(1.0, abs(w[j]))
        wp, wm = w.copy(), w.copy()
        wp[j] += eps
        wm[j] -= eps
        col = (integrator.residual(state, wp, spec, cfg) - integrator.residual(state, wm, spec, cfg)) / (2 * eps)
        worst = max(worst, np.linalg.norm(J[:, j] - col) / max(np.linalg.norm(col), 1e-300))
    return worst, space.n_dofs


def suite_jacobian():
    gap, ndofs = jacobian_fd_gap()
    return gap <= 1e-5, f"{ndofs} DOFs, worst column relative gap {gap:.2e}"


def manufactured_max(spec, samples=50, seed=4):
    rng = np.random.default_rng(seed)
    x = spec.sample_points(rng, samples)
    t = spec.T_f * (1 - rng.random(samples))
    return float(np.max(np.abs(problems.manufactured_residual(spec, x, t))))


def suite_manufactured():
    worst = {name: manufactured_max(problems.get_problem(name)) for name in ("example1", "example2")}
    ok = all(v <= 1e-8 for v in worst.values())
    return ok, ", ".join(f"{k}: {v:.1e}" for k, v in worst.items())


SUITES = {
    "matrix": suite_matrix,
    "energy-bound": suite_energy_bound,
    "green": suite_green,
    "exactness": suite_exactness,
    "jacobian": suite_jacobian,
    "manufactured": suite_manufactured,
    "delay-weights": suite_delay_weights,
}

FAULTS = ("trapezoid",)


@contextmanager
def _faulty_trapezoid():
    original = integrator.trapezoid_weights

    def flipped(m, sigma):
        w = original(m, sigma)
        w[-1] = -w[-1]
        return w

    with mock.patch.object(integrator, "trapezoid_weights", flipped):
        yield


def run_suites(names=None, inject_fault=None):
    names = list(names or SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)}")
    if inject_fault not in (None,) + FAULTS:
        raise KeyError(f"unknown fault {inject_fault!r}")
    results = []
    ctx = _faulty_trapezoid() if inject_fault == "trapezoid" else nullcontext()
    with ctx:
        for name in names:
            start = time.perf_counter()
            try:
                ok, detail = SUITES[name]()
            except Exception as exc:  # a crashing suite is a failing suite
                ok, detail = False, f"error: {exc}"
            results.append(SuiteResult(name, bool(ok), detail, time.perf_counter() - start))
    return results
