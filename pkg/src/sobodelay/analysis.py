"""Error norms, convergence rates and spatial/temporal studies."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from fractions import Fraction
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import fem
from .errors import ConfigError, InvalidArgumentError, SobodelayError
from .integrator import EXACT_SEED, FULL_NEWTON, SchemeConfig, run
from .problems import ProblemSpec

CSV_HEADER = ["axis", "resolution", "err_h1_sup", "err_l2_sup", "rate_h1", "rate_l2", "wall_s"]
TRAJECTORY_HEADER = ["n", "t", "H1_error", "L2_error", "beta_norm", "newton_iters"]


def error_norms(space: fem.FESpace, coeffs, exact, exact_grad=None, t: float = 0.0):
    """H1 and L2 norms of ``v_h - exact(., t)``.

    Without ``exact_grad`` the exact gradient is approximated by central
    differences with step ``1e-6 h``.  Returns ``(H1_error, L2_error)``.
    """
    table = space.quad()
    x = table.x
    diff = space.values_at_quad(coeffs, table) - exact(x, t)
    if exact_grad is not None:
        grad_exact = np.asarray(exact_grad(x, t))
    else:
        step = 1e-6 * space.mesh.h
        grad_exact = np.empty_like(x)
        for d in range(space.dim):
            e = np.zeros((space.dim,) + (1,) * (x.ndim - 1))
            e[d] = step
            grad_exact[d] = (exact(x + e, t) - exact(x - e, t)) / (2 * step)
    gdiff = space.gradients_at_quad(coeffs, table) - grad_exact
    l2sq = float(np.sum(table.wdet * diff**2))
    semi = float(np.sum(table.wdet * np.sum(gdiff**2, axis=0)))
    return math.sqrt(l2sq + semi), math.sqrt(l2sq)


def sup_over_steps(per_step_errors: Sequence[float]) -> float:
    if len(per_step_errors) == 0:
        raise InvalidArgumentError("no per-step errors to take the maximum of")
    return float(max(per_step_errors))


def convergence_rate(e_coarse: float, e_fine: float) -> float:
    """Observed order ``log2(e_coarse / e_fine)`` for a halving refinement."""
    if not (e_coarse > 0 and e_fine > 0):
        raise InvalidArgumentError(f"errors must be positive, got {e_coarse!r}, {e_fine!r}")
    return math.log(e_coarse / e_fine) / math.log(2.0)


class ErrorObserver:
    """Collects per-step H1/L2 errors against the exact solution."""

    def __init__(self, space, spec: ProblemSpec):
        if spec.exact is None:
            raise ConfigError(f"problem {spec.name} has no exact solution")
        self.space = space
        self.spec = spec
        self.steps = []

    def __call__(self, n, t, v):
        h1, l2 = error_norms(self.space, v, self.spec.exact, self.spec.exact_grad, t)
        self.steps.append((n, t, h1, l2))

    @property
    def h1(self):
        return [s[2] for s in self.steps]

    @property
    def l2(self):
        return [s[3] for s in self.steps]


@dataclass
class RunResult:
    space: fem.FESpace
    cfg: SchemeConfig
    records: list
    errors: Optional[ErrorObserver]
    wall_seconds: float
    state: object = None

    @property
    def err_h1_sup(self):
        return sup_over_steps(self.errors.h1)

    @property
    def err_l2_sup(self):
        return sup_over_steps(self.errors.l2)

    def trajectory_rows(self):
        errs = {n: (h1, l2) for n, _, h1, l2 in (self.errors.steps if self.errors else [])}
        for rec in self.records:
            h1, l2 = errs.get(rec.n, (math.nan, math.nan))
            yield [rec.n, rec.t, h1, l2, rec.beta_norm, rec.newton_iters]


def solve_problem(spec: ProblemSpec, degree: int, h, sigma, *, track_errors=True, observer=None, **scheme_kwargs) -> RunResult:
    """One full run on a uniform mesh of spacing ``h`` with time step ``sigma``."""
    cfg = SchemeConfig.for_problem(spec, sigma, **scheme_kwargs)
    space = fem.build_space(spec.build_mesh(h), degree)
    errors = ErrorObserver(space, spec) if (track_errors and spec.exact is not None) else None

    def observe(n, t, v):
        if errors is not None:
            errors(n, t, v)
        if observer is not None:
            observer(n, t, v)

    start = time.perf_counter()
    state, records = run(space, spec, cfg, observe)
    return RunResult(space, cfg, records, errors, time.perf_counter() - start, state)


@dataclass
class ReportRow:
    resolution: float
    err_h1_sup: float
    err_l2_sup: float
    rate_h1: Optional[float]
    rate_l2: Optional[float]
    wall_s: float
    failure: Optional[str] = None


@dataclass
class ConvergenceReport:
    axis: str
    rows: list
    config: dict = field(default_factory=dict)

    @property
    def rates_h1(self):
        return [r.rate_h1 for r in self.rows[1:]]

    @property
    def rates_l2(self):
        return [r.rate_l2 for r in self.rows[1:]]

    @property
    def failed(self):
        return any(r.failure for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.rows:
            writer.writerow([self.axis] + [_fmt(v) for v in (r.resolution, r.err_h1_sup, r.err_l2_sup, r.rate_h1, r.rate_l2, r.wall_s)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, config=None) -> "ConvergenceReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != CSV_HEADER:
            raise InvalidArgumentError(f"unexpected report header {header}")
        rows, axis = [], None
        for line in reader:
            axis = line[0]
            vals = [_parse(v) for v in line[1:]]
            rows.append(ReportRow(*vals))
        return cls(axis or "", rows, dict(config or {}))

    def to_json(self) -> str:
        return json.dumps({"axis": self.axis, "config": self.config, "rows": [asdict(r) for r in self.rows]}, indent=2, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "ConvergenceReport":
        data = json.loads(text)
        return cls(data["axis"], [ReportRow(**r) for r in data["rows"]], data["config"])

    def table(self, *, timing=True) -> str:
        """Plain-text table: resolution, sup errors, rates, wall time."""
        label = "h" if self.axis == "space" else "sigma"
        cols = [label, "|||e|||_1,inf", "R", "|||e|||_0,inf", "R", "CPU (s)"][: 6 if timing else 5]
        lines = ["  ".join(f"{c:>14}" for c in cols)]
        for r in self.rows:
            lines.append(
                "  ".join(
                    f"{s:>14}"
                    for s in [
                        _res_label(r.resolution),
                        _sci(r.err_h1_sup),
                        _rate(r.rate_h1),
                        _sci(r.err_l2_sup),
                        _rate(r.rate_l2),
                        f"{r.wall_s:.4f}",
                    ][: 6 if timing else 5]
                )
                + (f"  FAILED: {r.failure}" if r.failure else "")
            )
        return "\n".join(lines)


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v))


def _parse(v):
    return None if v == "" else float(v)


def _sci(v):
    return "--" if v is None or math.isnan(v) else f"{v:.4e}"


def _rate(v):
    return "--" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.4f}"


def _res_label(v):
    k = math.log2(v) if v > 0 else math.nan
    if abs(k - round(k)) < 1e-12:
        return f"2^{int(round(k))}"
    return f"{v:.6g}"


def _check_halving(values, label):
    vals = [float(v) for v in values]
    if not vals:
        raise ConfigError(f"{label} list is empty")
    for a, b in zip(vals, vals[1:]):
        if abs(a / b - 2.0) > 1e-9:
            raise ConfigError(f"{label} list must halve at each entry, got {a} -> {b}")
    return vals


def _fill_rates(rows):
    for prev, row in zip(rows, rows[1:]):
        ok = not (prev.failure or row.failure) and prev.err_h1_sup > 0 and row.err_h1_sup > 0
        row.rate_h1 = convergence_rate(prev.err_h1_sup, row.err_h1_sup) if ok else None
        ok2 = not (prev.failure or row.failure) and prev.err_l2_sup > 0 and row.err_l2_sup > 0
        row.rate_l2 = convergence_rate(prev.err_l2_sup, row.err_l2_sup) if ok2 else None
    return rows


def _study(spec, axis, entries, degree, jobs, scheme_kwargs):
    def one(h, sigma):
        res_val = float(h if axis == "space" else sigma)
        try:
            res = solve_problem(spec, degree, h, sigma, **scheme_kwargs)
        except SobodelayError as exc:
            return ReportRow(res_val, math.nan, math.nan, None, None, 0.0, str(exc))
        return ReportRow(res_val, res.err_h1_sup, res.err_l2_sup, None, None, res.wall_seconds)

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda e: one(*e), entries))
    else:
        rows = [one(*e) for e in entries]
    return _fill_rates(rows)


def _snapshot(spec, degree, scheme_kwargs, **more):
    snap = {"problem": spec.name, "degree": degree, "alpha": spec.alpha, "beta": spec.beta, "tau": spec.tau}
    snap.update({k: _plain(v) for k, v in scheme_kwargs.items()})
    snap.update(more)
    return snap


def _plain(v):
    if isinstance(v, (int, float, str, type(None))):
        return v
    if isinstance(v, Fraction):
        return float(v)
    return str(v)


def run_spatial_study(spec: ProblemSpec, degree: int, h_list, sigma, *, jobs: int = 1, **scheme_kwargs) -> ConvergenceReport:
    """Fixed ``sigma``, halving ``h``; errors are sup over steps ``n = 1..N``."""
    if spec.exact is None:
        raise ConfigError("convergence studies need an exact solution")
    scheme_kwargs.setdefault("startup_mode", EXACT_SEED)
    hs = _check_halving(h_list, "h")
    rows = _study(spec, "space", [(h, sigma) for h in h_list], degree, jobs, scheme_kwargs)
    return ConvergenceReport("space", rows, _snapshot(spec, degree, scheme_kwargs, sigma=float(sigma), h_list=hs))


def run_temporal_study(spec: ProblemSpec, degree: int, h, sigma_list, *, jobs: int = 1, **scheme_kwargs) -> ConvergenceReport:
    """Fixed ``h``, halving ``sigma``."""
    if spec.exact is None:
        raise ConfigError("convergence studies need an exact solution")
    scheme_kwargs.setdefault("startup_mode", EXACT_SEED)
    sigmas = _check_halving(sigma_list, "sigma")
    for s in sigma_list:
        SchemeConfig.for_problem(spec, s, T_f=scheme_kwargs.get("T_f"))
    rows = _study(spec, "time", [(h, s) for s in sigma_list], degree, jobs, scheme_kwargs)
    return ConvergenceReport("time", rows, _snapshot(spec, degree, scheme_kwargs, h=float(h), sigma_list=sigmas))


def exact_beta_norm_max(spec: ProblemSpec, space: fem.FESpace, times) -> float:
    """``max_t ||v(., t)||_beta`` over the given times, by quadrature of the exact solution."""
    table = space.quad()
    best = 0.0
    for t in times:
        v = spec.exact(table.x, t)
        g = np.asarray(spec.exact_grad(table.x, t))
        val = np.sum(table.wdet * v**2) + spec.beta * np.sum(table.wdet * np.sum(g**2, axis=0))
        best = max(best, math.sqrt(float(val)))
    return best
