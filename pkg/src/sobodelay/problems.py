"""Problem definitions for the delay Sobolev equation

    (I - beta Lap) v_t - alpha Lap v = f(x, t, v, z),
    z(x, t) = int_{t - tau}^{t} g(x, t, s, v(x, s)) ds,

with history ``u0`` on ``[-tau, 0]`` and Dirichlet data ``rho``.

All callables take the coordinate array ``x`` (shape ``(dim, ...)``) first
and must broadcast over numpy arrays.  ``f``, ``df_dv`` and ``df_dz`` have
signature ``(x, t, v, z)``; ``g`` and ``dg_dv`` have ``(x, t, s, v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, InvalidArgumentError
from .mesh import Mesh, build_interval_mesh, build_unit_square_tri_mesh

Func = Callable[..., np.ndarray]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    name: str
    domain: tuple
    alpha: float
    beta: float
    tau: float
    T_f: float
    f: Func
    df_dv: Func
    df_dz: Func
    g: Func
    dg_dv: Func
    u0: Func
    rho: Func
    exact: Optional[Func] = None
    exact_grad: Optional[Func] = None
    # hand-derived derivatives of ``exact``, used by the manufactured check
    exact_dt: Optional[Func] = None
    exact_lap: Optional[Func] = None
    exact_lap_dt: Optional[Func] = None
    description: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in ("alpha", "beta", "tau", "T_f"):
            if not getattr(self, key) > 0:
                raise InvalidArgumentError(f"{key} must be positive, got {getattr(self, key)!r}")
        if self.domain[0] not in ("interval", "unit_square"):
            raise InvalidArgumentError(f"unsupported domain {self.domain!r}")

    @property
    def dim(self) -> int:
        return 1 if self.domain[0] == "interval" else 2

    @property
    def measure(self) -> float:
        if self.domain[0] == "interval":
            return float(self.domain[2] - self.domain[1])
        return 1.0

    def build_mesh(self, h) -> Mesh:
        """Uniform mesh with grid spacing ``h``.

        On the unit square ``h`` is the spacing ``1/n`` of the underlying
        grid, not the triangle diameter.
        """
        length = self.measure if self.dim == 1 else 1.0
        n = length / float(h)
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            raise ConfigError(f"grid spacing h={h} does not divide the domain into whole cells")
        if self.dim == 1:
            return build_interval_mesh(self.domain[1], self.domain[2], int(round(n)))
        return build_unit_square_tri_mesh(int(round(n)))

    def with_overrides(self, **kwargs) -> "ProblemSpec":
        params = {k: getattr(self, k) for k in self.__dataclass_fields__}
        params.update(kwargs)
        return ProblemSpec(**params)

    def sample_points(self, rng, count, boundary=False):
        """Random points in the closed domain (or on its boundary), shape ``(dim, count)``."""
        if self.dim == 1:
            a, b = self.domain[1], self.domain[2]
            if boundary:
                return rng.choice([a, b], size=count)[None, :]
            return (a + (b - a) * rng.random(count))[None, :]
        pts = rng.random((2, count))
        if boundary:
            side = rng.integers(0, 4, count)
            pts[0, side == 0] = 0.0
            pts[0, side == 1] = 1.0
            pts[1, side == 2] = 0.0
            pts[1, side == 3] = 1.0
        return pts


def _zeros(*args):
    return np.zeros(np.broadcast(*args).shape)


def _const(value):
    def fn(x, *args):
        return np.full(np.broadcast(x[0], *args).shape, float(value))

    return fn


def example1() -> ProblemSpec:
    """1D benchmark on [0, 1], T_f = 3, tau = 1, exact solution exp(-x) cos(pi t)."""
    pi = math.pi

    def exact(x, t):
        return np.exp(-x[0]) * np.cos(pi * t)

    def forcing(x, t):
        ex = np.exp(-x[0])
        c = np.cos(pi * t)
        return ((4 / pi) * np.sin(pi * t) - (1 + ex * c) * c) * ex

    def f(x, t, v, z):
        return v**2 - 2 * z + forcing(x, t)

    def df_dv(x, t, v, z):
        return 2 * v + 0 * z

    def g(x, t, s, v):
        return v + 0.0 * s

    def exact_grad(x, t):
        return np.stack([-exact(x, t)])

    def exact_dt(x, t):
        return -pi * np.exp(-x[0]) * np.sin(pi * t)

    return ProblemSpec(
        name="example1",
        domain=("interval", 0.0, 1.0),
        alpha=1.0,
        beta=1.0,
        tau=1.0,
        T_f=3.0,
        f=f,
        df_dv=df_dv,
        df_dz=_const(-2.0),
        g=g,
        dg_dv=_const(1.0),
        u0=exact,
        rho=exact,
        exact=exact,
        exact_grad=exact_grad,
        exact_dt=exact_dt,
        exact_lap=exact,
        exact_lap_dt=exact_dt,
        description="v_t - v_xxt - v_xx = v^2 - 2 int v + f on (0,1) x (0,3]",
        extra={"forcing": forcing},
    )


def example2() -> ProblemSpec:
    """2D benchmark on the unit square, T_f = 1, tau = 1, homogeneous Dirichlet data."""
    pi = math.pi

    def shape(x):
        return np.sin(pi * x[0]) * np.sin(pi * x[1])

    def exact(x, t):
        return np.exp(-t / 2) * shape(x)

    def forcing(x, t):
        v = exact(x, t)
        return (1.5 - 2 * math.exp(0.5) + pi**2 - 0.5 * v) * v - np.sin(v)

    def f(x, t, v, z):
        return 0.5 * v**2 + np.sin(v) + z + forcing(x, t)

    def df_dv(x, t, v, z):
        return v + np.cos(v) + 0 * z

    def g(x, t, s, v):
        return v + 0.0 * s

    def exact_grad(x, t):
        e = np.exp(-t / 2)
        return np.stack([
            e * pi * np.cos(pi * x[0]) * np.sin(pi * x[1]),
            e * pi * np.sin(pi * x[0]) * np.cos(pi * x[1]),
        ])

    return ProblemSpec(
        name="example2",
        domain=("unit_square",),
        alpha=1.0,
        beta=1.0,
        tau=1.0,
        T_f=1.0,
        f=f,
        df_dv=df_dv,
        df_dz=_const(1.0),
        g=g,
        dg_dv=_const(1.0),
        u0=exact,
        rho=lambda x, t: _zeros(x[0], t),
        exact=exact,
        exact_grad=exact_grad,
        exact_dt=lambda x, t: -0.5 * exact(x, t),
        exact_lap=lambda x, t: -2 * pi**2 * exact(x, t),
        exact_lap_dt=lambda x, t: pi**2 * exact(x, t),
        description="v_t - Lap v_t - Lap v = v^2/2 + sin v + int v + g on (0,1)^2 x (0,1]",
        extra={"forcing": forcing},
    )


def sobolev_nodelay() -> ProblemSpec:
    """Delay-free (g = 0) nonlinear Sobolev equation on [0, 1] with v = (1 + x^2) cos(pi t).

    Unlike exp(-x), the profile 1 + x^2 is not annihilated by I - d_xx, so
    the time-discretisation error is not cancelled.
    """
    base = example1()
    pi = math.pi

    def exact(x, t):
        return (1 + x[0] ** 2) * np.cos(pi * t)

    def exact_dt(x, t):
        return -pi * (1 + x[0] ** 2) * np.sin(pi * t)

    def forcing(x, t):
        return -pi * (x[0] ** 2 - 1) * np.sin(pi * t) - 2 * np.cos(pi * t) - exact(x, t) ** 2

    return base.with_overrides(
        name="sobolev_nodelay",
        f=lambda x, t, v, z: v**2 + forcing(x, t),
        df_dz=lambda x, t, v, z: _zeros(x[0], v),
        g=lambda x, t, s, v: _zeros(x[0], s, v),
        dg_dv=lambda x, t, s, v: _zeros(x[0], s, v),
        u0=exact,
        rho=exact,
        exact=exact,
        exact_grad=lambda x, t: np.stack([2 * x[0] * np.cos(pi * t)]),
        exact_dt=exact_dt,
        exact_lap=lambda x, t: 2 * np.cos(pi * t) + 0 * x[0],
        exact_lap_dt=lambda x, t: -2 * pi * np.sin(pi * t) + 0 * x[0],
        description="v_t - v_xxt - v_xx = v^2 + f, no delay",
        extra={"forcing": forcing},
    )


def example1_linear_time() -> ProblemSpec:
    """Example 1 operator with exact solution exp(-x) (1 + t).

    The solution is linear in time, so both the three-level difference and
    the trapezoid delay rule are exact and only the spatial error remains.
    """
    base = example1()

    def exact(x, t):
        return np.exp(-x[0]) * (1 + t)

    def forcing(x, t):
        ex = np.exp(-x[0])
        return t * ex - (ex * (1 + t)) ** 2

    def exact_dt(x, t):
        return np.exp(-x[0]) + 0 * t

    return base.with_overrides(
        name="example1_linear_time",
        f=lambda x, t, v, z: v**2 - 2 * z + forcing(x, t),
        u0=exact,
        rho=exact,
        exact=exact,
        exact_grad=lambda x, t: np.stack([-exact(x, t)]),
        exact_dt=exact_dt,
        exact_lap=exact,
        exact_lap_dt=exact_dt,
        description="Example 1 operator, exact solution exp(-x)(1+t)",
        extra={"forcing": forcing},
    )


def quadratic_time(a=0.5, b=-0.25, c=0.75) -> ProblemSpec:
    """Space-independent linear problem with exact solution a + b t + c t^2.

    ``g = v - c s^2`` keeps the delay integrand linear in ``s`` so the
    trapezoid rule is exact alongside the three-level difference.
    """
    tau = 1.0

    def q(t):
        return a + b * t + c * t**2

    def lin_integral(t):
        # int_{t - tau}^{t} (a + b s) ds
        return a * tau + b * (t * tau - tau**2 / 2)

    def forcing(t):
        return b + 2 * c * t - lin_integral(t)

    def exact(x, t):
        return q(t) + 0 * x[0]

    return ProblemSpec(
        name="quadratic_time",
        domain=("interval", 0.0, 1.0),
        alpha=1.0,
        beta=1.0,
        tau=tau,
        T_f=2.0,
        f=lambda x, t, v, z: z + forcing(t) + 0 * v,
        df_dv=lambda x, t, v, z: _zeros(x[0], v, z),
        df_dz=_const(1.0),
        g=lambda x, t, s, v: v - c * s**2,
        dg_dv=_const(1.0),
        u0=exact,
        rho=exact,
        exact=exact,
        exact_grad=lambda x, t: np.stack([_zeros(x[0], t)]),
        exact_dt=lambda x, t: b + 2 * c * t + 0 * x[0],
        exact_lap=lambda x, t: _zeros(x[0], t),
        exact_lap_dt=lambda x, t: _zeros(x[0], t),
        description="v_t = int (v - c s^2) ds + r(t), v = a + b t + c t^2",
    )


PROBLEMS = {
    "example1": example1,
    "example2": example2,
    "sobolev_nodelay": sobolev_nodelay,
    "example1_linear_time": example1_linear_time,
    "quadratic_time": quadratic_time,
}


def get_problem(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ConfigError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


@dataclass
class ValidationReport:
    passed: bool
    failures: list

    def __bool__(self):
        return self.passed


def _fd(fn, args, index, step):
    lo = list(args)
    hi = list(args)
    lo[index] = args[index] - step
    hi[index] = args[index] + step
    return (fn(*hi) - fn(*lo)) / (2 * step)


def validate(spec: ProblemSpec, sample_count: int = 20, seed: int = 0) -> ValidationReport:
    """Check boundary/history compatibility and the supplied derivatives.

    Derivatives are compared against central differences with step
    ``1e-6 * max(1, |v|)`` at relative tolerance 1e-6.
    """
    rng = np.random.default_rng(seed)
    failures = []

    xb = spec.sample_points(rng, sample_count, boundary=True)
    gap = np.abs(spec.u0(xb, 0.0) - spec.rho(xb, 0.0))
    for k in np.flatnonzero(gap > 1e-10):
        failures.append(f"u0(x,0) != rho(x,0) at x={xb[:, k].tolist()}")

    if spec.exact is not None:
        xs = spec.sample_points(rng, sample_count)
        ts = -spec.tau * rng.random(sample_count)
        gap = np.abs(spec.exact(xs, ts) - spec.u0(xs, ts))
        for k in np.flatnonzero(gap > 1e-10):
            failures.append(f"exact != u0 at x={xs[:, k].tolist()}, t={ts[k]}")
        ts = spec.T_f * rng.random(sample_count)
        gap = np.abs(spec.exact(xb, ts) - spec.rho(xb, ts))
        for k in np.flatnonzero(gap > 1e-10):
            failures.append(f"exact != rho at x={xb[:, k].tolist()}, t={ts[k]}")

    x = spec.sample_points(rng, sample_count)
    t = spec.T_f * rng.random(sample_count)
    v = rng.uniform(-2, 2, sample_count)
    z = rng.uniform(-2, 2, sample_count)
    s = t - spec.tau * rng.random(sample_count)
    step_v = 1e-6 * np.maximum(1.0, np.abs(v))
    step_z = 1e-6 * np.maximum(1.0, np.abs(z))
    checks = [
        ("df_dv", spec.df_dv(x, t, v, z), _fd(spec.f, (x, t, v, z), 2, step_v)),
        ("df_dz", spec.df_dz(x, t, v, z), _fd(spec.f, (x, t, v, z), 3, step_z)),
        ("dg_dv", spec.dg_dv(x, t, s, v), _fd(spec.g, (x, t, s, v), 3, step_v)),
    ]
    for name, analytic, numeric in checks:
        analytic = np.broadcast_to(analytic, v.shape)
        err = np.abs(analytic - numeric)
        for k in np.flatnonzero(err > 1e-6 * np.maximum(1.0, np.abs(numeric))):
            failures.append(
                f"{name} mismatch at x={x[:, k].tolist()}, t={t[k]:.6g}: "
                f"analytic {analytic[k]:.8g} vs finite difference {numeric[k]:.8g}"
            )
    return ValidationReport(not failures, failures)


def delay_integral_exact(spec: ProblemSpec, x, t, n_points: int = 64):
    """High-order Gauss-Legendre value of ``int_{t-tau}^t g(x, t, s, v(x, s)) ds``."""
    nodes, weights = np.polynomial.legendre.leggauss(n_points)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    total = 0.0
    for node, weight in zip(nodes, weights):
        s = t - spec.tau / 2 * (1 - node)
        total = total + weight * spec.g(x, t, s, spec.exact(x, s))
    return spec.tau / 2 * total


def manufactured_residual(spec: ProblemSpec, x, t) -> np.ndarray:
    """Strong-form residual of the exact solution at points ``(x, t)``."""
    for attr in ("exact", "exact_dt", "exact_lap", "exact_lap_dt"):
        if getattr(spec, attr) is None:
            raise ConfigError(f"problem {spec.name} lacks {attr}")
    v = spec.exact(x, t)
    z = delay_integral_exact(spec, x, t)
    lhs = spec.exact_dt(x, t) - spec.beta * spec.exact_lap_dt(x, t) - spec.alpha * spec.exact_lap(x, t)
    return lhs - spec.f(x, t, v, z)
