"""Problem definitions checked against an independent sympy derivation."""

import mpmath
import numpy as np
import pytest
import sympy as sy

from sobodelay import problems
from sobodelay.errors import ConfigError, InvalidArgumentError

X, Y, T, S = sy.symbols("x y t s", real=True)


def _oracle(name):
    """(exact v, symbolic f(v, z, x, t), symbolic g(s, v)) for each registered problem."""
    pi = sy.pi
    V, Z = sy.symbols("V Z")
    if name == "example1":
        v = sy.exp(-X) * sy.cos(pi * T)
        forcing = ((4 / pi) * sy.sin(pi * T) - (1 + sy.exp(-X) * sy.cos(pi * T)) * sy.cos(pi * T)) * sy.exp(-X)
        return v, V**2 - 2 * Z + forcing, lambda s, vs: vs, (X,)
    if name == "example1_linear_time":
        v = sy.exp(-X) * (1 + T)
        forcing = T * sy.exp(-X) - (sy.exp(-X) * (1 + T)) ** 2
        return v, V**2 - 2 * Z + forcing, lambda s, vs: vs, (X,)
    if name == "sobolev_nodelay":
        v = (1 + X**2) * sy.cos(pi * T)
        forcing = -pi * (X**2 - 1) * sy.sin(pi * T) - 2 * sy.cos(pi * T) - v**2
        return v, V**2 + forcing, lambda s, vs: 0, (X,)
    if name == "example2":
        v = sy.exp(-T / 2) * sy.sin(pi * X) * sy.sin(pi * Y)
        ghat = (sy.Rational(3, 2) - 2 * sy.exp(sy.Rational(1, 2)) + pi**2 - v / 2) * v - sy.sin(v)
        return v, V**2 / 2 + sy.sin(V) + Z + ghat, lambda s, vs: vs, (X, Y)
    if name == "quadratic_time":
        a, b, c = sy.Rational(1, 2), sy.Rational(-1, 4), sy.Rational(3, 4)
        v = a + b * T + c * T**2
        lin = sy.integrate(a + b * S, (S, T - 1, T))
        return v, Z + b + 2 * c * T - lin, lambda s, vs: vs - c * s**2, (X,)
    raise KeyError(name)


def _lap(expr, coords):
    return sum(sy.diff(expr, c, 2) for c in coords)


@pytest.mark.parametrize("name", sorted(problems.PROBLEMS))
def test_exact_solution_satisfies_pde(name):
    spec = problems.get_problem(name)
    v, fsym, gsym, coords = _oracle(name)
    V, Z = sy.symbols("V Z")
    alpha, beta, tau = (sy.nsimplify(c) for c in (spec.alpha, spec.beta, spec.tau))
    z = sy.integrate(gsym(S, v.subs(T, S)), (S, T - tau, T))
    lhs = sy.diff(v, T) - beta * _lap(sy.diff(v, T), coords) - alpha * _lap(v, coords)
    residual = sy.simplify(lhs - fsym.subs({V: v, Z: z}))
    assert residual == 0

    rng = np.random.default_rng(0)
    x = spec.sample_points(rng, 25)
    t = spec.T_f * rng.random(25)
    lhs_num = sy.lambdify((coords, T), lhs, "numpy")
    z_num = sy.lambdify((coords, T), z, "numpy")
    v_num = sy.lambdify((coords, T), v, "numpy")
    vx = spec.exact(x, t)
    np.testing.assert_allclose(vx, np.broadcast_to(v_num(tuple(x), t), vx.shape), atol=1e-13)
    np.testing.assert_allclose(
        spec.f(x, t, vx, np.broadcast_to(z_num(tuple(x), t), vx.shape)),
        np.broadcast_to(lhs_num(tuple(x), t), vx.shape),
        atol=1e-11,
    )


@pytest.mark.parametrize("name", sorted(problems.PROBLEMS))
def test_supplied_derivatives_match_sympy(name):
    spec = problems.get_problem(name)
    v, _, _, coords = _oracle(name)
    rng = np.random.default_rng(1)
    x = spec.sample_points(rng, 15)
    t = spec.T_f * rng.random(15)
    pairs = [
        (spec.exact_dt, sy.diff(v, T)),
        (spec.exact_lap, _lap(v, coords)),
        (spec.exact_lap_dt, _lap(sy.diff(v, T), coords)),
    ]
    for fn, expr in pairs:
        ref = sy.lambdify((coords, T), expr, "numpy")(tuple(x), t)
        np.testing.assert_allclose(fn(x, t), np.broadcast_to(ref, t.shape), atol=1e-12)
    grad = np.asarray(spec.exact_grad(x, t))
    for d, c in enumerate(coords):
        ref = sy.lambdify((coords, T), sy.diff(v, c), "numpy")(tuple(x), t)
        np.testing.assert_allclose(grad[d], np.broadcast_to(ref, t.shape), atol=1e-12)


@pytest.mark.parametrize("name", sorted(problems.PROBLEMS))
def test_manufactured_residual_small(name):
    spec = problems.get_problem(name)
    rng = np.random.default_rng(2)
    x = spec.sample_points(rng, 50)
    t = spec.T_f * rng.random(50)
    assert np.abs(problems.manufactured_residual(spec, x, t)).max() <= 1e-8


@pytest.mark.parametrize("name", sorted(problems.PROBLEMS))
def test_validate_accepts_registered_problems(name):
    report = problems.validate(problems.get_problem(name))
    assert report, report.failures


def test_example2_forcing_at_centre():
    # high-precision reference value at x = (1/2, 1/2), t = 0, where v = 1
    mpmath.mp.dps = 30
    ref = mpmath.mpf("1.5") - 2 * mpmath.e ** mpmath.mpf("0.5") + mpmath.pi**2 - mpmath.mpf("0.5") - mpmath.sin(1)
    spec = problems.example2()
    got = spec.extra["forcing"](np.array([[0.5], [0.5]]), 0.0)[0]
    assert got == pytest.approx(float(ref), rel=1e-14)
    assert got == pytest.approx(6.7307, abs=1e-4)


def test_example1_df_dz_sign():
    spec = problems.example1()
    x = np.array([[0.3]])
    assert spec.df_dz(x, 0.5, np.array([1.0]), np.array([0.2]))[0] == -2.0


def test_validate_catches_wrong_derivative():
    spec = problems.example1().with_overrides(df_dz=lambda x, t, v, z: 2.0 + 0 * v)
    report = problems.validate(spec)
    assert not report
    assert any("df_dz" in f for f in report.failures)


def test_validate_catches_incompatible_history():
    spec = problems.example1().with_overrides(u0=lambda x, t: 1.0 + 0 * x[0] + 0 * t)
    assert not problems.validate(spec)


def test_delay_integral_against_closed_form():
    spec = problems.example1()
    x = np.array([[0.0, 0.4]])
    t = 1.7
    closed = np.exp(-x[0]) * (np.sin(np.pi * t) - np.sin(np.pi * (t - 1))) / np.pi
    np.testing.assert_allclose(problems.delay_integral_exact(spec, x, t), closed, atol=1e-14)


def test_build_mesh_and_errors():
    spec = problems.example1()
    assert spec.build_mesh(0.25).n_cells == 4
    with pytest.raises(ConfigError):
        spec.build_mesh(0.3)
    assert problems.example2().build_mesh(0.125).n_cells == 2 * 64
    with pytest.raises(ConfigError):
        problems.get_problem("example3")


@pytest.mark.parametrize("field", ["alpha", "beta", "tau", "T_f"])
def test_spec_rejects_non_positive_parameters(field):
    with pytest.raises((ConfigError, InvalidArgumentError)):
        problems.example1().with_overrides(**{field: 0.0})


def test_boundary_samples_lie_on_boundary():
    rng = np.random.default_rng(3)
    pts = problems.example2().sample_points(rng, 40, boundary=True)
    on = np.isclose(pts, 0).any(axis=0) | np.isclose(pts, 1).any(axis=0)
    assert on.all()
