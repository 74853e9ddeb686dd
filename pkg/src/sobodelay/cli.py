"""``sobodelay`` command line: solves, convergence studies, stability probes, self-checks.

Configuration lives in an INI file with ``[run]``, ``[study]`` and
``[output]`` sections; every key can be overridden by a flag.  Grid
parameters accept rationals (``1/128``) and powers of two (``2^-7``) so the
``sigma = tau/m`` integrality check is exact.

Exit codes: 0 success, 1 configuration error, 2 computation failure.
"""

from __future__ import annotations

import argparse
import configparser
import io
import math
import os
import sys
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, analysis, fem, integrator, problems, verify
from .errors import ConfigError, InvalidArgumentError, SobodelayError
from .linalg import SolveConfig
from .mesh import write_mesh

OUTPUT_ENV = "SOBODELAY_OUTPUT_DIR"
DEFAULT_OUTPUT = "sobodelay-out"
EXPLICIT_EULER = "explicit-euler"
IMPLICIT = "three-level"
STABILITY_FACTOR = 10.0

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 1, 2


def parse_number(text) -> Fraction:
    """Exact rational from ``"1/128"``, ``"2^-7"``, ``"0.25"`` or ``"3"``."""
    if isinstance(text, Fraction):
        return text
    if isinstance(text, (int, float)):
        return Fraction(text)
    s = str(text).strip().replace(" ", "")
    try:
        if "^" in s:
            base, exp = s.split("^", 1)
            return Fraction(base) ** int(exp)
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"cannot read {text!r} as a number") from None


def format_number(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _parse_list(text):
    items = [t for t in str(text).replace(",", " ").split() if t]
    return [parse_number(t) for t in items]


def _parse_bool(text):
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot read {text!r} as a boolean")


# (section, key, kind)
_KEYS = {
    "problem": ("run", "str"),
    "degree": ("run", "int"),
    "h": ("run", "num"),
    "n_cells": ("run", "int"),
    "sigma": ("run", "num"),
    "T_f": ("run", "num"),
    "beta": ("run", "num"),
    "startup_mode": ("run", "str"),
    "linearization": ("run", "str"),
    "solver": ("run", "str"),
    "newton_tol": ("run", "float"),
    "scheme": ("run", "str"),
    "h_list": ("study", "list"),
    "sigma_list": ("study", "list"),
    "jobs": ("study", "int"),
    "output_dir": ("output", "str"),
    "timing": ("output", "bool"),
    "dump_mesh": ("output", "bool"),
}
_INI_NAME = {"output_dir": "dir"}


@dataclass
class RunConfig:
    problem: Optional[str] = None
    degree: Optional[int] = None
    h: Optional[Fraction] = None
    n_cells: Optional[int] = None
    sigma: Optional[Fraction] = None
    T_f: Optional[Fraction] = None
    beta: Optional[Fraction] = None
    startup_mode: Optional[str] = None
    linearization: Optional[str] = None
    solver: Optional[str] = None
    newton_tol: Optional[float] = None
    scheme: Optional[str] = None
    h_list: Optional[list] = None
    sigma_list: Optional[list] = None
    jobs: Optional[int] = None
    output_dir: Optional[str] = None
    timing: Optional[bool] = None
    dump_mesh: Optional[bool] = None
    source: dict = field(default_factory=dict, compare=False, repr=False)

    def merged(self, **overrides) -> "RunConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                section = _KEYS[name][0]
                raise ConfigError(
                    f"missing required field '{name}' (set [{section}] {_INI_NAME.get(name, name)} or pass --{name.replace('_', '-')})"
                )


def _convert(name, kind, raw, where):
    try:
        if kind == "str":
            return raw.strip()
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "num":
            return parse_number(raw)
        if kind == "list":
            return _parse_list(raw)
        if kind == "bool":
            return _parse_bool(raw)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{where}: bad value for '{name}': {exc}") from None
    raise AssertionError(kind)


def parse_config(text: str, origin: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    by_ini = {(sec, _INI_NAME.get(name, name)): (name, kind) for name, (sec, kind) in _KEYS.items()}
    values = {}
    lines = _key_lines(text)
    for section in parser.sections():
        if section not in ("run", "study", "output"):
            raise ConfigError(f"{origin}: unknown section [{section}]")
        for key, raw in parser.items(section):
            where = f"{origin}:{lines.get((section, key), '?')} [{section}] {key}"
            if (section, key) not in by_ini:
                raise ConfigError(f"{where}: unknown key")
            name, kind = by_ini[(section, key)]
            values[name] = _convert(name, kind, raw, where)
    return RunConfig(**values, source={"origin": origin})


def _key_lines(text):
    out, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif "=" in s and not s.startswith(("#", ";")):
            out.setdefault((section, s.split("=", 1)[0].strip()), i)
    return out


def to_text(cfg: RunConfig) -> str:
    """Serialize back to INI; ``parse_config(to_text(c)) == c``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for f in fields(RunConfig):
        if f.name not in _KEYS:
            continue
        value = getattr(cfg, f.name)
        if value is None:
            continue
        section, kind = _KEYS[f.name]
        if not parser.has_section(section):
            parser.add_section(section)
        if kind == "num":
            text = format_number(value)
        elif kind == "list":
            text = ", ".join(format_number(v) for v in value)
        elif kind == "bool":
            text = "true" if value else "false"
        elif kind == "float":
            text = repr(float(value))
        else:
            text = str(value)
        parser.set(section, _INI_NAME.get(f.name, f.name), text)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# -- resolving a config into library objects ---------------------------------


def _problem(cfg: RunConfig) -> problems.ProblemSpec:
    cfg.require("problem")
    spec = problems.get_problem(cfg.problem)
    if cfg.beta is not None:
        spec = spec.with_overrides(beta=float(cfg.beta))
    return spec


def _grid_h(cfg: RunConfig, spec) -> Fraction:
    if cfg.h is not None and cfg.n_cells is not None:
        raise ConfigError("give only one of 'h' and 'n_cells'")
    if cfg.h is not None:
        return cfg.h
    if cfg.n_cells is not None:
        if cfg.n_cells < 1:
            raise ConfigError("n_cells must be >= 1")
        length = Fraction(spec.measure).limit_denominator() if spec.dim == 1 else Fraction(1)
        return length / cfg.n_cells
    raise ConfigError("missing required field 'h' (or 'n_cells') in [run]; pass --h or --n-cells")


def _scheme_kwargs(cfg: RunConfig, study=False) -> dict:
    kw = {}
    if cfg.startup_mode is not None:
        kw["startup_mode"] = cfg.startup_mode
    elif not study:
        kw["startup_mode"] = integrator.CRANK_NICOLSON
    if cfg.linearization is not None:
        kw["linearization"] = cfg.linearization
    if cfg.solver is not None:
        kw["solver"] = SolveConfig(method=cfg.solver)
    if cfg.newton_tol is not None:
        kw["newton_tol"] = cfg.newton_tol
    if cfg.T_f is not None:
        kw["T_f"] = cfg.T_f
    return kw


def _degree(cfg):
    cfg.require("degree")
    if not 1 <= cfg.degree <= 5:
        raise ConfigError(f"degree must be in 1..5, got {cfg.degree}")
    return cfg.degree


def _output_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _check_scheme(spec, sigma, kw):
    # raises ConfigError citing sigma = tau/m or sigma = T_f/N
    integrator.SchemeConfig.for_problem(spec, sigma, **kw)


# -- plot data --------------------------------------------------------------


def _nodal_rows(space, coeffs, spec, t):
    x = space.dof_coords.T  # (dim, n_dofs)
    err = coeffs - spec.exact(x, t) if spec.exact is not None else None
    order = np.lexsort(x[::-1])
    return x[:, order], coeffs[order], (err[order] if err is not None else None)


def write_columns(path: Path, header: str, *cols):
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        for row in zip(*cols):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _write_solution_plots(out: Path, stem: str, space, coeffs, spec, t):
    x, v, err = _nodal_rows(space, coeffs, spec, t)
    axes = ["x", "y"][: space.dim]
    written = [out / f"{stem}_solution.dat"]
    write_columns(written[0], " ".join(axes + ["v_h"]) + f"  t={t!r}", *x, v)
    if err is not None:
        written.append(out / f"{stem}_error.dat")
        write_columns(written[1], " ".join(axes + ["v_h-v"]) + f"  t={t!r}", *x, err)
    return written


# -- commands ---------------------------------------------------------------


def cmd_solve(cfg: RunConfig) -> int:
    spec = _problem(cfg)
    degree = _degree(cfg)
    h = _grid_h(cfg, spec)
    cfg.require("sigma")
    kw = _scheme_kwargs(cfg)
    _check_scheme(spec, cfg.sigma, kw)
    spec.build_mesh(h)
    out = _output_dir(cfg)

    result = analysis.solve_problem(spec, degree, h, cfg.sigma, **kw)
    stem = f"{spec.name}_solve"
    with open(out / f"{stem}_trajectory.csv", "w") as fh:
        fh.write(",".join(analysis.TRAJECTORY_HEADER) + "\n")
        for row in result.trajectory_rows():
            fh.write(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in row) + "\n")
    _write_solution_plots(out, stem, result.space, result.state.v_curr, spec, result.state.t)
    if cfg.dump_mesh:
        write_mesh(result.space.mesh, out / f"{stem}.mesh")

    parts = [
        f"{spec.name} P{degree} h={format_number(Fraction(h))} sigma={format_number(Fraction(cfg.sigma))}",
        f"N={result.cfg.N}",
        f"newton_iters={sum(r.newton_iters for r in result.records)}",
    ]
    if result.errors is not None:
        parts.append(f"max H1 error={result.err_h1_sup:.6e}")
        parts.append(f"max L2 error={result.err_l2_sup:.6e}")
    parts.append(f"max beta-norm={max(r.beta_norm for r in result.records):.6e}")
    if cfg.timing is not False:
        parts.append(f"wall={result.wall_seconds:.3f}s")
    print("  ".join(parts))
    return EXIT_OK


def cmd_study(cfg: RunConfig, axis: str) -> int:
    spec = _problem(cfg)
    degree = _degree(cfg)
    kw = _scheme_kwargs(cfg, study=True)
    jobs = cfg.jobs or 1
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if axis == "space":
        cfg.require("sigma")
        if not cfg.h_list:
            raise ConfigError("missing or empty field 'h_list' in [study]; pass --h-list")
        _check_scheme(spec, cfg.sigma, kw)
        for h in cfg.h_list:
            spec.build_mesh(h)
        report = analysis.run_spatial_study(spec, degree, cfg.h_list, cfg.sigma, jobs=jobs, **kw)
    else:
        h = _grid_h(cfg, spec)
        if not cfg.sigma_list:
            raise ConfigError("missing or empty field 'sigma_list' in [study]; pass --sigma-list")
        for s in cfg.sigma_list:
            _check_scheme(spec, s, kw)
        spec.build_mesh(h)
        report = analysis.run_temporal_study(spec, degree, h, cfg.sigma_list, jobs=jobs, **kw)

    timing = cfg.timing is not False
    if not timing:
        for row in report.rows:
            row.wall_s = 0.0
    out = _output_dir(cfg)
    stem = f"{spec.name}_{axis}_study"
    (out / f"{stem}.csv").write_text(report.to_csv())
    (out / f"{stem}.json").write_text(report.to_json())
    ok_rows = [r for r in report.rows if not r.failure]
    label = "h" if axis == "space" else "sigma"
    for norm in ("h1", "l2"):
        write_columns(
            out / f"{stem}_{norm}.dat",
            f"{label} err_{norm}_sup  (plot on log-log axes)",
            [r.resolution for r in ok_rows],
            [getattr(r, f"err_{norm}_sup") for r in ok_rows],
        )
    print(f"{spec.name} P{degree} {axis} study")
    print(report.table(timing=timing))
    return EXIT_FAILURE if report.failed else EXIT_OK


def cmd_stability_probe(cfg: RunConfig) -> int:
    spec = _problem(cfg)
    degree = _degree(cfg)
    h = _grid_h(cfg, spec)
    sigmas = cfg.sigma_list or ([cfg.sigma] if cfg.sigma is not None else None)
    if not sigmas:
        raise ConfigError("missing field 'sigma_list' (or 'sigma'); pass --sigma-list")
    if spec.exact is None or spec.exact_grad is None:
        raise ConfigError("stability probe needs an exact solution for the reference norm")
    scheme = cfg.scheme or IMPLICIT
    if scheme not in (IMPLICIT, EXPLICIT_EULER):
        raise ConfigError(f"unknown scheme {scheme!r}; choose {IMPLICIT} or {EXPLICIT_EULER}")
    kw = _scheme_kwargs(cfg)
    T_f = kw.pop("T_f", None)
    cfgs = [integrator.SchemeConfig.for_problem(spec, s, T_f=T_f, **kw) for s in sigmas]
    space = fem.build_space(spec.build_mesh(h), degree)

    print(f"{spec.name} P{degree} h={format_number(Fraction(h))} scheme={scheme} beta={spec.beta!r}")
    print(f"{'sigma':>10}  {'max beta-norm':>14}  {'threshold':>12}  verdict")
    unstable = False
    for s, scfg in zip(sigmas, cfgs):
        times = [n * scfg.sigma for n in range(scfg.N + 1)]
        threshold = STABILITY_FACTOR * analysis.exact_beta_norm_max(spec, space, times)
        try:
            if scheme == EXPLICIT_EULER:
                _, records = integrator.run_explicit_euler(space, spec, scfg)
            else:
                _, records = integrator.run(space, spec, scfg)
            peak = max(r.beta_norm for r in records)
            note = ""
        except SobodelayError as exc:
            peak, note = math.inf, f" ({exc})"
        bounded = math.isfinite(peak) and peak <= threshold
        unstable |= not bounded
        verdict = "BOUNDED" if bounded else "UNSTABLE"
        print(f"{format_number(Fraction(s)):>10}  {peak:>14.6e}  {threshold:>12.6e}  {verdict}{note}")
    return EXIT_FAILURE if unstable else EXIT_OK


def cmd_verify(suites=None, inject_fault=None) -> int:
    try:
        results = verify.run_suites(suites, inject_fault=inject_fault)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<14} {r.seconds:7.3f}s  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} suites passed")
    return EXIT_OK if failed == 0 else EXIT_FAILURE


# -- argument parsing -------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_run_flags(p, study=False, probe=False):
    p.add_argument("--config", "-c", help="INI config file")
    p.add_argument("--problem", choices=sorted(problems.PROBLEMS))
    p.add_argument("--degree", type=int)
    p.add_argument("--h", help="grid spacing, e.g. 1/32")
    p.add_argument("--n-cells", dest="n_cells", type=int)
    p.add_argument("--sigma", help="time step, e.g. 1/128")
    p.add_argument("--T-f", dest="T_f", help="final time override")
    p.add_argument("--beta", help="override the Sobolev coefficient")
    p.add_argument("--startup-mode", dest="startup_mode", choices=[integrator.CRANK_NICOLSON, integrator.EXACT_SEED])
    p.add_argument("--linearization", choices=[integrator.FULL_NEWTON, integrator.PICARD])
    p.add_argument("--solver", choices=["direct", "cg"])
    p.add_argument("--newton-tol", dest="newton_tol", type=float)
    p.add_argument("--output-dir", "-o", dest="output_dir", help=f"defaults to ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT}")
    p.add_argument("--no-timing", dest="timing", action="store_const", const=False, help="omit wall times (deterministic output)")
    p.add_argument("--dump-mesh", dest="dump_mesh", action="store_const", const=True)
    if study or probe:
        p.add_argument("--sigma-list", dest="sigma_list")
    if study:
        p.add_argument("--h-list", dest="h_list")
        p.add_argument("--jobs", "-j", type=int, help="parallel study rows")
    if probe:
        p.add_argument("--scheme", choices=[IMPLICIT, EXPLICIT_EULER])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sobodelay", description="FE solver for nonlinear Sobolev equations with distributed delay")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_run_flags(sub.add_parser("solve", help="single run, per-step CSV and summary"))
    _add_run_flags(sub.add_parser("study-space", help="spatial convergence study"), study=True)
    _add_run_flags(sub.add_parser("study-time", help="temporal convergence study"), study=True)
    _add_run_flags(sub.add_parser("stability-probe", help="beta-norm boundedness for coarse steps"), probe=True)
    v = sub.add_parser("verify", help="run the property suites")
    v.add_argument("--suite", action="append", choices=sorted(verify.SUITES), help="repeatable; default all")
    v.add_argument("--inject-fault", dest="inject_fault", choices=verify.FAULTS, help="test hook")
    return parser


def _config_from_args(args) -> RunConfig:
    base = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        base = parse_config(text, str(path))
    over = {}
    for name, (_, kind) in _KEYS.items():
        raw = getattr(args, name, None)
        if raw is None:
            continue
        if kind == "num":
            raw = parse_number(raw)
        elif kind == "list":
            raw = _parse_list(raw)
        over[name] = raw
    return base.merged(**over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.suite, args.inject_fault)
        cfg = _config_from_args(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "study-space":
            return cmd_study(cfg, "space")
        if args.command == "study-time":
            return cmd_study(cfg, "time")
        return cmd_stability_probe(cfg)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"sobodelay: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SobodelayError as exc:
        print(f"sobodelay: computation failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
