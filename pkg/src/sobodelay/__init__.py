"""Finite-element solver for nonlinear Sobolev equations with distributed delay.

Lagrange P1..P5 elements on intervals and triangulated squares, a
three-level BDF2 scheme in time with trapezoidal delay quadrature, and
convergence/stability harnesses.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .mesh import Mesh, build_interval_mesh, build_unit_square_tri_mesh
from .fem import FESpace, build_space, assemble_mass, assemble_stiffness, assemble_A, interpolate
from .linalg import SolveConfig, solve
from .problems import ProblemSpec, get_problem, PROBLEMS
from .integrator import SchemeConfig, run
from .analysis import solve_problem, run_spatial_study, run_temporal_study, ConvergenceReport

__all__ = [
    "Mesh", "build_interval_mesh", "build_unit_square_tri_mesh",
    "FESpace", "build_space", "assemble_mass", "assemble_stiffness", "assemble_A", "interpolate",
    "SolveConfig", "solve", "ProblemSpec", "get_problem", "PROBLEMS",
    "SchemeConfig", "run", "solve_problem", "run_spatial_study", "run_temporal_study",
    "ConvergenceReport",
]
