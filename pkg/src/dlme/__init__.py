"""Distribution locational marginal emissions via differentiable conic dispatch."""

from .cones import ConeSpec, dproject_cone, project_cone
from .diffcone import adjoint, forward, make_context
from .grid import NetworkCase, ScenarioSet, load_case, load_scenarios
from .hsde import ConeProgram, SolverError, SolverSettings, solve_hsde
from .scheduler import build_program, solve_dispatch, total_emission

__version__ = "0.1.0"

__all__ = [
    "ConeProgram",
    "ConeSpec",
    "NetworkCase",
    "ScenarioSet",
    "SolverError",
    "SolverSettings",
    "adjoint",
    "build_program",
    "dproject_cone",
    "forward",
    "load_case",
    "load_scenarios",
    "make_context",
    "project_cone",
    "solve_dispatch",
    "solve_hsde",
    "total_emission",
]
