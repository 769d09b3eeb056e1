"""Multiscale solvers for quasi-static linear thermoelasticity on the unit square.

The fine-grid backward-Euler solver lives in :mod:`melod.fem_reference`, the
localized bases (decoupled LOD and coupled ME-LOD) in :mod:`melod.mslod`, and
the reduced time stepping in :mod:`melod.msstepper`.
"""
from .grid import NestedGrid, build_nested_grid, node_patch
from .coeffs import CoefficientField, build_field
from .assembly import BlockSystem, assemble_block_system, assemble_loads, compose_time_operators
from .fem_reference import StateVector, Trajectory, run
from .mslod import MultiscaleBasis, build_basis, build_coupled_operator, solve_corrector
from .msstepper import ReducedSystem, ms_initial_state, ms_run, reduce, run_multiscale
from .metrics import ErrorReport, energy_errors

__all__ = [
    "NestedGrid", "build_nested_grid", "node_patch", "CoefficientField", "build_field",
    "BlockSystem", "assemble_block_system", "assemble_loads", "compose_time_operators",
    "StateVector", "Trajectory", "run", "MultiscaleBasis", "build_basis",
    "build_coupled_operator", "solve_corrector", "ReducedSystem", "ms_initial_state",
    "ms_run", "reduce", "run_multiscale", "ErrorReport", "energy_errors",
]
