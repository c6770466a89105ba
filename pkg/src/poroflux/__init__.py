"""Finite-element toolkit for the inertial Biot-Stokes filtration system.

A poroelastic box stacked on a free-fluid box, coupled across a flat
interface by kinematic, Beavers-Joseph-Saffman slip, and stress-balance
conditions, with lateral periodicity.  The package assembles the coupled
operator, solves its resolvent system in mixed form, steps the dynamics
with energy-stable implicit schemes, and verifies the structural
properties (energy identity, dissipativity, inf-sup stability) numerically.
"""

from .grid import GridSpec, StackedGrid, build_grid, interface_map
from .spaces import (
    Q1,
    Q2,
    ElementFamily,
    SpaceSet,
    StateVector,
    build_spaces,
    interpolate_field,
    norm,
)
from .forms import (
    FormSet,
    InterfaceSet,
    MaterialParams,
    assemble_forms,
    assemble_interface,
    assemble_x_gram,
)
from .resolvent import (
    ResolventData,
    ResolventSystem,
    SolveReport,
    SolverError,
    assemble_resolvent,
    harmonic_pressure_check,
    solve_resolvent,
    verify_strong,
)
from .timestepper import (
    InitialData,
    Trajectory,
    TransientConfig,
    initialize_state,
    run_transient,
)
from .analysis import (
    EnergyReport,
    StabilityReport,
    constructive_infsup_check,
    energy_report,
    generator_checks,
    infsup_constant,
    weakform_residual,
)

__all__ = [
    "GridSpec", "StackedGrid", "build_grid", "interface_map",
    "ElementFamily", "Q1", "Q2", "SpaceSet", "StateVector", "build_spaces",
    "interpolate_field", "norm",
    "MaterialParams", "FormSet", "InterfaceSet", "assemble_forms",
    "assemble_interface", "assemble_x_gram",
    "ResolventData", "ResolventSystem", "SolveReport", "SolverError",
    "assemble_resolvent", "solve_resolvent", "verify_strong",
    "harmonic_pressure_check",
    "TransientConfig", "InitialData", "Trajectory", "initialize_state",
    "run_transient",
    "EnergyReport", "StabilityReport", "energy_report", "generator_checks",
    "infsup_constant", "constructive_infsup_check", "weakform_residual",
]

__version__ = "0.1.0"
