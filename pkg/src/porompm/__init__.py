"""Stabilised mixed material point method for coupled free-surface and
seepage flow through porous media."""
from .errors import (AssemblyError, ConfigurationError, CoverageError, DegenerateSupportError, DomainEscapeError,
                     InvalidPorosityError, LinearSolverError, OracleError, PoroMPMError)
from .grid import BasisSample, StructuredGrid, corrected_basis, evaluate_basis, iterative_kernel_correction
from .metrics import convergence_report, convergence_slope, error_metrics
from .particles import MaterialPoints, init_particles
from .porous import PorosityField, PorousBlock, build_fields, sample_field, tessellate
from .scenarios import SCENARIOS, Simulation, resolve_config, run_scenario

__version__ = "0.1.0"
