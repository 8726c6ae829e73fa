"""Flux-variable difference schemes for 2D parabolic equations with mixed
derivatives: grids and operators, weighted and locally one-dimensional time
schemes with per-step estimate monitoring, and analysis tooling (manufactured
solutions, convergence studies, dense stability certification)."""

from .grid import (CoeffField, FluxField, Grid2D, ScalarField, build_grid,
                   flux_inner_product, flux_norm, operator_weighted_norm,
                   scalar_inner_product, scalar_norm)
from .operators import (KOperator, TriangularSplit, apply_A, apply_C, apply_D,
                        apply_Dstar, apply_K, apply_L_stencil, apply_Q,
                        apply_R, split_R_triangular)
from .schemes import (EvolutionResult, SchemeConfig, StepRecord,
                      run_evolution, step_flux_system, step_flux_weighted,
                      step_lod_diagonal, step_lod_triangular,
                      step_scalar_weighted)
from .solvers import (SolverReport, solve_spd, solve_triangular,
                      solve_tridiagonal_batch)
from .analysis import (ConvergenceReport, ManufacturedCase,
                       StabilityCertificate, convergence_study,
                       make_manufactured, stability_probe)

__version__ = "0.1.0"
