"""Discrete complex Monge-Ampere operators, subsolution checks and monotone solvers."""

__version__ = "0.1.0"

from .field_core import (BOUNDARY, EXTERIOR, INTERIOR, DomainMask, Grid, ScalarField, ball_mask,
                         box_mask, fit_extent, make_grid, read_field, sample_function, write_field)
from .hermitian_cone import (HermitianSample, bounded_minimizer, exact_minimizer, inf_trace,
                             mixed_discriminant, sample_cone)
from .diff_ops import (StencilSet, complex_hessian, delta_H_consistent, delta_H_monotone,
                       lattice_sample, ma_det, ma_inf, mixed_ma, pair_distribution)
from .mollifier import MollifierKernel, convolve, make_kernel, mollification_ladder
from .solver import (LadderConfig, SolverConfig, energy_E1, functional_F, run_ladder,
                     solve_dirichlet, solve_exponential, stability_probe)
from .subsolution import (GeneralizedRHS, SubsolutionReport, TestFunctionFamily, Tolerance,
                          check_classical_smoothed, check_distributional, check_equivalence,
                          check_generalized, check_mixed, check_pluripotential)

__all__ = [name for name in dir() if not name.startswith("_")]
