"""Reduced-dimension exchange of chaos-represented data in partitioned solvers."""

__version__ = "0.1.0"

from .basis import (MultiIndexSet, PCVector, QuadratureRule,
                    enumerate_multi_indices, eval_pc, project_nonintrusive,
                    sparse_grid)
from .field import (FieldModel, build_field_model, covariance_kernel,
                    evaluate_field, field_eigendecomposition)
from .klreduce import (KLRecord, pc_second_order, reconstruct, reduce_pc,
                       reduced_coords, select_dimension, weighted_kl)
from .meshfem import (FEOperators, Mesh, SymTridiagonal, assemble_operators,
                      build_mesh, gram_matrix_h1, solve_banded)
from .montecarlo import MCResult, run_monte_carlo, surrogate_error_vs_mc
from .solver import (IterationTrace, ProblemConfig, ReactorSystem,
                     gauss_seidel_deterministic, pc_iterate_full,
                     pc_iterate_reduced, sigma_fluctuation)
from .synthetic import (LinearCoupledSystem, coupled_fixed_point,
                        make_random_contractive, synthetic_general_coupled)

__all__ = [
    "FEOperators", "FieldModel", "IterationTrace", "KLRecord",
    "LinearCoupledSystem", "MCResult", "Mesh", "MultiIndexSet", "PCVector",
    "ProblemConfig", "QuadratureRule", "ReactorSystem", "SymTridiagonal",
    "assemble_operators", "build_field_model", "build_mesh",
    "coupled_fixed_point", "covariance_kernel", "enumerate_multi_indices",
    "eval_pc", "evaluate_field", "field_eigendecomposition",
    "gauss_seidel_deterministic", "gram_matrix_h1", "make_random_contractive",
    "pc_iterate_full", "pc_iterate_reduced", "pc_second_order",
    "project_nonintrusive", "reconstruct", "reduce_pc", "reduced_coords",
    "run_monte_carlo", "select_dimension", "sigma_fluctuation",
    "solve_banded", "sparse_grid", "surrogate_error_vs_mc",
    "synthetic_general_coupled", "weighted_kl",
]
