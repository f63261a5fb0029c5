"""Sparse polynomial-chaos recovery with OMP and basis pursuit denoising."""
from .crossval import CrossValPlan, CrossValResult, estimate_delta
from .experiment import ExperimentConfig, run_experiment
from .femsolver import Mesh1D, assemble_solve, eval_solution
from .klfield import CovarianceSpec, build_field, nystrom_eig, positivity_margin
from .oracle import CoefficientVector, mc_coeffs, rms_error, statistics, tensor_quadrature_coeffs
from .pcbasis import (MultiIndexSet, cardinality, eval_basis, eval_basis_matrix,
                      prefix_truncate, total_order_set)
from .sampling import assemble_measurement, draw_samples, mutual_coherence
from .solvers import bpdn, omp, recover

__version__ = "0.1.0"
