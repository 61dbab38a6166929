"""Learning GP corrections to misspecified ODE models, with submodular experimental design."""

from .dynamics import SystemSpec, TimeGrid, Trajectory, integrate_rk4, linear_flow, proxy_states
from .kernels import KernelConfig, kernel_eval, kernel_matrix
from .observation import NoiseModel, ObservationSet, sample_corrections
from .gp import GpPosterior, fit, posterior_cov, posterior_mean
from .design import (DesignProblem, DesignResult, greedy_design, lazy_greedy_design, mutual_information,
                     partition_matroid_greedy, exhaustive_design)
from .rff import sample_features, featurize, fit_ridge, emulate_query, emulate_trajectory

__version__ = "0.1.0"
