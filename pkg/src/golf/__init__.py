"""Gaussian orthogonal latent factor processes for incomplete lattices.

Exact Bayesian inference for ``Y = M + A Z + E`` where the loadings ``A``
have orthonormal columns, so the likelihood splits into independent
one-dimensional Gaussian process terms evaluated by Kalman filtering.
"""

from .errors import (
    ConfigError,
    DataError,
    GolfError,
    InvalidParameterError,
    NumericalError,
    PreconditionError,
)
from .kernels import Family, KernelSpec, corr_matrix, kernel_eval
from .lattice import LatticeData, read_coords, read_matrix, write_coords, write_matrix
from .loadings import Loadings, compute_loadings, kronecker_loadings, project, residual_project, unproject
from .model import GolfModel, MeanModel, ModelState, PriorSpec, marginal_loglik, posterior_factor
from .sampler import Chain, McmcConfig, Prediction, mcmc_run, predict
from .statespace import KalmanBatch, kf_loglik, ssm_build

__version__ = "0.1.0"
