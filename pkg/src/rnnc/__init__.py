"""Recursive nearest-neighbour co-kriging for multi-fidelity spatial data."""

from .conjugate import CandidateGrid, ConjugateFit, ConjugatePriors, LevelPosterior, fit_all, kfold_select
from .covariance import CovarianceParams, NoiseParams, cov_block, kernel
from .errors import ChainDivergence, DuplicateLocationError, NumericalError, RNNCError, ValidationError
from .geometry import LocationSet, NeighborIndex, build_neighbor_index, knot_set, order_locations, query_neighbors
from .metrics import PredictionRecords, alci95, crps_gaussian, cvg95, nsme, rmspe
from .nngp import NNGPFactors, NoisyCovariance, compute_factors, conditional_at, marginal_loglik, sparse_quadform
from .priors import InverseGammaPrior, NormalPrior
from .recursive import Basis, FidelityDataset, ImputedField, LevelFit, LevelParams, predict_recursive
from .sampler import ChainConfig, run_chain
from .simulate import SimSpec, four_level_spec, simulate, table1_spec

__version__ = "0.1.0"
