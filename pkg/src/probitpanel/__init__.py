"""Bayesian random-effects probit models for longitudinal binary panels.

Gibbs samplers for Gaussian and overfitted discrete random-effect
distributions, individual predictive probabilities, risk-group calibration
analyses, interval simulations and binomial mixtures.
"""

from ._backend import BACKEND, HAS_NUMBA, set_threads
from .chains import ChainConfig, ChainDraws
from .data import PanelDataset, Schema, ingest_csv, split_train_holdout, standardize
from .errors import ConfigError, DataError, DomainError, ProbitPanelError, SamplerError
from .gibbs_discrete import DiscreteHyperParams, run_chain_discrete
from .gibbs_gaussian import GaussianHyperParams, run_chain
from .groups import RiskGroupScheme, bin_estimates
from .predictive import PredictiveSummary, predictive_samples
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "HAS_NUMBA", "set_threads", "ChainConfig", "ChainDraws", "PanelDataset",
    "Schema", "ingest_csv", "split_train_holdout", "standardize", "ConfigError", "DataError",
    "DomainError", "ProbitPanelError", "SamplerError", "DiscreteHyperParams",
    "run_chain_discrete", "GaussianHyperParams", "run_chain", "RiskGroupScheme",
    "bin_estimates", "PredictiveSummary", "predictive_samples", "RngStream", "__version__",
]
