"""Bayesian neural networks with calibrate-emulate-sample inference.

A short MCMC run collects parameter/prediction pairs, a small ReLU network
learns the parameter-to-prediction map, and pCN (or SGHMC) then samples
against that cheap emulated likelihood. Full-data MCMC and the usual
approximate-inference baselines are included for comparison.
"""
from .ces import FbnnVariant, posterior_predictive, run_fbnn, run_full_bnn
from .errors import (ChainAbortError, FbnnError, InvalidInputError, NumericOverflowError,
                     PhaseError, TrainingAbortError)
from .nn import BnnModel, GaussianPrior, MlpSpec, NoiseModel
from .samplers import ChainTrace, SamplerConfig, run_chain

__version__ = "0.1.0"

__all__ = [
    "BnnModel", "ChainAbortError", "ChainTrace", "FbnnError", "FbnnVariant", "GaussianPrior",
    "InvalidInputError", "MlpSpec", "NoiseModel", "NumericOverflowError", "PhaseError",
    "SamplerConfig", "TrainingAbortError", "posterior_predictive", "run_chain", "run_fbnn",
    "run_full_bnn",
]
