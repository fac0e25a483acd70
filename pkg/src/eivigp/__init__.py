"""Errors-in-variables integrated Gaussian process models of sea-level change.

The rate of change is a Gaussian process on a grid, the level is its
integral, and observed ages may carry errors. Posterior rates and levels come
from a Gibbs/slice MCMC sampler.
"""

from .diagnostics import effective_sample_size, gelman_rubin, geweke
from .io import InputError, ingest_instrumental, ingest_proxy, load_proxy, write_instrumental, write_proxy
from .kernel import ConditioningError, Grid, KernelParams, ParameterDomainError, QuadratureRule
from .model import GiaParams, ObservationRecord, Priors, TimeAxis, apply_gia
from .posterior import predict_levels, predict_observations, rate_paths, level_paths, summarize
from .sampler import ChainConfig, ChainOutput, Problem, SamplerError, run_chain, run_chains
from .validation import SCENARIOS, interval_score, kfold_cv, lsr_baseline, run_scenario, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "ChainOutput",
    "ConditioningError",
    "GiaParams",
    "Grid",
    "InputError",
    "KernelParams",
    "ObservationRecord",
    "ParameterDomainError",
    "Priors",
    "Problem",
    "QuadratureRule",
    "SCENARIOS",
    "SamplerError",
    "TimeAxis",
    "apply_gia",
    "effective_sample_size",
    "gelman_rubin",
    "geweke",
    "ingest_instrumental",
    "ingest_proxy",
    "interval_score",
    "kfold_cv",
    "level_paths",
    "load_proxy",
    "lsr_baseline",
    "predict_levels",
    "predict_observations",
    "rate_paths",
    "run_chain",
    "run_chains",
    "run_scenario",
    "simulate_dataset",
    "summarize",
    "write_instrumental",
    "write_proxy",
]
