"""Posterior distribution of a probability of failure for stochastic
multi-fidelity simulators, with fully Bayesian Gaussian-process models."""
from ._accel import HAVE_NUMBA
from .amh import AmhConfig, PosteriorSample, map_estimate, run_amh
from .covkernel import KernelParams, cov_matrix, fidelity_cov, matern52, mf_cov, scaled_distance
from .design import NestedDesign, generate_nlhs, maximin_improve
from .experiment import ExperimentConfig, kde_density, reference_pof, run_experiment
from .hyperprior import HyperParams, PriorSpec, default_prior, log_prior_density, sample_prior
from .mfgp import (GpPosterior, MfDataset, ModelEvaluationError, fit, integrated_log_likelihood,
                   predict, sample_paths)
from .oscillator import OscillatorInput, batch_simulate, cost, simulate
from .pof import PofConfig, PofSampleSet, coverage_report, sample_pof, summarize

__version__ = "0.1.0"
