"""Bayesian inverse problems, forward propagation and MCMC samplers.

Parameters live in box domains; densities, likelihoods and samplers work on
plain ``numpy`` arrays. The main entry points are

* :class:`StatisticalInverseProblem` with DRAM or adaptive-tempering solves,
* :class:`StatisticalForwardProblem` for pushing posterior samples through a
  quantity of interest,
* :func:`run_pcn` for function-space sampling under a Gaussian prior,
* :mod:`bayesuq.postproc` for diagnostics and chain files.
"""

import logging

from .config import (ConfigError, EnvOptions, InputParseError, MhOptions, MlOptions, OptionsMap,
                     PcnOptions, SipOptions, dump_defaults, parse_input_file, read_input_file,
                     resolve, serialize)
from .core import (BoxSubset, ContractError, CovarianceMatrix, ImproperMeasureError, JointPdf,
                   RandomVariable, ScalarFunction, VectorSpace, log_normalization_estimate)
from .dram import AdaptiveState, Chain, am_update, dr_accept_prob, mh_accept_prob, run_dram
from .funcspace import (LaplacianGaussianMeasure, PcnSampler, SpectralFunction, pcn_propose,
                        pcn_step, prior_draw, run_pcn)
from .inverse import (Environment, EnvironmentConstructionError, SequenceRealizer,
                      StatisticalForwardProblem, StatisticalInverseProblem, derive_seed,
                      filter_chain, projectile_range, solve_sfp, solve_sip)
from .likelihood import BallDropModel, ForwardModel, GaussianLikelihood, ModelEvaluationError
from .mlsampler import MultilevelResult, run_multilevel
from .postproc import (autocorrelation, chain_moments, gelman_rubin, histogram, kde, read_chain,
                       write_chain)

logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = "0.1.0"
