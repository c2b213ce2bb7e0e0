"""Learned iterative likelihood-free inference.

A recurrent machine is meta-trained to update a diagonal-Gaussian proposal
over simulator parameters from simulated data alone, then evaluated against
maximum-likelihood baselines on tractable toy simulators.
"""

from . import evaluate, meta, nn, proposal, rng, simulators, tensor
from .evaluate import EvalReport, evaluate as run_evaluation, histogram_distance, marginalized_estimate, rmse
from .meta import (Adam, MetaProblem, Rollout, TrainConfig, default_config,
                   load_model, make_meta_dataset, rollout, save_model, step_weight,
                   total_loss, train)
from .nn import DenseLayer, GruCell, MLP, RecurrentUpdater, SetEncoder
from .proposal import ProposalParams, init_proposal, log_density, proposal_mean, sample_proposal, score
from .rng import RandomSource, sample
from .simulators import get_simulator, mle_oracle, sample_prior, simulator_names
from .tensor import Tensor, grad_check, no_grad

__version__ = "0.1.0"
