"""Joint estimation of rewards and Boltzmann dynamics from demonstrations.

Maximum-causal-entropy inverse reinforcement learning in which the transition
model is learned together with the reward weights, by gradient ascent on the
log-likelihood of the demonstrations.
"""
from .dynamics import Assignment, BoltzmannDynamics, m_estimate
from .errors import (ConvergenceError, DemoDataError, InvalidArgumentError, ParseError,
                     SerdError, TrainingError)
from .grad import likelihood_gradient, log_likelihood, q_gradient
from .learner import TrainConfig, train
from .mdp import ParamLayout, ParamVector, TabularMdp
from .softq import SoftSolution, soft_q_iteration, solve_soft_q
from .traj import DemoSet, avg_kl_dynamics, avg_kl_policy, avg_loglik, sample

__version__ = "0.1.0"

__all__ = [
    "Assignment", "BoltzmannDynamics", "ConvergenceError", "DemoDataError", "DemoSet",
    "InvalidArgumentError", "ParamLayout", "ParamVector", "ParseError", "SerdError",
    "SoftSolution", "TabularMdp", "TrainConfig", "TrainingError", "avg_kl_dynamics",
    "avg_kl_policy", "avg_loglik", "likelihood_gradient", "log_likelihood", "m_estimate",
    "q_gradient", "sample", "soft_q_iteration", "solve_soft_q", "train",
]
