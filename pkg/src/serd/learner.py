"""Gradient-ascent training of reward weights and dynamics energies.

Modes
-----
serd-tied
    Reward weights plus one shared dynamics block (agent belief = true dynamics).
serd-untied
    Reward weights, agent dynamics and true dynamics as separate blocks.
mdce-irl
    Baseline: dynamics frozen at the m-estimate, only reward weights move.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DEFAULT_PRIOR_COUNT, Assignment, BoltzmannDynamics, m_estimate
from .errors import ConvergenceError, InvalidArgumentError, TrainingError
from .grad import likelihood_gradient, q_gradient
from .mdp import ParamVector, TabularMdp
from .softq import DEFAULT_MAX_ITER, DEFAULT_TOL, SOLVERS, solve_soft_q

MODES = ("serd-tied", "serd-untied", "mdce-irl")
STEP_RULES = ("adaptive", "constant", "decaying")


@dataclass
class TrainConfig:
    mode: str = "serd-tied"
    step_rule: str = "adaptive"
    base_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_range: tuple = (-10.0, 10.0)
    max_steps: int = 2000
    grad_norm_tol: float = 1e-4
    restarts: int = 1
    seed: int = 0
    prior_count: float = DEFAULT_PRIOR_COUNT
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    grad_method: str = "auto"
    solver: str = "auto"
    include_terminal: bool = True
    dynamics_prior: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.step_rule not in STEP_RULES:
            raise InvalidArgumentError(f"step_rule must be one of {STEP_RULES}, got {self.step_rule!r}")
        if not self.base_rate > 0:
            raise InvalidArgumentError("base_rate must be positive")
        lo, hi = self.init_range
        if not lo <= hi:
            raise InvalidArgumentError("init_range must be an interval (lo <= hi)")
        if self.solver not in SOLVERS:
            raise InvalidArgumentError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.dynamics_prior < 0:
            raise InvalidArgumentError("dynamics_prior must be >= 0")
        if self.restarts < 1 or self.max_steps < 1:
            raise InvalidArgumentError("restarts and max_steps must be >= 1")


def step_size(config: TrainConfig, t: int) -> float:
    """Scalar step size at optimizer step ``t``.

    For the adaptive rule this is the base rate; the per-coordinate scaling is
    applied by :class:`AscentStep`.
    """
    if t < 0:
        raise InvalidArgumentError("t must be >= 0")
    if config.step_rule == "decaying":
        return config.base_rate / np.sqrt(1.0 + t)
    return config.base_rate


class AscentStep:
    """Turns gradients into parameter increments under the configured rule."""

    def __init__(self, config: TrainConfig, size: int):
        self.config = config
        self.t = 0
        self.m = np.zeros(size)
        self.v = np.zeros(size)

    def __call__(self, grad: np.ndarray) -> np.ndarray:
        cfg = self.config
        alpha = step_size(cfg, self.t)
        self.t += 1
        if cfg.step_rule != "adaptive":
            return alpha * grad
        self.m = cfg.beta1 * self.m + (1 - cfg.beta1) * grad
        self.v = cfg.beta2 * self.v + (1 - cfg.beta2) * grad * grad
        m_hat = self.m / (1 - cfg.beta1 ** self.t)
        v_hat = self.v / (1 - cfg.beta2 ** self.t)
        return alpha * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclass
class StepRecord:
    t: int
    log_likelihood: float
    grad_norm: float
    step_size: float
    wall_time: float


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    params: ParamVector | None = None
    best_step: int = -1
    best_log_likelihood: float = -np.inf
    restart: int = 0
    converged: bool = False
    restart_scores: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_csv(self, include_wall_time: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = ["step", "log_likelihood", "grad_norm", "step_size"]
        writer.writerow(cols + (["wall_time"] if include_wall_time else []))
        for r in self.records:
            row = [r.t, repr(r.log_likelihood), repr(r.grad_norm), repr(r.step_size)]
            writer.writerow(row + ([f"{r.wall_time:.6f}"] if include_wall_time else []))
        return buf.getvalue()


def dirichlet_log_prior(dyn: BoltzmannDynamics, prior_count: float):
    """Symmetric Dirichlet log-prior on every model and its energy gradient.

    Each model gets ``prior_count / K`` pseudo-observations per outcome slot,
    the same prior the m-estimator uses. Returns ``(log_prior, gradient)``
    with constants dropped.
    """
    p = dyn.model_probs()
    alpha = prior_count / dyn.n_outcomes
    with np.errstate(divide="ignore"):
        value = float(alpha * np.log(p).sum())
    return value, (alpha - prior_count * p).ravel()


def _initial_params(config: TrainConfig, d: int, energies: np.ndarray, rng) -> ParamVector:
    lo, hi = config.init_range
    theta_r = rng.uniform(lo, hi, size=d)
    e = energies.ravel().copy()
    if config.mode == "serd-untied":
        return ParamVector(theta_r, e, e.copy(), tied=False)
    return ParamVector(theta_r, e, tied=True)


def _run(mdp, demos, assignment, config, params, n_steps):
    layout = params.layout
    ascend = AscentStep(config, layout.size)
    trace = TrainTrace()
    q_prev = phi_prev = None
    start = time.perf_counter()
    frozen = np.zeros(layout.size, bool)
    if config.mode == "mdce-irl":
        frozen[layout.ta] = True
    best_vec = params.flatten()
    for t in range(config.max_steps):
        dyn_agent = BoltzmannDynamics(assignment, params.theta_ta)
        dyn_true = dyn_agent if params.tied else BoltzmannDynamics(assignment, params.theta_t)
        try:
            sol = solve_soft_q(mdp, params.theta_r, dyn_agent, config.solver, config.tol, config.max_iter,
                               q_prev)
            phi = q_gradient(mdp, sol, dyn_agent, params, config.grad_method, config.tol,
                             config.max_iter, phi_prev)
        except ConvergenceError as exc:
            raise TrainingError(str(exc), t, exc.residual) from exc
        report = likelihood_gradient(demos, phi, sol, dyn_true, params, mdp.start_dist,
                                     config.include_terminal)
        objective = report.log_likelihood
        grad = report.gradient
        if config.dynamics_prior > 0 and config.mode != "mdce-irl":
            blocks = [dyn_agent] if params.tied else [dyn_agent, dyn_true]
            for dyn, sl in zip(blocks, [layout.ta, layout.t]):
                lp, g = dirichlet_log_prior(dyn, config.dynamics_prior)
                objective += lp
                grad[sl] += g
        grad = grad / n_steps
        grad[frozen] = 0.0
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        trace.records.append(StepRecord(t, objective, gnorm, step_size(config, t),
                                        time.perf_counter() - start))
        if objective > trace.best_log_likelihood:
            trace.best_log_likelihood = objective
            trace.best_step = t
            best_vec = params.flatten()
        if gnorm <= config.grad_norm_tol:
            trace.converged = True
            break
        if t == config.max_steps - 1:
            break
        vec = params.flatten() + ascend(grad)
        params = ParamVector.unflatten(vec, layout)
        q_prev, phi_prev = sol.q, phi
    trace.params = ParamVector.unflatten(best_vec, layout)
    return trace


def train(mdp: TabularMdp, demos, config: TrainConfig, assignment: Assignment,
          initial_energies=None) -> tuple[ParamVector, TrainTrace]:
    """Maximize the demonstration log-likelihood by gradient ascent.

    Dynamics start from the m-estimate of the demonstrations (unobserved
    models fall back to ``initial_energies`` when given); reward weights start
    uniformly in ``config.init_range``. Each step re-solves the soft Q fixed
    point and the soft Q-gradient, then takes an ascent step along the
    per-demonstrated-step gradient. Among ``config.restarts`` runs the one
    with the highest likelihood wins, and within a run the best iterate is
    returned rather than the last.

    Raises
    ------
    TrainingError
        When an inner fixed-point solve does not converge.
    """
    if len(demos) == 0:
        raise InvalidArgumentError("train needs at least one demonstration")
    n_steps = sum(len(t) if config.include_terminal else len(t) - 1 for t in demos)
    n_steps = max(n_steps, 1)
    rng = np.random.default_rng(config.seed)
    dyn0 = m_estimate(demos, assignment, config.prior_count, initial_energies)
    best = None
    for k in range(config.restarts):
        params = _initial_params(config, mdp.n_features, dyn0.energies, rng)
        trace = _run(mdp, demos, assignment, config, params, n_steps)
        trace.restart = k
        scores = (best.restart_scores if best else []) + [trace.best_log_likelihood]
        if best is None or trace.best_log_likelihood > best.best_log_likelihood:
            best = trace
        best.restart_scores = scores
    return best.params, best
