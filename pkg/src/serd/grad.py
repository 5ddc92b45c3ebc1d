"""Soft Q-gradients, policy log-gradients and the demonstration log-likelihood.

``phi[s, a, i]`` is the derivative of the converged soft Q-value ``Q(s, a)``
with respect to flat parameter ``i``. It is the fixed point of a linear
operator ``U`` that is a gamma-contraction, so it can be computed either by
iterating ``U`` or by one sparse factorization of ``I - gamma * M`` with
``M[(s, a), (s', a')] = P(s' | s, a) * pi(a' | s')``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from ._demo_arrays import as_flat
from ._fallback import grad_sweep
from .dynamics import BoltzmannDynamics, slot_match
from .errors import ConvergenceError, DemoDataError, InvalidArgumentError
from .mdp import ParamLayout, ParamVector, TabularMdp
from .softq import DEFAULT_MAX_ITER, DEFAULT_TOL, SoftSolution, discounted_solver

# Above this many states the iterative solver is the default.
DIRECT_SOLVE_MAX_STATES = 20_000


@dataclass
class GradTensor:
    phi: np.ndarray
    residual: float
    iterations: int
    layout: ParamLayout


@dataclass
class LikelihoodReport:
    log_likelihood: float
    gradient: np.ndarray | None
    per_trajectory: np.ndarray
    start_term: float = 0.0
    n_steps: int = 0
    extra: dict = field(default_factory=dict)


def gradient_constant(mdp: TabularMdp, sol: SoftSolution, dyn: BoltzmannDynamics,
                      layout: ParamLayout) -> np.ndarray:
    """Parameter-dependent constant part of ``U``.

    Reward weights contribute ``f_i(s, a)``; agent-dynamics energies contribute
    ``gamma * sum_s' dP(s'|s,a)/de * V(s')``; true-dynamics energies contribute
    nothing.
    """
    S, A, K = mdp.successors.shape
    if dyn.n_models * dyn.n_outcomes != layout.n_dynamics:
        raise InvalidArgumentError("dynamics model does not match the parameter layout")
    b = np.zeros((S, A, layout.size))
    b[:, :, layout.r] = mdp.features
    p = dyn.slot_probs()
    vs = sol.v[mdp.successors]
    dv = vs - np.einsum("sak,sak->sa", p, vs)[:, :, None]
    term = mdp.discount * p * dv
    cols = layout.ta.start + dyn.assignment.model_of[:, :, None] * K + np.arange(K)
    si, ai = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
    b[si[:, :, None], ai[:, :, None], cols] = term
    return b


def gradient_operator(mdp: TabularMdp, sol: SoftSolution, dyn: BoltzmannDynamics,
                      params: ParamVector, phi) -> np.ndarray:
    """One application of the soft Q-gradient operator ``U`` to ``phi``."""
    b = gradient_constant(mdp, sol, dyn, params.layout)
    return grad_sweep(mdp.successors, dyn.slot_probs(), sol.policy, b, mdp.discount,
                      np.asarray(phi, dtype=np.float64))


def soft_q_gradient(mdp: TabularMdp, sol: SoftSolution, dyn: BoltzmannDynamics,
                    params: ParamVector, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER, warm_start=None,
                    backend: str | None = None) -> GradTensor:
    """Soft Q-gradient by fixed-point iteration of ``U``.

    ``dyn`` must be the agent dynamics that produced ``sol``.
    """
    layout = params.layout
    b = gradient_constant(mdp, sol, dyn, layout)
    if warm_start is None:
        phi = np.zeros_like(b)
    else:
        phi = np.array(getattr(warm_start, "phi", warm_start), dtype=np.float64, order="C")
        if phi.shape != b.shape:
            raise InvalidArgumentError(f"warm start has shape {phi.shape}, expected {b.shape}")
    residual, iterations = kernels.grad_solve(
        mdp.successors, dyn.slot_probs(), np.ascontiguousarray(sol.policy), b,
        mdp.discount, phi, tol, max_iter, backend=backend,
    )
    if not residual <= tol:
        raise ConvergenceError("soft Q-gradient iteration did not converge", residual, iterations)
    return GradTensor(phi, float(residual), int(iterations), layout)


def transition_policy_matrix(mdp: TabularMdp, sol: SoftSolution, dyn: BoltzmannDynamics):
    """Sparse ``M`` with ``M[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')``."""
    S, A, K = mdp.successors.shape
    p = dyn.slot_probs()
    rows = np.broadcast_to(np.arange(S * A).reshape(S, A, 1, 1), (S, A, K, A))
    nxt = mdp.successors[:, :, :, None]
    cols = nxt * A + np.arange(A)
    vals = p[:, :, :, None] * sol.policy[mdp.successors]
    return sp.csc_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(S * A, S * A))


def soft_q_gradient_direct(mdp: TabularMdp, sol: SoftSolution, dyn: BoltzmannDynamics,
                           params: ParamVector) -> GradTensor:
    """Soft Q-gradient from one sparse LU factorization.

    Writing ``W(s) = sum_a pi(a|s) phi(s, a)`` turns the fixed point into
    ``(I - gamma P_pi) W = sum_a pi b`` over states only, after which
    ``phi = b + gamma E_P[W(s')]``. The factorization is shared by all
    right-hand sides. The returned residual is the sup-norm of
    ``U(phi) - phi``.
    """
    layout = params.layout
    b = gradient_constant(mdp, sol, dyn, layout)
    p = dyn.slot_probs()
    solve = discounted_solver(mdp, p, sol.policy)
    w = solve(np.einsum("sa,sai->si", sol.policy, b))
    phi = b + mdp.discount * np.einsum("sak,saki->sai", p, w[mdp.successors])
    after = grad_sweep(mdp.successors, p, sol.policy, b, mdp.discount, phi)
    residual = float(np.max(np.abs(after - phi))) if phi.size else 0.0
    return GradTensor(np.ascontiguousarray(phi), residual, 0, layout)


def q_gradient(mdp, sol, dyn, params, method: str = "auto", tol: float = DEFAULT_TOL,
               max_iter: int = DEFAULT_MAX_ITER, warm_start=None) -> GradTensor:
    """Dispatch between the direct and iterative solvers by problem size."""
    if method == "auto":
        method = "direct" if mdp.n_states <= DIRECT_SOLVE_MAX_STATES else "iterative"
    if method == "direct":
        return soft_q_gradient_direct(mdp, sol, dyn, params)
    if method == "iterative":
        return soft_q_gradient(mdp, sol, dyn, params, tol, max_iter, warm_start)
    raise InvalidArgumentError(f"unknown gradient method {method!r}")


def policy_log_gradient(phi, sol: SoftSolution, s: int, a: int) -> np.ndarray:
    """Gradient of ``log pi(a | s)``: ``phi[s, a] - E_pi[phi[s, .]]``."""
    phi = getattr(phi, "phi", phi)
    return phi[s, a] - sol.policy[s] @ phi[s]


# -- likelihood ---------------------------------------------------------------


def _observed_transition_probs(flat, dyn_true: BoltzmannDynamics):
    succ = dyn_true.assignment.successors
    match = slot_match(succ, flat.t_s, flat.t_a, flat.t_s2)
    outside = ~match.any(axis=1)
    if outside.any():
        j = int(np.flatnonzero(outside)[0])
        raise DemoDataError(
            f"transition {flat.t_s[j]} -a{flat.t_a[j]}-> {flat.t_s2[j]} is outside the successor set",
            trajectory=int(flat.t_traj[j]), step=int(flat.t_step[j]),
        )
    p = dyn_true.slot_probs()[flat.t_s, flat.t_a]
    prob = (p * match).sum(axis=1)
    if np.any(prob <= 0):
        j = int(np.flatnonzero(prob <= 0)[0])
        raise DemoDataError("observed transition has zero probability under the dynamics",
                            trajectory=int(flat.t_traj[j]), step=int(flat.t_step[j]))
    return match, p, prob


def _policy_mask(flat, include_terminal: bool) -> np.ndarray:
    return np.ones_like(flat.last) if include_terminal else ~flat.last


def log_likelihood(demos, sol, dyn_true: BoltzmannDynamics, start_dist=None,
                   include_terminal: bool = True) -> LikelihoodReport:
    """Log-probability of the demonstrations under policy and true dynamics.

    Every recorded ``(s, a)`` contributes ``log pi(a|s)`` (the final pair of a
    trajectory only when ``include_terminal``), every recorded transition
    ``log P(s'|s, a)``, and every trajectory ``log P(s_0)`` when ``start_dist``
    is given. ``sol`` may be a :class:`SoftSolution` or a bare policy table.
    """
    flat = as_flat(demos)
    if flat.n_traj == 0:
        return LikelihoodReport(0.0, None, np.zeros(0))
    keep = _policy_mask(flat, include_terminal)
    policy = getattr(sol, "policy", sol)
    with np.errstate(divide="ignore"):
        log_pi = np.log(policy[flat.s, flat.a])
    per = np.bincount(flat.traj[keep], weights=log_pi[keep], minlength=flat.n_traj)
    if len(flat.t_s):
        _, _, prob = _observed_transition_probs(flat, dyn_true)
        per += np.bincount(flat.t_traj, weights=np.log(prob), minlength=flat.n_traj)
    start_term = 0.0
    if start_dist is not None:
        with np.errstate(divide="ignore"):
            start_term = float(np.log(np.asarray(start_dist)[flat.starts]).sum())
    return LikelihoodReport(float(per.sum() + start_term), None, per, start_term, int(keep.sum()))


def likelihood_gradient(demos, phi, sol: SoftSolution, dyn_true: BoltzmannDynamics,
                        params: ParamVector, start_dist=None,
                        include_terminal: bool = True) -> LikelihoodReport:
    """Log-likelihood together with its gradient w.r.t. the flat parameters.

    The policy part is ``sum phi[s, a] - E_pi[phi[s, .]]`` over recorded pairs;
    the transition part ``d log P(s'|s,a) / d e`` lands in the true-dynamics
    block (the shared block when tied).
    """
    report = log_likelihood(demos, sol, dyn_true, start_dist, include_terminal)
    layout = params.layout
    grad = np.zeros(layout.size)
    flat = as_flat(demos)
    if flat.n_traj == 0:
        report.gradient = grad
        return report
    phi = getattr(phi, "phi", phi)
    S, A = sol.policy.shape
    keep = _policy_mask(flat, include_terminal)
    counts = np.zeros((S, A))
    np.add.at(counts, (flat.s[keep], flat.a[keep]), 1.0)
    weights = counts - counts.sum(axis=1, keepdims=True) * sol.policy
    grad += np.einsum("sa,sai->i", weights, phi)
    if len(flat.t_s):
        match, p, prob = _observed_transition_probs(flat, dyn_true)
        dlog = match * p / prob[:, None] - p
        K = dyn_true.n_outcomes
        dyn_grad = np.zeros((dyn_true.n_models, K))
        np.add.at(dyn_grad, dyn_true.assignment.model_of[flat.t_s, flat.t_a], dlog)
        grad[layout.t] += dyn_grad.ravel()
    report.gradient = grad
    return report
