"""Soft (log-sum-exp) Q-iteration and the induced Boltzmann policy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from ._fallback import lse, soft_q_sweep
from .errors import ConvergenceError, InvalidArgumentError
from .mdp import TabularMdp, reward_table

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 50_000
SOLVERS = ("auto", "sweep", "newton")
# Newton steps before falling back to plain sweeps.
NEWTON_MAX_STEPS = 100


@dataclass
class SoftSolution:
    q: np.ndarray
    v: np.ndarray
    policy: np.ndarray
    residual: float
    iterations: int


def slot_probs_of(mdp: TabularMdp, p_agent) -> np.ndarray:
    """Accept a dynamics object or a raw ``(S, A, K)`` slot-probability array."""
    prob = p_agent.slot_probs() if hasattr(p_agent, "slot_probs") else p_agent
    prob = np.ascontiguousarray(prob, dtype=np.float64)
    if prob.shape != mdp.successors.shape:
        raise InvalidArgumentError(
            f"transition probabilities have shape {prob.shape}, expected {mdp.successors.shape}"
        )
    return prob


def derive_policy(q) -> np.ndarray:
    """Boltzmann policy ``exp(q(s, a) - logsumexp_a q(s, .))``."""
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise InvalidArgumentError("Q-table contains non-finite entries")
    z = np.exp(q - q.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def soft_value(q) -> np.ndarray:
    return lse(np.asarray(q, dtype=np.float64))


def bellman_backup(mdp: TabularMdp, theta_r, p_agent, q) -> np.ndarray:
    """One application of the soft Q operator to ``q``."""
    prob = slot_probs_of(mdp, p_agent)
    return soft_q_sweep(mdp.successors, prob, reward_table(mdp, theta_r), mdp.discount,
                        np.asarray(q, dtype=np.float64))


def soft_q_iteration(mdp: TabularMdp, theta_r, p_agent, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER, warm_start=None,
                     backend: str | None = None) -> SoftSolution:
    """Iterate the soft Bellman operator to its unique fixed point.

    Starts from ``warm_start`` (or zeros) and stops once one synchronous sweep
    changes the table by at most ``tol`` in sup-norm.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` sweeps do not reach ``tol``.
    """
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    prob = slot_probs_of(mdp, p_agent)
    r = np.ascontiguousarray(reward_table(mdp, theta_r))
    if warm_start is None:
        q = np.zeros((mdp.n_states, mdp.n_actions))
    else:
        q = np.array(warm_start, dtype=np.float64, order="C")
        if q.shape != r.shape:
            raise InvalidArgumentError(f"warm start has shape {q.shape}, expected {r.shape}")
    residual, iterations = kernels.soft_q_solve(
        mdp.successors, prob, r, mdp.discount, q, tol, max_iter, backend=backend
    )
    if not residual <= tol:
        raise ConvergenceError("soft Q-iteration did not converge", residual, iterations)
    return SoftSolution(q=q, v=lse(q), policy=derive_policy(q),
                        residual=float(residual), iterations=int(iterations))


def state_transition_matrix(succ, prob, policy) -> sp.csc_matrix:
    """Sparse ``P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)``, duplicates summed."""
    S, A, K = succ.shape
    rows = np.broadcast_to(np.arange(S)[:, None, None], (S, A, K))
    vals = policy[:, :, None] * prob
    return sp.csc_matrix((vals.ravel(), (rows.ravel(), succ.ravel())), shape=(S, S))


def discounted_solver(mdp: TabularMdp, prob, policy):
    """LU factorization of ``I - gamma * P_pi`` (a callable solving for rhs)."""
    S = mdp.n_states
    system = sp.identity(S, format="csc") - mdp.discount * state_transition_matrix(
        mdp.successors, prob, policy)
    return splu(system).solve


def soft_policy_iteration(mdp: TabularMdp, theta_r, p_agent, tol: float = DEFAULT_TOL,
                          max_iter: int = DEFAULT_MAX_ITER, warm_start=None) -> SoftSolution:
    """Soft Q fixed point by soft policy iteration (Newton's method).

    Each step evaluates the current Boltzmann policy exactly through one
    sparse solve over states, then improves it. Convergence is monotone and
    locally quadratic, so a handful of steps reach ``tol``. The stopping rule
    and the reported residual are those of :func:`soft_q_iteration`: the
    sup-norm change of one soft Bellman backup. If Newton stalls the solve
    finishes with plain sweeps.
    """
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    prob = slot_probs_of(mdp, p_agent)
    r = np.ascontiguousarray(reward_table(mdp, theta_r))
    q = np.zeros_like(r) if warm_start is None else np.array(warm_start, dtype=np.float64)
    if q.shape != r.shape:
        raise InvalidArgumentError(f"warm start has shape {q.shape}, expected {r.shape}")
    if q.size == 0:
        return SoftSolution(q, np.zeros(mdp.n_states), q.copy(), 0.0, 0)
    residual, steps = np.inf, 0
    while steps < min(max_iter, NEWTON_MAX_STEPS):
        steps += 1
        v = lse(q)
        pi = np.exp(q - v[:, None])
        rhs = np.einsum("sa,sa->s", pi, r - (q - v[:, None]))
        v_pi = discounted_solver(mdp, prob, pi)(rhs)
        q_new = r + mdp.discount * np.einsum("sak,sak->sa", prob, v_pi[mdp.successors])
        after = soft_q_sweep(mdp.successors, prob, r, mdp.discount, q_new)
        residual = float(np.max(np.abs(after - q_new)))
        q = after
        if residual <= tol:
            break
    if not residual <= tol:
        q = np.ascontiguousarray(q)
        residual, extra = kernels.soft_q_solve(mdp.successors, prob, r, mdp.discount, q, tol,
                                               max(max_iter - steps, 1))
        steps += extra
        if not residual <= tol:
            raise ConvergenceError("soft policy iteration did not converge", residual, steps)
    return SoftSolution(q=q, v=lse(q), policy=derive_policy(q),
                        residual=float(residual), iterations=int(steps))


def solve_soft_q(mdp: TabularMdp, theta_r, p_agent, method: str = "auto",
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                 warm_start=None) -> SoftSolution:
    """Soft Q fixed point by plain sweeps or by Newton ("auto" picks Newton)."""
    if method not in SOLVERS:
        raise InvalidArgumentError(f"unknown solver {method!r}; use one of {SOLVERS}")
    if method == "sweep":
        return soft_q_iteration(mdp, theta_r, p_agent, tol, max_iter, warm_start)
    return soft_policy_iteration(mdp, theta_r, p_agent, tol, max_iter, warm_start)
