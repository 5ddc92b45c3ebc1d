import numpy as np
import pytest

from serd.dynamics import Assignment, BoltzmannDynamics
from serd.grad import log_likelihood
from serd.mdp import ParamVector, TabularMdp
from serd.softq import soft_q_iteration


class Problem:
    """Random MDP with one independent Boltzmann model per state-action pair."""

    def __init__(self, rng, n_states=5, n_actions=3, n_slots=3, n_features=2, gamma=0.9,
                 tied=True, scale=1.0):
        S, A, K = n_states, n_actions, min(n_slots, n_states)
        succ = np.stack([[rng.choice(S, K, replace=False) for _ in range(A)] for _ in range(S)])
        start = rng.random(S) + 0.1
        self.mdp = TabularMdp(rng.random((S, A, n_features)), gamma, start / start.sum(), succ)
        self.assignment = Assignment.per_pair(succ)
        n_dyn = self.assignment.n_params
        self.params = ParamVector(
            scale * rng.normal(size=n_features),
            rng.normal(size=n_dyn),
            None if tied else rng.normal(size=n_dyn),
            tied=tied,
        )

    def dynamics(self, params=None):
        params = params or self.params
        agent = BoltzmannDynamics(self.assignment, params.theta_ta)
        true = agent if params.tied else BoltzmannDynamics(self.assignment, params.theta_t)
        return agent, true

    def solve(self, params=None, tol=1e-12):
        params = params or self.params
        agent, _ = self.dynamics(params)
        return soft_q_iteration(self.mdp, params.theta_r, agent, tol=tol)

    def random_demos(self, rng, n_traj=3, length=6):
        demos = []
        succ = self.mdp.successors
        for _ in range(n_traj):
            s = rng.integers(self.mdp.n_states)
            traj = []
            for _ in range(length):
                a = rng.integers(self.mdp.n_actions)
                traj.append((s, a))
                s = succ[s, a, rng.integers(succ.shape[2])]
            demos.append(np.array(traj))
        return demos


@pytest.fixture
def make_problem():
    def factory(seed=0, **kw):
        return Problem(np.random.default_rng(seed), **kw)
    return factory


def central_difference(func, x, eps=1e-5):
    """Central finite differences of a scalar- or array-valued ``func``."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        cols.append((np.asarray(func(xp)) - np.asarray(func(xm))) / (2 * eps))
    return np.stack(cols, axis=-1)


def fd_log_likelihood_gradient(problem, demos, params, eps=1e-5, tol=1e-13):
    """Oracle: differentiate the log-likelihood by re-solving at theta +- eps."""
    layout = params.layout

    def ll(vec):
        p = ParamVector.unflatten(vec, layout)
        _, true = problem.dynamics(p)
        sol = problem.solve(p, tol=tol)
        return log_likelihood(demos, sol, true, problem.mdp.start_dist).log_likelihood

    return central_difference(ll, params.flatten(), eps)


def fd_q_gradient(problem, params, eps=1e-5, tol=1e-13):
    """Oracle: d Q / d theta by full re-solves, shape (S, A, N)."""
    layout = params.layout
    return central_difference(lambda v: problem.solve(ParamVector.unflatten(v, layout), tol=tol).q,
                              params.flatten(), eps)


def relative_error(approx, exact, floor=1e-6):
    approx, exact = np.asarray(approx), np.asarray(exact)
    return float(np.max(np.abs(approx - exact) / np.maximum(np.abs(exact), floor)))


def brute_soft_q(mdp, reward, slot_probs, sweeps):
    """Plain-loop soft Q-iteration, independent of the vectorized kernels."""
    import math
    S, A, K = mdp.successors.shape
    q = [[0.0] * A for _ in range(S)]
    for _ in range(sweeps):
        v = []
        for s in range(S):
            m = max(q[s])
            v.append(m + math.log(sum(math.exp(x - m) for x in q[s])))
        q = [[reward[s][a] + mdp.discount * sum(slot_probs[s][a][k] * v[mdp.successors[s, a, k]]
                                                for k in range(K))
              for a in range(A)] for s in range(S)]
    return np.array(q)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
