"""Pure-numpy versions of the compiled fixed-point loops (same contract)."""
import numpy as np


def lse(q: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp with max subtraction."""
    m = q.max(axis=1)
    return m + np.log(np.exp(q - m[:, None]).sum(axis=1))


def soft_q_sweep(succ, prob, reward, gamma, q):
    v = lse(q)
    return reward + gamma * np.einsum("sak,sak->sa", prob, v[succ])


def grad_sweep(succ, prob, pi, b, gamma, phi):
    expect = np.einsum("sa,sai->si", pi, phi)
    return b + gamma * np.einsum("sak,saki->sai", prob, expect[succ])


def soft_q_solve(succ, prob, reward, gamma, q, tol, max_iter):
    res, it = np.inf, 0
    if q.size == 0:
        return 0.0, 0
    while it < max_iter:
        qn = soft_q_sweep(succ, prob, reward, gamma, q)
        res = float(np.max(np.abs(qn - q)))
        q[...] = qn
        it += 1
        if res <= tol:
            break
    return res, it


def grad_solve(succ, prob, pi, b, gamma, phi, tol, max_iter):
    res, it = np.inf, 0
    if phi.size == 0:
        return 0.0, 0
    while it < max_iter:
        phin = grad_sweep(succ, prob, pi, b, gamma, phi)
        res = float(np.max(np.abs(phin - phi)))
        phi[...] = phin
        it += 1
        if res <= tol:
            break
    return res, it
