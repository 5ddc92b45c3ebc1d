"""Time the compiled fixed-point kernels against the numpy fallback.

Runs soft Q-iteration and soft Q-gradient iteration on square grid worlds
under the reference parameters, checks that both backends return the same
tables, and prints one row per (kernel, map size).

Example
-------
    python3 benchmarks/bench_kernels.py --sizes 8,16,24 --repeat 3
"""
import argparse
import time

import numpy as np

from serd import kernels
from serd.grad import gradient_constant
from serd.gridworld import MapSpec, build, reference_params
from serd.mdp import reward_table
from serd.softq import solve_soft_q


def grid(size: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    spec = MapSpec(np.round(rng.random((size, size)), 3), goal=(size // 2, size // 2), starts=[(0, 0)])
    return build(spec)


def best_time(func, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = func()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench(size, repeat, tol, gamma):
    world = grid(size)
    mdp = world.mdp.with_discount(gamma)
    params = reference_params()
    prob = world.dynamics.slot_probs()
    r = np.ascontiguousarray(reward_table(mdp, params.theta_r))
    sol = solve_soft_q(mdp, params.theta_r, world.dynamics)
    b = gradient_constant(mdp, sol, world.dynamics, params.layout)
    pi = np.ascontiguousarray(sol.policy)
    rows = []
    for name, run in (
        ("soft_q", lambda be: _q(be, mdp, prob, r, tol)),
        ("soft_q_grad", lambda be: _phi(be, mdp, prob, pi, b, tol)),
    ):
        results = {be: best_time(lambda: run(be), repeat) for be in kernels.available_backends()}
        tables = [out[0] for _, out in results.values()]
        agree = max(float(np.max(np.abs(t - tables[0]))) for t in tables)
        rows.append((name, size, results, agree))
    return rows


def _q(backend, mdp, prob, r, tol):
    q = np.zeros_like(r)
    _, it = kernels.soft_q_solve(mdp.successors, prob, r, mdp.discount, q, tol, 10**6, backend)
    return q, it


def _phi(backend, mdp, prob, pi, b, tol):
    phi = np.zeros_like(b)
    _, it = kernels.grad_solve(mdp.successors, prob, pi, b, mdp.discount, phi, tol, 10**6, backend)
    return phi, it


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="8,16,24", help="comma-separated grid side lengths")
    parser.add_argument("--repeat", type=int, default=3, help="timing repeats (best is reported)")
    parser.add_argument("--tol", type=float, default=1e-9)
    parser.add_argument("--gamma", type=float, default=0.9,
                        help="discount; 0.99 is the reference but needs ~10x more sweeps")
    args = parser.parse_args(argv)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    head = f"{'kernel':<12} {'size':>5} {'sweeps':>7} " + " ".join(f"{b + ' [s]':>12}" for b in backends)
    if "cython" in backends:
        head += f" {'speedup':>8}"
    print(head + f" {'max diff':>10}")
    for size in (int(x) for x in args.sizes.split(",")):
        for name, n, results, agree in bench(size, args.repeat, args.tol, args.gamma):
            sweeps = next(iter(results.values()))[1][1]
            line = f"{name:<12} {n:>5} {sweeps:>7} " + " ".join(f"{results[b][0]:>12.4f}" for b in backends)
            if "cython" in backends:
                line += f" {results['python'][0] / results['cython'][0]:>7.1f}x"
            print(line + f" {agree:>10.1e}")


if __name__ == "__main__":
    main()
