"""Command-line interface: ``serd <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure (no convergence, training failure),
2 input error (bad arguments, unreadable or malformed files).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .dynamics import Assignment, BoltzmannDynamics, load_params, m_estimate, save_params
from .errors import (ConvergenceError, DemoDataError, InvalidArgumentError, ParseError,
                     SerdError, TrainingError)
from .gridworld import build, load_map, reference_params
from .learner import MODES, TrainConfig, train
from .mdp import ParamVector, load_mdp, mdp_hash
from .softq import DEFAULT_TOL, solve_soft_q
from .traj import (DEFAULT_HORIZON, avg_kl_dynamics, avg_kl_policy, avg_loglik, load_demos,
                   sample, save_demos)

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad command-line input detected after argument parsing."""


# -- argument helpers --------------------------------------------------------


def int_list(text: str) -> list[int]:
    """Parse ``"1,2,4"`` or ranges like ``"0-19"`` (inclusive)."""
    out = []
    try:
        for part in filter(None, (x.strip() for x in text.split(","))):
            lo, sep, hi = part.partition("-")
            out.extend(range(int(lo), int(hi) + 1) if sep else [int(part)])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers or ranges, got {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("empty integer list")
    return out


class Problem:
    """MDP plus the dynamics assignment and true dynamics, if known."""

    def __init__(self, mdp, assignment, true_dynamics=None, goal_state=None):
        self.mdp = mdp
        self.assignment = assignment
        self.true_dynamics = true_dynamics
        self.goal_state = goal_state


def load_problem(args, param_file=None) -> Problem:
    """Grid world from ``--map`` (map text or ``builtin:<name>``), or an MDP JSON file.

    A JSON MDP has no built-in dynamics; the model assignment then comes from
    the parameter file.
    """
    path = args.map
    if path.endswith(".json"):
        mdp = load_mdp(path)
        if param_file is None or param_file.assignment is None:
            raise InputError("an MDP JSON file needs --params with an embedded assignment")
        if param_file.assignment.successors.shape != mdp.successors.shape or not np.array_equal(
                param_file.assignment.successors, mdp.successors):
            raise InputError("parameter assignment does not match the MDP successor sets")
        if param_file.discount is not None:
            mdp = mdp.with_discount(param_file.discount)
        return Problem(mdp, param_file.assignment)
    world = build(load_map(path), args.gamma, args.forest_includes_stay)
    return Problem(world.mdp, world.assignment, world.dynamics, world.goal_state)


def problem_params(args, problem: Problem, param_file) -> ParamVector:
    if param_file is not None:
        if param_file.params.theta_ta.size != problem.assignment.n_params:
            raise InputError("parameter file does not fit this environment's dynamics models")
        return param_file.params
    if problem.true_dynamics is None:
        raise InputError("--params is required for this environment")
    return reference_params(args.forest_includes_stay)


def dynamics_of(problem: Problem, params: ParamVector):
    agent = BoltzmannDynamics(problem.assignment, params.theta_ta)
    true = agent if params.tied else BoltzmannDynamics(problem.assignment, params.theta_t)
    return agent, true


def _maybe_params(args):
    return load_params(args.params) if getattr(args, "params", None) else None


def _write_table(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands -------------------------------------------------------------


def cmd_solve(args) -> int:
    pf = _maybe_params(args)
    problem = load_problem(args, pf)
    params = problem_params(args, problem, pf)
    agent, _ = dynamics_of(problem, params)
    sol = solve_soft_q(problem.mdp, params.theta_r, agent, tol=args.tol, max_iter=args.max_steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    A = problem.mdp.n_actions
    head = ["state"] + [f"a{a}" for a in range(A)]
    _write_table(out / "q.csv", head, [[s] + [repr(float(x)) for x in row] for s, row in enumerate(sol.q)])
    _write_table(out / "v.csv", ["state", "v"], [[s, repr(float(x))] for s, x in enumerate(sol.v)])
    _write_table(out / "policy.csv", head,
                 [[s] + [repr(float(x)) for x in row] for s, row in enumerate(sol.policy)])
    written = np.loadtxt(out / "policy.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1:]
    if not np.allclose(written.sum(axis=1), 1.0, atol=1e-9):
        print("error: written policy rows do not sum to 1", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"solved {problem.mdp.n_states} states in {sol.iterations} iterations "
          f"(residual {sol.residual:.2e}) -> {out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    pf = _maybe_params(args)
    problem = load_problem(args, pf)
    params = problem_params(args, problem, pf)
    agent, true = dynamics_of(problem, params)
    sol = solve_soft_q(problem.mdp, params.theta_r, agent, tol=args.tol)
    stop = problem.goal_state if args.stop_at_goal else None
    demos = sample(problem.mdp, sol, true, args.count, args.horizon, stop, args.seed)
    demos.mdp_hash = mdp_hash(problem.mdp)
    save_demos(args.out, demos)
    print(f"wrote {len(demos)} trajectories ({demos.n_steps} steps) -> {args.out}")
    return EXIT_OK


def _check_demos(demos, problem):
    problems = demos.violations(problem.mdp)
    if problems:
        raise InputError("demonstrations do not fit the environment: " + "; ".join(problems[:3]))
    if demos.mdp_hash and demos.mdp_hash != mdp_hash(problem.mdp):
        print("warning: demonstrations were sampled on a different MDP", file=sys.stderr)


def cmd_estimate_dynamics(args) -> int:
    problem = load_problem(args, _maybe_params(args))
    demos = load_demos(args.demos)
    _check_demos(demos, problem)
    dyn = m_estimate(demos, problem.assignment, args.prior_count)
    params = ParamVector(np.zeros(problem.mdp.n_features), dyn.energies.ravel(), tied=True)
    save_params(args.out, params, problem.assignment, problem.mdp.discount,
                include_assignment=args.map.endswith(".json"))
    print(f"m-estimate from {len(demos)} trajectories -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    pf = _maybe_params(args)
    problem = load_problem(args, pf)
    demos = load_demos(args.demos)
    _check_demos(demos, problem)
    mode = args.mode
    if args.tied is False and mode == "serd-tied":
        mode = "serd-untied"
    elif args.tied is True and mode == "serd-untied":
        mode = "serd-tied"
    config = TrainConfig(mode=mode, max_steps=args.max_steps, restarts=args.restarts,
                         seed=args.seed, tol=args.tol, prior_count=args.prior_count,
                         dynamics_prior=args.dynamics_prior, base_rate=args.rate)
    params, trace = train(problem.mdp, demos, config, problem.assignment)
    save_params(args.out, params, problem.assignment, problem.mdp.discount,
                include_assignment=args.map.endswith(".json"))
    if args.trace:
        Path(args.trace).write_text(trace.to_csv(include_wall_time=args.wall_time))
    state = "converged" if trace.converged else "step limit"
    print(f"{mode}: objective {trace.best_log_likelihood:.4f} at step {trace.best_step} "
          f"({state}); theta_r = {np.array2string(params.theta_r, precision=4)} -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pf = load_params(args.params)
    problem = load_problem(args, pf)
    params = problem_params(args, problem, pf)
    agent, true = dynamics_of(problem, params)
    sol = solve_soft_q(problem.mdp, params.theta_r, agent, tol=args.tol)
    rows = []
    if args.demos:
        demos = load_demos(args.demos)
        _check_demos(demos, problem)
        rows.append(("avg_loglik", avg_loglik(demos, sol, true, problem.mdp.start_dist)))
    if problem.true_dynamics is not None:
        ref = reference_params(args.forest_includes_stay)
        ref_sol = solve_soft_q(problem.mdp, ref.theta_r, problem.true_dynamics, tol=args.tol)
        rows.append(("avg_kl_dynamics", avg_kl_dynamics(problem.true_dynamics, true)))
        rows.append(("avg_kl_policy", avg_kl_policy(ref_sol, sol)))
    text = "metric,value\n" + "".join(f"{m},{v!r}\n" for m, v in rows)
    _emit(text, args.out)
    return EXIT_OK


def _plan_from_args(args) -> ex.ExperimentPlan:
    plan = ex.load_plan(args.plan) if args.plan else ex.ExperimentPlan()
    overrides = {
        "train_map": args.map, "transfer_map": args.transfer_map, "sizes": args.sizes,
        "seeds": args.seeds, "max_steps": args.max_steps, "out_dir": args.out,
        "estimators": args.estimators, "workers": args.workers,
        "forest_includes_stay": args.forest_includes_stay, "restarts": args.restarts,
        "heldout_count": args.heldout, "gamma": args.gamma,
    }
    for key, val in overrides.items():
        if val is not None:
            setattr(plan, key, val)
    if args.no_transfer:
        plan.transfer_map = None
    return plan.check()


def cmd_experiment(args) -> int:
    plan = _plan_from_args(args)
    if not plan.out_dir:
        raise InputError("--out (or out_dir in the plan) is required")

    def progress(done, total):
        if not args.quiet:
            print(f"\r{done}/{total} cells", end="" if done < total else "\n", file=sys.stderr)

    rows = ex.run_experiment(plan, progress)
    failed = sum(1 for r in rows if np.isnan(r[5]))
    print(f"{len(rows)} rows -> {Path(plan.out_dir) / 'metrics.csv'}"
          + (f" ({failed} NaN from failed cells)" if failed else ""))
    return EXIT_OK


def cmd_transfer(args) -> int:
    pf = load_params(args.params)
    spec = load_map(args.map)
    world = build(spec, pf.discount if pf.discount is not None else args.gamma,
                  args.forest_includes_stay)
    if tuple(pf.model_names) != tuple(world.assignment.model_names):
        raise InputError("parameter models do not match the grid-world terrain/action models")
    ref = reference_params(args.forest_includes_stay)
    env = ex.Environment(world, ref.theta_r, solve_soft_q(world.mdp, ref.theta_r, world.dynamics))
    held = ex.true_demos(env, args.count, args.seed, args.horizon)
    scores = ex.evaluate(pf.params, env, held, ex.TRANSFER_METRICS)
    text = "metric,value\n" + "".join(f"{m},{v!r}\n" for m, v in scores.items())
    _emit(text, args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _env_flags(p, need_map=True, stay_default=True):
    p.add_argument("--map", required=need_map,
                   help="map file, builtin:<name>, or an MDP .json file")
    p.add_argument("--gamma", type=float, default=0.99, help="discount for grid worlds")
    p.add_argument("--forest-includes-stay", action=argparse.BooleanOptionalAction, default=stay_default,
                   help="forest failures may also land on the current cell")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="serd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="soft Q-iteration; writes q.csv, v.csv, policy.csv")
    _env_flags(p)
    p.add_argument("--params", help="parameter file (default: reference parameters)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-steps", type=int, default=50_000, help="iteration cap")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sample", help="sample demonstrations from a model")
    _env_flags(p)
    p.add_argument("--params")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--horizon", type=int, default=DEFAULT_HORIZON)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--stop-at-goal", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("estimate-dynamics", help="m-estimate the dynamics from demonstrations")
    _env_flags(p)
    p.add_argument("--params", help="parameter file carrying the assignment (JSON MDPs only)")
    p.add_argument("--demos", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prior-count", type=float, default=5.0)
    p.set_defaults(func=cmd_estimate_dynamics)

    p = sub.add_parser("train", help="fit rewards and dynamics to demonstrations")
    _env_flags(p)
    p.add_argument("--params", help="parameter file carrying the assignment (JSON MDPs only)")
    p.add_argument("--demos", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=MODES, default="serd-tied")
    tie = p.add_mutually_exclusive_group()
    tie.add_argument("--tie", dest="tied", action="store_true", default=None,
                     help="share agent and true dynamics (serd modes)")
    tie.add_argument("--untie", dest="tied", action="store_false",
                     help="separate agent and true dynamics (serd modes)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=2000)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--rate", type=float, default=0.05, help="base step size")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--prior-count", type=float, default=5.0, help="m-estimator pseudo-counts")
    p.add_argument("--dynamics-prior", type=float, default=1.0,
                   help="Dirichlet pseudo-counts per dynamics model in the objective")
    p.add_argument("--trace", help="write the per-step trace CSV here")
    p.add_argument("--wall-time", action="store_true", help="include wall time in the trace")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out log-likelihood and KL metrics")
    _env_flags(p)
    p.add_argument("--params", required=True)
    p.add_argument("--demos", help="held-out demonstrations")
    p.add_argument("--out", help="metrics CSV (default: stdout)")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="demo-size sweep; writes metrics.csv")
    _env_flags(p, need_map=False, stay_default=None)
    p.add_argument("--plan", help="experiment plan JSON")
    p.add_argument("--transfer-map")
    p.add_argument("--no-transfer", action="store_true")
    p.add_argument("--sizes", type=int_list)
    p.add_argument("--seeds", type=int_list)
    p.add_argument("--estimators", type=lambda s: s.split(","))
    p.add_argument("--heldout", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_experiment, gamma=None)

    p = sub.add_parser("transfer", help="evaluate trained parameters on another map")
    _env_flags(p)
    p.add_argument("--params", required=True)
    p.add_argument("--count", type=int, default=256, help="held-out transfer demonstrations")
    p.add_argument("--horizon", type=int, default=DEFAULT_HORIZON)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="metrics CSV (default: stdout)")
    p.set_defaults(func=cmd_transfer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, InvalidArgumentError, ParseError, DemoDataError, FileNotFoundError,
            IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"serd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, TrainingError, SerdError, OSError) as exc:
        print(f"serd {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
