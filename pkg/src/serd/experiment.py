"""Demo-size sweeps on the grid world: sample, fit, evaluate, transfer.

Every cell (estimator, demo size, seed) is independent. Demonstrations for a
seed are nested in the demo size, held-out sets are shared by all estimators
of a seed, and rows come out in a fixed order, so a plan and its seeds
determine the metrics CSV byte for byte.

CSV schema: ``task, metric, estimator, demo_count, seed, value`` with
``task`` in {train, transfer} and ``value`` written as ``repr(float)``
(``nan`` for cells whose fit failed).
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .dynamics import DEFAULT_PRIOR_COUNT, BoltzmannDynamics, m_estimate, save_params
from .errors import InvalidArgumentError, ParseError, SerdError
from .gridworld import REFERENCE_THETA_R, GridWorld, build, load_map
from .learner import MODES, TrainConfig, train
from .mdp import ParamVector
from .softq import SoftSolution, solve_soft_q
from .traj import DEFAULT_HORIZON, DemoSet, avg_kl_dynamics, avg_kl_policy, avg_loglik, sample

ESTIMATORS = MODES + ("m-estimate-only",)
TRAIN_METRICS = ("avg_loglik", "avg_kl_dynamics", "avg_kl_policy")
TRANSFER_METRICS = ("avg_loglik", "avg_kl_policy")
CSV_COLUMNS = ("task", "metric", "estimator", "demo_count", "seed", "value")

# Held-out and transfer demonstrations use seeds disjoint from training ones.
HELDOUT_SEED_OFFSET = 1_000_000
TRANSFER_SEED_OFFSET = 2_000_000


@dataclass
class ExperimentPlan:
    """One sweep over demo sizes, seeds and estimators.

    Map fields take a map file path or ``builtin:<name>``; ``transfer_map``
    may be ``None`` to skip the transfer task.
    """

    train_map: str = "builtin:train16"
    transfer_map: str | None = "builtin:transfer24"
    sizes: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64, 128])
    seeds: list = field(default_factory=lambda: list(range(20)))
    estimators: list = field(default_factory=lambda: ["serd-tied", "mdce-irl", "m-estimate-only"])
    heldout_count: int = 256
    out_dir: str | None = None
    max_steps: int = 300
    restarts: int = 3
    gamma: float = 0.99
    horizon: int = DEFAULT_HORIZON
    theta_r: list = field(default_factory=lambda: list(REFERENCE_THETA_R))
    forest_includes_stay: bool = True
    prior_count: float = DEFAULT_PRIOR_COUNT
    dynamics_prior: float = 1.0
    workers: int = 1
    save_params: bool = False

    def violations(self) -> list[str]:
        problems = []
        sizes = list(self.sizes)
        if not sizes:
            problems.append("sizes: need at least one demo-set size")
        if any(int(n) != n or n < 0 for n in sizes):
            problems.append("sizes: must be non-negative integers")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            problems.append("sizes: must be strictly increasing")
        if not list(self.seeds):
            problems.append("seeds: need at least one seed")
        if len(set(self.seeds)) != len(list(self.seeds)):
            problems.append("seeds: duplicates")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            problems.append(f"estimators: choose from {ESTIMATORS}, got {sorted(unknown) or 'none'}")
        if self.heldout_count < 1:
            problems.append("heldout_count: must be >= 1")
        if self.max_steps < 1 or self.restarts < 1 or self.workers < 1:
            problems.append("max_steps, restarts and workers must be >= 1")
        if not 0 <= self.gamma < 1:
            problems.append("gamma: must lie in [0, 1)")
        if self.horizon < 1:
            problems.append("horizon: must be >= 1")
        return problems

    def check(self) -> "ExperimentPlan":
        problems = self.violations()
        if problems:
            raise InvalidArgumentError("invalid plan: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentPlan":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ParseError(f"unknown plan fields: {sorted(extra)}")
        return cls(**doc)


def load_plan(path) -> ExperimentPlan:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: plan must be a JSON object")
    return ExperimentPlan.from_dict(doc)


def save_plan(path, plan: ExperimentPlan) -> None:
    Path(path).write_text(json.dumps(plan.to_dict(), indent=1) + "\n")


# -- environments and demonstrations -----------------------------------------


@dataclass
class Environment:
    world: GridWorld
    theta_r: np.ndarray
    solution: SoftSolution

    @property
    def mdp(self):
        return self.world.mdp


@lru_cache(maxsize=8)
def environment(map_path: str, gamma: float, forest_includes_stay: bool,
                theta_r: tuple) -> Environment:
    """Grid world of ``map_path`` with its true soft-optimal solution."""
    world = build(load_map(map_path), gamma, forest_includes_stay)
    theta_r = np.asarray(theta_r, dtype=np.float64)
    return Environment(world, theta_r, solve_soft_q(world.mdp, theta_r, world.dynamics))


def plan_environment(plan: ExperimentPlan, which: str = "train") -> Environment:
    path = plan.train_map if which == "train" else plan.transfer_map
    return environment(path, float(plan.gamma), bool(plan.forest_includes_stay),
                       tuple(float(x) for x in plan.theta_r))


def true_demos(env: Environment, n: int, seed: int, horizon: int = DEFAULT_HORIZON) -> DemoSet:
    """Demonstrations of the true model, ending on reaching the goal."""
    if n == 0:
        return DemoSet([], seed=seed, horizon=horizon)
    return sample(env.mdp, env.solution, env.world.dynamics, n, horizon,
                  stop_state=env.world.goal_state, seed=seed)


# -- estimators --------------------------------------------------------------


def fit(estimator: str, env: Environment, demos: DemoSet, plan: ExperimentPlan,
        seed: int) -> ParamVector:
    """Parameters estimated from ``demos`` by one of :data:`ESTIMATORS`.

    ``m-estimate-only`` has no reward model: it pairs the m-estimated dynamics
    with zero reward weights, i.e. a uniform policy.
    """
    if estimator == "m-estimate-only":
        dyn = m_estimate(demos, env.world.assignment, plan.prior_count)
        return ParamVector(np.zeros(env.mdp.n_features), dyn.energies.ravel(), tied=True)
    if estimator not in MODES:
        raise InvalidArgumentError(f"unknown estimator {estimator!r}")
    config = TrainConfig(mode=estimator, max_steps=plan.max_steps, restarts=plan.restarts,
                         seed=seed, prior_count=plan.prior_count,
                         dynamics_prior=plan.dynamics_prior)
    params, _ = train(env.mdp, demos, config, env.world.assignment)
    return params


def installed_dynamics(params: ParamVector, env: Environment):
    """Agent and true-dynamics estimates laid out on ``env``'s grid.

    Energies are per terrain/action model, so parameters trained on one map
    apply to any map with the same model set.
    """
    assignment = env.world.assignment
    agent = BoltzmannDynamics(assignment, params.theta_ta)
    true = agent if params.tied else BoltzmannDynamics(assignment, params.theta_t)
    return agent, true


def evaluate(params: ParamVector, env: Environment, heldout: DemoSet,
             metrics=TRAIN_METRICS) -> dict:
    """Metrics of ``params`` against the true model of ``env``."""
    agent, true = installed_dynamics(params, env)
    sol = solve_soft_q(env.mdp, params.theta_r, agent)
    out = {}
    for name in metrics:
        if name == "avg_loglik":
            out[name] = avg_loglik(heldout, sol, true, env.mdp.start_dist)
        elif name == "avg_kl_dynamics":
            out[name] = avg_kl_dynamics(env.world.dynamics, true)
        elif name == "avg_kl_policy":
            out[name] = avg_kl_policy(env.solution, sol)
        else:
            raise InvalidArgumentError(f"unknown metric {name!r}")
    return out


# -- sweep -------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    estimator: str
    size: int
    seed: int


def _cell_rows(plan: ExperimentPlan, cell: Cell):
    env = plan_environment(plan, "train")
    demos = true_demos(env, max(plan.sizes), cell.seed, plan.horizon).head(cell.size)
    try:
        params = fit(cell.estimator, env, demos, plan, cell.seed)
    except SerdError:
        params = None
    rows = []
    heldout = true_demos(env, plan.heldout_count, cell.seed + HELDOUT_SEED_OFFSET, plan.horizon)
    scores = evaluate(params, env, heldout) if params is not None else {}
    for metric in TRAIN_METRICS:
        rows.append(("train", metric, cell.estimator, cell.size, cell.seed, scores.get(metric, np.nan)))
    if plan.transfer_map:
        target = plan_environment(plan, "transfer")
        held_t = true_demos(target, plan.heldout_count, cell.seed + TRANSFER_SEED_OFFSET, plan.horizon)
        scores = evaluate(params, target, held_t, TRANSFER_METRICS) if params is not None else {}
        for metric in TRANSFER_METRICS:
            rows.append(("transfer", metric, cell.estimator, cell.size, cell.seed,
                         scores.get(metric, np.nan)))
    return rows, params


def _run_one(args):
    plan, cell = args
    return _cell_rows(plan, cell)


def cells(plan: ExperimentPlan) -> list[Cell]:
    return [Cell(e, int(n), int(s)) for e in plan.estimators for n in plan.sizes for s in plan.seeds]


def run_experiment(plan: ExperimentPlan, progress=None) -> list[tuple]:
    """Run every cell of ``plan`` and return the metric rows in CSV order.

    Writes ``metrics.csv`` (and per-cell parameter files when
    ``plan.save_params``) into ``plan.out_dir`` when it is set. ``progress``
    is called with ``(done, total)`` after each cell.
    """
    plan.check()
    todo = cells(plan)
    jobs = [(plan, c) for c in todo]
    if plan.workers > 1:
        with ProcessPoolExecutor(plan.workers) as pool:
            results = pool.map(_run_one, jobs)
            results = _collect(results, len(jobs), progress)
    else:
        results = _collect(map(_run_one, jobs), len(jobs), progress)
    rows = [r for cell_rows, _ in results for r in cell_rows]
    rows.sort(key=lambda r: (r[0] != "train", r[2], r[3], r[4], r[1]))
    if plan.out_dir:
        out = Path(plan.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(format_rows(rows))
        save_plan(out / "plan.json", plan)
        if plan.save_params:
            env = plan_environment(plan, "train")
            (out / "params").mkdir(exist_ok=True)
            for cell, (_, params) in zip(todo, results):
                if params is not None:
                    name = f"{cell.estimator}-n{cell.size}-s{cell.seed}.json"
                    save_params(out / "params" / name, params, env.world.assignment,
                                plan.gamma, include_assignment=False)
    return rows


def _collect(results, total, progress):
    out = []
    for i, res in enumerate(results, start=1):
        out.append(res)
        if progress is not None:
            progress(i, total)
    return out


def format_rows(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for task, metric, estimator, n, seed, value in rows:
        writer.writerow([task, metric, estimator, n, seed, repr(float(value))])
    return buf.getvalue()


def parse_rows(text: str) -> list[tuple]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != CSV_COLUMNS:
        raise ParseError(f"metrics CSV must have columns {CSV_COLUMNS}")
    return [(t, m, e, int(n), int(s), float(v)) for t, m, e, n, s, v in reader]


def mean_metric(rows, task: str, metric: str, estimator: str, size: int) -> float:
    """Seed average of one metric (NaN rows included, so failures show)."""
    vals = [r[5] for r in rows if r[:4] == (task, metric, estimator, size)]
    if not vals:
        raise InvalidArgumentError(f"no rows for {task}/{metric}/{estimator}/{size}")
    return float(np.mean(vals))
