"""Demonstration sets, trajectory sampling and the evaluation metrics.

Metrics
-------
avg_loglik
    Mean per-trajectory log-likelihood of held-out demonstrations.
avg_kl_dynamics
    Mean KL(true || estimated) of the transition distributions.
avg_kl_policy
    Mean KL(true || estimated) of the action distributions, uniform over states.

All logarithms are natural (nats).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._demo_arrays import FlatDemos, flatten
from .dynamics import BoltzmannDynamics
from .errors import InvalidArgumentError, ParseError
from .grad import log_likelihood
from .mdp import TabularMdp

DEFAULT_HORIZON = 200


@dataclass(eq=False)
class DemoSet:
    """List of trajectories, each an ``(T, 2)`` integer array of (state, action)."""

    trajectories: list = field(default_factory=list)
    seed: int | None = None
    horizon: int | None = None
    mdp_hash: str | None = None

    def __post_init__(self):
        self.trajectories = [np.asarray(t, dtype=np.intp).reshape(-1, 2) for t in self.trajectories]
        self._flat = None

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    @property
    def count(self) -> int:
        return len(self.trajectories)

    @property
    def n_steps(self) -> int:
        return int(sum(len(t) for t in self.trajectories))

    def flat(self) -> FlatDemos:
        if self._flat is None:
            self._flat = flatten(self.trajectories)
        return self._flat

    def head(self, n: int) -> "DemoSet":
        """First ``n`` trajectories (sampled sets are nested in ``n``)."""
        return DemoSet(self.trajectories[:n], self.seed, self.horizon, self.mdp_hash)

    def violations(self, mdp: TabularMdp) -> list[str]:
        problems = []
        for i, t in enumerate(self.trajectories):
            if len(t) == 0:
                problems.append(f"trajectory {i}: empty")
                continue
            if t.min() < 0 or t[:, 0].max() >= mdp.n_states or t[:, 1].max() >= mdp.n_actions:
                problems.append(f"trajectory {i}: state or action out of range")
                continue
            for step in range(len(t) - 1):
                s, a = t[step]
                if t[step + 1, 0] not in mdp.successors[s, a]:
                    problems.append(f"trajectory {i}, step {step}: {s} -a{a}-> {t[step + 1, 0]} not a successor")
        return problems

    def __eq__(self, other):
        if not isinstance(other, DemoSet) or len(self) != len(other):
            return NotImplemented if not isinstance(other, DemoSet) else False
        return all(np.array_equal(x, y) for x, y in zip(self.trajectories, other.trajectories))


def _pick(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row of ``cum`` (rows are cumulative distributions)."""
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


def sample(mdp: TabularMdp, policy, dyn_true: BoltzmannDynamics, n: int,
           horizon: int = DEFAULT_HORIZON, stop_state: int | None = None,
           seed: int = 0) -> DemoSet:
    """Sample ``n`` trajectories from ``policy`` under ``dyn_true``.

    Each trajectory starts from ``mdp.start_dist`` and records at most
    ``horizon`` state-action pairs. Reaching ``stop_state`` ends the
    trajectory after that state's action has been recorded. Trajectory ``i``
    draws from its own stream spawned from ``seed``, so the first ``m``
    trajectories of a larger sample equal a sample of size ``m``.
    """
    if n < 1 or horizon < 1:
        raise InvalidArgumentError("need n >= 1 and horizon >= 1")
    policy = getattr(policy, "policy", policy)
    cum_start = np.cumsum(mdp.start_dist)
    cum_pi = np.cumsum(policy, axis=1)
    cum_p = np.cumsum(dyn_true.slot_probs(), axis=2)
    streams = np.random.SeedSequence(seed).spawn(n)
    draws = np.stack([np.random.default_rng(ss).random(2 * horizon + 1) for ss in streams])

    states = np.zeros((n, horizon), dtype=np.intp)
    actions = np.zeros((n, horizon), dtype=np.intp)
    length = np.zeros(n, dtype=np.intp)
    cur = _pick(np.broadcast_to(cum_start, (n, cum_start.size)), draws[:, 0])
    active = np.ones(n, bool)
    for t in range(horizon):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        s = cur[idx]
        a = _pick(cum_pi[s], draws[idx, 1 + 2 * t])
        states[idx, t] = s
        actions[idx, t] = a
        length[idx] = t + 1
        k = _pick(cum_p[s, a], draws[idx, 2 + 2 * t])
        cur[idx] = mdp.successors[s, a, k]
        if stop_state is not None:
            active[idx[s == stop_state]] = False
    trajectories = [np.stack([states[i, :length[i]], actions[i, :length[i]]], axis=1) for i in range(n)]
    return DemoSet(trajectories, seed=seed, horizon=horizon)


def avg_loglik(demos, policy, dyn: BoltzmannDynamics, start_dist=None,
               include_terminal: bool = True) -> float:
    """Held-out log-likelihood divided by the number of trajectories."""
    if len(demos) == 0:
        raise InvalidArgumentError("cannot average the log-likelihood of an empty demo set")
    report = log_likelihood(demos, policy, dyn, start_dist, include_terminal)
    return report.log_likelihood / len(demos)


def kl_rows(p, q) -> np.ndarray:
    """Row-wise KL(p || q); zero-probability ``p`` entries contribute nothing."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def merged_transition_rows(dyn: BoltzmannDynamics) -> np.ndarray:
    """Per-pair distributions over distinct successors, padded with zeros.

    Entry ``[s, a, k]`` holds the total probability of state
    ``successors[s, a, k]`` if slot ``k`` is that state's first slot, else 0.
    """
    succ = dyn.assignment.successors
    p = dyn.slot_probs()
    same = succ[:, :, :, None] == succ[:, :, None, :]
    K = succ.shape[2]
    earlier = np.tril(np.ones((K, K), bool), k=-1)
    first = ~np.any(same & earlier, axis=3)
    merged = np.einsum("sakj,saj->sak", same.astype(np.float64), p)
    return np.where(first, merged, 0.0)


def avg_kl_dynamics(true_dyn: BoltzmannDynamics, est_dyn: BoltzmannDynamics,
                    weighting: str = "pairs") -> float:
    """Mean KL(true || estimated) over state-action pairs or over models."""
    if true_dyn.assignment.model_of.shape != est_dyn.assignment.model_of.shape or not np.array_equal(
        true_dyn.assignment.successors, est_dyn.assignment.successors
    ):
        raise InvalidArgumentError("dynamics do not share the successor structure")
    if weighting == "pairs":
        return float(kl_rows(merged_transition_rows(true_dyn), merged_transition_rows(est_dyn)).mean())
    if weighting == "models":
        return float(kl_rows(true_dyn.model_probs(), est_dyn.model_probs()).mean())
    raise InvalidArgumentError(f"unknown weighting {weighting!r}; use 'pairs' or 'models'")


def avg_kl_policy(true_policy, est_policy) -> float:
    """Mean over states of KL(true || estimated) action distributions."""
    true_policy = getattr(true_policy, "policy", true_policy)
    est_policy = getattr(est_policy, "policy", est_policy)
    return float(kl_rows(true_policy, est_policy).mean())


# -- trajectory files ---------------------------------------------------------

_HEADER = re.compile(r"#\s*serd-demos\s*(.*)")


def format_demos(demos: DemoSet) -> str:
    header = (f"# serd-demos mdp={demos.mdp_hash or '-'} seed={demos.seed if demos.seed is not None else '-'}"
              f" horizon={demos.horizon if demos.horizon is not None else '-'} count={len(demos)}")
    lines = [header]
    for t in demos:
        lines.append(" ".join(f"{s}:{a}" for s, a in t))
    return "\n".join(lines) + "\n"


def save_demos(path, demos: DemoSet) -> None:
    Path(path).write_text(format_demos(demos))


def parse_demos(text: str) -> DemoSet:
    lines = text.splitlines()
    if not lines or not (m := _HEADER.match(lines[0])):
        raise ParseError("trajectory file must start with a '# serd-demos' header line")
    meta = dict(kv.split("=", 1) for kv in m.group(1).split() if "=" in kv)

    def opt_int(key):
        val = meta.get(key, "-")
        return None if val == "-" else int(val)

    trajectories = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            pairs = [tuple(int(x) for x in tok.split(":")) for tok in line.split()]
            if any(len(p) != 2 for p in pairs):
                raise ValueError
        except ValueError:
            raise ParseError(f"line {lineno}: expected whitespace-separated state:action tokens") from None
        trajectories.append(np.array(pairs, dtype=np.intp))
    try:
        demos = DemoSet(trajectories, seed=opt_int("seed"), horizon=opt_int("horizon"),
                        mdp_hash=None if meta.get("mdp", "-") == "-" else meta["mdp"])
    except ValueError:
        raise ParseError("malformed trajectory file header") from None
    count = opt_int("count")
    if count is not None and count != len(demos):
        raise ParseError(f"header announces {count} trajectories, file has {len(demos)}")
    return demos


def load_demos(path) -> DemoSet:
    return parse_demos(Path(path).read_text())
