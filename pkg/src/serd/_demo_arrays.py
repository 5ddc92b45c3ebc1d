"""Flat index arrays over a set of trajectories (shared by likelihood code)."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FlatDemos:
    n_traj: int
    starts: np.ndarray      # first state of every trajectory
    s: np.ndarray           # every recorded (s, a) pair
    a: np.ndarray
    traj: np.ndarray        # owning trajectory of each pair
    last: np.ndarray        # True for the final pair of its trajectory
    t_s: np.ndarray         # every transition s -a-> s2
    t_a: np.ndarray
    t_s2: np.ndarray
    t_traj: np.ndarray
    t_step: np.ndarray


def flatten(trajectories) -> FlatDemos:
    trajs = [np.asarray(t, dtype=np.intp).reshape(-1, 2) for t in trajectories]
    lengths = np.array([len(t) for t in trajs], dtype=np.intp)
    if len(trajs) == 0 or lengths.sum() == 0:
        empty = np.zeros(0, dtype=np.intp)
        return FlatDemos(len(trajs), empty, empty, empty, empty, np.zeros(0, bool),
                         empty, empty, empty, empty, empty)
    pairs = np.concatenate(trajs)
    traj = np.repeat(np.arange(len(trajs)), lengths)
    ends = np.cumsum(lengths) - 1
    last = np.zeros(len(pairs), bool)
    last[ends[lengths > 0]] = True
    src = np.flatnonzero(~last)
    step = src - np.repeat(np.cumsum(lengths) - lengths, lengths)[src]
    starts = np.array([t[0, 0] if len(t) else -1 for t in trajs], dtype=np.intp)
    return FlatDemos(
        n_traj=len(trajs), starts=starts, s=pairs[:, 0], a=pairs[:, 1], traj=traj, last=last,
        t_s=pairs[src, 0], t_a=pairs[src, 1], t_s2=pairs[src + 1, 0], t_traj=traj[src], t_step=step,
    )


def as_flat(demos) -> FlatDemos:
    if hasattr(demos, "flat"):
        return demos.flat()
    return flatten(demos)
