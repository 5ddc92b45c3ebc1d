"""Tabular MDP skeleton, reward features and the parameter-vector layout.

Transitions are stored sparsely: every state-action pair owns a fixed number
``K`` of successor *slots* and ``successors[s, a, k]`` is the state reached
through slot ``k``. Slots may point at the same state (grid cells on a
border clamp off-grid moves onto themselves); probability mass of such slots
simply adds up.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ParseError


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Environment without reward weights and without dynamics parameters.

    Parameters
    ----------
    features : ndarray (n_states, n_actions, d)
        Reward features ``f(s, a)``.
    discount : float
        Discount factor in ``[0, 1)``.
    start_dist : ndarray (n_states,)
        Start-state distribution.
    successors : ndarray of int (n_states, n_actions, K)
        Successor state for every transition slot.
    """

    features: np.ndarray
    discount: float
    start_dist: np.ndarray
    successors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", np.ascontiguousarray(self.features, dtype=np.float64))
        object.__setattr__(self, "start_dist", np.ascontiguousarray(self.start_dist, dtype=np.float64))
        object.__setattr__(self, "successors", np.ascontiguousarray(self.successors, dtype=np.intp))
        object.__setattr__(self, "discount", float(self.discount))
        for arr in (self.features, self.start_dist, self.successors):
            arr.setflags(write=False)
        if self.features.ndim != 3:
            raise InvalidArgumentError("features must have shape (n_states, n_actions, d)")
        if self.successors.ndim != 3:
            raise InvalidArgumentError("successors must have shape (n_states, n_actions, K)")

    @property
    def n_states(self) -> int:
        return self.features.shape[0]

    @property
    def n_actions(self) -> int:
        return self.features.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[2]

    @property
    def n_slots(self) -> int:
        return self.successors.shape[2]

    def successor_set(self, s: int, a: int) -> list[int]:
        """Distinct states reachable from ``(s, a)``, in slot order."""
        return list(dict.fromkeys(int(x) for x in self.successors[s, a]))

    def with_discount(self, discount: float) -> "TabularMdp":
        return TabularMdp(self.features, discount, self.start_dist, self.successors)


def validate(mdp: TabularMdp) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    S, A = mdp.n_states, mdp.n_actions
    if S < 1:
        problems.append("n_states: must be positive")
    if A < 1:
        problems.append("n_actions: must be positive")
    if not 0.0 <= mdp.discount < 1.0:
        problems.append(f"discount: {mdp.discount} outside [0, 1)")
    if mdp.start_dist.shape != (S,):
        problems.append(f"start_dist: shape {mdp.start_dist.shape} != ({S},)")
    else:
        neg = np.flatnonzero(~(mdp.start_dist >= 0))
        for s in neg:
            problems.append(f"start_dist[{s}]: negative or non-finite ({mdp.start_dist[s]})")
        total = mdp.start_dist.sum()
        if abs(total - 1.0) > 1e-12:
            problems.append(f"start_dist: sums to {total!r}, not 1")
    if not np.all(np.isfinite(mdp.features)):
        bad = np.argwhere(~np.isfinite(mdp.features))[0]
        problems.append(f"features[{bad[0]}, {bad[1]}, {bad[2]}]: non-finite")
    if mdp.successors.shape[:2] != (S, A):
        problems.append(f"successors: shape {mdp.successors.shape[:2]} != ({S}, {A})")
    elif mdp.n_slots < 1:
        problems.append("successors: empty successor set for every (s, a)")
    else:
        bad = np.argwhere((mdp.successors < 0) | (mdp.successors >= S))
        for s, a, k in bad[:20]:
            problems.append(f"successors[{s}, {a}, {k}]: state {mdp.successors[s, a, k]} out of range")
    return problems


def reward(mdp: TabularMdp, theta_r, s: int, a: int) -> float:
    """Linear reward ``theta_r . f(s, a)``."""
    theta_r = np.asarray(theta_r, dtype=np.float64)
    if theta_r.shape != (mdp.n_features,):
        raise InvalidArgumentError(
            f"theta_r has length {theta_r.size}, expected {mdp.n_features}"
        )
    return float(mdp.features[s, a] @ theta_r)


def reward_table(mdp: TabularMdp, theta_r) -> np.ndarray:
    theta_r = np.asarray(theta_r, dtype=np.float64)
    if theta_r.shape != (mdp.n_features,):
        raise InvalidArgumentError(
            f"theta_r has length {theta_r.size}, expected {mdp.n_features}"
        )
    return mdp.features @ theta_r


# -- parameter vector -------------------------------------------------------


@dataclass(frozen=True)
class ParamLayout:
    """Index layout of the flat parameter vector.

    Untied: ``[theta_r | theta_ta | theta_t]``. Tied: ``[theta_r | theta_dyn]``
    where the single dynamics block plays both the agent and the true role.
    """

    n_features: int
    n_dynamics: int
    tied: bool = True

    @property
    def size(self) -> int:
        return self.n_features + (1 if self.tied else 2) * self.n_dynamics

    @property
    def r(self) -> slice:
        return slice(0, self.n_features)

    @property
    def ta(self) -> slice:
        return slice(self.n_features, self.n_features + self.n_dynamics)

    @property
    def t(self) -> slice:
        if self.tied:
            return self.ta
        start = self.n_features + self.n_dynamics
        return slice(start, start + self.n_dynamics)

    def block_of(self, i: int) -> tuple[str, int]:
        """Map a flat index to ``(block name, offset within block)``."""
        if not 0 <= i < self.size:
            raise InvalidArgumentError(f"parameter index {i} out of range [0, {self.size})")
        if i < self.n_features:
            return "r", i
        i -= self.n_features
        if self.tied:
            return "dyn", i
        if i < self.n_dynamics:
            return "ta", i
        return "t", i - self.n_dynamics


@dataclass
class ParamVector:
    """Reward weights plus agent and true dynamics energies.

    In tied mode ``theta_ta`` and ``theta_t`` are the very same array.
    """

    theta_r: np.ndarray
    theta_ta: np.ndarray
    theta_t: np.ndarray = None
    tied: bool = True

    def __post_init__(self):
        self.theta_r = np.array(self.theta_r, dtype=np.float64)
        self.theta_ta = np.array(self.theta_ta, dtype=np.float64).ravel()
        if self.tied:
            if self.theta_t is not None and not np.array_equal(np.ravel(self.theta_t), self.theta_ta):
                raise InvalidArgumentError("tied parameters need theta_t == theta_ta")
            self.theta_t = self.theta_ta
        else:
            if self.theta_t is None:
                self.theta_t = self.theta_ta.copy()
            self.theta_t = np.array(self.theta_t, dtype=np.float64).ravel()
            if self.theta_t.shape != self.theta_ta.shape:
                raise InvalidArgumentError("theta_t and theta_ta must have equal length")

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout(self.theta_r.size, self.theta_ta.size, self.tied)

    def flatten(self) -> np.ndarray:
        parts = [self.theta_r, self.theta_ta]
        if not self.tied:
            parts.append(self.theta_t)
        return np.concatenate(parts)

    @classmethod
    def unflatten(cls, vec, layout: ParamLayout) -> "ParamVector":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (layout.size,):
            raise InvalidArgumentError(f"vector length {vec.size} != layout size {layout.size}")
        if layout.tied:
            return cls(vec[layout.r].copy(), vec[layout.ta].copy(), tied=True)
        return cls(vec[layout.r].copy(), vec[layout.ta].copy(), vec[layout.t].copy(), tied=False)

    def untie(self) -> "ParamVector":
        return ParamVector(self.theta_r, self.theta_ta.copy(), self.theta_t.copy(), tied=False)

    def copy(self) -> "ParamVector":
        return ParamVector.unflatten(self.flatten(), self.layout)


# -- serialization ----------------------------------------------------------


def mdp_to_dict(mdp: TabularMdp) -> dict:
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "n_features": mdp.n_features,
        "discount": mdp.discount,
        "start_dist": mdp.start_dist.tolist(),
        "features": mdp.features.ravel().tolist(),
        "successors": mdp.successors.tolist(),
    }


def mdp_from_dict(doc: dict) -> TabularMdp:
    try:
        S, A, d = int(doc["n_states"]), int(doc["n_actions"]), int(doc["n_features"])
        features = np.asarray(doc["features"], dtype=np.float64)
        if features.size != S * A * d:
            raise ParseError(f"features has {features.size} entries, expected {S * A * d}")
        successors = np.asarray(doc["successors"], dtype=np.intp)
        if successors.ndim != 3 or successors.shape[:2] != (S, A):
            raise ParseError("successors must be a [n_states][n_actions][K] nested list")
        return TabularMdp(
            features=features.reshape(S, A, d),
            discount=float(doc["discount"]),
            start_dist=np.asarray(doc["start_dist"], dtype=np.float64),
            successors=successors,
        )
    except KeyError as exc:
        raise ParseError(f"missing MDP field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed MDP document: {exc}") from None


def save_mdp(path, mdp: TabularMdp) -> None:
    Path(path).write_text(json.dumps(mdp_to_dict(mdp)) + "\n")


def load_mdp(path) -> TabularMdp:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from None
    mdp = mdp_from_dict(doc)
    problems = validate(mdp)
    if problems:
        raise ParseError(f"{path}: invalid MDP: " + "; ".join(problems[:5]))
    return mdp


def mdp_hash(mdp: TabularMdp) -> str:
    """Short content hash used to tag trajectory files."""
    blob = json.dumps(mdp_to_dict(mdp), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
