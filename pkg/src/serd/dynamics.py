"""Boltzmann-energy transition models and the count-based m-estimator.

A dynamics model is a small table of *energies*, one row per shared model
and one column per outcome slot. The assignment maps every state-action pair
onto a model; outcome slot ``k`` of that model leads to
``successors[s, a, k]``. Probabilities are the per-row softmax of the
energies, so any finite energy table is a valid model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DemoDataError, InvalidArgumentError, ParseError
from .mdp import ParamVector

DEFAULT_PRIOR_COUNT = 5.0


@dataclass(frozen=True, eq=False)
class Assignment:
    """Which model drives each ``(s, a)`` and where each outcome slot leads."""

    model_of: np.ndarray
    successors: np.ndarray
    model_names: tuple
    outcome_names: tuple

    def __post_init__(self):
        object.__setattr__(self, "model_of", np.ascontiguousarray(self.model_of, dtype=np.intp))
        object.__setattr__(self, "successors", np.ascontiguousarray(self.successors, dtype=np.intp))
        object.__setattr__(self, "model_names", tuple(self.model_names))
        object.__setattr__(self, "outcome_names", tuple(self.outcome_names))
        if self.successors.shape[:2] != self.model_of.shape:
            raise InvalidArgumentError("model_of and successors disagree on (n_states, n_actions)")
        if self.successors.shape[2] != len(self.outcome_names):
            raise InvalidArgumentError("number of outcome slots != number of outcome names")
        if self.model_of.size and (self.model_of.min() < 0 or self.model_of.max() >= len(self.model_names)):
            raise InvalidArgumentError("model_of refers to an unknown model")

    @property
    def n_models(self) -> int:
        return len(self.model_names)

    @property
    def n_outcomes(self) -> int:
        return len(self.outcome_names)

    @property
    def n_params(self) -> int:
        return self.n_models * self.n_outcomes

    @classmethod
    def per_pair(cls, successors) -> "Assignment":
        """One independent model per state-action pair."""
        successors = np.asarray(successors, dtype=np.intp)
        S, A, K = successors.shape
        return cls(
            model_of=np.arange(S * A).reshape(S, A),
            successors=successors,
            model_names=[f"s{s}a{a}" for s in range(S) for a in range(A)],
            outcome_names=[f"k{k}" for k in range(K)],
        )

    def reassign(self, model_of, successors) -> "Assignment":
        """Same model set, laid out on another state space (used for transfer)."""
        return Assignment(model_of, successors, self.model_names, self.outcome_names)


def softmax_rows(energies: np.ndarray) -> np.ndarray:
    e = np.asarray(energies, dtype=np.float64)
    z = np.exp(e - e.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class BoltzmannDynamics:
    assignment: Assignment
    energies: np.ndarray

    def __post_init__(self):
        e = np.array(self.energies, dtype=np.float64).reshape(
            self.assignment.n_models, self.assignment.n_outcomes
        )
        if not np.all(np.isfinite(e)):
            raise InvalidArgumentError("energies must be finite")
        e.setflags(write=False)
        object.__setattr__(self, "energies", e)

    @property
    def n_models(self) -> int:
        return self.assignment.n_models

    @property
    def n_outcomes(self) -> int:
        return self.assignment.n_outcomes

    def model_probs(self) -> np.ndarray:
        """Outcome distribution of every model, shape (n_models, n_outcomes)."""
        return softmax_rows(self.energies)

    def slot_probs(self) -> np.ndarray:
        """Per-slot transition probabilities, shape (n_states, n_actions, K)."""
        return np.ascontiguousarray(self.model_probs()[self.assignment.model_of])

    def with_energies(self, energies) -> "BoltzmannDynamics":
        return BoltzmannDynamics(self.assignment, energies)

    @classmethod
    def uniform(cls, assignment: Assignment) -> "BoltzmannDynamics":
        return cls(assignment, np.zeros((assignment.n_models, assignment.n_outcomes)))


def _check_pair(dyn: BoltzmannDynamics, s: int, a: int) -> None:
    S, A = dyn.assignment.model_of.shape
    if not (0 <= s < S and 0 <= a < A):
        raise InvalidArgumentError(f"no model assigned to (s={s}, a={a})")


def _merge_matrix(successors_sa: np.ndarray):
    states = list(dict.fromkeys(int(x) for x in successors_sa))
    merge = np.array([[float(x == st) for x in successors_sa] for st in states])
    return states, merge


def transition_probs(dyn: BoltzmannDynamics, s: int, a: int) -> np.ndarray:
    """Distribution over the distinct successors of ``(s, a)`` in slot order.

    Slots that lead to the same state are merged.
    """
    _check_pair(dyn, s, a)
    p = dyn.model_probs()[dyn.assignment.model_of[s, a]]
    _, merge = _merge_matrix(dyn.assignment.successors[s, a])
    return merge @ p


def transition_grad(dyn: BoltzmannDynamics, s: int, a: int) -> np.ndarray:
    """Jacobian of :func:`transition_probs` w.r.t. the flat energy vector.

    Returns an array of shape ``(n_successors, n_models * n_outcomes)``; only
    the columns of the model owning ``(s, a)`` are nonzero.
    """
    _check_pair(dyn, s, a)
    m = dyn.assignment.model_of[s, a]
    p = dyn.model_probs()[m]
    K = dyn.n_outcomes
    slot_jac = np.diag(p) - np.outer(p, p)
    _, merge = _merge_matrix(dyn.assignment.successors[s, a])
    jac = np.zeros((merge.shape[0], dyn.n_models * K))
    jac[:, m * K:(m + 1) * K] = merge @ slot_jac
    return jac


def slot_match(successors: np.ndarray, s, a, s_next) -> np.ndarray:
    """Boolean mask ``(n, K)`` of the slots of each ``(s, a)`` that reach ``s_next``."""
    return successors[s, a] == np.asarray(s_next)[:, None]


@dataclass
class CountModel:
    """Transition counts per (model, outcome) smoothed by a uniform prior."""

    counts: np.ndarray
    prior_count: float = DEFAULT_PRIOR_COUNT

    def probabilities(self) -> np.ndarray:
        counts = np.asarray(self.counts, dtype=np.float64)
        n_out = counts.shape[1]
        total = counts.sum(axis=1, keepdims=True)
        return (counts + self.prior_count / n_out) / (total + self.prior_count)


def count_transitions(demos, assignment: Assignment) -> np.ndarray:
    """Accumulate observed transitions per (model, outcome).

    When several slots of a pair reach the observed successor (border
    clamping), the observation is split evenly between them.
    """
    counts = np.zeros((assignment.n_models, assignment.n_outcomes))
    for i, traj in enumerate(demos):
        traj = np.asarray(traj)
        if len(traj) < 2:
            continue
        s, a, s2 = traj[:-1, 0], traj[:-1, 1], traj[1:, 0]
        match = slot_match(assignment.successors, s, a, s2)
        hits = match.sum(axis=1)
        if np.any(hits == 0):
            t = int(np.flatnonzero(hits == 0)[0])
            raise DemoDataError(
                f"transition {s[t]} -a{a[t]}-> {s2[t]} is outside the successor set",
                trajectory=i, step=t,
            )
        np.add.at(counts, assignment.model_of[s, a], match / hits[:, None])
    return counts


def m_estimate(demos, assignment: Assignment, prior_count: float = DEFAULT_PRIOR_COUNT,
               fallback_energies=None) -> BoltzmannDynamics:
    """Count-based dynamics estimate with ``prior_count`` uniform pseudo-counts.

    Returns Boltzmann energies ``log p``. Models without any observation keep
    ``fallback_energies`` when given, otherwise the uniform prior.
    """
    if not prior_count > 0:
        raise InvalidArgumentError("prior_count must be positive")
    counts = count_transitions(demos, assignment)
    energies = np.log(CountModel(counts, prior_count).probabilities())
    if fallback_energies is not None:
        fallback = np.asarray(fallback_energies, dtype=np.float64).reshape(energies.shape)
        unseen = counts.sum(axis=1) == 0
        energies[unseen] = fallback[unseen]
    return BoltzmannDynamics(assignment, energies)


# -- parameter files -------------------------------------------------------

PARAMS_FORMAT = "serd-params/1"


def _triples(assignment: Assignment, flat) -> list:
    e = np.asarray(flat, dtype=np.float64).reshape(assignment.n_models, assignment.n_outcomes)
    return [
        [m_name, o_name, float(e[m, k])]
        for m, m_name in enumerate(assignment.model_names)
        for k, o_name in enumerate(assignment.outcome_names)
    ]


def params_to_dict(params: ParamVector, assignment: Assignment, discount=None,
                   include_assignment: bool = True) -> dict:
    doc = {
        "format": PARAMS_FORMAT,
        "tied": params.tied,
        "theta_r": params.theta_r.tolist(),
        "models": list(assignment.model_names),
        "outcomes": list(assignment.outcome_names),
        "energies": _triples(assignment, params.theta_ta),
    }
    if not params.tied:
        doc["true_energies"] = _triples(assignment, params.theta_t)
    if discount is not None:
        doc["discount"] = float(discount)
    if include_assignment:
        doc["assignment"] = {
            "model_of": assignment.model_of.tolist(),
            "successors": assignment.successors.tolist(),
        }
    return doc


@dataclass
class ParamFile:
    params: ParamVector
    model_names: tuple
    outcome_names: tuple
    assignment: Assignment | None = None
    discount: float | None = None


def _read_triples(triples, models, outcomes) -> np.ndarray:
    m_idx = {m: i for i, m in enumerate(models)}
    o_idx = {o: i for i, o in enumerate(outcomes)}
    e = np.full((len(models), len(outcomes)), np.nan)
    for entry in triples:
        if len(entry) != 3:
            raise ParseError(f"energy entry {entry!r} is not a (model, outcome, energy) triple")
        m, o, val = entry
        if m not in m_idx or o not in o_idx:
            raise ParseError(f"energy entry names unknown model/outcome: {m!r}/{o!r}")
        e[m_idx[m], o_idx[o]] = float(val)
    if np.isnan(e).any():
        raise ParseError("energy table is incomplete")
    return e.ravel()


def params_from_dict(doc: dict) -> ParamFile:
    try:
        if doc.get("format", PARAMS_FORMAT) != PARAMS_FORMAT:
            raise ParseError(f"unsupported parameter format {doc.get('format')!r}")
        models, outcomes = tuple(doc["models"]), tuple(doc["outcomes"])
        tied = bool(doc.get("tied", True))
        theta_ta = _read_triples(doc["energies"], models, outcomes)
        theta_t = None if tied else _read_triples(doc["true_energies"], models, outcomes)
        params = ParamVector(doc["theta_r"], theta_ta, theta_t, tied=tied)
        assignment = None
        if "assignment" in doc:
            assignment = Assignment(
                doc["assignment"]["model_of"], doc["assignment"]["successors"], models, outcomes
            )
        discount = doc.get("discount")
        return ParamFile(params, models, outcomes, assignment,
                         None if discount is None else float(discount))
    except KeyError as exc:
        raise ParseError(f"missing parameter field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed parameter document: {exc}") from None


def save_params(path, params: ParamVector, assignment: Assignment, discount=None,
                include_assignment: bool = True) -> None:
    doc = params_to_dict(params, assignment, discount, include_assignment)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_params(path) -> ParamFile:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from None
    return params_from_dict(doc)
