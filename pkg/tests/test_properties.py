"""Property-based invariants across all modules.

Every test body calls :func:`tally` once per generated case, so the
acceptance suite can count how many cases actually ran.
"""
import collections
import json

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from serd.dynamics import (BoltzmannDynamics, CountModel, m_estimate, params_from_dict,
                           params_to_dict, transition_grad, transition_probs)
from serd.experiment import ExperimentPlan, format_rows, parse_rows
from serd.grad import (gradient_constant, gradient_operator, likelihood_gradient, q_gradient,
                       soft_q_gradient)
from serd.gridworld import MapSpec, build, format_map, parse_map
from serd.learner import TrainConfig, train
from serd.mdp import ParamVector, TabularMdp, mdp_from_dict, mdp_hash, mdp_to_dict, reward_table
from serd.softq import bellman_backup, derive_policy, soft_q_iteration
from serd.traj import DemoSet, avg_kl_policy, format_demos, kl_rows, parse_demos, sample

from conftest import Problem, central_difference

COUNTS = collections.Counter()
PROFILE = settings(deadline=None, derandomize=True, database=None,
                   suppress_health_check=[HealthCheck.too_slow])


def tally(name):
    COUNTS[name] += 1


seeds = st.integers(0, 2**32 - 1)
gammas = st.sampled_from([0.5, 0.9, 0.99])


@st.composite
def problems(draw, max_states=6, max_actions=3, tied=None):
    S = draw(st.integers(1, max_states))
    A = draw(st.integers(1, max_actions))
    K = draw(st.integers(1, 3))
    untied = (not tied) if tied is not None else draw(st.booleans())
    return Problem(np.random.default_rng(draw(seeds)), n_states=S, n_actions=A, n_slots=K,
                   n_features=draw(st.integers(1, 3)), gamma=draw(gammas), tied=not untied,
                   scale=draw(st.sampled_from([0.5, 2.0, 5.0])))


# -- mdp ---------------------------------------------------------------------


@PROFILE
@given(problems(), st.floats(-10, 10))
def test_reward_is_linear(prob, alpha):
    tally("reward_linear")
    theta = prob.params.theta_r
    scaled = reward_table(prob.mdp, alpha * theta)
    assert np.allclose(scaled, alpha * reward_table(prob.mdp, theta), rtol=1e-12, atol=1e-12)


@PROFILE
@given(problems())
def test_param_vector_round_trip(prob):
    tally("param_round_trip")
    p = prob.params
    q = ParamVector.unflatten(p.flatten(), p.layout)
    assert np.array_equal(q.flatten(), p.flatten()) and q.tied == p.tied


@PROFILE
@given(problems())
def test_mdp_file_round_trip(prob):
    tally("mdp_round_trip")
    back = mdp_from_dict(json.loads(json.dumps(mdp_to_dict(prob.mdp))))
    assert mdp_hash(back) == mdp_hash(prob.mdp)
    assert np.array_equal(back.features, prob.mdp.features)


# -- softq -------------------------------------------------------------------


@settings(PROFILE, max_examples=150)
@given(problems(), seeds)
def test_contraction(prob, seed):
    tally("contraction")
    rng = np.random.default_rng(seed)
    agent, _ = prob.dynamics()
    shape = (prob.mdp.n_states, prob.mdp.n_actions)
    q1, q2 = rng.normal(size=shape) * 10, rng.normal(size=shape) * 10
    t1 = bellman_backup(prob.mdp, prob.params.theta_r, agent, q1)
    t2 = bellman_backup(prob.mdp, prob.params.theta_r, agent, q2)
    assert np.max(np.abs(t1 - t2)) <= prob.mdp.discount * np.max(np.abs(q1 - q2)) * (1 + 1e-12)


@PROFILE
@given(problems(), seeds)
def test_backup_monotone(prob, seed):
    tally("monotone")
    rng = np.random.default_rng(seed)
    agent, _ = prob.dynamics()
    q1 = rng.normal(size=(prob.mdp.n_states, prob.mdp.n_actions))
    q2 = q1 + rng.random(q1.shape)
    t1 = bellman_backup(prob.mdp, prob.params.theta_r, agent, q1)
    t2 = bellman_backup(prob.mdp, prob.params.theta_r, agent, q2)
    assert np.all(t1 <= t2 + 1e-12)


@PROFILE
@given(problems(), seeds)
def test_unique_fixed_point_and_valid_policy(prob, seed):
    tally("uniqueness")
    rng = np.random.default_rng(seed)
    agent, _ = prob.dynamics()
    tol = 1e-10
    a = soft_q_iteration(prob.mdp, prob.params.theta_r, agent, tol=tol)
    b = soft_q_iteration(prob.mdp, prob.params.theta_r, agent, tol=tol,
                         warm_start=rng.normal(size=a.q.shape) * 50)
    gamma = prob.mdp.discount
    # A sweep change of tol bounds the distance to the fixed point by gamma * tol / (1 - gamma).
    assert np.max(np.abs(a.q - b.q)) <= 2 * gamma * tol / (1 - gamma) + 1e-12
    assert np.all(a.policy >= 0)
    assert np.allclose(a.policy.sum(axis=1), 1.0, atol=1e-12)


@PROFILE
@given(st.integers(1, 6), st.integers(1, 4), seeds, st.floats(-1e3, 1e3))
def test_policy_shift_invariance(S, A, seed, shift):
    tally("shift")
    q = np.random.default_rng(seed).normal(size=(S, A)) * 20
    assert np.allclose(derive_policy(q + shift), derive_policy(q), atol=1e-12)


# -- dynamics ----------------------------------------------------------------


@PROFILE
@given(problems(), st.floats(0.1, 30.0))
def test_transition_rows_normalized(prob, scale):
    tally("rows")
    e = np.random.default_rng(int(scale * 1000)).normal(size=prob.assignment.n_params) * scale
    dyn = BoltzmannDynamics(prob.assignment, e)
    for s in range(prob.mdp.n_states):
        for a in range(prob.mdp.n_actions):
            assert abs(transition_probs(dyn, s, a).sum() - 1.0) <= 1e-12


@PROFILE
@given(problems(), seeds)
def test_transition_grad_sparse_and_exact(prob, seed):
    tally("transition_grad")
    rng = np.random.default_rng(seed)
    dyn, _ = prob.dynamics()
    s, a = rng.integers(prob.mdp.n_states), rng.integers(prob.mdp.n_actions)
    jac = transition_grad(dyn, s, a)
    K = dyn.n_outcomes
    owned = np.zeros(jac.shape[1], bool)
    m = prob.assignment.model_of[s, a]
    owned[m * K:(m + 1) * K] = True
    assert np.all(jac[:, ~owned] == 0.0)
    e = dyn.energies.ravel()
    fd = central_difference(lambda x: transition_probs(BoltzmannDynamics(prob.assignment, x), s, a), e, 1e-6)
    assert np.max(np.abs(jac - fd) / np.maximum(np.abs(fd), 1e-3)) <= 1e-5


@PROFILE
@given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=5), st.floats(0.5, 10.0))
def test_m_estimate_converges(freqs, m):
    tally("m_estimate")
    p = np.array(freqs) / np.sum(freqs)
    counts = np.round(p * 1e4)
    est = CountModel(counts[None, :], m).probabilities()[0]
    assert np.allclose(est.sum(), 1.0)
    assert np.max(np.abs(est - counts / counts.sum())) < 0.01


@PROFILE
@given(problems())
def test_params_file_round_trip(prob):
    tally("params_round_trip")
    doc = json.loads(json.dumps(params_to_dict(prob.params, prob.assignment, 0.9)))
    back = params_from_dict(doc)
    assert np.array_equal(back.params.flatten(), prob.params.flatten())
    assert back.params.tied == prob.params.tied


# -- grad --------------------------------------------------------------------


@settings(PROFILE, max_examples=60)
@given(problems(max_states=5))
def test_gradient_blocks_and_solvers_agree(prob):
    tally("grad_blocks")
    agent, _ = prob.dynamics()
    sol = prob.solve()
    lay = prob.params.layout
    b = gradient_constant(prob.mdp, sol, agent, lay)
    assert np.array_equal(b[:, :, lay.r], prob.mdp.features)
    direct = q_gradient(prob.mdp, sol, agent, prob.params, "direct").phi
    it = soft_q_gradient(prob.mdp, sol, agent, prob.params, tol=1e-12).phi
    assert np.max(np.abs(direct - it)) <= 1e-8
    if not prob.params.tied:
        assert np.all(direct[:, :, lay.t] == 0.0)


@PROFILE
@given(problems(max_states=5), seeds)
def test_gradient_operator_contracts_and_is_monotone(prob, seed):
    tally("grad_operator")
    rng = np.random.default_rng(seed)
    agent, _ = prob.dynamics()
    sol = prob.solve()
    shape = (prob.mdp.n_states, prob.mdp.n_actions, prob.params.layout.size)
    p1 = rng.normal(size=shape)
    p2 = p1 + rng.random(shape) * 5
    u1 = gradient_operator(prob.mdp, sol, agent, prob.params, p1)
    u2 = gradient_operator(prob.mdp, sol, agent, prob.params, p2)
    assert np.all(u1 <= u2 + 1e-12)
    dist = np.max(np.abs(p1 - p2))
    assert np.max(np.abs(u1 - u2)) <= prob.mdp.discount * dist * (1 + 1e-12)


@settings(PROFILE, max_examples=60)
@given(problems(max_states=5), seeds)
def test_start_term_leaves_gradient_unchanged(prob, seed):
    tally("start_term")
    rng = np.random.default_rng(seed)
    agent, true = prob.dynamics()
    sol = prob.solve()
    demos = prob.random_demos(rng, 2, 4)
    phi = q_gradient(prob.mdp, sol, agent, prob.params)
    other = rng.random(prob.mdp.n_states) + 0.1
    other /= other.sum()
    a = likelihood_gradient(demos, phi, sol, true, prob.params, prob.mdp.start_dist)
    b = likelihood_gradient(demos, phi, sol, true, prob.params, other)
    assert np.array_equal(a.gradient, b.gradient)
    assert np.array_equal(a.per_trajectory, b.per_trajectory)


# -- traj --------------------------------------------------------------------


@settings(PROFILE, max_examples=60)
@given(problems(), st.integers(1, 6), st.integers(1, 12), seeds)
def test_samples_connected_reproducible_and_round_trip(prob, n, horizon, seed):
    tally("sample")
    _, true = prob.dynamics()
    sol = prob.solve()
    demos = sample(prob.mdp, sol, true, n, horizon, seed=seed)
    assert demos.violations(prob.mdp) == []
    assert demos == sample(prob.mdp, sol, true, n, horizon, seed=seed)
    assert parse_demos(format_demos(demos)) == demos


@PROFILE
@given(st.integers(2, 6), seeds)
def test_kl_non_negative_and_zero_on_match(k, seed):
    tally("kl")
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
    assert kl_rows(p, q) >= 0
    assert kl_rows(p, p) == 0.0
    assert avg_kl_policy(p[None], p[None]) == 0.0
    if np.max(np.abs(p - q)) > 1e-6:
        assert kl_rows(p, q) > 0


# -- gridworld ---------------------------------------------------------------


@st.composite
def maps(draw):
    H, W = draw(st.integers(1, 6)), draw(st.integers(1, 6))
    rng = np.random.default_rng(draw(seeds))
    gray = np.round(rng.random((H, W)), 3)
    cell = st.tuples(st.integers(0, H - 1), st.integers(0, W - 1))
    return MapSpec(gray, goal=draw(cell), starts=draw(st.lists(cell, min_size=1, max_size=3)))


@PROFILE
@given(maps(), st.booleans())
def test_grid_rows_normalized_and_shared(spec, stay):
    tally("grid")
    gw = build(spec, 0.9, stay)
    p = gw.dynamics.slot_probs()
    assert np.allclose(p.sum(axis=2), 1.0, atol=1e-12)
    # Rows depend on the cell only through its model.
    model_p = gw.dynamics.model_probs()
    assert np.array_equal(p, model_p[gw.assignment.model_of])


@PROFILE
@given(maps())
def test_map_file_round_trip(spec):
    tally("map_round_trip")
    back = parse_map(format_map(spec))
    assert np.array_equal(back.gray, spec.gray)
    assert np.array_equal(back.terrain, spec.terrain)
    assert (back.goal, back.starts) == (spec.goal, spec.starts)


# -- learner / experiment ----------------------------------------------------


@settings(PROFILE, max_examples=15)
@given(problems(max_states=4, max_actions=2), seeds, st.sampled_from(["serd-tied", "serd-untied",
                                                                      "mdce-irl"]))
def test_training_deterministic_and_not_worse(prob, seed, mode):
    tally("train")
    rng = np.random.default_rng(seed)
    demos = DemoSet(prob.random_demos(rng, 3, 4))
    cfg = TrainConfig(mode=mode, max_steps=8, seed=seed % 1000)
    a, ta = train(prob.mdp, demos, cfg, prob.assignment)
    b, tb = train(prob.mdp, demos, cfg, prob.assignment)
    assert np.array_equal(a.flatten(), b.flatten())
    assert ta.to_csv(False) == tb.to_csv(False)
    assert ta.best_log_likelihood >= ta.records[0].log_likelihood
    if mode == "mdce-irl":
        assert np.array_equal(a.theta_ta, m_estimate(demos, prob.assignment).energies.ravel())


rows_strategy = st.lists(st.tuples(
    st.sampled_from(["train", "transfer"]), st.sampled_from(["avg_loglik", "avg_kl_policy"]),
    st.sampled_from(["serd-tied", "mdce-irl"]), st.integers(0, 512), st.integers(0, 99),
    st.floats(allow_nan=False, allow_infinity=False)), max_size=8)


@PROFILE
@given(rows_strategy)
def test_metric_rows_round_trip(rows):
    tally("rows_round_trip")
    assert parse_rows(format_rows(rows)) == rows


@PROFILE
@given(st.lists(st.integers(0, 64), min_size=1, max_size=5, unique=True), st.integers(1, 5))
def test_plan_round_trip(sizes, restarts):
    tally("plan_round_trip")
    plan = ExperimentPlan(sizes=sorted(sizes), restarts=restarts)
    assert ExperimentPlan.from_dict(json.loads(json.dumps(plan.to_dict()))) == plan
