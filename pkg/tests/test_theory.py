import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmil.envs.tabular import TabularMDP, TabularPOMDP, perturb_transition, random_pomdp, random_tabular
from cmil.theory import (
    GAP_HEADER,
    exact_value,
    filter_belief,
    kl_divergence,
    normalize_series,
    occupancy,
    occupancy_residual,
    occupancy_value,
    predict_observation,
    prop1_suite,
    random_policy,
    run_suite,
    soft_optimal_policy,
    tabular_gap_suite,
    thm1_suite,
    thm2_suite,
    tv_distance,
    verify_prop1,
    verify_thm1,
    verify_thm2,
    write_gap_csv,
)


def _instance(seed, s=5, a=3, gamma=0.9):
    rng = np.random.default_rng(seed)
    mdp = random_tabular(seed, s, a, gamma)
    return rng, mdp, random_policy(rng, s, a)


def _power_series_occupancy(mdp, policy, tol=1e-15):
    """(1 - gamma) sum_t gamma^t Pr(s_t, a_t), summed until the terms vanish."""
    p = np.einsum("sa,sat->st", policy, mdp.transition)
    d, total, w = mdp.initial.copy(), np.zeros(mdp.n_states), 1.0
    while w > tol:
        total += w * d
        d = d @ p
        w *= mdp.gamma
    return (1 - mdp.gamma) * total[:, None] * policy


# --------------------------------------------------------------------------
# occupancy and values

def test_single_state_occupancy_is_one():
    mdp = TabularMDP(np.ones((1, 1, 1)), np.zeros((1, 1)), np.ones(1), 0.9)
    np.testing.assert_array_equal(occupancy(mdp, np.ones((1, 1))), [[1.0]])


def test_two_state_chain_occupancy():
    t = np.zeros((2, 1, 2))
    t[0, 0, 1] = t[1, 0, 1] = 1.0
    mdp = TabularMDP(t, np.zeros((2, 1)), np.array([1.0, 0.0]), 0.5)
    np.testing.assert_allclose(occupancy(mdp, np.ones((2, 1))), [[0.5], [0.5]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8), st.integers(1, 4), st.floats(0.1, 0.95))
def test_occupancy_normalized_with_small_residual(seed, s, a, gamma):
    rng = np.random.default_rng(seed)
    mdp = random_tabular(seed, s, a, gamma)
    pi = random_policy(rng, s, a)
    rho = occupancy(mdp, pi)
    assert abs(rho.sum() - 1.0) <= 1e-9
    assert np.all(rho >= -1e-15)
    assert occupancy_residual(mdp, pi, rho) < 1e-10


def test_occupancy_matches_power_series():
    for seed in range(20):
        _, mdp, pi = _instance(seed, gamma=0.8)
        np.testing.assert_allclose(occupancy(mdp, pi), _power_series_occupancy(mdp, pi), atol=1e-12)


def test_zero_reward_value_is_zero():
    _, mdp, pi = _instance(0)
    mdp = TabularMDP(mdp.transition, np.zeros_like(mdp.reward), mdp.initial, mdp.gamma)
    assert exact_value(mdp, pi) == 0.0


def test_absorbing_unit_reward_value_is_geometric_sum():
    mdp = TabularMDP(np.ones((1, 1, 1)), np.ones((1, 1)), np.ones(1), 0.9)
    assert exact_value(mdp, np.ones((1, 1))) == pytest.approx(10.0, abs=1e-12)


def test_value_duality_on_random_instances():
    for seed in range(200):
        rng = np.random.default_rng(seed)
        s, a = rng.integers(1, 9), rng.integers(1, 5)
        mdp = random_tabular(seed, int(s), int(a), float(rng.uniform(0.5, 0.99)))
        pi = random_policy(rng, int(s), int(a))
        assert abs(exact_value(mdp, pi) - occupancy_value(mdp, pi)) <= 1e-8


def test_value_matches_bellman_iteration():
    _, mdp, pi = _instance(3, gamma=0.7)
    v = np.zeros(mdp.n_states)
    r = (pi * mdp.reward).sum(1)
    p = np.einsum("sa,sat->st", pi, mdp.transition)
    for _ in range(200):
        v = r + mdp.gamma * p @ v
    assert exact_value(mdp, pi) == pytest.approx(mdp.initial @ v, abs=1e-12)


def test_malformed_policy_rejected():
    _, mdp, pi = _instance(0)
    with pytest.raises(ValueError):
        occupancy(mdp, pi * 2)
    with pytest.raises(ValueError):
        occupancy(mdp, pi[:, :2])


# --------------------------------------------------------------------------
# divergences

def test_tv_examples():
    assert tv_distance([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert tv_distance([0.5, 0.5], [0.8, 0.2]) == pytest.approx(0.3, abs=1e-15)


def test_non_distributions_rejected():
    with pytest.raises(ValueError):
        tv_distance([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(ValueError):
        tv_distance([1.5, -0.5], [0.5, 0.5])
    with pytest.raises(ValueError):
        kl_divergence([0.5, 0.4], [0.5, 0.5])


def _simplex(rng, n):
    x = rng.exponential(size=n)
    return x / x.sum()


@given(st.integers(0, 2**31 - 1), st.integers(1, 10))
def test_tv_is_a_metric(seed, n):
    rng = np.random.default_rng(seed)
    p, q, r = (_simplex(rng, n) for _ in range(3))
    assert 0.0 <= tv_distance(p, q) <= 1.0
    assert tv_distance(p, q) == tv_distance(q, p)
    assert tv_distance(p, p) == 0.0
    assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-15


# --------------------------------------------------------------------------
# value-gap bounds

def test_value_gap_bound_equal_policies_and_models_hold_with_equality():
    _, mdp, pi = _instance(1)
    e = verify_prop1(mdp, pi, pi, mdp)
    assert e.lhs == 0.0 and e.rhs == 0.0 and e.passed


def test_value_gap_bound_constant_reward_has_zero_gap():
    rng, mdp, pi = _instance(2)
    mdp = TabularMDP(mdp.transition, np.full_like(mdp.reward, 0.7), mdp.initial, mdp.gamma)
    other = mdp.with_transition(perturb_transition(rng, mdp.transition, 0.5))
    e = verify_prop1(mdp, pi, random_policy(rng, 5, 3), other)
    assert e.lhs == pytest.approx(0.0, abs=1e-12)


def test_value_gap_bound_rejects_different_rewards():
    _, mdp, pi = _instance(1)
    other = TabularMDP(mdp.transition, mdp.reward * 0.5, mdp.initial, mdp.gamma)
    with pytest.raises(ValueError):
        verify_prop1(mdp, pi, pi, other)


def test_value_gap_bound_suite_small():
    report = prop1_suite(n=100, seed=5)
    assert report.passed and len(report.entries) == 100
    assert report.min_slack >= -1e-9


def test_model_gap_bound_identical_model_and_expert_policy_give_zero():
    _, mdp, _ = _instance(3)
    expert = soft_optimal_policy(mdp)
    e = verify_thm1(mdp, mdp, expert, expert)
    assert e.lhs == 0.0 and e.rhs == 0.0 and e.passed


def test_model_gap_bound_with_exact_model_reduces_to_value_gap_bound():
    _, mdp, pi = _instance(4)
    expert = soft_optimal_policy(mdp)
    e = verify_thm1(mdp, mdp, expert, pi)
    p = verify_prop1(mdp, expert, pi, mdp)
    assert e.terms["model_mismatch"] == 0.0
    assert e.terms["distribution_matching"] == pytest.approx(p.rhs, abs=1e-14)
    assert e.lhs == pytest.approx(p.lhs, abs=1e-14)


def test_model_gap_bound_checks_simulation_lemma_separately():
    rng, mdp, pi = _instance(5)
    model = mdp.with_transition(perturb_transition(rng, mdp.transition, 0.3))
    e = verify_thm1(mdp, model, soft_optimal_policy(mdp), pi)
    assert e.checks["simulation_lemma"]
    assert e.info["simulation_lemma_lhs"] <= e.terms["model_mismatch"] + 1e-9


def test_model_gap_bound_rejects_mismatched_spaces():
    _, mdp, pi = _instance(6)
    other = random_tabular(7, 4, 3, 0.9)
    with pytest.raises(ValueError):
        verify_thm1(mdp, other, pi, pi)


def test_model_gap_bound_suite_small():
    report = thm1_suite(n=60, seed=3)
    assert report.passed
    assert all(e.checks["simulation_lemma"] for e in report.entries)


# --------------------------------------------------------------------------
# POMDP one-step prediction

def _enumerated_prediction(pomdp: TabularPOMDP, obs, acts):
    """P(x_{t+1} | x_{<=t}, a_{<=t}) by summing over every state path."""
    mdp, u = pomdp.mdp, pomdp.observation
    t = len(obs) - 1
    joint = np.zeros(pomdp.n_obs)
    for path in itertools.product(range(mdp.n_states), repeat=t + 2):
        p = mdp.initial[path[0]] * u[path[0], obs[0]]
        for k in range(1, t + 1):
            p *= mdp.transition[path[k - 1], acts[k - 1], path[k]] * u[path[k], obs[k]]
        p *= mdp.transition[path[t], acts[t], path[t + 1]]
        joint += p * u[path[t + 1]]
    return joint / joint.sum()


def test_filtered_prediction_matches_enumeration():
    rng = np.random.default_rng(8)
    for seed in range(30):
        pomdp = random_pomdp(seed, 3, 2, 3)
        length = int(rng.integers(1, 4))
        obs = [int(x) for x in rng.integers(0, 3, size=length)]
        acts = [int(a) for a in rng.integers(0, 2, size=length)]
        b = filter_belief(pomdp, obs, acts)
        np.testing.assert_allclose(predict_observation(pomdp, b, acts[-1]),
                                   _enumerated_prediction(pomdp, obs, acts), atol=1e-13)


def test_prediction_bound_identical_transitions_give_zero():
    pomdp = random_pomdp(1, 4, 2, 3)
    for e in verify_thm2(pomdp, pomdp, [0, 1], [1, 0]):
        assert e.lhs == 0.0 and e.rhs == 0.0 and e.passed


def test_prediction_bound_single_state_gives_zero():
    pomdp = random_pomdp(2, 1, 2, 3)
    other = pomdp.with_transition(np.ones((1, 2, 1)))
    for e in verify_thm2(pomdp, other, [2, 0], [0, 1]):
        assert e.lhs == pytest.approx(0.0, abs=1e-15) and e.rhs == 0.0


def test_prediction_bound_zero_probability_history_rejected():
    mdp = random_tabular(0, 2, 1, 0.9)
    pomdp = TabularPOMDP(mdp, np.array([[1.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(ValueError, match="zero probability"):
        verify_thm2(pomdp, pomdp, [1], [0])


def test_prediction_bound_suite_small():
    report = thm2_suite(n=100, seed=4)
    assert report.passed
    assert {e.instance.split(":")[1] for e in report.entries} == {"tv", "kl"}


# --------------------------------------------------------------------------
# gap curves

def test_gap_curve_at_expert_without_perturbation_is_zero():
    rows = tabular_gap_suite(seed=0, n=1, rate=0.0)
    last = rows[-1]
    assert last.weight == 1.0
    assert last.oracle_gap == pytest.approx(0.0, abs=1e-12)
    assert last.distribution_matching == pytest.approx(0.0, abs=1e-12)
    assert last.model_mismatch == 0.0


def test_gap_curves_respect_the_bound(tmp_path):
    rows = tabular_gap_suite(seed=1, n=4, steps=7)
    assert len(rows) == 4 * 7
    assert all(r.passed for r in rows)
    path = tmp_path / "gap.csv"
    write_gap_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == GAP_HEADER and len(lines) == 1 + len(rows)


def test_gap_suite_needs_an_instance():
    with pytest.raises(ValueError):
        tabular_gap_suite(n=0)


def test_normalize_series():
    np.testing.assert_allclose(normalize_series([2.0, 4.0, 3.0]), [0.0, 1.0, 0.5])
    np.testing.assert_array_equal(normalize_series([1.0, 1.0]), [0.0, 0.0])


def test_run_suite_writes_csv(tmp_path):
    passed, summary = run_suite("gap-curves", tmp_path / "new" / "dir")
    assert passed and "0 violations" in summary
    assert (tmp_path / "new" / "dir" / "gap-curves.csv").exists()
    with pytest.raises(ValueError):
        run_suite("nope")
