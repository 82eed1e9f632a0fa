import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdplook.core import Policy, TabularMdp, random_mdp
from mdplook.lookahead import build_augmented_mdp
from mdplook.onestep import (
    all_orderings,
    augmented_value,
    discounted_scores,
    event_probabilities,
    event_probability,
    expected_max_bruteforce,
    expected_max_sorted,
    greedy_lookahead_policy,
    next_state_vectors,
    ordering_constraint,
    ordering_from_scores,
    ordering_value,
    product_lookahead_prob,
    reduced_bellman_operator,
    separation_oracle,
    solve_onestep_average,
    solve_onestep_average_cg,
    solve_onestep_discounted,
    solve_onestep_discounted_cg,
)
from mdplook.planners import (
    average_reward_solve,
    policy_evaluation_discounted,
    q_values,
    value_iteration_discounted,
)


def two_uniform(mode="float"):
    h = "1/2" if mode == "rational" else 0.5
    k = [[[h, h], [h, h]], [[h, h], [h, h]]]
    return TabularMdp(["x", "y"], ["a1", "a2"], k, [[0, 0], [0, 0]], mode=mode)


# u(x,a1)=1, u(y,a1)=0, u(x,a2)=0, u(y,a2)=2
U = [[1, 0], [0, 2]]


def det_mdp(seed=0, S=3, A=2):
    return random_mdp(S, A, seed, deterministic=True)


def test_product_prob_deterministic():
    mdp = det_mdp()
    succ = tuple(int(np.argmax(mdp.kernel[a, 0])) for a in range(2))
    for p in itertools.product(range(3), repeat=2):
        assert product_lookahead_prob(mdp, 0, p) == (1 if p == succ else 0)


def test_product_prob_two_uniform_rows():
    mdp = two_uniform("rational")
    for p in itertools.product(range(2), repeat=2):
        assert product_lookahead_prob(mdp, 0, p) == Fraction(1, 4)


def test_product_prob_matches_joint_sampling():
    mdp = random_mdp(3, 2, 4)
    rng = np.random.default_rng(0)
    n = 10**5
    draws = np.stack([rng.choice(3, size=n, p=mdp.kernel[a, 1]) for a in range(2)], axis=1)
    for p in itertools.product(range(3), repeat=2):
        freq = np.mean(np.all(draws == p, axis=1))
        assert abs(freq - product_lookahead_prob(mdp, 1, p)) <= 0.01


def test_brute_single_action_is_plain_expectation():
    mdp = random_mdp(3, 1, 2)
    u = np.random.default_rng(1).normal(size=(3, 1))
    assert expected_max_bruteforce(mdp, 0, u) == pytest.approx(float(mdp.kernel[0, 0] @ u[:, 0]))


def test_brute_deterministic_rows():
    mdp = det_mdp(3)
    u = np.random.default_rng(2).normal(size=(3, 2))
    succ = [int(np.argmax(mdp.kernel[a, 1])) for a in range(2)]
    assert expected_max_bruteforce(mdp, 1, u) == pytest.approx(max(u[succ[a], a] for a in range(2)))


@pytest.mark.parametrize("mode", ["float", "rational"])
def test_worked_example(mode):
    mdp = two_uniform(mode)
    assert expected_max_bruteforce(mdp, 0, U) == Fraction(5, 4)
    assert expected_max_sorted(mdp, 0, U) == Fraction(5, 4)


def test_worked_example_event_probabilities():
    mdp = two_uniform("rational")
    order = ordering_from_scores(U)
    assert order[:2] == [(1, 1), (0, 0)]
    mu = event_probabilities(mdp, 0, order)
    assert mu[:2] == [Fraction(1, 2), Fraction(1, 4)]
    assert sum(w * U[t][a] for (t, a), w in zip(order, mu)) == Fraction(5, 4)


def test_first_event_has_no_forbidden_mass():
    mdp = random_mdp(3, 2, 5)
    order = list(next(all_orderings(3, 2)))
    t, a = order[0]
    assert event_probability(mdp, 2, order, 1) == mdp.kernel[a, 2, t]


@pytest.mark.parametrize("seed", range(5))
def test_partition_is_exact(seed):
    mdp = random_mdp(3, 2, seed, mode="rational", support=2)
    rng = np.random.default_rng(seed)
    for _ in range(10):
        order = [tuple(x) for x in rng.permutation([(t, a) for t in range(3) for a in range(2)])]
        order = [(int(t), int(a)) for t, a in order]
        for s in range(3):
            assert sum(event_probabilities(mdp, s, order)) == 1


def test_sorted_constant_scores():
    mdp = random_mdp(3, 2, 6)
    assert expected_max_sorted(mdp, 0, np.full((3, 2), 4.0)) == pytest.approx(4.0)


def test_sorted_unique_max_with_full_mass():
    k = [[[0, 1], [0, 1]], [[0.5, 0.5], [0.5, 0.5]]]
    mdp = TabularMdp(["x", "y"], ["a", "b"], k, [[0, 0], [0, 0]])
    u = [[0.0, 1.0], [9.0, 2.0]]
    assert expected_max_sorted(mdp, 0, u) == pytest.approx(9.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 10**6), st.booleans())
def test_sorted_equals_brute(S, A, seed, rational):
    mode = "rational" if rational else "float"
    mdp = random_mdp(S, A, seed, mode=mode, support=1 + seed % S)
    rng = np.random.default_rng(seed)
    if rational:
        u = [[Fraction(int(x), 7) for x in row] for row in rng.integers(-20, 20, size=(S, A))]
    else:
        u = rng.normal(size=(S, A))
    for s in range(S):
        a, b = expected_max_sorted(mdp, s, u), expected_max_bruteforce(mdp, s, u)
        if rational:
            assert a == b
        else:
            assert abs(a - b) <= 1e-10


def test_sorted_handles_ties():
    mdp = random_mdp(3, 2, 9, mode="rational")
    u = [[Fraction(1), Fraction(1)], [Fraction(2), Fraction(1)], [Fraction(2), Fraction(2)]]
    for s in range(3):
        assert expected_max_sorted(mdp, s, u) == expected_max_bruteforce(mdp, s, u)


def test_reduced_operator_at_zero():
    mdp = random_mdp(3, 2, 1)
    assert np.allclose(reduced_bellman_operator(mdp, 0.9, np.zeros(3)), mdp.rewards.max(axis=1))


def test_reduced_operator_deterministic_is_classical():
    mdp = det_mdp(4)
    v = np.random.default_rng(0).normal(size=3)
    assert np.allclose(reduced_bellman_operator(mdp, 0.9, v), q_values(mdp.kernel, mdp.rewards, v, 0.9).max(axis=1))


def test_reduced_operator_matches_brute():
    mdp = random_mdp(3, 2, 2)
    v = np.random.default_rng(3).uniform(0, 5, size=3)
    Tv = reduced_bellman_operator(mdp, 0.8, v)
    for s in range(3):
        assert abs(Tv[s] - expected_max_bruteforce(mdp, s, discounted_scores(mdp, s, v, 0.8))) <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_reduced_operator_contraction(seed):
    mdp = random_mdp(4, 3, seed)
    rng = np.random.default_rng(seed)
    v, w = rng.normal(size=4) * 5, rng.normal(size=4) * 5
    lhs = np.max(np.abs(reduced_bellman_operator(mdp, 0.7, v) - reduced_bellman_operator(mdp, 0.7, w)))
    assert lhs <= 0.7 * np.max(np.abs(v - w)) + 1e-12


def test_onestep_deterministic_equals_classical():
    mdp = det_mdp(5)
    assert np.allclose(solve_onestep_discounted(mdp, 0.9).values, value_iteration_discounted(mdp, 0.9).values, atol=1e-9)


def test_onestep_zero_reward():
    mdp = random_mdp(3, 2, 0).replace(rewards=np.zeros((3, 2)))
    assert np.all(solve_onestep_discounted(mdp, 0.9).values == 0)
    assert np.allclose(solve_onestep_discounted_cg(mdp, 0.9).values, 0)


@pytest.mark.parametrize("seed", range(4))
def test_onestep_tower_rule_two_by_two(seed):
    mdp = random_mdp(2, 2, seed)
    g = 0.9
    v = solve_onestep_discounted(mdp, g, 1e-10).values
    model = build_augmented_mdp(mdp, None, 1)
    vbar = value_iteration_discounted(model.mdp, g, 1e-10).values
    for s in range(2):
        direct = sum(prob * augmented_value(mdp, g, v, s, p) for p, prob in next_state_vectors(mdp, s))
        assert abs(direct - v[s]) <= 1e-10
        assert abs(model.expected_over_initial(vbar, s) - v[s]) <= 1e-8


def test_separation_oracle_cases():
    mdp = random_mdp(3, 2, 3)
    g = 0.9
    v = solve_onestep_discounted(mdp, g).values
    assert separation_oracle(mdp, g, v).feasible
    res = separation_oracle(mdp, g, np.zeros(3))
    assert not res.feasible
    assert res.cut.state == 0 and res.cut.violation == pytest.approx(mdp.rewards[0].max())
    assert separation_oracle(mdp, g, np.full(3, float(mdp.r_max) / (1 - g))).feasible


def test_cut_matches_violation():
    mdp = random_mdp(3, 2, 7)
    v = np.full(3, 0.5)
    cut = separation_oracle(mdp, 0.9, v).cut
    assert cut.rhs - cut.coeffs @ v == pytest.approx(cut.violation)


@pytest.mark.parametrize("seed", range(5))
def test_tightest_ordering(seed):
    mdp = random_mdp(3, 2, seed)
    v = np.random.default_rng(seed).uniform(0, 3, size=3)
    for s in range(3):
        u = discounted_scores(mdp, s, v, 0.9)
        best = ordering_value(mdp, s, u, ordering_from_scores(u))
        for m in all_orderings(3, 2):
            assert ordering_value(mdp, s, u, m) <= best + 1e-12
            coeffs, rhs = ordering_constraint(mdp, s, m, 0.9)
            # constraint RHS at v equals the ordering value minus nothing else
            assert rhs + (np.eye(3)[s] - np.asarray(coeffs, dtype=float)) @ v == pytest.approx(ordering_value(mdp, s, u, m))


def test_cg_deterministic_equals_classical():
    mdp = det_mdp(6)
    assert np.allclose(solve_onestep_discounted_cg(mdp, 0.9).values, value_iteration_discounted(mdp, 0.9).values, atol=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_cg_matches_fixed_point(seed):
    mdp = random_mdp(3, 2, seed)
    cg = solve_onestep_discounted_cg(mdp, 0.9)
    assert cg.converged
    assert np.allclose(cg.values, solve_onestep_discounted(mdp, 0.9).values, atol=1e-6)


def test_greedy_deterministic_is_classical():
    mdp = det_mdp(7)
    g = 0.9
    v = value_iteration_discounted(mdp, g).values
    pol = greedy_lookahead_policy(mdp, g, v)
    classical = value_iteration_discounted(mdp, g).policy.actions
    for s in range(3):
        p = tuple(int(np.argmax(mdp.kernel[a, s])) for a in range(2))
        assert pol.action(s, p) == classical[s]


def test_greedy_all_actions_to_one_state():
    mdp = random_mdp(3, 3, 8)
    v = np.array([1.0, 5.0, 2.0])
    pol = greedy_lookahead_policy(mdp, 0.9, v)
    for s in range(3):
        assert pol.action(s, (1, 1, 1)) == int(np.argmax(mdp.rewards[s] + 0.9 * 5.0))


@pytest.mark.parametrize("seed", range(3))
def test_greedy_policy_attains_value_on_augmented_mdp(seed):
    mdp = random_mdp(3, 2, seed)
    g = 0.9
    v = solve_onestep_discounted(mdp, g, 1e-12).values
    model = build_augmented_mdp(mdp, None, 1)
    pol = greedy_lookahead_policy(mdp, g, v).on_model(model)
    vbar = policy_evaluation_discounted(model.mdp, pol, g)
    for s in range(3):
        assert abs(model.expected_over_initial(vbar, s) - v[s]) <= 1e-6


def test_average_single_state():
    mdp = TabularMdp(["s"], ["a", "b"], [[[1.0]], [[1.0]]], [[0.3, 0.8]])
    sol = solve_onestep_average(mdp)
    assert sol.gain == pytest.approx(0.8) and sol.bias[0] == 0


def test_average_deterministic_equals_classical():
    # a deterministic cycle with a self-loop option is unichain
    k = [[[0, 1, 0], [0, 0, 1], [1, 0, 0]], [[1, 0, 0], [0, 0, 1], [1, 0, 0]]]
    mdp = TabularMdp(["x", "y", "z"], ["a", "b"], k, [[0.2, 0.5], [0.1, 0.9], [0.4, 0.0]])
    assert solve_onestep_average(mdp).gain == pytest.approx(average_reward_solve(mdp).gain, abs=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_average_matches_augmented(seed):
    mdp = random_mdp(3, 2, seed)
    aug = build_augmented_mdp(mdp, None, 1).mdp
    g = solve_onestep_average(mdp).gain
    assert abs(g - average_reward_solve(aug, assume_unichain=True).gain) <= 1e-6
    assert abs(g - solve_onestep_average_cg(mdp).gain) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_information_monotonicity(seed):
    mdp = random_mdp(3, 3, seed)
    v0 = value_iteration_discounted(mdp, 0.9).values
    v1 = solve_onestep_discounted(mdp, 0.9).values
    assert np.all(v1 >= v0 - 1e-9)


def test_lookahead_policy_on_model_is_deterministic_policy():
    mdp = random_mdp(2, 2, 1)
    model = build_augmented_mdp(mdp, None, 1)
    pol = greedy_lookahead_policy(mdp, 0.9, np.ones(2)).on_model(model)
    assert isinstance(pol, Policy) and pol.kind == "deterministic"
