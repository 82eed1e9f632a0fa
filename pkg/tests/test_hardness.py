import itertools
from fractions import Fraction

import numpy as np
import pytest

from mdplook.core import Policy, TabularMdp, check_unichain_exhaustive, random_mdp, validate_mdp
from mdplook.errors import BudgetExceededError, MdpFormatError
from mdplook.hardness.gadget import (
    best_subset_bruteforce,
    build_gadget_mdp,
    check_dp_recursion,
    check_waiting_policy,
    compute_thresholds,
    dyadic_above,
    expected_max_subset,
    gadget_augmented_model,
    geometric_discount,
    verify_separation,
    waiting_event_probability,
    waiting_policy,
    xv_law,
)
from mdplook.hardness.graphs import (
    INDEPENDENCE_NUMBER,
    check_regular,
    fixture,
    format_graph,
    load_graph,
    max_independent_set_bruteforce,
    parse_graph,
)
from mdplook.hardness.reset import (
    reset_transform,
    verify_renewal_identity,
    verify_renewal_identity_augmented,
)
from mdplook.planners import policy_evaluation_discounted


@pytest.fixture(scope="module")
def k4_one():
    inst = build_gadget_mdp(fixture("k4"), 1)
    return inst, gadget_augmented_model(inst)


# -- graphs -----------------------------------------------------------------


def test_k4_file(tmp_path):
    p = tmp_path / "k4.edges"
    p.write_text(format_graph(fixture("k4")))
    g = load_graph(p)
    assert (g.n, g.m) == (4, 6)
    assert check_regular(g, 3)


def test_path_graph_not_regular():
    rep = check_regular(parse_graph("3 2\n1 2\n2 3\n"), 3)
    assert not rep and rep.offending_vertex == 1


def test_k33_regular():
    g = fixture("k33")
    assert (g.n, g.m) == (6, 9) and check_regular(g, 3)


@pytest.mark.parametrize("text", ["3 1\n1 1\n", "3 2\n1 2\n2 1\n", "3 1\n1 4\n", "3 2\n1 2\n", "x y\n", "3 1\n1\n"])
def test_graph_parse_errors(text):
    with pytest.raises(MdpFormatError):
        parse_graph(text)


@pytest.mark.parametrize("name", ["k4", "k33", "q3", "petersen"])
def test_fixture_independence_numbers(name):
    g = fixture(name)
    assert check_regular(g, 3)
    S, size = max_independent_set_bruteforce(g)
    assert size == INDEPENDENCE_NUMBER[name]
    assert g.is_independent(S)
    # no independent set one larger, by direct enumeration
    assert not any(g.is_independent(c) for c in itertools.combinations(range(1, g.n + 1), size + 1))


def test_edge_index_is_input_order():
    g = parse_graph("4 6\n3 4\n1 2\n1 3\n1 4\n2 3\n2 4\n")
    assert g.incident(1) == [(2, 2), (3, 3), (4, 4)]


# -- gadget -----------------------------------------------------------------


def test_k4_example_values():
    inst = build_gadget_mdp(fixture("k4"), 2)
    e12 = inst.state("e1_2")
    assert inst.mdp.rewards[e12, 0] == 6**4 == 1296
    assert inst.mdp.kernel[0, inst.vertex_state(1), e12] == Fraction(1, 36)
    assert inst.mdp.kernel[0, inst.vertex_state(2), e12] == Fraction(1, 36)


@pytest.mark.parametrize("name,k", [("k4", 2), ("k33", 3), ("q3", 4), ("petersen", 4)])
def test_gadget_invariants(name, k):
    inst = build_gadget_mdp(fixture(name), k)
    mdp, m = inst.mdp, inst.m
    assert mdp.rational and validate_mdp(mdp).ok
    assert all(sum(row) == 1 for row in mdp.kernel.reshape(-1, mdp.n_states))
    assert inst.n_actions == max(k, 2)
    for v in range(1, inst.graph.n + 1):
        law = xv_law(inst, v)
        assert law.mean() == inst.mu
        for p, _ in inst.graph.incident(v):
            assert law.prob(Fraction(m) ** (4 * p)) == Fraction(1, m ** (2 * p))
        assert law.prob(Fraction(m) ** (10 * m)) >= 0
        sv = inst.vertex_state(v)
        for a in range(1, inst.n_actions):
            assert mdp.kernel[a, sv, inst.state("sN")] == 1
    sT = inst.state("sT")
    assert mdp.kernel[:, sT, sT].tolist() == [1] * inst.n_actions
    assert all(x == 0 for x in mdp.rewards[[inst.state("sN"), sT]].reshape(-1))
    assert mdp.rewards[inst.state("sB"), 0] == Fraction(m) ** (10 * m)
    with pytest.raises(ValueError):
        mdp.to_mode("float")


def test_gadget_rejections():
    with pytest.raises(ValueError):
        build_gadget_mdp(parse_graph("3 2\n1 2\n2 3\n"), 1)
    with pytest.raises(ValueError):
        build_gadget_mdp(fixture("k4"), 5)
    with pytest.raises(ValueError):
        build_gadget_mdp(fixture("k4"), 2, mu=1)


def test_singleton_expected_max_is_mu():
    inst = build_gadget_mdp(fixture("k33"), 3)
    for v in range(1, 7):
        assert expected_max_subset(inst, {v}) == inst.mu


def test_product_and_cdf_agree():
    inst = build_gadget_mdp(fixture("petersen"), 4)
    for Y in [(1, 2), (1, 3, 5), (2, 4, 6, 8)]:
        assert expected_max_subset(inst, Y) == expected_max_subset(inst, Y, method="cdf")


def test_expected_max_guards():
    inst = build_gadget_mdp(fixture("k4"), 2)
    with pytest.raises(ValueError):
        expected_max_subset(inst, (1, 2, 3))
    with pytest.raises(BudgetExceededError):
        expected_max_subset(inst, (1, 2), budget=10)


def test_expected_max_matches_monte_carlo():
    # plain sampling never sees the m^(10m) atom (mass about m^(-8m)) that carries
    # most of the mean, so sample each X_v uniformly over its support and reweight
    inst = build_gadget_mdp(fixture("k4"), 2)
    exact = expected_max_subset(inst, (1, 2))
    rng = np.random.default_rng(0)
    n = 10**6
    laws = [xv_law(inst, v) for v in (1, 2)]
    picks = [rng.integers(len(law.support), size=n) for law in laws]
    # values scaled by mu keep float64 in range
    vals = [np.array([float(x / inst.mu) for x, _ in law.support]) for law in laws]
    ratio = [np.array([float(p * len(law.support)) for _, p in law.support]) for law in laws]
    est = np.maximum(vals[0][picks[0]], vals[1][picks[1]]) * ratio[0][picks[0]] * ratio[1][picks[1]]
    se = est.std(ddof=1) / np.sqrt(n)
    assert abs(est.mean() - float(exact / inst.mu)) <= 3 * se


def test_best_subset_k4():
    inst = build_gadget_mdp(fixture("k4"), 2)
    Y, val = best_subset_bruteforce(inst)
    vals = [expected_max_subset(inst, c) for c in itertools.combinations(range(1, 5), 2)]
    assert val == max(vals) and len(vals) == 6
    assert vals.index(val) == list(itertools.combinations(range(1, 5), 2)).index(Y)


def test_geometric_discount():
    assert geometric_discount(Fraction(3, 4), 1) == Fraction(3, 4)
    g, q = Fraction(9, 10), Fraction(1, 8)
    series = sum(g**t * q * (1 - q) ** (t - 1) for t in range(1, 400))
    assert abs(geometric_discount(g, q) - series) < Fraction(1, 10**15)


def test_thresholds_exact_and_separated():
    inst = build_gadget_mdp(fixture("k33"), 3)
    t = inst.thresholds
    n, k, m, mu = 6, 3, 9, inst.mu
    c = (k * mu - Fraction(2, m)) / (k * mu - 1)
    assert t.gamma_min == 1 - (c - 1) / n**k
    assert t.soundness == t.gamma**3 * (k * mu - 1)
    assert t.completeness == (k * mu - Fraction(2, m)) * t.gamma**3 * geometric_discount(t.gamma, Fraction(1, n**k))
    assert t.soundness < t.completeness
    # the bounds meet exactly at the crossing point
    at = t.at(t.gamma_threshold)
    assert at.soundness == at.completeness
    assert t.gamma_min < t.gamma_threshold < t.gamma < 1
    assert t.gamma.denominator & (t.gamma.denominator - 1) == 0


def test_thresholds_degenerate():
    with pytest.raises(ValueError):
        compute_thresholds(4, 1, 6, Fraction(1, 2))


def test_dyadic_above():
    assert dyadic_above(Fraction(1, 3)) == Fraction(1, 2)
    assert dyadic_above(Fraction(1, 2)) == Fraction(3, 4)
    x = Fraction(999, 1000)
    d = dyadic_above(x)
    assert x < d < 1 and d == Fraction(1023, 1024)


def test_soundness_k4():
    rep = verify_separation(build_gadget_mdp(fixture("k4"), 2))
    assert rep.passed
    c = rep.check("soundness")
    assert c.applicable and c.passed and c.value <= c.bound
    assert not rep.check("completeness").applicable


def test_completeness_k33():
    inst = build_gadget_mdp(fixture("k33"), 3)
    rep = verify_separation(inst, (1, 2, 3))
    assert rep.passed
    c = rep.check("completeness")
    assert c.subset == (1, 2, 3) and c.value >= c.bound
    assert rep.check("interval").passed
    assert rep.independence_number == 3
    assert "max(k, 2)" in rep.interpretation


def test_separation_rejects_bad_witness():
    with pytest.raises(ValueError):
        verify_separation(build_gadget_mdp(fixture("k33"), 3), (1, 4, 5))


@pytest.mark.parametrize("name,k", [("q3", 4), ("q3", 5), ("petersen", 4), ("petersen", 5)])
def test_separation_other_fixtures(name, k):
    assert verify_separation(build_gadget_mdp(fixture(name), k)).passed


def test_qb_scaling_reported():
    rep = verify_separation(build_gadget_mdp(fixture("k4"), 2))
    assert rep.qb_scaling["within_scaling"]


def test_waiting_event_probability_exact():
    inst = build_gadget_mdp(fixture("k33"), 3)
    # three draws over six vertices cover {1,2,3} in 3! of 6^3 ways
    assert waiting_event_probability(inst, (1, 2, 3)) == Fraction(6, 216)
    k4 = build_gadget_mdp(fixture("k4"), 1)
    assert waiting_event_probability(k4, (1,)) == 1 - Fraction(9, 16)


def test_waiting_policy_exact_on_augmented_chain(k4_one):
    inst, model = k4_one
    res = check_waiting_policy(inst, (1,), model)
    assert res.value == res.closed_form
    assert res.value >= res.bound
    assert res.passed


def test_dp_recursion_on_reachable_states(k4_one):
    inst, model = k4_one
    res = check_dp_recursion(inst, model)
    assert res.passed and res.states_checked == 16


# -- reset ------------------------------------------------------------------


def test_reset_one_state_unchanged():
    mdp = TabularMdp(["s"], ["a"], [[["1"]]], [["3"]], mode="rational")
    out = reset_transform(mdp, Fraction(1, 2), "s")
    assert out.kernel[0, 0, 0] == 1


@pytest.mark.parametrize("seed", range(5))
def test_reset_rows_and_unichain(seed):
    mdp = random_mdp(3, 2, seed, mode="rational", support=1)
    out = reset_transform(mdp, Fraction(3, 4), "s0")
    assert validate_mdp(out).ok
    assert check_unichain_exhaustive(out)
    assert all(out.kernel[a, s, 0] >= Fraction(1, 4) for a in range(2) for s in range(3))


def test_reset_rejects_gamma():
    with pytest.raises(ValueError):
        reset_transform(random_mdp(2, 2, 0), 1.0, "s0")


def test_renewal_trivial_cases():
    mdp = TabularMdp(["s"], ["a"], [[[1.0]]], [[2.5]])
    rc = verify_renewal_identity(mdp, 0.9, "s", Policy.deterministic([0], 1))
    assert rc.gain == pytest.approx(2.5) and rc.residual <= 1e-12
    zero = random_mdp(3, 2, 0).replace(rewards=np.zeros((3, 2)))
    rc = verify_renewal_identity(zero, 0.5, "s1", Policy.deterministic([0, 1, 0], 2))
    assert rc.gain == 0 and rc.value == 0


def test_renewal_random_float():
    mdp = random_mdp(4, 2, 3)
    pol = Policy(np.random.default_rng(0).dirichlet(np.ones(2), size=4))
    assert verify_renewal_identity(mdp, 0.75, "s0", pol).residual <= 1e-8


def test_renewal_rational_exact():
    mdp = random_mdp(4, 2, 5, mode="rational")
    pol = Policy.deterministic([1, 0, 1, 1], 2, Fraction(1))
    assert verify_renewal_identity(mdp, Fraction(3, 4), "s2", pol).residual == 0


def test_renewal_on_gadget_with_waiting_policy(k4_one):
    inst, model = k4_one
    pol = waiting_policy(inst, model, (1,))
    rc = verify_renewal_identity_augmented(model, inst.gamma, 0, pol)
    assert rc.residual == 0
    values = policy_evaluation_discounted(model.mdp, pol, inst.gamma)
    assert rc.value == model.expected_over_initial(values, 0)
