"""The independent-set gadget MDP and exact checks of its value separation.

A 3-regular graph with ``m`` edges becomes a rational MDP whose start state
``s0`` lets the agent wait (action ``a1``) or commit (any other action) to a
walk ``s0 -> s1 -> s_v -> outcome -> sT``. The outcome reached from ``s_v``
under ``a1`` pays ``X_v``, and the ``X_v`` are independent across vertices.
With two-step look-ahead the agent sees which vertices a commitment would
reveal, so the optimal value tracks the best expected maximum over ``k``
vertices, which is large exactly when the graph has an independent ``k``-set.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from mdplook.core import NumericMode, Policy, TabularMdp, default_budget
from mdplook.errors import BudgetExceededError
from mdplook.hardness.graphs import Graph, check_regular, independent_sets_of_size, max_independent_set_bruteforce

SEPARATION_MAX_VERTICES = 12
SUBSET_PRODUCT_BUDGET = 10**7
AUGMENTED_STATE_CAP = 5000
ACTION_INTERPRETATION = "|A| = max(k, 2): a1 waits, the other actions let depth-2 look-ahead reveal up to |A| vertices"


# -- instance ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GadgetInstance:
    graph: Graph
    k: int
    mu: Fraction
    mdp: TabularMdp
    gamma: Fraction
    thresholds: "Thresholds"
    n_actions: int
    interpretation: str = ACTION_INTERPRETATION

    @property
    def m(self) -> int:
        return self.graph.m

    def vertex_state(self, v: int) -> int:
        return 1 + v

    def edge_state(self, p: int) -> int:
        return 1 + self.graph.n + p

    def state(self, name: str) -> int:
        return self.mdp.state_index(name)

    def vertex_of_state(self, s: int) -> int | None:
        v = s - 1
        return v if 1 <= v <= self.graph.n else None

    def report(self) -> dict:
        t = self.thresholds
        return {
            "graph": {"n": self.graph.n, "m": self.graph.m},
            "k": self.k,
            "mu": str(self.mu),
            "n_actions": self.n_actions,
            "interpretation": self.interpretation,
            "gamma": str(self.gamma),
            "thresholds": t.as_dict(),
        }


def state_names(graph: Graph) -> list:
    names = ["s0", "s1"] + [f"v{v}" for v in range(1, graph.n + 1)]
    names += [f"e{u}_{v}" for u, v in graph.edges]
    return names + ["sB", "sN", "sT"]


def default_mu(graph: Graph) -> Fraction:
    m = graph.m
    return Fraction(max(sum(m ** (2 * p) for p, _ in graph.incident(v)) for v in range(1, graph.n + 1)) + 1)


def build_gadget_mdp(graph: Graph, k: int, mu=None, n_actions: int | None = None) -> GadgetInstance:
    """Exact rational gadget for ``graph`` and target independent-set size ``k``."""
    reg = check_regular(graph, 3)
    if not reg:
        raise ValueError(f"graph is not 3-regular (vertex {reg.offending_vertex})")
    if not 1 <= k <= graph.n:
        raise ValueError(f"k must lie in 1..{graph.n}, got {k}")
    A = max(k, 2) if n_actions is None else int(n_actions)
    if A < 2:
        raise ValueError("the gadget needs at least two actions")
    n, m = graph.n, graph.m
    mu = default_mu(graph) if mu is None else Fraction(mu)
    big = Fraction(m) ** (10 * m)
    names = state_names(graph)
    S = len(names)
    s0, s1, sB, sN, sT = 0, 1, S - 3, S - 2, S - 1
    zero, one = Fraction(0), Fraction(1)
    kernel = np.full((A, S, S), zero, dtype=object)
    rewards = np.full((S, A), zero, dtype=object)
    kernel[0, s0, s0] = one
    for a in range(1, A):
        kernel[a, s0, s1] = one
    for a in range(A):
        for v in range(1, n + 1):
            kernel[a, s1, 1 + v] = Fraction(1, n)
    for v in range(1, n + 1):
        sv = 1 + v
        inc = graph.incident(v)
        q_b = (mu - sum(Fraction(m) ** (2 * p) for p, _ in inc)) / big
        if q_b < 0:
            raise ValueError(f"mu = {mu} too small: negative s_B mass at vertex {v}")
        q_n = one - sum(Fraction(1, m ** (2 * p)) for p, _ in inc) - q_b
        if q_n < 0:
            raise ValueError(f"mu = {mu} too large: negative s_N mass at vertex {v}")
        for p, _ in inc:
            kernel[0, sv, 1 + n + p] = Fraction(1, m ** (2 * p))
        kernel[0, sv, sB] = q_b
        kernel[0, sv, sN] = q_n
        for a in range(1, A):
            kernel[a, sv, sN] = one
    for p in range(1, m + 1):
        rewards[1 + n + p, :] = Fraction(m) ** (4 * p)
    rewards[sB, :] = big
    for s in list(range(1 + n + 1, 1 + n + m + 1)) + [sB, sN, sT]:
        kernel[:, s, sT] = one
    th = compute_thresholds(n, k, m, mu)
    mdp = TabularMdp(names, [f"a{i}" for i in range(1, A + 1)], kernel, rewards, gamma=th.gamma,
                     initial_state="s0", mode=NumericMode.RATIONAL)
    return GadgetInstance(graph, k, mu, mdp, th.gamma, th, A)


# -- X_v laws ---------------------------------------------------------------


@dataclass(frozen=True)
class XvLaw:
    """Law of the reward collected one step after playing ``a1`` in ``s_v``."""

    vertex: int
    support: tuple  # (value, probability), increasing values

    def mean(self) -> Fraction:
        return sum((x * p for x, p in self.support), Fraction(0))

    def prob(self, value) -> Fraction:
        return dict(self.support).get(value, Fraction(0))

    def cdf(self, x) -> Fraction:
        return sum((p for y, p in self.support if y <= x), Fraction(0))


def xv_law(instance: GadgetInstance, v: int) -> XvLaw:
    """Read ``X_v`` off the emitted kernel and rewards (not off the formulas)."""
    mdp = instance.mdp
    row = mdp.kernel[0, instance.vertex_state(v)]
    law: dict = {}
    for t, p in enumerate(row):
        if p:
            x = mdp.rewards[t, 0]
            law[x] = law.get(x, Fraction(0)) + p
    return XvLaw(v, tuple(sorted(law.items())))


def _max_by_product(laws, budget):
    size = 1
    for law in laws:
        size *= len(law.support)
    if size > budget:
        raise BudgetExceededError(f"product of supports {size} exceeds budget {budget}")
    total = Fraction(0)
    for combo in itertools.product(*(law.support for law in laws)):
        prob = Fraction(1)
        for _, p in combo:
            prob *= p
        total += prob * max(x for x, _ in combo)
    return total


def _max_by_cdf(laws):
    # E[max] = sum_x x * (F(x) - F(x-)), F the product of marginal CDFs
    values = sorted({x for law in laws for x, _ in law.support})
    total, prev = Fraction(0), Fraction(0)
    for x in values:
        F = Fraction(1)
        for law in laws:
            F *= law.cdf(x)
        total += x * (F - prev)
        prev = F
    return total


def expected_max_subset(instance: GadgetInstance, Y, method: str = "product", budget: int = SUBSET_PRODUCT_BUDGET) -> Fraction:
    """``E[max_{v in Y} X_v]`` exactly, for a vertex set ``Y`` with ``|Y| <= k``."""
    Y = sorted(set(Y))
    if not Y:
        raise ValueError("Y must be non-empty")
    if len(Y) > instance.k:
        raise ValueError(f"|Y| = {len(Y)} exceeds k = {instance.k}")
    laws = [xv_law(instance, v) for v in Y]
    if method == "product":
        return _max_by_product(laws, budget)
    if method == "cdf":
        return _max_by_cdf(laws)
    raise ValueError(f"unknown method {method!r}")


def best_subset_bruteforce(instance: GadgetInstance, k: int | None = None) -> tuple:
    """Largest expected maximum over all ``k``-subsets; ties go to the lexicographically first."""
    k = instance.k if k is None else k
    n = instance.graph.n
    if n > 20:
        raise BudgetExceededError(f"exhaustive subset search limited to n <= 20, got {n}")
    laws = {v: xv_law(instance, v) for v in range(1, n + 1)}
    best, best_val = None, None
    for Y in itertools.combinations(range(1, n + 1), k):
        val = _max_by_cdf([laws[v] for v in Y])
        if best_val is None or val > best_val:
            best, best_val = Y, val
    return best, best_val


# -- thresholds -------------------------------------------------------------


def geometric_discount(gamma, q) -> Fraction:
    """``E[gamma^tau]`` for ``tau`` geometric on ``{1, 2, ...}`` with success probability ``q``."""
    gamma, q = Fraction(gamma), Fraction(q)
    return gamma * q / (1 - gamma * (1 - q))


def dyadic_above(x: Fraction) -> Fraction:
    """Smallest-denominator dyadic rational strictly between ``x`` and 1."""
    x = Fraction(x)
    if not 0 <= x < 1:
        raise ValueError("x must lie in [0, 1)")
    d = 1
    while True:
        cand = Fraction(int(x * 2**d) + 1, 2**d)
        if cand < 1:
            return cand
        d += 1


@dataclass(frozen=True)
class Thresholds:
    n: int
    k: int
    m: int
    mu: Fraction
    gamma: Fraction
    q: Fraction
    expected_discount: Fraction
    soundness: Fraction
    completeness: Fraction
    gamma_min: Fraction
    gamma_threshold: Fraction

    @property
    def separated(self) -> bool:
        return self.soundness < self.completeness

    def at(self, gamma) -> "Thresholds":
        return compute_thresholds(self.n, self.k, self.m, self.mu, gamma)

    def as_dict(self) -> dict:
        return {
            "soundness": str(self.soundness),
            "completeness": str(self.completeness),
            "gamma": str(self.gamma),
            "gamma_min": str(self.gamma_min),
            "gamma_threshold": str(self.gamma_threshold),
            "q": str(self.q),
            "expected_discount": str(self.expected_discount),
            "separated": self.separated,
            "mu": str(self.mu),
            "k": self.k,
        }


def compute_thresholds(n: int, k: int, m: int, mu, gamma=None) -> Thresholds:
    """Soundness and completeness value bounds and the discount conditions.

    ``gamma_min`` is the closed-form condition ``1 - (c - 1) / n^k`` with
    ``c = (k mu - 2/m) / (k mu - 1)``. It linearizes the exact crossing point
    ``gamma_threshold = 1 / (1 + (c - 1) / n^k)`` where the two bounds meet,
    and lies slightly below it. Without an explicit ``gamma`` the bounds are
    evaluated at the smallest dyadic rational above ``gamma_threshold``.
    """
    mu = Fraction(mu)
    if k * mu <= 1:
        raise ValueError("degenerate instance: k * mu <= 1")
    q = Fraction(1, n**k)
    c = (k * mu - Fraction(2, m)) / (k * mu - 1)
    gamma_min = 1 - (c - 1) * q
    gamma_threshold = 1 / (1 + (c - 1) * q)
    gamma = dyadic_above(gamma_threshold) if gamma is None else Fraction(gamma)
    e = geometric_discount(gamma, q)
    return Thresholds(
        n, k, m, mu, gamma, q, e,
        soundness=gamma**3 * (k * mu - 1),
        completeness=(k * mu - Fraction(2, m)) * gamma**3 * e,
        gamma_min=gamma_min,
        gamma_threshold=gamma_threshold,
    )


def thresholds(instance: GadgetInstance, gamma=None) -> Thresholds:
    if gamma is None:
        return instance.thresholds
    return instance.thresholds.at(gamma)


# -- waiting policy ---------------------------------------------------------


def _revealed_sets(n: int, A: int, budget: int):
    if n**A > budget:
        raise BudgetExceededError(f"{n}^{A} reveal patterns exceed budget {budget}")
    counts: dict = {}
    for draw in itertools.product(range(1, n + 1), repeat=A):
        R = frozenset(draw)
        counts[R] = counts.get(R, 0) + 1
    return counts


def waiting_event_probability(instance: GadgetInstance, S_star, budget: int | None = None) -> Fraction:
    """Probability that one commitment from ``s0`` reveals every vertex of ``S_star``."""
    budget = default_budget() if budget is None else budget
    n, A = instance.graph.n, instance.n_actions
    target = frozenset(S_star)
    hits = sum(c for R, c in _revealed_sets(n, A, budget).items() if target <= R)
    return Fraction(hits, n**A)


def waiting_policy_value(instance: GadgetInstance, S_star, budget: int | None = None) -> Fraction:
    """Exact value at ``s0`` of: wait until ``S_star`` is revealed, then commit and act greedily.

    Each wait is a fresh independent reveal, so the number of waits ``N`` is
    geometric on ``{0, 1, ...}`` and the value is
    ``gamma^3 E[gamma^N] E[max_{v in R} X_v | R contains S_star]``.
    """
    budget = default_budget() if budget is None else budget
    n, A, g = instance.graph.n, instance.n_actions, instance.gamma
    target = frozenset(S_star)
    laws = {v: xv_law(instance, v) for v in range(1, n + 1)}
    hits, acc = 0, Fraction(0)
    for R, c in _revealed_sets(n, A, budget).items():
        if target <= R:
            hits += c
            acc += c * _max_by_cdf([laws[v] for v in sorted(R)])
    if hits == 0:
        return Fraction(0)
    q = Fraction(hits, n**A)
    return g**3 * q / (1 - g * (1 - q)) * (acc / hits)


def _revealed(xi, A: int) -> frozenset:
    # vertices reached by committing (action index 1) then playing anything
    return frozenset(xi[2][A:2 * A])


def waiting_policy(instance: GadgetInstance, model, S_star) -> Policy:
    """Deterministic policy on the depth-2 augmented gadget.

    At ``s0`` commit once the revealed vertex set contains ``S_star``. Elsewhere
    pick the action whose visible rewards along the look-ahead tree are best.
    """
    base, A, g = instance.mdp, instance.n_actions, instance.gamma
    targets = frozenset(instance.vertex_state(v) for v in S_star)
    r = base.rewards
    actions = []
    for xi in model.xis:
        s = xi[0][0]
        if s == 0:
            actions.append(1 if targets <= _revealed(xi, A) else 0)
            continue
        scores = []
        for a in range(A):
            t1 = xi[1][a]
            t2 = xi[2][a * A:(a + 1) * A]
            scores.append(r[s, a] + g * max(r[t1]) + g * g * max(max(r[t]) for t in t2))
        actions.append(scores.index(max(scores)))
    return Policy.deterministic(actions, A, Fraction(1))


def gadget_augmented_model(instance: GadgetInstance, cap: int = AUGMENTED_STATE_CAP):
    """Depth-2 augmented gadget over the states reachable from ``s0``."""
    from mdplook.lookahead import build_augmented_mdp

    return build_augmented_mdp(instance.mdp, ["s0"], 2, budget=cap)


@dataclass
class WaitingCheck:
    value: Fraction
    closed_form: Fraction
    bound: Fraction
    event_probability: Fraction
    nominal_probability: Fraction

    @property
    def passed(self) -> bool:
        return self.value == self.closed_form and self.value >= self.bound


def check_waiting_policy(instance: GadgetInstance, S_star, model=None) -> WaitingCheck:
    """Evaluate the waiting policy exactly on the augmented chain and compare."""
    from mdplook.planners import policy_evaluation_discounted

    model = gadget_augmented_model(instance) if model is None else model
    pol = waiting_policy(instance, model, S_star)
    values = policy_evaluation_discounted(model.mdp, pol, instance.gamma)
    value = model.expected_over_initial(values, 0)
    return WaitingCheck(
        value,
        waiting_policy_value(instance, S_star),
        instance.thresholds.completeness,
        waiting_event_probability(instance, S_star),
        instance.thresholds.q,
    )


@dataclass
class DpCheck:
    states_checked: int
    mismatches: list
    optimal_value: Fraction

    @property
    def passed(self) -> bool:
        return self.states_checked > 0 and not self.mismatches


def check_dp_recursion(instance: GadgetInstance, model=None) -> DpCheck:
    """On every ``s0`` look-ahead state, ``v*(xi) = max(commit value, gamma E[v*(xi')])`` exactly."""
    from mdplook.planners import policy_iteration_discounted

    model = gadget_augmented_model(instance) if model is None else model
    sol = policy_iteration_discounted(model.mdp, instance.gamma)
    v, g, A = sol.values, instance.gamma, instance.n_actions
    laws = {x: xv_law(instance, x) for x in range(1, instance.graph.n + 1)}
    checked, bad = 0, []
    for i, xi in enumerate(model.xis):
        if xi[0][0] != 0:
            continue
        R = sorted(instance.vertex_of_state(s) for s in _revealed(xi, A))
        commit = g**3 * _max_by_cdf([laws[x] for x in R])
        wait = g * sum((p * v[j] for j, p in enumerate(model.mdp.kernel[0, i]) if p), Fraction(0))
        checked += 1
        if v[i] != max(commit, wait):
            bad.append(i)
    return DpCheck(checked, bad, model.expected_over_initial(v, 0))


# -- separation -------------------------------------------------------------


@dataclass
class LemmaCheck:
    name: str
    applicable: bool
    passed: bool | None = None
    subset: tuple | None = None
    value: Fraction | None = None
    bound: Fraction | None = None

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "applicable": self.applicable,
            "passed": self.passed,
            "subset": None if self.subset is None else list(self.subset),
            "value": None if self.value is None else str(self.value),
            "bound": None if self.bound is None else str(self.bound),
        }


@dataclass
class SeparationReport:
    k: int
    independence_number: int
    checks: list
    findings: list = field(default_factory=list)
    qb_scaling: dict = field(default_factory=dict)
    interpretation: str = ACTION_INTERPRETATION

    def check(self, name: str) -> LemmaCheck:
        return next(c for c in self.checks if c.name == name)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.applicable)

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "independence_number": self.independence_number,
            "passed": self.passed,
            "checks": [c.as_dict() for c in self.checks],
            "findings": list(self.findings),
            "qb_scaling": self.qb_scaling,
            "interpretation": self.interpretation,
        }


def qb_scaling(instance: GadgetInstance) -> dict:
    """Largest ``P(s_B | s_v, a1) * m^(8m)``; bounded by a constant means the mass is ``O(m^(-8m))``."""
    m = instance.m
    sB = instance.mdp.n_states - 3
    ratio = max(instance.mdp.kernel[0, instance.vertex_state(v), sB] for v in range(1, instance.graph.n + 1))
    ratio *= Fraction(m) ** (8 * m)
    # with the default mu the ratio stays below 3 + m^(-2m); 4 leaves room for a user mu
    return {"max_ratio": str(ratio), "max_ratio_float": float(ratio), "within_scaling": ratio <= 4}


def verify_separation(instance: GadgetInstance, S_star=None) -> SeparationReport:
    """Per-lemma exhaustive checks of the soundness/completeness separation."""
    graph, k = instance.graph, instance.k
    if graph.n > SEPARATION_MAX_VERTICES:
        raise BudgetExceededError(f"verify_separation is limited to n <= {SEPARATION_MAX_VERTICES}")
    _, alpha = max_independent_set_bruteforce(graph)
    t = instance.thresholds
    km = k * instance.mu
    checks, findings = [], []
    if S_star is None:
        S_star = next(independent_sets_of_size(graph, k), None)
    elif not graph.is_independent(S_star) or len(set(S_star)) != k:
        raise ValueError(f"{tuple(S_star)} is not an independent set of size {k}")
    if S_star is None:
        Y, val = best_subset_bruteforce(instance, k)
        ok = val <= km - 1
        checks.append(LemmaCheck("soundness", True, ok, Y, val, km - 1))
        checks.append(LemmaCheck("completeness", False))
        if not ok:
            findings.append(f"subset {Y} has E[max] = {val} above k*mu - 1")
    else:
        S_star = tuple(sorted(S_star))
        val = _max_by_cdf([xv_law(instance, v) for v in S_star])
        ok = val >= km - Fraction(2, instance.m)
        checks.append(LemmaCheck("soundness", False))
        checks.append(LemmaCheck("completeness", True, ok, S_star, val, km - Fraction(2, instance.m)))
        if not ok:
            findings.append(f"independent set {S_star} has E[max] = {val} below k*mu - 2/m")
        w = waiting_policy_value(instance, S_star)
        wok = w >= t.completeness
        checks.append(LemmaCheck("waiting-policy", True, wok, S_star, w, t.completeness))
        q = waiting_event_probability(instance, S_star)
        if q != t.q:
            findings.append(f"reveal event has probability {q}, nominal geometric rate is {t.q}")
    sep = t.soundness < t.completeness
    checks.append(LemmaCheck("interval", True, sep, None, t.completeness, t.soundness))
    if not sep:
        findings.append(f"soundness bound {t.soundness} is not below completeness bound {t.completeness}")
    at_min = t.at(t.gamma_min)
    if not at_min.separated:
        findings.append("at gamma_min itself the completeness bound does not exceed the soundness bound")
    scaling = qb_scaling(instance)
    if not scaling["within_scaling"]:
        findings.append(f"s_B mass is not O(m^(-8m)): ratio {scaling['max_ratio_float']:.3g}")
    return SeparationReport(k, alpha, checks, findings, scaling, instance.interpretation)
