"""Polynomial-time planning with one-step transition look-ahead.

With depth 1 the agent sees the whole next-state vector ``p`` (one successor
per action, drawn independently) before acting. The planner works with the
reduced operator

    (T v)(s) = E_{p ~ Pbar(.|s)} [ max_a  r(s, a) + gamma * v(p(a)) ],

whose expectation of a maximum is evaluated without enumerating ``S**A``
vectors: sort all (next state, action) pairs by score and weight each pair by
the probability that it is the first pair in the list matched by ``p``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mdplook.core import Policy, TabularMdp, check_unichain_exhaustive, default_budget
from mdplook.errors import BudgetExceededError, IterationLimitError, NotUnichainError
from mdplook.planners import AVERAGE_TOL, DiscountedSolution, GainBias, _gamma, relative_value_iteration
from mdplook.simplex import linprog_dense

CUT_TOL = 1e-9


# -- the law of the next-state vector ---------------------------------------


def product_lookahead_prob(mdp: TabularMdp, s, p: Sequence[int]):
    """``Pbar(p | s) = prod_a P_a(p(a) | s)``."""
    s = mdp.state_index(s)
    if len(p) != mdp.n_actions:
        raise ValueError("next-state vector must give one state per action")
    prob = mdp.one
    for a, t in enumerate(p):
        prob = prob * mdp.kernel[a, s, mdp.state_index(t)]
    return prob


def next_state_vectors(mdp: TabularMdp, s, budget: int | None = None, positive_only: bool = True):
    """All ``(p, Pbar(p|s))`` pairs, ``p`` as a tuple of state indices."""
    budget = default_budget() if budget is None else budget
    S, A = mdp.n_states, mdp.n_actions
    if S**A > budget:
        raise BudgetExceededError(f"{S}^{A} next-state vectors exceed budget {budget}")
    s = mdp.state_index(s)
    out = []
    for p in itertools.product(range(S), repeat=A):
        prob = product_lookahead_prob(mdp, s, p)
        if prob != 0 or not positive_only:
            out.append((p, prob))
    return out


def expected_max_bruteforce(mdp: TabularMdp, s, u, budget: int | None = None):
    """``E_{p ~ Pbar(.|s)}[max_a u[p(a), a]]`` by full enumeration of ``S**A`` vectors."""
    total = mdp.zero
    for p, prob in next_state_vectors(mdp, s, budget, positive_only=False):
        total = total + prob * max(u[t][a] for a, t in enumerate(p))
    return total


# -- sorting trick ----------------------------------------------------------


def ordering_from_scores(u) -> list:
    """Pairs ``(state, action)`` by decreasing score; ties by state then action index."""
    S, A = len(u), len(u[0])
    return sorted(((t, a) for t in range(S) for a in range(A)), key=lambda ta: (-u[ta[0]][ta[1]], ta[0], ta[1]))


def event_probabilities(mdp: TabularMdp, s, ordering: Sequence) -> list:
    """``mu(i | m)`` for every position ``i``: the chance that pair ``i`` is the first match.

    Pair ``(t, a)`` matches ``p`` when ``p(a) = t``. Per action, the mass of
    successors already listed is tracked incrementally, so all positions cost
    ``O(SA * A)``.
    """
    s = mdp.state_index(s)
    A = mdp.n_actions
    forbidden = [mdp.zero] * A
    out = []
    for t, a in ordering:
        prob = mdp.kernel[a, s, t]
        if prob != 0:
            for b in range(A):
                if b != a:
                    prob = prob * (1 - forbidden[b])
        out.append(prob)
        forbidden[a] = forbidden[a] + mdp.kernel[a, s, t]
    return out


def event_probability(mdp: TabularMdp, s, ordering: Sequence, i: int):
    """``P[p in E_i^m | s]`` for 1-based position ``i``."""
    if not 1 <= i <= len(ordering):
        raise ValueError(f"position {i} outside 1..{len(ordering)}")
    return event_probabilities(mdp, s, ordering)[i - 1]


def expected_max_sorted(mdp: TabularMdp, s, u):
    """Same quantity as :func:`expected_max_bruteforce`, via the score-induced ordering."""
    order = ordering_from_scores(u)
    mu = event_probabilities(mdp, s, order)
    total = mdp.zero
    for (t, a), w in zip(order, mu):
        if w:
            total = total + w * u[t][a]
    return total


def ordering_value(mdp: TabularMdp, s, u, ordering: Sequence):
    """``sum_i mu(i | m) u(m(i))`` for an arbitrary ordering ``m``."""
    mu = event_probabilities(mdp, s, ordering)
    return sum((w * u[t][a] for (t, a), w in zip(ordering, mu)), mdp.zero)


def discounted_scores(mdp: TabularMdp, s, v, gamma) -> list:
    """``u[t][a] = r(s, a) + gamma v(t)``."""
    s = mdp.state_index(s)
    return [[mdp.rewards[s, a] + gamma * v[t] for a in range(mdp.n_actions)] for t in range(mdp.n_states)]


def average_scores(mdp: TabularMdp, s, h) -> list:
    """``u[t][a] = r(s, a) + h(t)``."""
    return discounted_scores(mdp, s, h, 1)


# -- reduced operators and fixed points ---------------------------------------


def reduced_bellman_operator(mdp: TabularMdp, gamma, v) -> np.ndarray:
    dtype = object if mdp.rational else np.float64
    return np.array(
        [expected_max_sorted(mdp, s, discounted_scores(mdp, s, v, gamma)) for s in range(mdp.n_states)],
        dtype=dtype,
    )


def reduced_average_operator(mdp: TabularMdp, h) -> np.ndarray:
    dtype = object if mdp.rational else np.float64
    return np.array(
        [expected_max_sorted(mdp, s, average_scores(mdp, s, h)) for s in range(mdp.n_states)], dtype=dtype
    )


def _float_view(mdp: TabularMdp) -> TabularMdp:
    return mdp.to_mode("float") if mdp.rational else mdp


def solve_onestep_discounted(mdp: TabularMdp, gamma=None, epsilon: float = 1e-10, max_iter: int = 10**7) -> DiscountedSolution:
    """Fixed point of the reduced operator to within ``epsilon`` in sup norm."""
    gamma = float(_gamma(mdp, gamma))
    fm = _float_view(mdp)
    v = np.zeros(mdp.n_states)
    stop = epsilon * (1 - gamma) / (2 * gamma)
    for it in range(1, max_iter + 1):
        w = reduced_bellman_operator(fm, gamma, v)
        diff = float(np.max(np.abs(w - v)))
        v = w
        if diff <= stop:
            break
    else:
        raise IterationLimitError("reduced value iteration did not converge", last=v)
    residual = float(np.max(np.abs(reduced_bellman_operator(fm, gamma, v) - v)))
    return DiscountedSolution(v, None, it, residual, "sorted-vi")


# -- separation oracle and constraint generation ----------------------------


@dataclass
class Cut:
    """Linear constraint ``coeffs @ x >= rhs`` produced for state ``state``."""

    state: int
    ordering: list
    coeffs: np.ndarray
    rhs: float
    violation: float


@dataclass
class SeparationResult:
    feasible: bool
    cuts: list = field(default_factory=list)

    @property
    def cut(self):
        return self.cuts[0] if self.cuts else None


def _ordering_cut(mdp, s, ordering, mu, gamma, extra_gain: bool):
    S = mdp.n_states
    n = S + 1 if extra_gain else S
    coeffs = [mdp.zero] * n
    coeffs[s] = coeffs[s] + 1
    rhs = mdp.zero
    for (t, a), w in zip(ordering, mu):
        coeffs[t] = coeffs[t] - gamma * w
        rhs = rhs + w * mdp.rewards[s, a]
    if extra_gain:
        coeffs[S] = mdp.one
    return coeffs, rhs


def ordering_constraint(mdp: TabularMdp, s, ordering, gamma):
    """Coefficients of ``v(s) >= sum_i mu(i|m) (r(s, a_i) + gamma v(s_i))`` as ``coeffs @ v >= rhs``."""
    s = mdp.state_index(s)
    mu = event_probabilities(mdp, s, ordering)
    return _ordering_cut(mdp, s, ordering, mu, gamma, False)


def separation_oracle(mdp: TabularMdp, gamma, v, tol: float = CUT_TOL, all_violations: bool = False) -> SeparationResult:
    """Certify ``v(s) >= (T v)(s)`` for every state or return the tightest violated cut.

    Only the score-induced ordering needs checking per state: it maximises
    the right-hand side over all orderings.
    """
    cuts = []
    for s in range(mdp.n_states):
        u = discounted_scores(mdp, s, v, gamma)
        order = ordering_from_scores(u)
        mu = event_probabilities(mdp, s, order)
        rhs_value = sum((w * u[t][a] for (t, a), w in zip(order, mu)), mdp.zero)
        gap = rhs_value - v[s]
        if gap > tol:
            coeffs, rhs = _ordering_cut(mdp, s, order, mu, gamma, False)
            cuts.append(Cut(s, order, np.array(coeffs), rhs, float(gap)))
            if not all_violations:
                break
    return SeparationResult(not cuts, cuts)


def average_separation_oracle(mdp: TabularMdp, gain, h, tol: float = CUT_TOL, all_violations: bool = False) -> SeparationResult:
    """Same as :func:`separation_oracle` for ``g + h(s) >= E[max_a r(s,a) + h(p(a))]``.

    Cut coefficients act on ``(h[0], ..., h[S-1], g)``.
    """
    cuts = []
    for s in range(mdp.n_states):
        u = average_scores(mdp, s, h)
        order = ordering_from_scores(u)
        mu = event_probabilities(mdp, s, order)
        rhs_value = sum((w * u[t][a] for (t, a), w in zip(order, mu)), mdp.zero)
        gap = rhs_value - gain - h[s]
        if gap > tol:
            coeffs, rhs = _ordering_cut(mdp, s, order, mu, 1, True)
            cuts.append(Cut(s, order, np.array(coeffs), rhs, float(gap)))
            if not all_violations:
                break
    return SeparationResult(not cuts, cuts)


@dataclass
class CgSolution:
    values: np.ndarray
    iterations: int
    n_constraints: int
    oracle_calls: int
    converged: bool
    gain: float | None = None
    method: str = "cg-lp"


def _cg_cap(mdp: TabularMdp) -> int:
    S, A = mdp.n_states, mdp.n_actions
    return 10 * S * A * S


def solve_onestep_discounted_cg(mdp: TabularMdp, gamma=None, weights=None, tol: float = CUT_TOL,
                                max_iter: int | None = None) -> CgSolution:
    """Reduced LP ``min (1-gamma) sum_s w(s) v(s)`` solved by constraint generation.

    Starts from the box ``0 <= v <= R_max / (1 - gamma)`` and adds, each
    round, the violated cut the separation oracle returns for every state.
    Raises :class:`IterationLimitError` (with the last iterate) past the cap.
    """
    gamma = float(_gamma(mdp, gamma))
    fm = _float_view(mdp)
    S = mdp.n_states
    w = np.full(S, 1.0 / S) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("objective weights must be strictly positive")
    upper = float(fm.r_max) / (1 - gamma)
    c = (1 - gamma) * w
    A_ub, b_ub = [], []
    cap = _cg_cap(mdp) if max_iter is None else max_iter
    calls = 0
    v = None
    for it in range(1, cap + 1):
        res = linprog_dense(c, A_ub, b_ub, [(0.0, upper)] * S)
        if res.status != "optimal":
            raise RuntimeError(f"restricted LP {res.status}")
        v = res.x
        sep = separation_oracle(fm, gamma, v, tol, all_violations=True)
        calls += 1
        if sep.feasible:
            return CgSolution(v, it, len(A_ub), calls, True)
        for cut in sep.cuts:
            A_ub.append(-cut.coeffs)
            b_ub.append(-cut.rhs)
    raise IterationLimitError(f"constraint generation exceeded {cap} iterations",
                              last=CgSolution(v, cap, len(A_ub), calls, False))


def solve_onestep_average_cg(mdp: TabularMdp, tol: float = CUT_TOL, max_iter: int | None = None,
                             ref: int = 0) -> CgSolution:
    """Reduced average-reward LP ``min g`` by constraint generation; ``h[ref] = 0``."""
    fm = _float_view(mdp)
    S = mdp.n_states
    c = [0.0] * S + [1.0]
    bounds = [(None, None)] * S + [(0.0, float(fm.r_max))]
    bounds[ref] = (0.0, 0.0)
    A_ub, b_ub = [], []
    cap = _cg_cap(mdp) if max_iter is None else max_iter
    calls = 0
    x = None
    for it in range(1, cap + 1):
        res = linprog_dense(c, A_ub, b_ub, bounds)
        if res.status != "optimal":
            raise RuntimeError(f"restricted LP {res.status}")
        x = res.x
        sep = average_separation_oracle(fm, x[S], x[:S], tol, all_violations=True)
        calls += 1
        if sep.feasible:
            return CgSolution(x[:S], it, len(A_ub), calls, True, gain=float(x[S]))
        for cut in sep.cuts:
            A_ub.append(-cut.coeffs)
            b_ub.append(-cut.rhs)
    raise IterationLimitError(f"constraint generation exceeded {cap} iterations",
                              last=CgSolution(x[:S], cap, len(A_ub), calls, False, gain=float(x[S])))


# -- policies over (state, next-state vector) ---------------------------------


def augmented_value(mdp: TabularMdp, gamma, v, s, p):
    """``max_a r(s, a) + gamma v(p(a))``: the optimal value once ``p`` is observed."""
    s = mdp.state_index(s)
    return max(mdp.rewards[s, a] + gamma * v[t] for a, t in enumerate(p))


def lookahead_action(mdp: TabularMdp, gamma, v, s, p) -> int:
    s = mdp.state_index(s)
    q = [mdp.rewards[s, a] + gamma * v[t] for a, t in enumerate(p)]
    return q.index(max(q))


@dataclass
class LookaheadPolicy:
    """Deterministic rule ``(state, next-state vector) -> action``."""

    table: dict

    def action(self, s, p) -> int:
        return self.table[(s, tuple(p))]

    def on_model(self, model) -> Policy:
        """The same rule as a policy of an explicit depth-1 augmented MDP."""
        acts = [self.table[(xi[0][0], xi[1])] for xi in model.xis]
        return Policy.deterministic(acts, model.mdp.n_actions, model.mdp.one)


def greedy_lookahead_policy(mdp: TabularMdp, gamma, v) -> LookaheadPolicy:
    """Greedy action for every reachable ``(s, p)``; ties go to the smallest action index."""
    table = {}
    for s in range(mdp.n_states):
        for p, _ in next_state_vectors(mdp, s):
            table[(s, p)] = lookahead_action(mdp, gamma, v, s, p)
    return LookaheadPolicy(table)


def solve_onestep_average(mdp: TabularMdp, *, assume_unichain: bool = False, tol: float = AVERAGE_TOL) -> GainBias:
    """Optimal look-ahead gain and base-state bias from the reduced average operator."""
    if not assume_unichain:
        report = check_unichain_exhaustive(mdp)
        if not report:
            raise NotUnichainError(f"policy {report.witness} has {len(report.classes)} recurrent classes")
    fm = _float_view(mdp)
    gain, h, it, _ = relative_value_iteration(lambda h: reduced_average_operator(fm, h), mdp.n_states, tol)
    residual = float(np.max(np.abs(gain + h - reduced_average_operator(fm, h))))
    return GainBias(gain, h, None, it, residual, "sorted-rvi")


def all_orderings(n_states: int, n_actions: int):
    pairs = [(t, a) for t in range(n_states) for a in range(n_actions)]
    return itertools.permutations(pairs)


__all__ = [
    "product_lookahead_prob",
    "expected_max_bruteforce",
    "event_probability",
    "event_probabilities",
    "expected_max_sorted",
    "reduced_bellman_operator",
    "solve_onestep_discounted",
    "separation_oracle",
    "solve_onestep_discounted_cg",
    "augmented_value",
    "greedy_lookahead_policy",
    "solve_onestep_average",
    "solve_onestep_average_cg",
]
