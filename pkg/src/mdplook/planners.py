"""Discounted and average-reward solvers for finite MDPs.

These work on any :class:`~mdplook.core.TabularMdp`, including explicit
augmented MDPs, which makes them the brute-force reference for look-ahead
planning at every depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from mdplook.core import (
    NumericMode,
    Policy,
    TabularMdp,
    check_unichain_exhaustive,
    policy_matrix,
    recurrent_classes,
)
from mdplook.errors import IterationLimitError, NotUnichainError
from mdplook.linalg import solve_discounted, stationary_distribution

AVERAGE_TOL = 1e-11


@dataclass
class DiscountedSolution:
    values: np.ndarray
    policy: Policy | None
    iterations: int = 0
    residual: float = 0.0
    method: str = "value-iteration"


@dataclass
class GainBias:
    gain: float
    bias: np.ndarray
    policy: Policy | None = None
    iterations: int = 0
    residual: float = 0.0
    method: str = "relative-value-iteration"
    extra: dict = field(default_factory=dict)


def _float_model(mdp: TabularMdp):
    P = np.asarray(mdp.kernel, dtype=np.float64)
    r = np.asarray(mdp.rewards, dtype=np.float64)
    return P, r


def _gamma(mdp: TabularMdp, gamma):
    g = mdp.gamma if gamma is None else gamma
    if g is None or not 0 < g < 1:
        raise ValueError(f"discount must lie in (0, 1), got {g}")
    return g


def q_values(P, r, v, gamma=1.0) -> np.ndarray:
    """``Q[s, a] = r[s, a] + gamma * sum_t P[a, s, t] v[t]`` in float64."""
    return r + gamma * np.einsum("ast,t->sa", P, v)


def greedy(Q) -> list:
    # np.argmax returns the first maximiser: smallest action index wins ties
    return np.argmax(Q, axis=1).tolist()


def bellman_residual(mdp: TabularMdp, v, gamma=None) -> float:
    gamma = float(_gamma(mdp, gamma))
    P, r = _float_model(mdp)
    v = np.asarray(v, dtype=np.float64)
    return float(np.max(np.abs(q_values(P, r, v, gamma).max(axis=1) - v)))


def value_iteration_discounted(mdp: TabularMdp, gamma=None, epsilon: float = 1e-10, max_iter: int = 10**7) -> DiscountedSolution:
    """Value iteration in float64 until ``||v - v*|| <= epsilon`` is guaranteed."""
    gamma = float(_gamma(mdp, gamma))
    P, r = _float_model(mdp)
    v = np.zeros(mdp.n_states)
    stop = epsilon * (1 - gamma) / (2 * gamma)
    for it in range(1, max_iter + 1):
        w = q_values(P, r, v, gamma).max(axis=1)
        diff = float(np.max(np.abs(w - v))) if len(v) else 0.0
        v = w
        if diff <= stop:
            break
    else:
        raise IterationLimitError("value iteration did not converge", last=v)
    Q = q_values(P, r, v, gamma)
    pol = Policy.deterministic(greedy(Q), mdp.n_actions)
    return DiscountedSolution(v, pol, it, float(np.max(np.abs(Q.max(axis=1) - v))))


def policy_evaluation_discounted(mdp: TabularMdp, policy: Policy, gamma=None) -> np.ndarray:
    """Direct solve of ``(I - gamma P_pi) v = r_pi``; exact in rational mode."""
    gamma = _gamma(mdp, gamma)
    P, r = policy_matrix(mdp, policy)
    if mdp.rational:
        return solve_discounted(P, r, Fraction(gamma), exact=True)
    return solve_discounted(P, r, float(gamma))


def policy_iteration_discounted(mdp: TabularMdp, gamma=None, max_iter: int = 10**4) -> DiscountedSolution:
    """Howard policy iteration; with rational data the returned optimum is exact."""
    gamma = _gamma(mdp, gamma)
    S, A = mdp.n_states, mdp.n_actions
    actions = [0] * S
    one = mdp.one
    for it in range(1, max_iter + 1):
        pol = Policy.deterministic(actions, A, one)
        v = policy_evaluation_discounted(mdp, pol, gamma)
        changed = False
        for s in range(S):
            q = [mdp.rewards[s, a] + gamma * _dot(mdp.kernel[a, s], v) for a in range(A)]
            best = max(q)
            # keep the incumbent on ties so the iteration terminates
            if q[actions[s]] < best:
                actions[s] = q.index(best)
                changed = True
        if not changed:
            return DiscountedSolution(v, pol, it, 0.0, "policy-iteration")
    raise IterationLimitError("policy iteration did not converge", last=v)


def _dot(row, v):
    total = 0
    for p, x in zip(row, v):
        if p:
            total = total + p * x
    return total


# -- average reward ---------------------------------------------------------


def relative_value_iteration(operator, n_states: int, tol: float = AVERAGE_TOL, damping: float = 0.5,
                             ref: int = 0, max_iter: int = 10**6):
    """Damped relative value iteration on a span-nonexpansive ``operator``.

    Returns ``(gain, bias, iterations, span)`` with ``bias[ref] == 0``. The
    damping makes periodic chains converge without changing fixed points.
    """
    h = np.zeros(n_states)
    for it in range(1, max_iter + 1):
        w = operator(h)
        delta = w - h
        span = float(delta.max() - delta.min())
        if span <= tol:
            gain = 0.5 * float(delta.max() + delta.min())
            return gain, h, it, span
        h = (1 - damping) * h + damping * (w - w[ref])
    raise IterationLimitError("relative value iteration did not converge", last=h)


def average_reward_solve(mdp: TabularMdp, *, assume_unichain: bool = False, tol: float = AVERAGE_TOL) -> GainBias:
    """Optimal gain and bias (``h[0] = 0``) of a unichain MDP."""
    if not assume_unichain:
        report = check_unichain_exhaustive(mdp)
        if not report:
            raise NotUnichainError(f"policy {report.witness} has {len(report.classes)} recurrent classes")
    P, r = _float_model(mdp)
    gain, h, it, _ = relative_value_iteration(lambda h: q_values(P, r, h).max(axis=1), mdp.n_states, tol)
    Q = q_values(P, r, h)
    residual = float(np.max(np.abs(gain + h - Q.max(axis=1))))
    pol = Policy.deterministic(greedy(Q), mdp.n_actions)
    return GainBias(gain, h, pol, it, residual)


def average_residual(mdp: TabularMdp, gain, bias) -> float:
    P, r = _float_model(mdp)
    bias = np.asarray(bias, dtype=np.float64)
    return float(np.max(np.abs(gain + bias - q_values(P, r, bias).max(axis=1))))


def policy_average_gain(mdp: TabularMdp, policy: Policy):
    """Long-run average reward of a stationary policy with one recurrent class."""
    P, r = policy_matrix(mdp, policy)
    classes = recurrent_classes(P)
    if len(classes) != 1:
        raise NotUnichainError(f"chain under the policy has {len(classes)} recurrent classes")
    mu = stationary_distribution(P, exact=mdp.rational)
    if mdp.rational:
        return sum((m * x for m, x in zip(mu, r)), Fraction(0))
    return float(np.dot(mu, r))


# -- look-ahead by brute force ----------------------------------------------


def augmented_discounted_values(mdp: TabularMdp, depth: int, gamma=None, epsilon: float = 1e-10, budget=None):
    """Optimal look-ahead values per base state via the explicit augmented MDP.

    Returns ``(values, model, solution)`` where ``values[s]`` is the expected
    augmented optimum under the look-ahead law rooted at ``s``.
    """
    from mdplook.lookahead import build_augmented_mdp

    gamma = _gamma(mdp, gamma)
    model = build_augmented_mdp(mdp, None, depth, budget)
    sol = value_iteration_discounted(model.mdp, float(gamma), epsilon)
    values = np.array([float(model.expected_over_initial(sol.values, s)) for s in range(mdp.n_states)])
    return values, model, sol


def augmented_average_gain(mdp: TabularMdp, depth: int, budget=None, tol: float = AVERAGE_TOL):
    """Optimal look-ahead gain via the explicit augmented MDP (unichain assumed)."""
    from mdplook.lookahead import build_augmented_mdp

    model = build_augmented_mdp(mdp, None, depth, budget)
    sol = average_reward_solve(model.mdp, assume_unichain=True, tol=tol)
    return sol.gain, model, sol


# -- decision problems ------------------------------------------------------


@dataclass
class Decision:
    answer: bool
    value: float
    threshold: float
    margin: float
    method: str

    def __bool__(self):
        return self.answer


def optimal_discounted_value(mdp: TabularMdp, depth: int, s0, gamma=None, epsilon: float = 1e-10):
    s = mdp.state_index(s0)
    if depth == 0:
        return value_iteration_discounted(mdp, gamma, epsilon).values[s], "value-iteration"
    if depth == 1:
        from mdplook.onestep import solve_onestep_discounted

        return solve_onestep_discounted(mdp, gamma, epsilon).values[s], "sorted-vi"
    values, _, _ = augmented_discounted_values(mdp, depth, gamma, epsilon)
    return values[s], "augmented-brute"


def optimal_gain(mdp: TabularMdp, depth: int, assume_unichain: bool = False):
    if depth == 0:
        return average_reward_solve(mdp, assume_unichain=assume_unichain).gain, "relative-value-iteration"
    if depth == 1:
        from mdplook.onestep import solve_onestep_average

        return solve_onestep_average(mdp, assume_unichain=assume_unichain).gain, "sorted-rvi"
    gain, _, _ = augmented_average_gain(mdp, depth)
    return gain, "augmented-brute"


def decide_dvdp(mdp: TabularMdp, depth: int, s0, gamma, theta, epsilon: float = 1e-10) -> Decision:
    """Is there a policy whose discounted look-ahead value at ``s0`` is at least ``theta``?"""
    value, method = optimal_discounted_value(mdp, depth, s0, gamma, epsilon)
    value, theta = float(value), float(theta)
    return Decision(value >= theta, value, theta, value - theta, method)


def decide_ardp(mdp: TabularMdp, depth: int, theta, assume_unichain: bool = False) -> Decision:
    """Is there a stationary policy whose look-ahead gain is at least ``theta``?"""
    gain, method = optimal_gain(mdp, depth, assume_unichain)
    gain, theta = float(gain), float(theta)
    return Decision(gain >= theta, gain, theta, gain - theta, method)


__all__ = [
    "DiscountedSolution",
    "GainBias",
    "Decision",
    "NumericMode",
    "value_iteration_discounted",
    "policy_evaluation_discounted",
    "policy_iteration_discounted",
    "average_reward_solve",
    "policy_average_gain",
    "decide_dvdp",
    "decide_ardp",
]
