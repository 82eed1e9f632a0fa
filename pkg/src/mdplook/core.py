"""Tabular MDP data model, validation, file I/O, sampling and unichain checks.

Probabilities and rewards live in dense numpy arrays. In ``float`` mode they
are ``float64``; in ``rational`` mode they are object arrays of
:class:`fractions.Fraction`, and no operation in this package rounds them.
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from mdplook.errors import BudgetExceededError, MdpFormatError

ROW_SUM_TOL = 1e-12
DEFAULT_BUDGET = 10**6


class NumericMode(str, Enum):
    FLOAT = "float"
    RATIONAL = "rational"


def default_budget() -> int:
    """Enumeration budget, overridable through ``MDPLOOK_BUDGET``."""
    raw = os.environ.get("MDPLOOK_BUDGET")
    if raw is None:
        return DEFAULT_BUDGET
    return int(raw)


def to_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x.strip())
    # floats convert exactly to their binary value
    return Fraction(x)


def as_array(values, mode: NumericMode) -> np.ndarray:
    """Coerce nested sequences to a float64 or Fraction object array."""
    if mode == NumericMode.RATIONAL:
        arr = np.array(values, dtype=object)
        flat = arr.reshape(-1)
        for i, x in enumerate(flat):
            if type(x) is not Fraction:
                flat[i] = to_fraction(x)
        return flat.reshape(arr.shape)
    if isinstance(values, np.ndarray) and values.dtype.kind in "fiub":
        return np.array(values, dtype=np.float64)
    arr = np.array(values, dtype=object)
    flat = [float(to_fraction(x)) if isinstance(x, str) else float(x) for x in arr.reshape(-1)]
    return np.array(flat, dtype=np.float64).reshape(arr.shape)


def infer_mode(*arrays) -> NumericMode:
    for arr in arrays:
        for x in np.asarray(arr, dtype=object).reshape(-1):
            if isinstance(x, (Fraction, str)):
                return NumericMode.RATIONAL
    return NumericMode.FLOAT


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with kernel ``kernel[a, s, s']`` and rewards ``rewards[s, a]``.

    Construct invalid instances freely; :func:`validate_mdp` reports problems
    instead of the constructor raising, so that validation stays data.
    """

    states: tuple
    actions: tuple
    kernel: np.ndarray
    rewards: np.ndarray
    gamma: Any = None
    initial_state: str | None = None
    mode: NumericMode = NumericMode.FLOAT
    r_max: Any = None

    def __post_init__(self):
        mode = NumericMode(self.mode)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        object.__setattr__(self, "actions", tuple(str(a) for a in self.actions))
        kernel = as_array(self.kernel, mode)
        rewards = as_array(self.rewards, mode)
        kernel.setflags(write=False)
        rewards.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "rewards", rewards)
        if self.gamma is not None:
            g = to_fraction(self.gamma) if mode == NumericMode.RATIONAL else float(to_fraction(self.gamma))
            object.__setattr__(self, "gamma", g)
        if self.r_max is None and rewards.size:
            object.__setattr__(self, "r_max", max(rewards.reshape(-1)))
        elif self.r_max is None:
            object.__setattr__(self, "r_max", self.zero)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def rational(self) -> bool:
        return self.mode == NumericMode.RATIONAL

    @property
    def zero(self):
        return Fraction(0) if self.mode == NumericMode.RATIONAL else 0.0

    @property
    def one(self):
        return Fraction(1) if self.mode == NumericMode.RATIONAL else 1.0

    def scalar(self, x):
        """Cast ``x`` to this MDP's scalar type."""
        return to_fraction(x) if self.rational else float(x)

    def state_index(self, state) -> int:
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool):
            if 0 <= state < self.n_states:
                return int(state)
            raise ValueError(f"state index {state} out of range")
        try:
            return self.states.index(str(state))
        except ValueError:
            raise ValueError(f"unknown state {state!r}") from None

    def action_index(self, action) -> int:
        if isinstance(action, (int, np.integer)) and not isinstance(action, bool):
            if 0 <= action < self.n_actions:
                return int(action)
            raise ValueError(f"action index {action} out of range")
        try:
            return self.actions.index(str(action))
        except ValueError:
            raise ValueError(f"unknown action {action!r}") from None

    def replace(self, **changes) -> "TabularMdp":
        fields = dict(
            states=self.states,
            actions=self.actions,
            kernel=self.kernel,
            rewards=self.rewards,
            gamma=self.gamma,
            initial_state=self.initial_state,
            mode=self.mode,
            r_max=None,
        )
        fields.update(changes)
        return TabularMdp(**fields)

    def to_mode(self, mode: NumericMode | str) -> "TabularMdp":
        mode = NumericMode(mode)
        if mode == self.mode:
            return self
        if mode == NumericMode.FLOAT:
            biggest = max([abs(x) for x in self.rewards.reshape(-1)] + [Fraction(0)])
            if biggest > 2**53:
                raise ValueError("float export refused: rewards exceed 2**53")
            k = [float(x) for x in self.kernel.reshape(-1)]
            r = [float(x) for x in self.rewards.reshape(-1)]
            return self.replace(
                kernel=np.array(k).reshape(self.kernel.shape),
                rewards=np.array(r).reshape(self.rewards.shape),
                gamma=None if self.gamma is None else float(self.gamma),
                mode=mode,
            )
        return self.replace(mode=mode)

    def structurally_equal(self, other: "TabularMdp") -> bool:
        return (
            self.states == other.states
            and self.actions == other.actions
            and self.mode == other.mode
            and self.kernel.shape == other.kernel.shape
            and self.rewards.shape == other.rewards.shape
            and bool(np.all(self.kernel == other.kernel))
            and bool(np.all(self.rewards == other.rewards))
            and self.gamma == other.gamma
            and self.initial_state == other.initial_state
        )


@dataclass(frozen=True)
class Distribution:
    """Finite law given as ``(item, probability)`` pairs with distinct items."""

    support: tuple

    @classmethod
    def from_dict(cls, d: dict) -> "Distribution":
        return cls(tuple(d.items()))

    @classmethod
    def point(cls, item, one=1) -> "Distribution":
        return cls(((item, one),))

    def as_dict(self) -> dict:
        return dict(self.support)

    def items(self):
        return [x for x, _ in self.support]

    def total(self):
        return sum(p for _, p in self.support)

    def __len__(self):
        return len(self.support)

    def prob(self, item):
        for x, p in self.support:
            if x == item:
                return p
        return 0

    def tv_distance(self, other: "Distribution | dict") -> float:
        q = other.as_dict() if isinstance(other, Distribution) else dict(other)
        p = self.as_dict()
        keys = set(p) | set(q)
        return 0.5 * sum(abs(float(p.get(k, 0)) - float(q.get(k, 0))) for k in keys)


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary policy as an ``(n_states, n_actions)`` probability table."""

    probs: np.ndarray
    kind: str = "randomized"

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int, one=1.0) -> "Policy":
        actions = [int(a) for a in actions]
        dtype = object if isinstance(one, Fraction) else np.float64
        zero = one - one
        probs = np.full((len(actions), n_actions), zero, dtype=dtype)
        for s, a in enumerate(actions):
            probs[s, a] = one
        return cls(probs, "deterministic")

    @property
    def actions(self) -> list[int]:
        """Argmax action per state (the action for deterministic policies)."""
        return [int(np.argmax([float(x) for x in row])) for row in self.probs]

    def is_valid(self, n_states: int, n_actions: int, tol: float = ROW_SUM_TOL) -> bool:
        if self.probs.shape != (n_states, n_actions):
            return False
        for row in self.probs:
            if any(x < 0 for x in row) or abs(float(sum(row)) - 1.0) > tol:
                return False
        return True

    def to_table(self, mdp: TabularMdp) -> dict:
        if self.kind == "deterministic":
            return {mdp.states[s]: mdp.actions[a] for s, a in enumerate(self.actions)}
        return {
            mdp.states[s]: {mdp.actions[a]: _plain(p) for a, p in enumerate(row) if p != 0}
            for s, row in enumerate(self.probs)
        }


def _plain(x):
    if isinstance(x, Fraction):
        return str(x)
    return float(x)


# -- validation -------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    where: str
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def kinds(self) -> set:
        return {v.kind for v in self.violations}


def validate_mdp(mdp: TabularMdp, mode: NumericMode | str | None = None) -> ValidationReport:
    """Collect every structural violation of ``mdp``; never raises."""
    mode = NumericMode(mode) if mode is not None else mdp.mode
    out = []
    S, A = mdp.n_states, mdp.n_actions
    if len(set(mdp.states)) != S:
        out.append(Violation("id-collision", "states", "duplicate state identifiers"))
    if len(set(mdp.actions)) != A:
        out.append(Violation("id-collision", "actions", "duplicate action identifiers"))
    if S == 0 or A == 0:
        out.append(Violation("shape", "states/actions", "empty state or action set"))
    if mdp.kernel.shape != (A, S, S):
        out.append(Violation("shape", "transitions", f"expected {(A, S, S)}, got {mdp.kernel.shape}"))
    if mdp.rewards.shape != (S, A):
        out.append(Violation("shape", "rewards", f"expected {(S, A)}, got {mdp.rewards.shape}"))
    if mode == NumericMode.RATIONAL and mdp.mode != NumericMode.RATIONAL:
        out.append(Violation("mode", "mode", "float data cannot be checked exactly"))
    if mdp.kernel.shape == (A, S, S):
        for a in range(A):
            for s in range(S):
                row = mdp.kernel[a, s]
                for t, x in enumerate(row):
                    if x < 0:
                        out.append(Violation("negative-probability", f"transitions[{a}][{s}][{t}]", str(x)))
                total = sum(row)
                if mdp.rational:
                    bad = total != 1
                else:
                    bad = abs(total - 1.0) > ROW_SUM_TOL
                if bad:
                    out.append(Violation("row-sum", f"transitions[{a}][{s}]", f"sums to {total}"))
    if mdp.rewards.shape == (S, A):
        for s in range(S):
            for a in range(A):
                x = mdp.rewards[s, a]
                if x < 0 or x > mdp.r_max:
                    out.append(Violation("reward-range", f"rewards[{s}][{a}]", str(x)))
    if mdp.gamma is not None and not (0 < mdp.gamma < 1):
        out.append(Violation("gamma-range", "gamma", str(mdp.gamma)))
    if mdp.initial_state is not None and mdp.initial_state not in mdp.states:
        out.append(Violation("initial-state", "initial_state", mdp.initial_state))
    return ValidationReport(out)


# -- file format ------------------------------------------------------------

_FIELDS = {"states", "actions", "transitions", "rewards", "gamma", "initial_state", "mode"}
_REQUIRED = ("states", "actions", "transitions", "rewards")


def _parse_number(x, where: str, mode: NumericMode):
    if isinstance(x, bool) or not isinstance(x, (int, float, str)):
        raise MdpFormatError(f"{where}: expected a number or 'p/q' string, got {x!r}")
    try:
        q = to_fraction(x)
    except (ValueError, ZeroDivisionError):
        raise MdpFormatError(f"{where}: cannot parse {x!r} as a number") from None
    return q if mode == NumericMode.RATIONAL else float(q)


def _parse_nested(x, depth: int, where: str, mode: NumericMode):
    if depth == 0:
        return _parse_number(x, where, mode)
    if not isinstance(x, list):
        raise MdpFormatError(f"{where}: expected a list")
    return [_parse_nested(y, depth - 1, f"{where}[{i}]", mode) for i, y in enumerate(x)]


def mdp_from_dict(doc: dict) -> TabularMdp:
    if not isinstance(doc, dict):
        raise MdpFormatError("top level: expected an object")
    unknown = sorted(set(doc) - _FIELDS)
    if unknown:
        raise MdpFormatError(f"unknown field {unknown[0]!r}")
    for name in _REQUIRED:
        if name not in doc:
            raise MdpFormatError(f"missing field {name!r}")
    mode_raw = doc.get("mode", "float")
    try:
        mode = NumericMode(mode_raw)
    except ValueError:
        raise MdpFormatError(f"mode: expected 'float' or 'rational', got {mode_raw!r}") from None
    for name in ("states", "actions"):
        if not isinstance(doc[name], list) or not all(isinstance(x, str) for x in doc[name]):
            raise MdpFormatError(f"{name}: expected a list of strings")
    kernel = _parse_nested(doc["transitions"], 3, "transitions", mode)
    rewards = _parse_nested(doc["rewards"], 2, "rewards", mode)
    S, A = len(doc["states"]), len(doc["actions"])
    if len(kernel) != A or any(len(k) != S or any(len(row) != S for row in k) for k in kernel):
        raise MdpFormatError(f"transitions: expected shape [{A}][{S}][{S}]")
    if len(rewards) != S or any(len(row) != A for row in rewards):
        raise MdpFormatError(f"rewards: expected shape [{S}][{A}]")
    gamma = doc.get("gamma")
    if gamma is not None:
        gamma = _parse_number(gamma, "gamma", mode)
    init = doc.get("initial_state")
    if init is not None and not isinstance(init, str):
        raise MdpFormatError("initial_state: expected a string")
    return TabularMdp(doc["states"], doc["actions"], kernel, rewards, gamma, init, mode)


def mdp_to_dict(mdp: TabularMdp) -> dict:
    doc = {
        "states": list(mdp.states),
        "actions": list(mdp.actions),
        "mode": mdp.mode.value,
        "transitions": [[[_plain(x) for x in row] for row in k] for k in mdp.kernel],
        "rewards": [[_plain(x) for x in row] for row in mdp.rewards],
    }
    if mdp.gamma is not None:
        doc["gamma"] = _plain(mdp.gamma)
    if mdp.initial_state is not None:
        doc["initial_state"] = mdp.initial_state
    return doc


def load_mdp(path) -> TabularMdp:
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MdpFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return mdp_from_dict(doc)


def save_mdp(mdp: TabularMdp, path) -> None:
    with open(path, "w") as fh:
        json.dump(mdp_to_dict(mdp), fh, indent=1)
        fh.write("\n")


# -- sampling ---------------------------------------------------------------


def _cdf(row) -> np.ndarray:
    c = np.cumsum(np.array([float(x) for x in row]))
    c[-1] = 1.0
    return c


def sample_transitions(mdp: TabularMdp, state, action, n: int, seed) -> np.ndarray:
    """Draw ``n`` successor indices of ``(state, action)``."""
    s, a = mdp.state_index(state), mdp.action_index(action)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random(n)
    return np.searchsorted(_cdf(mdp.kernel[a, s]), u, side="right")


def sample_transition(mdp: TabularMdp, state, action, seed):
    """One draw ``s' ~ P_a(s, .)``; returns an id of the same kind as ``state``."""
    nxt = int(sample_transitions(mdp, state, action, 1, seed)[0])
    return nxt if isinstance(state, (int, np.integer)) else mdp.states[nxt]


# -- chain structure --------------------------------------------------------


def recurrent_classes(matrix) -> list[list[int]]:
    """Closed communicating classes of the chain with transition ``matrix``."""
    adj = np.array([[x != 0 for x in row] for row in matrix], dtype=bool)
    n, labels = connected_components(adj, directed=True, connection="strong")
    closed = [True] * n
    for i, j in zip(*np.nonzero(adj)):
        if labels[i] != labels[j]:
            closed[labels[i]] = False
    return [sorted(np.flatnonzero(labels == c).tolist()) for c in range(n) if closed[c]]


def policy_matrix(mdp: TabularMdp, policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Transition matrix and reward vector of the chain induced by ``policy``."""
    probs = policy.probs
    if mdp.rational:
        probs = as_array(probs, NumericMode.RATIONAL)
    P = np.einsum("sa,ast->st", probs, mdp.kernel) if not mdp.rational else _obj_policy_matrix(mdp, probs)
    r = np.array([sum(probs[s, a] * mdp.rewards[s, a] for a in range(mdp.n_actions)) for s in range(mdp.n_states)],
                 dtype=object if mdp.rational else np.float64)
    return P, r


def _obj_policy_matrix(mdp, probs):
    S, A = mdp.n_states, mdp.n_actions
    P = np.empty((S, S), dtype=object)
    for s in range(S):
        row = [Fraction(0)] * S
        for a in range(A):
            w = probs[s, a]
            if w:
                for t in range(S):
                    row[t] += w * mdp.kernel[a, s, t]
        P[s] = row
    return P


@dataclass
class UnichainReport:
    unichain: bool
    witness: tuple | None = None
    classes: list | None = None
    policies_checked: int = 0

    def __bool__(self):
        return self.unichain


def check_unichain_exhaustive(mdp: TabularMdp, budget: int | None = None) -> UnichainReport:
    """Exhaustively test every deterministic stationary policy for one recurrent class."""
    budget = default_budget() if budget is None else budget
    S, A = mdp.n_states, mdp.n_actions
    if A**S > budget:
        raise BudgetExceededError(f"{A}^{S} deterministic policies exceed budget {budget}")
    support = mdp.kernel != 0
    count = 0
    for choice in itertools.product(range(A), repeat=S):
        count += 1
        adj = support[list(choice), range(S), :]
        classes = recurrent_classes(adj)
        if len(classes) != 1:
            return UnichainReport(False, choice, classes, count)
    return UnichainReport(True, None, None, count)


# -- random instances -------------------------------------------------------


def random_mdp(
    n_states: int,
    n_actions: int,
    seed=None,
    *,
    mode: NumericMode | str = NumericMode.FLOAT,
    deterministic: bool = False,
    support: int | None = None,
    gamma=None,
    r_max: float = 1.0,
    denominator: int = 12,
) -> TabularMdp:
    """Random instance; rational mode draws probabilities on a ``1/denominator`` grid."""
    rng = np.random.default_rng(seed)
    mode = NumericMode(mode)
    S, A = n_states, n_actions
    support = S if support is None else min(support, S)
    if mode == NumericMode.RATIONAL:
        kernel = np.empty((A, S, S), dtype=object)
        rewards = np.empty((S, A), dtype=object)
        for a in range(A):
            for s in range(S):
                row = [Fraction(0)] * S
                if deterministic:
                    row[int(rng.integers(S))] = Fraction(1)
                else:
                    cols = rng.choice(S, size=support, replace=False)
                    counts = rng.multinomial(denominator - len(cols), np.ones(len(cols)) / len(cols)) + 1
                    for c, k in zip(cols, counts):
                        row[int(c)] = Fraction(int(k), denominator)
                kernel[a, s] = row
        for s in range(S):
            for a in range(A):
                rewards[s, a] = Fraction(int(rng.integers(0, denominator + 1)), denominator) * to_fraction(r_max)
    else:
        kernel = np.zeros((A, S, S))
        for a in range(A):
            for s in range(S):
                if deterministic:
                    kernel[a, s, rng.integers(S)] = 1.0
                else:
                    cols = rng.choice(S, size=support, replace=False)
                    kernel[a, s, cols] = rng.dirichlet(np.ones(support))
                    kernel[a, s] /= kernel[a, s].sum()
        rewards = rng.uniform(0, r_max, size=(S, A))
    return TabularMdp(
        [f"s{i}" for i in range(S)],
        [f"a{i}" for i in range(A)],
        kernel,
        rewards,
        gamma=gamma,
        mode=mode,
    )


def states_named(mdp: TabularMdp, values: Iterable) -> dict:
    return {name: _plain(v) for name, v in zip(mdp.states, values)}
