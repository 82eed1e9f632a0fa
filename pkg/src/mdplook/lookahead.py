"""Look-ahead semantics: augmented states, their exact kernel, and a simulator.

An augmented state of depth ``l`` is a tuple of blocks ``xi[0..l]``; block
``k`` is a tuple of ``A**k`` state indices, one per action sequence of length
``k`` in lexicographic order (first action most significant). ``xi[0]`` is
the one-element block holding the current state.

Randomness is indexed by (time, state, action): within one depth, every
action sequence that reaches the same state shares a single successor draw
per next action, and draws at distinct depths are independent.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from mdplook.core import Distribution, TabularMdp, default_budget, sample_transitions
from mdplook.errors import BudgetExceededError, InconsistentStateError

MAX_DEPTH = 4

AugmentedState = tuple  # tuple[tuple[int, ...], ...]


def _check_depth(depth: int) -> None:
    if not 0 <= depth <= MAX_DEPTH:
        raise ValueError(f"look-ahead depth must be in [0, {MAX_DEPTH}], got {depth}")


def check_shape(mdp: TabularMdp, xi: AugmentedState, depth: int) -> None:
    """Raise :class:`InconsistentStateError` unless ``|xi[k]| = |A|**k`` with valid ids."""
    A, S = mdp.n_actions, mdp.n_states
    if len(xi) != depth + 1:
        raise InconsistentStateError(f"expected {depth + 1} blocks, got {len(xi)}")
    for k, block in enumerate(xi):
        if len(block) != A**k:
            raise InconsistentStateError(f"block {k} has {len(block)} entries, expected {A**k}")
        if any(not 0 <= s < S for s in block):
            raise InconsistentStateError(f"block {k} holds an invalid state index")


def is_support_consistent(mdp: TabularMdp, xi: AugmentedState) -> bool:
    """Every entry ``xi[k](seq, a)`` is a possible successor of ``xi[k-1](seq)`` under ``a``."""
    A = mdp.n_actions
    for k in range(1, len(xi)):
        for j, s in enumerate(xi[k]):
            parent = xi[k - 1][j // A]
            if mdp.kernel[j % A, parent, s] == 0:
                return False
    return True


def subtree(xi: AugmentedState, depth: int, k: int, a: int, n_actions: int) -> tuple:
    """``xi[k](a)``: the entries of block ``k`` whose sequence starts with ``a``."""
    width = n_actions ** (k - 1)
    return xi[k][a * width:(a + 1) * width]


# -- canonical keys ---------------------------------------------------------


def encode_key(xi: AugmentedState) -> bytes:
    """Injective byte encoding: 16-bit big-endian indices, block by block."""
    return b"".join(s.to_bytes(2, "big") for block in xi for s in block)


def decode_key(key: bytes, n_actions: int) -> AugmentedState:
    flat = [int.from_bytes(key[i:i + 2], "big") for i in range(0, len(key), 2)]
    blocks, pos, k = [], 0, 0
    while pos < len(flat):
        width = n_actions**k
        if pos + width > len(flat):
            raise ValueError("key length does not match a whole number of blocks")
        blocks.append(tuple(flat[pos:pos + width]))
        pos += width
        k += 1
    return tuple(blocks)


def printable_key(xi: AugmentedState) -> str:
    return "|".join(",".join(str(s) for s in block) for block in xi)


def parse_printable_key(text: str) -> AugmentedState:
    return tuple(tuple(int(s) for s in part.split(",")) for part in text.split("|"))


def sort_key(xi: AugmentedState) -> tuple:
    return tuple(s for block in xi for s in block)


# -- exact laws -------------------------------------------------------------


def _fresh_block_law(mdp: TabularMdp, leaves: Sequence[int], budget: int) -> list:
    """Law of the block grown below ``leaves`` (one entry per leaf and action).

    One draw per distinct ``(leaf state, action)`` pair, shared by all leaves
    holding that state.
    """
    A = mdp.n_actions
    distinct = sorted(set(leaves))
    pairs = [(s, a) for s in distinct for a in range(A)]
    options = []
    size = 1
    for s, a in pairs:
        row = mdp.kernel[a, s]
        opts = [(t, row[t]) for t in range(mdp.n_states) if row[t] != 0]
        options.append(opts)
        size *= len(opts)
        if size > budget:
            raise BudgetExceededError(f"fresh look-ahead block has more than {budget} outcomes")
    where = {pair: i for i, pair in enumerate(pairs)}
    slots = [where[(s, a)] for s in leaves for a in range(A)]
    out = []
    for combo in itertools.product(*options):
        prob = mdp.one
        for _, p in combo:
            prob = prob * p
        out.append((tuple(combo[i][0] for i in slots), prob))
    return out


def initial_lookahead_distribution(mdp: TabularMdp, s, depth: int, budget: int | None = None) -> Distribution:
    """Joint law of the look-ahead tree of the given depth rooted at ``s``."""
    _check_depth(depth)
    budget = default_budget() if budget is None else budget
    root = mdp.state_index(s)
    partial = {((root,),): mdp.one}
    for _ in range(depth):
        grown = {}
        for xi, p in partial.items():
            for block, q in _fresh_block_law(mdp, xi[-1], budget):
                key = xi + (block,)
                grown[key] = grown.get(key, mdp.zero) + p * q
        if len(grown) > budget:
            raise BudgetExceededError(f"look-ahead support exceeds budget {budget}")
        partial = grown
    return Distribution(tuple(sorted(partial.items(), key=lambda kv: sort_key(kv[0]))))


def shift(xi: AugmentedState, a: int, n_actions: int) -> tuple:
    """Deterministic part of the successor: ``xi'[k-1] = xi[k](a)`` for ``k = 1..l``."""
    depth = len(xi) - 1
    return tuple(subtree(xi, depth, k, a, n_actions) for k in range(1, depth + 1))


def augmented_kernel(mdp: TabularMdp, xi: AugmentedState, action, depth: int, budget: int | None = None) -> Distribution:
    """Exact law of the next augmented state after playing ``action`` in ``xi``."""
    _check_depth(depth)
    check_shape(mdp, xi, depth)
    a = mdp.action_index(action)
    budget = default_budget() if budget is None else budget
    if depth == 0:
        row = mdp.kernel[a, xi[0][0]]
        return Distribution(tuple((((t,),), row[t]) for t in range(mdp.n_states) if row[t] != 0))
    head = shift(xi, a, mdp.n_actions)
    leaves = head[-1]
    law = _fresh_block_law(mdp, leaves, budget)
    law.sort(key=lambda bp: bp[0])
    return Distribution(tuple((head + (block,), p) for block, p in law))


def _explore(mdp: TabularMdp, roots: Iterable | None, depth: int, budget: int) -> tuple:
    """Breadth-first closure; returns the states and every successor law met on the way."""
    roots = range(mdp.n_states) if roots is None else [mdp.state_index(r) for r in roots]
    seen = set()
    frontier = []
    laws = {}
    for r in roots:
        for xi, _ in initial_lookahead_distribution(mdp, r, depth, budget).support:
            if xi not in seen:
                seen.add(xi)
                frontier.append(xi)
    while frontier:
        nxt = []
        for xi in frontier:
            for a in range(mdp.n_actions):
                law = augmented_kernel(mdp, xi, a, depth, budget)
                laws[xi, a] = law
                for xj, _ in law.support:
                    if xj not in seen:
                        seen.add(xj)
                        nxt.append(xj)
                        if len(seen) > budget:
                            raise BudgetExceededError(f"reachable augmented states exceed budget {budget}")
        frontier = nxt
    return sorted(seen, key=sort_key), laws


def reachable_augmented_states(
    mdp: TabularMdp, roots: Iterable | None, depth: int, budget: int | None = None
) -> list:
    """Closure of the initial look-ahead supports under the augmented kernel, sorted canonically."""
    _check_depth(depth)
    budget = default_budget() if budget is None else budget
    return _explore(mdp, roots, depth, budget)[0]


@dataclass(frozen=True, eq=False)
class AugmentedModel:
    """Explicit augmented MDP plus the block decomposition of each of its states."""

    mdp: TabularMdp
    base: TabularMdp
    depth: int
    xis: tuple
    index: dict

    def initial_weights(self, s) -> list:
        """``(augmented index, probability)`` pairs of the look-ahead law rooted at ``s``."""
        law = initial_lookahead_distribution(self.base, s, self.depth)
        return [(self.index[xi], p) for xi, p in law.support]

    def expected_over_initial(self, values, s):
        """``E_{xi ~ law(s)}[values[xi]]``: a base-state quantity from an augmented one."""
        total = self.base.zero
        for i, p in self.initial_weights(s):
            total = total + p * values[i]
        return total

    def sidecar(self) -> dict:
        """Map from printable key to named blocks, for the sidecar file."""
        names = self.base.states
        return {
            printable_key(xi): [[names[s] for s in block] for block in xi]
            for xi in self.xis
        }


def build_augmented_mdp(
    mdp: TabularMdp, roots: Iterable | None = None, depth: int = 1, budget: int | None = None
) -> AugmentedModel:
    """Augmented MDP over the reachable look-ahead states; rewards read off ``xi[0]``."""
    _check_depth(depth)
    budget = default_budget() if budget is None else budget
    xis, laws = _explore(mdp, roots, depth, budget)
    index = {xi: i for i, xi in enumerate(xis)}
    N, A = len(xis), mdp.n_actions
    dtype = object if mdp.rational else np.float64
    kernel = np.full((A, N, N), mdp.zero, dtype=dtype)
    rewards = np.empty((N, A), dtype=dtype)
    for i, xi in enumerate(xis):
        s = xi[0][0]
        for a in range(A):
            rewards[i, a] = mdp.rewards[s, a]
            for xj, p in laws[xi, a].support:
                kernel[a, i, index[xj]] = p
    init = None
    if mdp.initial_state is not None and depth == 0:
        init = printable_key(((mdp.state_index(mdp.initial_state),),))
    aug = TabularMdp(
        [printable_key(xi) for xi in xis],
        mdp.actions,
        kernel,
        rewards,
        gamma=mdp.gamma,
        initial_state=init,
        mode=mdp.mode,
        r_max=mdp.r_max,
    )
    return AugmentedModel(aug, mdp, depth, tuple(xis), index)


# -- simulator --------------------------------------------------------------


def _draw_block(mdp, leaves, n, rng) -> np.ndarray:
    A = mdp.n_actions
    draws = {}
    for s in sorted(set(leaves)):
        for a in range(A):
            draws[s, a] = sample_transitions(mdp, s, a, n, rng)
    cols = [draws[s, a] for s in leaves for a in range(A)]
    return np.stack(cols, axis=1)


def simulate_lookahead_steps(mdp: TabularMdp, xi: AugmentedState, action, n: int, seed, depth: int) -> list:
    """``n`` independent successors of ``(xi, action)`` drawn by rolling the tree forward."""
    _check_depth(depth)
    check_shape(mdp, xi, depth)
    a = mdp.action_index(action)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if depth == 0:
        nxt = sample_transitions(mdp, xi[0][0], a, n, rng)
        return [((int(t),),) for t in nxt]
    # re-root at xi[1](a): every block moves up one level
    head = shift(xi, a, mdp.n_actions)
    fresh = _draw_block(mdp, head[-1], n, rng)
    return [head + (tuple(int(x) for x in row),) for row in fresh]


def lookahead_simulator_step(mdp: TabularMdp, xi: AugmentedState, action, seed, depth: int):
    """One step of the look-ahead environment: ``(next augmented state, reward)``."""
    a = mdp.action_index(action)
    nxt = simulate_lookahead_steps(mdp, xi, a, 1, seed, depth)[0]
    return nxt, mdp.rewards[xi[0][0], a]


def sample_initial_lookahead(mdp: TabularMdp, s, depth: int, n: int, seed) -> list:
    """``n`` draws of the look-ahead tree rooted at ``s``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    root = mdp.state_index(s)
    trees = [[(root,)] for _ in range(n)]
    for _ in range(depth):
        # leaves differ per sample, so draw sample by sample
        for tree in trees:
            tree.append(tuple(int(x) for x in _draw_block(mdp, tree[-1], 1, rng)[0]))
    return [tuple(t) for t in trees]


def empirical_law(samples: Iterable) -> Distribution:
    counts = Counter(samples)
    n = sum(counts.values())
    return Distribution(tuple((k, c / n) for k, c in sorted(counts.items(), key=lambda kv: sort_key(kv[0]))))
