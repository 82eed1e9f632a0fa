"""Linear solves in float64 or exact rational arithmetic.

The rational path is sparse Gaussian elimination over
:class:`~fractions.Fraction`. Large, mostly acyclic systems (augmented MDPs)
are split along strongly connected components and back-substituted block by
block, which keeps exact solves tractable.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.sparse.csgraph import connected_components


def solve_exact(A, b) -> list:
    """Solve ``A x = b`` exactly; ``A`` must be square and nonsingular.

    Rows are kept as sparse dicts, so the cost follows the fill-in rather
    than ``n**3``.
    """
    n = len(b)
    rows = []
    for i, row in enumerate(A):
        d = {j: Fraction(x) for j, x in enumerate(row) if x != 0}
        if b[i] != 0:
            d[n] = Fraction(b[i])
        rows.append(d)
    by_col = [set() for _ in range(n + 1)]
    for i, d in enumerate(rows):
        for j in d:
            by_col[j].add(i)
    done = [False] * n
    pivots = []
    for col in range(n):
        cands = [r for r in by_col[col] if not done[r]]
        if not cands:
            raise np.linalg.LinAlgError("singular matrix")
        # sparsest candidate row keeps fill-in down
        piv = min(cands, key=lambda r: (len(rows[r]), r))
        done[piv] = True
        prow = rows[piv]
        inv = 1 / prow[col]
        for r in list(by_col[col]):
            if r == piv:
                continue
            row = rows[r]
            f = row[col] * inv
            for c, x in prow.items():
                y = row.get(c, 0) - f * x
                if y:
                    if c not in row:
                        by_col[c].add(r)
                    row[c] = y
                elif c in row:
                    del row[c]
                    by_col[c].discard(r)
        pivots.append((col, piv))
    x = [Fraction(0)] * n
    for col, piv in pivots:
        x[col] = rows[piv].get(n, Fraction(0)) / rows[piv][col]
    return x


def solve(A, b, exact: bool = False):
    if exact:
        return np.array(solve_exact(A, b), dtype=object)
    return np.linalg.solve(np.asarray(A, dtype=np.float64), np.asarray(b, dtype=np.float64))


def solve_discounted(P, r, gamma, exact: bool = False) -> np.ndarray:
    """Solve ``(I - gamma P) v = r`` block-wise over strongly connected components.

    Components are processed in reverse topological order, so each block only
    sees already-solved successors on its right-hand side.
    """
    n = len(r)
    if exact:
        rows = [[(j, P[i][j]) for j in range(n) if P[i][j] != 0] for i in range(n)]
    else:
        P = np.asarray(P, dtype=np.float64)
        rows = [[(j, P[i, j]) for j in np.flatnonzero(P[i])] for i in range(n)]
    adj = np.zeros((n, n), dtype=bool)
    for i, row in enumerate(rows):
        for j, _ in row:
            adj[i, j] = True
    ncomp, labels = connected_components(adj, directed=True, connection="strong")
    members = [[] for _ in range(ncomp)]
    for i, c in enumerate(labels):
        members[c].append(i)
    order = _reverse_topological(ncomp, labels, rows)
    v = [None] * n
    for c in order:
        idx = members[c]
        pos = {s: k for k, s in enumerate(idx)}
        m = len(idx)
        zero = Fraction(0) if exact else 0.0
        A = [[zero] * m for _ in range(m)]
        b = [zero] * m
        for k, s in enumerate(idx):
            A[k][k] += 1
            acc = r[s]
            for j, p in rows[s]:
                if j in pos:
                    A[k][pos[j]] -= gamma * p
                else:
                    acc = acc + gamma * p * v[j]
            b[k] = acc
        if m == 1:
            sol = [b[0] / A[0][0]]
        else:
            sol = solve(A, b, exact)
        for k, s in enumerate(idx):
            v[s] = sol[k]
    return np.array(v, dtype=object if exact else np.float64)


def _reverse_topological(ncomp, labels, rows):
    succ = [set() for _ in range(ncomp)]
    for i, row in enumerate(rows):
        for j, _ in row:
            if labels[i] != labels[j]:
                succ[labels[i]].add(labels[j])
    order, seen = [], [False] * ncomp
    for start in range(ncomp):
        if seen[start]:
            continue
        stack = [(start, iter(succ[start]))]
        seen[start] = True
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                order.append(node)
            elif not seen[nxt]:
                seen[nxt] = True
                stack.append((nxt, iter(succ[nxt])))
    return order


def stationary_distribution(P, exact: bool = False) -> np.ndarray:
    """Unique stationary law of a unichain transition matrix.

    Transient states carry no mass, so only the recurrent class is solved.
    """
    n = len(P)
    adj = np.array([[x != 0 for x in row] for row in P], dtype=bool)
    ncomp, labels = connected_components(adj, directed=True, connection="strong")
    closed = np.ones(ncomp, dtype=bool)
    for i, j in zip(*np.nonzero(adj)):
        if labels[i] != labels[j]:
            closed[labels[i]] = False
    if closed.sum() != 1:
        raise ValueError(f"chain has {int(closed.sum())} recurrent classes")
    idx = np.flatnonzero(labels == np.flatnonzero(closed)[0]).tolist()
    m = len(idx)
    # balance equations with the last one replaced by the normalisation constraint
    if exact:
        A = [[(1 if i == j else 0) - P[idx[i]][idx[j]] for i in range(m)] for j in range(m)]
        A[-1] = [Fraction(1)] * m
        b = [Fraction(0)] * (m - 1) + [Fraction(1)]
        sub = solve_exact(A, b)
        out = np.array([Fraction(0)] * n, dtype=object)
    else:
        Q = np.asarray(P, dtype=np.float64)[np.ix_(idx, idx)]
        A = np.eye(m) - Q.T
        A[-1] = 1.0
        b = np.zeros(m)
        b[-1] = 1.0
        sub = np.linalg.solve(A, b)
        out = np.zeros(n)
    for k, i in enumerate(idx):
        out[i] = sub[k]
    return out
