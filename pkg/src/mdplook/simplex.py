"""Dense two-phase tableau simplex with Bland's rule.

Small and self-contained; the restricted LPs built during constraint
generation have a handful of variables and at most a few hundred rows.
Works on float64 or, given Fraction inputs, exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    objective: float | None
    iterations: int


def _pivot(T, row, col):
    T[row] = T[row] / T[row, col]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0:
            T[i] = T[i] - T[i, col] * T[row]


def _run(T, basis, allowed, tol, max_iter):
    """Minimise the objective in the last row; returns status and pivot count."""
    m = T.shape[0] - 1
    it = 0
    while True:
        col = next((j for j in allowed if T[m, j] < -tol), None)
        if col is None:
            return "optimal", it
        best, row = None, None
        for i in range(m):
            if T[i, col] > tol:
                ratio = T[i, -1] / T[i, col]
                if best is None or ratio < best - tol or (abs(ratio - best) <= tol and basis[i] < basis[row]):
                    best, row = ratio, i
        if row is None:
            return "unbounded", it
        _pivot(T, row, col)
        basis[row] = col
        it += 1
        if it > max_iter:
            raise RuntimeError("simplex pivot limit reached")


def linprog_dense(c, A_ub, b_ub, bounds, tol: float = 1e-11, max_iter: int = 100000) -> LpResult:
    """Minimise ``c @ x`` subject to ``A_ub @ x <= b_ub`` and per-variable ``bounds``.

    ``bounds`` is a list of ``(lower, upper)`` pairs; ``None`` means unbounded
    on that side.
    """
    exact = any(isinstance(x, Fraction) for x in list(c) + [v for row in A_ub for v in row] + list(b_ub))
    dtype = object if exact else np.float64
    tol = 0 if exact else tol
    zero = Fraction(0) if exact else 0.0
    n = len(c)
    # x_j = lo_j + y_j (or y+ - y- when free), y >= 0
    cols = []  # (variable, sign)
    shift = []
    for j, (lo, hi) in enumerate(bounds):
        if lo is None:
            cols.append((j, 1))
            cols.append((j, -1))
            shift.append(zero)
        else:
            cols.append((j, 1))
            shift.append(lo)
    rows, rhs = [], []
    for a, b in zip(A_ub, b_ub):
        rows.append([a[j] * sgn for j, sgn in cols])
        rhs.append(b - sum((a[j] * shift[j] for j in range(n)), zero))
    for j, (lo, hi) in enumerate(bounds):
        if hi is not None:
            if lo is None:
                raise ValueError("free variables with only an upper bound are not supported")
            rows.append([(1 if (k == j and sgn == 1) else 0) * (zero + 1) for k, sgn in cols])
            rhs.append(hi - lo)
    m, ny = len(rows), len(cols)
    neg = [i for i in range(m) if rhs[i] < 0]
    n_art = len(neg)
    width = ny + m + n_art + 1
    T = np.full((m + 1, width), zero, dtype=dtype)
    basis = []
    art = 0
    for i in range(m):
        sign = -1 if rhs[i] < 0 else 1
        T[i, :ny] = [sign * x for x in rows[i]]
        T[i, ny + i] = sign
        T[i, -1] = sign * rhs[i]
        if sign < 0:
            T[i, ny + m + art] = 1
            basis.append(ny + m + art)
            art += 1
        else:
            basis.append(ny + i)
    iters = 0
    if n_art:
        T[m, :] = zero
        for i in range(m):
            if basis[i] >= ny + m:
                T[m] = T[m] - T[i]
        for k in range(n_art):
            T[m, ny + m + k] = zero
        status, it = _run(T, basis, range(ny + m + n_art), tol, max_iter)
        iters += it
        if -T[m, -1] > (tol * 10 if not exact else 0):
            return LpResult("infeasible", None, None, iters)
        # drive zero-level artificials out of the basis
        for i in range(m):
            if basis[i] >= ny + m:
                col = next((j for j in range(ny + m) if abs(T[i, j]) > tol), None)
                if col is not None:
                    _pivot(T, i, col)
                    basis[i] = col
        T[:, ny + m:ny + m + n_art] = zero
    cost = [c[j] * sgn for j, sgn in cols] + [zero] * (m + n_art)
    T[m, :] = zero
    T[m, :len(cost)] = cost
    for i in range(m):
        if T[m, basis[i]] != 0:
            T[m] = T[m] - T[m, basis[i]] * T[i]
    status, it = _run(T, basis, range(ny + m), tol, max_iter)
    iters += it
    if status != "optimal":
        return LpResult(status, None, None, iters)
    y = [zero] * (ny + m + n_art)
    for i, b in enumerate(basis):
        y[b] = T[i, -1]
    x = list(shift)
    for k, (j, sgn) in enumerate(cols):
        x[j] = x[j] + sgn * y[k]
    x = np.array(x, dtype=dtype)
    obj = sum((c[j] * x[j] for j in range(n)), zero)
    return LpResult("optimal", x, obj, iters)
