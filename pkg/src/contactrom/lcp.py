"""Linear complementarity solvers: Lemke's complementary pivoting and a
brute-force enumeration oracle used for verification.

Problem form: find z >= 0 with w = B + A z >= 0 and z^T w = 0.  Lemke uses
the covering vector e = (1, ..., 1) and lexicographic ratio tie-breaking,
which resolves degeneracy without numerical perturbation.  Solutions are
always re-verified by an independent certificate; callers should treat a
failed certificate like a solver failure.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import chain, combinations

import numpy as np


class LcpStatus(str, Enum):
    SOLVED = "Solved"
    RAY_TERMINATION = "RayTermination"
    CYCLE_LIMIT = "CycleLimit"
    NO_SOLUTION = "NoSolution"


@dataclass(frozen=True)
class LcpProblem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.A, dtype=float)
        b = np.asarray(self.B, dtype=float).ravel()
        if a.shape != (len(b), len(b)):
            raise ValueError(f"A has shape {a.shape}, expected ({len(b)}, {len(b)})")
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise ValueError("LCP data must be finite")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)

    @property
    def m(self) -> int:
        return len(self.B)

    def scale(self) -> float:
        return float(max(np.abs(self.A).max(initial=0.0),
                         np.abs(self.B).max(initial=0.0), 1.0))


@dataclass(frozen=True)
class LcpSolution:
    z: np.ndarray
    w: np.ndarray
    status: LcpStatus

    def certificate(self, prob: LcpProblem, eps: float | None = None) -> bool:
        """Independent feasibility/complementarity check of (z, w)."""
        if eps is None:
            eps = 1e-9 * prob.scale()
        z, w = self.z, self.w
        comp_tol = eps * (1.0 + np.linalg.norm(z) * np.linalg.norm(w))
        return bool(z.min(initial=0.0) >= -eps
                    and w.min(initial=0.0) >= -eps
                    and abs(z @ w) <= comp_tol)


def _lex_argmin(tableau: np.ndarray, col: np.ndarray, rows: np.ndarray, m: int) -> int:
    """Row minimizing rhs/col, ties resolved lexicographically on the
    basis-inverse part (columns 0..m-1) divided by the pivot entry."""
    rhs = tableau[:, -1]
    ratios = rhs[rows] / col[rows]
    best = ratios.min()
    near = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
    if len(near) == 1:
        return int(near[0])
    keys = tableau[near, :m] / col[near, None]
    order = np.lexsort(keys.T[::-1])
    return int(near[order[0]])


def lemke(prob: LcpProblem, max_pivots: int | None = None) -> LcpSolution:
    """Complementary pivoting with covering vector e = 1.

    Terminates with SOLVED when the artificial variable leaves the basis,
    RAY_TERMINATION when the entering column has no positive entries, and
    CYCLE_LIMIT after 50 m pivots (never observed with the lexicographic
    rule; kept as a hard stop).
    """
    a, b = prob.A, prob.B
    m = prob.m
    if m < 1:
        raise ValueError("LCP dimension must be >= 1")
    if b.min() >= 0.0:
        return LcpSolution(z=np.zeros(m), w=b.copy(), status=LcpStatus.SOLVED)
    if max_pivots is None:
        max_pivots = 50 * m
    eps_piv = 1e-12 * prob.scale()

    # columns: w_0..w_{m-1}, z_0..z_{m-1}, z0, rhs;  rows start with basis w
    tableau = np.hstack([np.eye(m), -a, -np.ones((m, 1)), b[:, None]])
    basis = list(range(m))

    r = int(np.argmin(b))
    _pivot(tableau, r, 2 * m)
    leaving = basis[r]
    basis[r] = 2 * m
    entering = leaving + m

    for _ in range(max_pivots):
        col = tableau[:, entering]
        rows = np.nonzero(col > eps_piv)[0]
        if len(rows) == 0:
            z, w = _extract(tableau, basis, m, a, b)
            return LcpSolution(z=z, w=w, status=LcpStatus.RAY_TERMINATION)
        r = _lex_argmin(tableau, col, rows, m)
        _pivot(tableau, r, entering)
        leaving = basis[r]
        basis[r] = entering
        if leaving == 2 * m:
            z, w = _extract(tableau, basis, m, a, b)
            return LcpSolution(z=z, w=w, status=LcpStatus.SOLVED)
        entering = leaving + m if leaving < m else leaving - m
    z, w = _extract(tableau, basis, m, a, b)
    return LcpSolution(z=z, w=w, status=LcpStatus.CYCLE_LIMIT)


def _pivot(tableau: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    piv_row = tableau[row]
    for i in range(tableau.shape[0]):
        if i != row and tableau[i, col] != 0.0:
            tableau[i] -= tableau[i, col] * piv_row


def _extract(tableau, basis, m, a, b):
    z = np.zeros(m)
    for i, var in enumerate(basis):
        if m <= var < 2 * m:
            z[var - m] = tableau[i, -1]
    np.maximum(z, 0.0, out=z)   # tiny negatives from roundoff
    return z, b + a @ z


def lcp_oracle(prob: LcpProblem, max_m: int = 12) -> LcpSolution:
    """Enumerate all active sets; return the first feasible solution in
    lexicographic active-set order.  Verification-only (2^m work)."""
    m = prob.m
    if m > max_m:
        raise ValueError(f"oracle enumeration limited to m <= {max_m}, got {m}")
    a, b = prob.A, prob.B
    tol = 1e-10 * prob.scale()
    subsets = sorted(chain.from_iterable(combinations(range(m), r) for r in range(m + 1)))
    for alpha in subsets:
        idx = np.array(alpha, dtype=int)
        z = np.zeros(m)
        if len(idx):
            try:
                z_alpha = np.linalg.solve(a[np.ix_(idx, idx)], -b[idx])
            except np.linalg.LinAlgError:
                continue
            if z_alpha.min(initial=0.0) < -tol:
                continue
            z[idx] = np.maximum(z_alpha, 0.0)
        w = b + a @ z
        if w.min() >= -tol:
            return LcpSolution(z=z, w=w, status=LcpStatus.SOLVED)
    return LcpSolution(z=np.zeros(m), w=b.copy(), status=LcpStatus.NO_SOLUTION)
