"""Dual nonlinear complementarity layer.

Everything here operates on an OperatorBundle, which is either the full
system (sparse N x N) or a reduced one (small dense matrices wrapped in
sparse storage): the per-step solve is literally the same code in both
cases.  The bundle holds the symmetrized constraint curvature terms
D_k + D_k^T, so the effective stiffness is

    S(lambda) = K - sum_k lambda_k (D_k + D_k^T)

and one factorization of M + h^2 S per fixed-point iteration serves the
displacement solve and all m Jacobian right-hand sides.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from contactrom.contact import ConstraintSet
from contactrom.fem import SystemMatrices
from contactrom.lcp import LcpProblem, LcpStatus, lemke


class NcpError(RuntimeError):
    pass


class NcpStatus(str, Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    LCP_FAILURE = "LcpFailure"


@dataclass(frozen=True)
class OperatorBundle:
    """System operators in one place: mass, stiffness, constraint data, loads.

    ``n`` is the full free-DOF count or the reduced dimension; the NCP
    solver does not care which.
    """

    M: sp.csc_matrix
    K: sp.csc_matrix
    D_sym: tuple
    C: sp.csr_matrix
    b: np.ndarray
    f_provider: Callable[[float], np.ndarray]
    s_eval: str = "current"   # "current" or "previous": which lambda enters S within a step

    # concatenated COO of all D_sym matrices for fast S(lambda) assembly
    _rows: np.ndarray = field(init=False, repr=False)
    _cols: np.ndarray = field(init=False, repr=False)
    _vals: np.ndarray = field(init=False, repr=False)
    _kidx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.s_eval not in ("current", "previous"):
            raise ValueError(f"unknown s_eval mode {self.s_eval!r}")
        object.__setattr__(self, "M", sp.csc_matrix(self.M))
        object.__setattr__(self, "K", sp.csc_matrix(self.K))
        dsym = tuple(sp.csr_matrix(d) for d in self.D_sym)
        object.__setattr__(self, "D_sym", dsym)
        object.__setattr__(self, "C", sp.csr_matrix(self.C))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        rows, cols, vals, kidx = [], [], [], []
        for k, d in enumerate(dsym):
            coo = d.tocoo()
            rows.append(coo.row)
            cols.append(coo.col)
            vals.append(coo.data)
            kidx.append(np.full(coo.nnz, k, dtype=int))
        cat = lambda parts: (np.concatenate(parts) if parts else np.empty(0, dtype=int))
        object.__setattr__(self, "_rows", cat(rows))
        object.__setattr__(self, "_cols", cat(cols))
        object.__setattr__(self, "_vals",
                           np.concatenate(vals) if vals else np.empty(0))
        object.__setattr__(self, "_kidx", cat(kidx))

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def m(self) -> int:
        return len(self.b)

    @classmethod
    def from_full(cls, system: SystemMatrices, cs: ConstraintSet,
                  f_provider: Callable[[float], np.ndarray],
                  s_eval: str = "current") -> "OperatorBundle":
        dsym = tuple(cs.d_sym(k) for k in range(cs.m))
        return cls(M=system.M, K=system.K, D_sym=dsym, C=cs.C, b=cs.b,
                   f_provider=f_provider, s_eval=s_eval)


@dataclass(frozen=True)
class StepHistory:
    """Two-step implicit Euler state entering the solve for t_next."""

    w_prev: np.ndarray    # w at t_i
    w_prev2: np.ndarray   # w at t_{i-1}
    lam_prev: np.ndarray
    h: float
    t_next: float

    def __post_init__(self):
        if self.h <= 0.0:
            raise ValueError(f"time step must be positive, got {self.h}")


@dataclass(frozen=True)
class StaticContext:
    """Marker context for static solves; ``t`` selects the load instant."""

    t: float = 0.0


@dataclass(frozen=True)
class NcpReport:
    lam: np.ndarray
    w: np.ndarray
    gap: np.ndarray           # F(lambda) at the returned iterate
    iterations: int
    residuals: tuple[float, ...]
    status: NcpStatus


def effective_stiffness(ops: OperatorBundle, lam: np.ndarray) -> sp.csc_matrix:
    """S(lambda) = K - sum_k lambda_k (D_k + D_k^T)."""
    lam = np.asarray(lam, dtype=float)
    if ops.m == 0 or not lam.any():
        return ops.K.copy()
    data = ops._vals * lam[ops._kidx]
    dsum = sp.coo_matrix((data, (ops._rows, ops._cols)), shape=ops.K.shape)
    return (ops.K - dsum).tocsc()


def _system_matrix(ops: OperatorBundle, hist: StepHistory | StaticContext,
                   lam: np.ndarray) -> sp.csc_matrix:
    if isinstance(hist, StaticContext):
        return effective_stiffness(ops, lam)
    lam_s = hist.lam_prev if ops.s_eval == "previous" else lam
    return (ops.M + hist.h ** 2 * effective_stiffness(ops, lam_s)).tocsc()


def _rhs(ops: OperatorBundle, hist: StepHistory | StaticContext,
         lam: np.ndarray) -> np.ndarray:
    if isinstance(hist, StaticContext):
        return ops.f_provider(hist.t) + ops.C.T @ lam
    h2 = hist.h ** 2
    return (h2 * ops.f_provider(hist.t_next) + h2 * (ops.C.T @ lam)
            + ops.M @ (2.0 * hist.w_prev - hist.w_prev2))


def _factorize(mat: sp.csc_matrix, lam: np.ndarray):
    try:
        return spla.splu(mat)
    except RuntimeError as exc:
        raise NcpError(f"singular system matrix at lambda = {np.array2string(lam, precision=3)}"
                       ) from exc


def static_w(ops: OperatorBundle, lam: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Static displacement map w(lambda) = S(lambda)^{-1} (f + C^T lambda)."""
    lam = np.asarray(lam, dtype=float)
    ctx = StaticContext(t=t)
    lu = _factorize(_system_matrix(ops, ctx, lam), lam)
    return lu.solve(_rhs(ops, ctx, lam))


def dynamic_w(ops: OperatorBundle, hist: StepHistory, lam: np.ndarray) -> np.ndarray:
    """Implicit-Euler displacement map for the next time step.

    w = (M + h^2 S)^{-1} (h^2 f(t_next) + h^2 C^T lambda + 2 M w_prev - M w_prev2),
    with S evaluated at the supplied lambda (or at the previous accepted
    multiplier when the bundle is configured with s_eval="previous").
    """
    lam = np.asarray(lam, dtype=float)
    lu = _factorize(_system_matrix(ops, hist, lam), lam)
    return lu.solve(_rhs(ops, hist, lam))


def constraint_F(ops: OperatorBundle, w: np.ndarray) -> np.ndarray:
    """F_k = w^T D_k w + c_k^T w + b_k (via the symmetrized storage)."""
    w = np.asarray(w, dtype=float)
    quad = np.array([0.5 * (w @ (d @ w)) for d in ops.D_sym])
    return quad + ops.C @ w + ops.b


def _zmatrix(ops: OperatorBundle, w: np.ndarray) -> np.ndarray:
    """Rows Z_k = w^T (D_k + D_k^T) + c_k^T, shape (m, n)."""
    z = np.empty((ops.m, ops.n))
    for k, d in enumerate(ops.D_sym):
        z[k] = d @ w
    return z + ops.C.toarray()


def _linearize(ops: OperatorBundle, ctx: StepHistory | StaticContext, lam: np.ndarray,
               with_jacobian: bool = True):
    """Shared per-iterate work: one factorization, then w, F and (optionally)
    the Jacobian, whose m right-hand sides reuse the same factorization."""
    lam = np.asarray(lam, dtype=float)
    lu = _factorize(_system_matrix(ops, ctx, lam), lam)
    w = lu.solve(_rhs(ops, ctx, lam))
    fval = constraint_F(ops, w)
    if not with_jacobian:
        return w, fval, None
    zmat = _zmatrix(ops, w)
    if isinstance(ctx, StaticContext):
        df = zmat @ lu.solve(zmat.T)
    elif ops.s_eval == "previous":
        # S frozen at the previous step's multiplier: w is affine in lambda
        df = ctx.h ** 2 * (zmat @ lu.solve(ops.C.T.toarray()))
    else:
        df = ctx.h ** 2 * (zmat @ lu.solve(zmat.T))
    return w, fval, df


def jacobian(ops: OperatorBundle, ctx: StepHistory | StaticContext,
             lam: np.ndarray) -> np.ndarray:
    """Analytic Jacobian DF(lambda) of the constraint function.

    Dynamic: DF = h^2 Z (M + h^2 S(lambda))^{-1} Z^T; static drops the h^2
    and uses S(lambda) alone.
    """
    return _linearize(ops, ctx, lam)[2]


def solve_ncp(ops: OperatorBundle, ctx: StepHistory | StaticContext,
              lam0: np.ndarray, tol: float | None = None,
              max_iter: int = 25) -> NcpReport:
    """Sequential-LCP fixed point for the NCP lambda >= 0, F(lambda) >= 0,
    lambda^T F(lambda) = 0.

    Each iteration linearizes F at the current iterate, solves the LCP
    (A, B) = (DF(z), F(z) - DF(z) z) by Lemke's method and stops once
    ||z_l - z_{l-1}|| < tol.  An explicit ``tol`` is absolute; the default
    is 1e-10 (1 + max(||lam0||, ||z_l||)) so the threshold tracks the
    multiplier scale even when a step starts from zero.  A Lemke ray
    termination triggers one restart from z = 0, after that the step fails.
    """
    z = np.asarray(lam0, dtype=float).copy()
    if z.min(initial=0.0) < 0.0:
        raise NcpError("initial multiplier must be nonnegative")
    lam0_norm = float(np.linalg.norm(z))

    def threshold(z_cur: np.ndarray) -> float:
        if tol is not None:
            return tol
        return 1e-10 * (1.0 + max(lam0_norm, float(np.linalg.norm(z_cur))))

    residuals: list[float] = []
    restarted = False
    m = ops.m
    if m == 0:
        w, fval, _ = _linearize(ops, ctx, z, with_jacobian=False)
        return NcpReport(lam=z, w=w, gap=fval, iterations=1, residuals=(0.0,),
                         status=NcpStatus.CONVERGED)
    it = 0
    while it < max_iter:
        it += 1
        w, fval, df = _linearize(ops, ctx, z)
        sol = lemke(LcpProblem(A=df, B=fval - df @ z))
        if sol.status is not LcpStatus.SOLVED:
            if not restarted and z.any():
                restarted = True
                z = np.zeros(m)
                residuals.append(np.inf)
                continue
            return NcpReport(lam=z, w=w, gap=fval, iterations=it,
                             residuals=tuple(residuals), status=NcpStatus.LCP_FAILURE)
        z_new = sol.z
        res = float(np.linalg.norm(z_new - z))
        residuals.append(res)
        z = z_new
        if res < threshold(z):
            w, fval, _ = _linearize(ops, ctx, z, with_jacobian=False)
            return NcpReport(lam=z, w=w, gap=fval, iterations=it,
                             residuals=tuple(residuals), status=NcpStatus.CONVERGED)
    w, fval, _ = _linearize(ops, ctx, z, with_jacobian=False)
    return NcpReport(lam=z, w=w, gap=fval, iterations=max_iter,
                     residuals=tuple(residuals), status=NcpStatus.MAX_ITERATIONS)


def complementarity_violation(lam: np.ndarray, gap: np.ndarray) -> float:
    """Scaled violation of {lam >= 0, gap >= 0, lam^T gap = 0}; <= 1 passes.

    Uses eps_c = 1e-8 (1 + ||lam||)(1 + ||gap||) for both the sign and the
    product bound.
    """
    lam = np.asarray(lam, dtype=float)
    gap = np.asarray(gap, dtype=float)
    eps = 1e-8 * (1.0 + np.linalg.norm(lam)) * (1.0 + np.linalg.norm(gap))
    worst = max(-lam.min(initial=0.0), -gap.min(initial=0.0), abs(float(lam @ gap)))
    return worst / eps
