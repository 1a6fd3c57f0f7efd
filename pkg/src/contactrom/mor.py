"""Model order reduction: slave-block Krylov basis, Craig-Bampton transform,
reduced operators and the offline sidecar file.

The reduction keeps every contact (master) DOF: the transformation has an
identity master block, a Guyan coupling block -K_SS^{-1} K_SM and an
Arnoldi-orthonormalized Krylov block for the slave dynamics.  Because the
constraints touch master DOFs only, the reduced constraint data is just
the master block padded with zeros - no dense triple products are needed
on the Craig-Bampton path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from contactrom.contact import ConstraintSet
from contactrom.fem import SystemMatrices
from contactrom.mesh import DofPartition
from contactrom.ncp import OperatorBundle


class MorError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReducedModel:
    """Reduced operators plus the transformation that expands back to full size.

    ``kind`` records how Q was built: "cb" (Craig-Bampton), "plain"
    (full-space Krylov without contact treatment) or "identity".
    """

    Q: np.ndarray              # (N, n) transformation, rows in free-DOF order
    M_hat: np.ndarray          # (n, n)
    K_hat: np.ndarray
    D_sym_hat: tuple           # m matrices (n, n), D_k + D_k^T reduced
    C_hat: np.ndarray          # (m, n)
    b: np.ndarray
    f_pos_hat: np.ndarray
    partition: DofPartition | None
    n_s: int
    kind: str = "cb"

    @property
    def n_full(self) -> int:
        return self.Q.shape[0]

    @property
    def n_reduced(self) -> int:
        return self.Q.shape[1]

    @property
    def m(self) -> int:
        return len(self.b)

    def to_bundle(self, f_provider, s_eval: str = "current") -> OperatorBundle:
        return OperatorBundle(M=sp.csc_matrix(self.M_hat), K=sp.csc_matrix(self.K_hat),
                              D_sym=tuple(sp.csr_matrix(d) for d in self.D_sym_hat),
                              C=sp.csr_matrix(self.C_hat), b=self.b,
                              f_provider=f_provider, s_eval=s_eval)


def arnoldi_basis(k_ss, m_ss, f_s: np.ndarray, n_s: int,
                  breakdown_tol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis of span{K^{-1}f, (K^{-1}M) K^{-1}f, ...}.

    Modified Gram-Schmidt with one reorthogonalization pass; on breakdown
    the returned basis has fewer than ``n_s`` columns.
    """
    if n_s < 1:
        raise MorError(f"Krylov dimension must be >= 1, got {n_s}")
    f_s = np.asarray(f_s, dtype=float)
    if not f_s.any():
        raise MorError("empty Krylov seed: slave load pattern is zero")
    k_ss = sp.csc_matrix(k_ss)
    m_ss = sp.csc_matrix(m_ss)
    try:
        lu = spla.splu(k_ss)
    except RuntimeError as exc:
        raise MorError("singular slave stiffness block") from exc
    cols = []
    v = lu.solve(f_s)
    for _ in range(n_s):
        norm0 = np.linalg.norm(v)
        for q in cols:
            v -= (q @ v) * q
        for q in cols:           # one reorthogonalization pass
            v -= (q @ v) * q
        norm = np.linalg.norm(v)
        if norm <= breakdown_tol * max(norm0, 1e-300):
            break
        v = v / norm
        cols.append(v)
        v = lu.solve(m_ss @ v)
    if not cols:
        raise MorError("Krylov iteration broke down immediately")
    return np.column_stack(cols)


def pad_to_complete(q_s: np.ndarray) -> np.ndarray:
    """Deterministically complete an orthonormal basis to the full slave space.

    Used for the complete-basis consistency checks when the Krylov sweep
    breaks down before spanning everything.
    """
    ns = q_s.shape[0]
    if q_s.shape[1] >= ns:
        return q_s[:, :ns]
    stacked = np.hstack([q_s, np.eye(ns)])
    q, _, _ = scipy.linalg.qr(stacked, mode="economic", pivoting=True)
    # keep the original columns in front, fill the rest from the QR factors
    fill = q[:, : ns]
    proj = fill - q_s @ (q_s.T @ fill)
    out = [q_s]
    have = q_s.shape[1]
    for j in range(fill.shape[1]):
        v = proj[:, j]
        for blk in out:
            v = v - blk @ (blk.T @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-10:
            out.append((v / norm)[:, None])
            have += 1
            if have == ns:
                break
    return np.hstack(out)


def _check_congruence(m_hat: np.ndarray, k_hat: np.ndarray) -> None:
    """Congruence must keep the reduced mass/stiffness symmetric positive
    definite; a failure means the basis lost rank or the input was not SPD."""
    for name, mat in (("mass", m_hat), ("stiffness", k_hat)):
        scale = np.abs(mat).max()
        if scale > 0 and np.abs(mat - mat.T).max() > 1e-10 * scale:
            raise MorError(f"reduced {name} matrix lost symmetry")
        try:
            np.linalg.cholesky(0.5 * (mat + mat.T))
        except np.linalg.LinAlgError as exc:
            raise MorError(f"reduced {name} matrix is not positive definite") from exc


def craig_bampton(partition: DofPartition, k: sp.spmatrix, q_s: np.ndarray) -> np.ndarray:
    """Assemble Q_CB with identity master block, Guyan coupling and Q_S.

    Rows are in free-DOF order (not reordered), so downstream code can use
    the matrix against vectors in the native numbering.
    """
    k = sp.csc_matrix(k)
    master, slave = partition.master_dofs, partition.slave_dofs
    n_m, n_sl = len(master), len(slave)
    if q_s.shape[0] != n_sl:
        raise MorError(f"slave basis has {q_s.shape[0]} rows, partition has {n_sl} slaves")
    n = n_m + q_s.shape[1]
    q_cb = np.zeros((partition.n_free, n))
    q_cb[master, :n_m] = np.eye(n_m)
    if n_sl:
        k_ss = k[slave][:, slave]
        k_sm = k[slave][:, master]
        try:
            lu = spla.splu(sp.csc_matrix(k_ss))
        except RuntimeError as exc:
            raise MorError("singular K_SS in static condensation") from exc
        if n_m:
            q_cb[slave, :n_m] = -lu.solve(k_sm.toarray())
        q_cb[slave, n_m:] = q_s
    return q_cb


def reduce_model(system: SystemMatrices, cs: ConstraintSet, q_cb: np.ndarray,
                 partition: DofPartition, n_s: int | None = None) -> ReducedModel:
    """Congruence-reduce M and K; constraints keep only their master block.

    The constraint shortcut relies on the identity master block of Q_CB and
    on D_k, c_k vanishing outside the master DOFs, so D_hat_k is the local
    block scattered at the constraint's reduced (master-position) indices.
    """
    n_m = partition.n_master
    if n_s is None:
        n_s = q_cb.shape[1] - n_m
    m_hat = q_cb.T @ (system.M @ q_cb)
    k_hat = q_cb.T @ (system.K @ q_cb)
    _check_congruence(m_hat, k_hat)
    n = q_cb.shape[1]
    pos = -np.ones(partition.n_free, dtype=int)
    pos[partition.master_dofs] = np.arange(n_m)
    red_dofs = pos[cs.dofs]
    if (red_dofs < 0).any():
        raise MorError("constraint touches a slave DOF; cannot use the master-block shortcut")
    d_hat = []
    c_hat = np.zeros((cs.m, n))
    for k in range(cs.m):
        d = np.zeros((n, n))
        loc = red_dofs[k]
        block = cs.d_loc[k] + cs.d_loc[k].T
        d[np.ix_(loc, loc)] += block
        d_hat.append(d)
        c_hat[k, loc] += cs.c_loc[k]
    return ReducedModel(Q=q_cb, M_hat=m_hat, K_hat=k_hat, D_sym_hat=tuple(d_hat),
                        C_hat=c_hat, b=cs.b.copy(), f_pos_hat=q_cb.T @ system.f_pos,
                        partition=partition, n_s=n_s, kind="cb")


def reduce_model_dense(system: SystemMatrices, cs: ConstraintSet, q: np.ndarray,
                       kind: str = "plain") -> ReducedModel:
    """General congruence reduction (dense triple products for the constraints).

    This is the path for bases without contact treatment, where the
    constraint data does not stay in a master block.
    """
    m_hat = q.T @ (system.M @ q)
    k_hat = q.T @ (system.K @ q)
    _check_congruence(m_hat, k_hat)
    d_hat = tuple(q.T @ (cs.d_sym(k) @ q) for k in range(cs.m))
    c_hat = cs.C @ q
    return ReducedModel(Q=q, M_hat=m_hat, K_hat=k_hat, D_sym_hat=d_hat,
                        C_hat=np.asarray(c_hat), b=cs.b.copy(),
                        f_pos_hat=q.T @ system.f_pos, partition=None,
                        n_s=q.shape[1], kind=kind)


def identity_model(system: SystemMatrices, cs: ConstraintSet) -> ReducedModel:
    """Trivial reduction (Q = I); lets the full model run through the same loop."""
    n = system.n
    dsym = tuple(cs.d_sym(k).toarray() for k in range(cs.m))
    return ReducedModel(Q=np.eye(n), M_hat=system.M.toarray(), K_hat=system.K.toarray(),
                        D_sym_hat=dsym, C_hat=cs.C.toarray(), b=cs.b.copy(),
                        f_pos_hat=system.f_pos.copy(), partition=None, n_s=n,
                        kind="identity")


# ----------------------------------------------------------------------
# Sidecar serialization: dimensioned header + row-major float64 payloads
# ----------------------------------------------------------------------

_MAGIC = b"CROMRED1"
_KIND_CODE = {"cb": 1, "plain": 2, "identity": 3}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def save_reduced(model: ReducedModel, path) -> None:
    n_master = model.partition.n_master if model.partition else 0
    n_slave = model.partition.n_slave if model.partition else 0
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<7q", model.n_full, model.n_reduced, model.m,
                             n_master, n_slave, model.n_s, _KIND_CODE[model.kind]))
        if model.partition:
            model.partition.master_dofs.astype("<i8").tofile(fh)
            model.partition.slave_dofs.astype("<i8").tofile(fh)
        for arr in (model.Q, model.M_hat, model.K_hat, *model.D_sym_hat,
                    model.C_hat, model.b, model.f_pos_hat):
            np.ascontiguousarray(arr, dtype="<f8").tofile(fh)


def load_reduced(path) -> ReducedModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise MorError(f"{path}: not a reduced-model sidecar")
        n_full, n_red, m, n_master, n_slave, n_s, code = struct.unpack("<7q",
                                                                       fh.read(7 * 8))
        partition = None
        if n_master or n_slave:
            master = np.fromfile(fh, dtype="<i8", count=n_master)
            slave = np.fromfile(fh, dtype="<i8", count=n_slave)
            perm = np.empty(n_master + n_slave, dtype=int)
            perm[master] = np.arange(n_master)
            perm[slave] = n_master + np.arange(n_slave)
            partition = DofPartition(master_dofs=master, slave_dofs=slave,
                                     full_to_reordered=perm)

        def mat(rows, colsn):
            data = np.fromfile(fh, dtype="<f8", count=rows * colsn)
            if data.size != rows * colsn:
                raise MorError(f"{path}: truncated payload")
            return data.reshape(rows, colsn)

        q = mat(n_full, n_red)
        m_hat = mat(n_red, n_red)
        k_hat = mat(n_red, n_red)
        d_hat = tuple(mat(n_red, n_red) for _ in range(m))
        c_hat = mat(m, n_red)
        b = np.fromfile(fh, dtype="<f8", count=m)
        f_pos_hat = np.fromfile(fh, dtype="<f8", count=n_red)
    return ReducedModel(Q=q, M_hat=m_hat, K_hat=k_hat, D_sym_hat=d_hat, C_hat=c_hat,
                        b=b, f_pos_hat=f_pos_hat, partition=partition, n_s=int(n_s),
                        kind=_CODE_KIND[int(code)])
