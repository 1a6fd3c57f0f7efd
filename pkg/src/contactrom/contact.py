"""Node-to-segment contact: angular gap, quadratic constraint data, pairing update.

The non-penetration measure is the (unnormalized) angular function
n^T (r - p) with n the 90-degree rotation of the segment vector.  Written
in reference positions and displacements it is exactly quadratic, which is
what the constraint assembly exploits: each node/segment pair k produces a
6x6 displacement block D_k, a 6-entry linear part c_k and a scalar offset
b_k, scattered onto the free DOFs of the three involved nodes.

Because the measure is unnormalized it scales with the segment length, so
the Lagrange multipliers scale inversely with it; tests and reports treat
lambda as the discrete contact pressure in that convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from contactrom.mesh import DofPartition, Mesh2D

ROT = np.array([[0.0, -1.0], [1.0, 0.0]])   # 90-degree rotation


class ContactError(ValueError):
    pass


def segment_normal(p, ptilde) -> np.ndarray:
    """Unnormalized normal R (ptilde - p) of the segment's carrier line."""
    p = np.asarray(p, dtype=float)
    ptilde = np.asarray(ptilde, dtype=float)
    d = ptilde - p
    if not d.any():
        raise ContactError("segment endpoints coincide")
    return ROT @ d


def angular_gap(p, ptilde, r) -> float:
    """Signed side measure n^T (r - p); zero iff r lies on the carrier line."""
    n = segment_normal(p, ptilde)
    return float(n @ (np.asarray(r, dtype=float) - np.asarray(p, dtype=float)))


@dataclass(frozen=True)
class Segment:
    start: int
    end: int

    def __post_init__(self):
        if self.start == self.end:
            raise ContactError(f"segment with p == ptilde == {self.start}")


@dataclass(frozen=True)
class ContactPairing:
    """Penetrating nodes, an adjacency-ordered segment list and the selecting map.

    ``selecting[i]`` is the list position of the segment currently assigned
    to node ``nodes[i]``.  The segment list order must reflect geometric
    adjacency because the pairing update only migrates to list neighbours.
    """

    nodes: np.ndarray
    segments: tuple[Segment, ...]
    selecting: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=int))
        segs = tuple(s if isinstance(s, Segment) else Segment(int(s[0]), int(s[1]))
                     for s in self.segments)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "selecting", np.asarray(self.selecting, dtype=int))
        if len(self.selecting) != len(self.nodes):
            raise ContactError("selecting function must be total on the contact nodes")
        if len(self.nodes) and len(segs) == 0:
            raise ContactError("contact nodes given without segments")
        if len(self.selecting) and (
                self.selecting.min() < 0 or self.selecting.max() >= len(segs)):
            raise ContactError("selecting function references a segment out of range")

    @classmethod
    def from_mesh(cls, mesh: Mesh2D) -> "ContactPairing":
        return cls(nodes=mesh.contact_nodes,
                   segments=tuple(Segment(int(p), int(q)) for p, q in mesh.contact_segments),
                   selecting=mesh.contact_selecting)

    def all_nodes(self) -> np.ndarray:
        """Every node referenced by the pairing: penetrating plus all endpoints."""
        ids = set(int(n) for n in self.nodes)
        for s in self.segments:
            ids.add(s.start)
            ids.add(s.end)
        return np.array(sorted(ids), dtype=int)


@dataclass(frozen=True)
class ConstraintSet:
    """Quadratic constraint data g_k(q) = q^T D_k q + c_k^T q + b_k on free DOFs.

    Stored as per-constraint 6x6 local blocks over the DOFs of (p, ptilde, r);
    the sparse N x N views are materialized on demand.  All entries live on
    master DOFs only, which the assembly enforces.
    """

    dofs: np.ndarray    # (m, 6) free-DOF indices, order [p_x p_y pt_x pt_y r_x r_y]
    d_loc: np.ndarray   # (m, 6, 6) unsymmetrized quadratic blocks
    c_loc: np.ndarray   # (m, 6)
    b: np.ndarray       # (m,)
    n: int              # free-DOF count

    @property
    def m(self) -> int:
        return len(self.b)

    def d_matrix(self, k: int) -> sp.csr_matrix:
        i = np.repeat(self.dofs[k], 6)
        j = np.tile(self.dofs[k], 6)
        return sp.coo_matrix((self.d_loc[k].ravel(), (i, j)), shape=(self.n, self.n)).tocsr()

    @property
    def D(self) -> list[sp.csr_matrix]:
        return [self.d_matrix(k) for k in range(self.m)]

    def d_sym(self, k: int) -> sp.csr_matrix:
        d = self.d_matrix(k)
        return (d + d.T).tocsr()

    @property
    def C(self) -> sp.csr_matrix:
        rows = np.repeat(np.arange(self.m), 6)
        cols = self.dofs.ravel()
        return sp.coo_matrix((self.c_loc.ravel(), (rows, cols)),
                             shape=(self.m, self.n)).tocsr()


def assemble_constraints(mesh: Mesh2D, pairing: ContactPairing,
                         partition: DofPartition) -> ConstraintSet:
    """Expand the angular gap of each assigned node/segment pair around the
    reference configuration and scatter it into (D_k, c_k, b_k).

    Raises if a constraint touches a Dirichlet-fixed DOF or a DOF outside
    the master set (the partition must cover all pairing nodes).
    """
    fmap, nfree = mesh.free_dof_map()
    is_master = np.zeros(nfree, dtype=bool)
    is_master[partition.master_dofs] = True
    rt = ROT.T
    m = len(pairing.nodes)
    dofs = np.empty((m, 6), dtype=int)
    d_loc = np.zeros((m, 6, 6))
    c_loc = np.zeros((m, 6))
    b = np.empty(m)
    for k, (node, sidx) in enumerate(zip(pairing.nodes, pairing.selecting)):
        seg = pairing.segments[sidx]
        ids = (seg.start, seg.end, int(node))
        for nid in ids:
            if nid < 0 or nid >= mesh.n_nodes:
                raise ContactError(f"constraint {k} references invalid node {nid}")
        loc = np.empty(6, dtype=int)
        for a, nid in enumerate(ids):
            dx, dy = fmap[2 * nid], fmap[2 * nid + 1]
            if dx < 0 or dy < 0:
                raise ContactError(f"constraint {k}: node {nid} is Dirichlet-fixed")
            loc[2 * a], loc[2 * a + 1] = dx, dy
        if not is_master[loc].all():
            raise ContactError(f"constraint {k} touches non-master DOFs; "
                               "add all pairing nodes to the partition")
        dofs[k] = loc
        xp = mesh.node_coords[seg.start]
        xt = mesh.node_coords[seg.end]
        xr = mesh.node_coords[node]
        avec = xt - xp                       # reference segment vector
        bvec = xr - xp                       # reference node offset
        b[k] = avec @ rt @ bvec
        n_ref = ROT @ avec
        mvec = rt @ bvec
        # slots: p = 0:2, ptilde = 2:4, r = 4:6
        c_loc[k, 4:6] += n_ref
        c_loc[k, 0:2] -= n_ref
        c_loc[k, 2:4] += mvec
        c_loc[k, 0:2] -= mvec
        d_loc[k, 2:4, 4:6] += rt
        d_loc[k, 2:4, 0:2] -= rt
        d_loc[k, 0:2, 4:6] -= rt
        d_loc[k, 0:2, 0:2] += rt
    return ConstraintSet(dofs=dofs, d_loc=d_loc, c_loc=c_loc, b=b, n=nfree)


def evaluate_gap(cs: ConstraintSet, q: np.ndarray) -> np.ndarray:
    """g_k = q^T D_k q + c_k^T q + b_k, evaluated through the 6x6 local blocks."""
    q = np.asarray(q, dtype=float)
    if q.shape != (cs.n,):
        raise ContactError(f"displacement vector has length {q.shape}, expected ({cs.n},)")
    ql = q[cs.dofs]                                   # (m, 6)
    quad = np.einsum("ki,kij,kj->k", ql, cs.d_loc, ql)
    return quad + np.einsum("ki,ki->k", cs.c_loc, ql) + cs.b


def update_pairing(pairing: ContactPairing, q: np.ndarray, mesh: Mesh2D,
                   tol: float = 0.1) -> ContactPairing:
    """One sweep of the local contact update.

    Each node is projected onto the carrier line of its current segment in
    the deformed configuration; if the line parameter alpha leaves
    [-tol, 1+tol] the node migrates to the adjacent segment in the list
    (one position at most per call).  Nodes on degenerate deformed segments
    are skipped with a warning.
    """
    if not (0.0 < tol < 1.0):
        raise ContactError(f"update tolerance must be in (0, 1), got {tol}")
    fmap, nfree = mesh.free_dof_map()
    q = np.asarray(q, dtype=float)
    if q.shape != (nfree,):
        raise ContactError(f"displacement vector has length {q.shape}, expected ({nfree},)")
    eps_geom = 1e-12 * mesh.diameter()

    def deformed(node: int) -> np.ndarray:
        dx, dy = fmap[2 * node], fmap[2 * node + 1]
        u = np.array([q[dx] if dx >= 0 else 0.0, q[dy] if dy >= 0 else 0.0])
        return mesh.node_coords[node] + u

    k_s = len(pairing.segments)
    selecting = pairing.selecting.copy()
    for i, node in enumerate(pairing.nodes):
        j = selecting[i]
        seg = pairing.segments[j]
        p1 = deformed(seg.start)
        p2 = deformed(seg.end)
        r = deformed(int(node))
        d = p2 - p1
        ll = float(d @ d)
        if ll < eps_geom * eps_geom:
            warnings.warn(f"contact update: degenerate deformed segment {j}, node {node} skipped")
            continue
        alpha = float((r - p1) @ d) / ll
        if alpha < -tol and j > 0:
            selecting[i] = j - 1
        elif alpha > 1.0 + tol and j < k_s - 1:
            selecting[i] = j + 1
    return ContactPairing(nodes=pairing.nodes, segments=pairing.segments,
                          selecting=selecting)
