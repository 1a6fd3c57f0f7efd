"""Time integration and orchestration: offline build, implicit-Euler two-step
march for the full and reduced models, trajectory recording, stress recovery.

One simulation is one sequential context.  The online loop works on the
reduced state; the full displacement field is expanded once at the end
(identity expansion in full mode).  Sensor values during the march come
from tracked rows of the transformation so no per-step expansion happens.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np

from contactrom import fem as _fem
from contactrom import mor as _mor
from contactrom import ncp as _ncp
from contactrom.contact import ContactPairing, ConstraintSet, assemble_constraints, update_pairing
from contactrom.fem import SystemMatrices, make_force_provider
from contactrom.mesh import (DofPartition, ElementKind, Mesh2D, partition_dofs,
                             _Q4_CORNERS, _q4_dshape)
from contactrom.ncp import NcpStatus, StepHistory, complementarity_violation, solve_ncp

MODES = ("full", "rom-cb", "rom-plain")


class SimError(RuntimeError):
    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


@dataclass
class Scenario:
    """Everything one run needs: mesh, physics, contact, time grid, solver knobs."""

    label: str
    mesh: Mesh2D
    materials: object                      # Material or {body_id: Material}
    loads: list
    pairing: ContactPairing
    h: float
    n_steps: int
    t0: float = 0.0
    mode: str = "full"
    n_s: int = 3
    q0: np.ndarray | None = None
    v0: np.ndarray | None = None
    solver_tol: float | None = None
    max_iter: int = 25
    s_eval: str = "current"
    contact_update: bool = False
    update_tol: float = 0.1
    sensors: tuple = ()
    contact_sensor: int = 0                # constraint index reported as g_CN / p_CN
    extra_master_nodes: tuple = ()
    complete_basis: bool = False

    def __post_init__(self):
        if self.h <= 0.0:
            raise SimError(f"time step must be positive, got {self.h}")
        if self.n_steps < 2:
            raise SimError("need at least two time steps (two-step scheme)")
        if self.mode not in MODES:
            raise SimError(f"unknown mode {self.mode!r}; choose from {MODES}")


@dataclass
class Trajectory:
    """Per-step record of one run, with the full-space displacement expanded."""

    t: np.ndarray
    q: np.ndarray               # (steps, N) full-space displacements
    states: np.ndarray          # (steps, n) reduced states (== q in full mode)
    lam: np.ndarray             # (steps, m)
    gap: np.ndarray             # (steps, m)
    iterations: np.ndarray
    residual: np.ndarray        # final fixed-point residual per step
    pairing_version: np.ndarray
    wall_clock: np.ndarray
    mode: str
    dims: dict
    Q: np.ndarray | None = None
    mesh: Mesh2D | None = None
    sensors: tuple = ()
    contact_sensor: int = 0
    max_complementarity: float = 0.0

    @property
    def n_steps(self) -> int:
        return len(self.t)

    def sensor_series(self, node: int) -> np.ndarray:
        """(steps, 2) displacements of one node, via tracked transformation rows."""
        fmap, _ = self.mesh.free_dof_map()
        out = np.zeros((self.n_steps, 2))
        for c, dof in enumerate((fmap[2 * node], fmap[2 * node + 1])):
            if dof < 0:
                continue
            if self.Q is None:
                out[:, c] = self.states[:, dof]
            else:
                out[:, c] = self.states @ self.Q[dof]
        return out

    def save_csv(self, path) -> None:
        """Deterministic delimited output; header documents the column order."""
        cols = ["t"]
        series = [self.t]
        for node in self.sensors:
            s = self.sensor_series(int(node))
            cols += [f"s{node}_ux", f"s{node}_uy"]
            series += [s[:, 0], s[:, 1]]
        k = self.contact_sensor
        cols += ["gap", "pressure", "ncp_iterations", "pairing_version"]
        series += [self.gap[:, k], self.lam[:, k], self.iterations, self.pairing_version]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(self.n_steps):
                row = []
                for s in series:
                    v = s[i]
                    row.append(str(int(v)) if isinstance(v, (np.integer, int)) else repr(float(v)))
                fh.write(",".join(row) + "\n")


def expand(q_matrix: np.ndarray | None, w_hat: np.ndarray) -> np.ndarray:
    """Full-space displacement Q w.  Master entries pass through the identity
    block untouched, so they match the reduced state bitwise."""
    if q_matrix is None:
        return np.asarray(w_hat)
    w_hat = np.asarray(w_hat)
    if w_hat.shape[-1] != q_matrix.shape[1]:
        raise SimError(f"state length {w_hat.shape[-1]} does not match basis "
                       f"columns {q_matrix.shape[1]}")
    return w_hat @ q_matrix.T


def _project_initial(q_matrix: np.ndarray | None, vec: np.ndarray) -> np.ndarray:
    if q_matrix is None:
        return vec.copy()
    if not vec.any():
        return np.zeros(q_matrix.shape[1])
    sol, *_ = np.linalg.lstsq(q_matrix, vec, rcond=None)
    return sol


def _build_operators(sc: Scenario, system: SystemMatrices, cs: ConstraintSet,
                     partition: DofPartition):
    """Offline phase: basis construction and reduced operators per mode.

    Returns (bundle, Q or None, rebuild) where rebuild(cs) refreshes the
    constraint data after a pairing update without rebuilding the basis.
    """
    mesh, loads = sc.mesh, sc.loads
    if sc.mode == "full":
        provider = make_force_provider(loads, mesh)

        def rebuild(cs_new: ConstraintSet):
            return _ncp.OperatorBundle.from_full(system, cs_new, provider, s_eval=sc.s_eval)

        return rebuild(cs), None, rebuild

    if sc.mode == "rom-cb":
        slave = partition.slave_dofs
        f_s = system.f_pos[slave]
        k_ss = system.K[slave][:, slave]
        m_ss = system.M[slave][:, slave]
        q_s = _mor.arnoldi_basis(k_ss, m_ss, f_s, sc.n_s)
        if sc.complete_basis:
            q_s = _mor.pad_to_complete(q_s)
        q_cb = _mor.craig_bampton(partition, system.K, q_s)
        provider = make_force_provider(loads, mesh, projector=q_cb)

        def rebuild(cs_new: ConstraintSet):
            rm = _mor.reduce_model(system, cs_new, q_cb, partition, n_s=q_s.shape[1])
            return rm.to_bundle(provider, s_eval=sc.s_eval)

        return rebuild(cs), q_cb, rebuild

    # rom-plain: same basis size as the Craig-Bampton run, no contact treatment
    n_total = partition.n_master + sc.n_s
    q_plain = _mor.arnoldi_basis(system.K, system.M, system.f_pos, n_total)
    provider = make_force_provider(loads, mesh, projector=q_plain)

    def rebuild(cs_new: ConstraintSet):
        rm = _mor.reduce_model_dense(system, cs_new, q_plain)
        return rm.to_bundle(provider, s_eval=sc.s_eval)

    return rebuild(cs), q_plain, rebuild


def build_reduced_model(sc: Scenario):
    """Offline artifacts only (for the sidecar path): returns the ReducedModel."""
    system, cs, partition = offline_assembly(sc)
    if sc.mode == "rom-cb":
        slave = partition.slave_dofs
        q_s = _mor.arnoldi_basis(system.K[slave][:, slave], system.M[slave][:, slave],
                                 system.f_pos[slave], sc.n_s)
        if sc.complete_basis:
            q_s = _mor.pad_to_complete(q_s)
        q_cb = _mor.craig_bampton(partition, system.K, q_s)
        return _mor.reduce_model(system, cs, q_cb, partition, n_s=q_s.shape[1])
    if sc.mode == "rom-plain":
        q = _mor.arnoldi_basis(system.K, system.M, system.f_pos,
                               partition.n_master + sc.n_s)
        return _mor.reduce_model_dense(system, cs, q)
    return _mor.identity_model(system, cs)


def offline_assembly(sc: Scenario):
    """Assemble system matrices, partition DOFs, assemble constraints."""
    masters = set(int(n) for n in sc.pairing.all_nodes())
    masters.update(int(n) for n in sc.extra_master_nodes)
    partition = partition_dofs(sc.mesh, sorted(masters))
    system = _fem.assemble(sc.mesh, sc.materials, loads=sc.loads)
    cs = assemble_constraints(sc.mesh, sc.pairing, partition)
    return system, cs, partition


def run(sc: Scenario) -> Trajectory:
    """Offline build + online two-step implicit-Euler march.

    Every accepted step carries a complementarity certificate; the march
    aborts with the partial trajectory attached if the NCP solve fails.
    """
    system, cs, partition = offline_assembly(sc)
    bundle, q_matrix, rebuild = _build_operators(sc, system, cs, partition)
    pairing = sc.pairing
    n_red = bundle.n
    m = bundle.m
    n_t = sc.n_steps + 1

    fmap, n_free = sc.mesh.free_dof_map()
    q0 = np.zeros(n_free) if sc.q0 is None else np.asarray(sc.q0, dtype=float)
    v0 = np.zeros(n_free) if sc.v0 is None else np.asarray(sc.v0, dtype=float)
    w0 = _project_initial(q_matrix, q0)
    w1 = _project_initial(q_matrix, q0 + sc.h * v0)   # explicit Euler bootstrap

    t = sc.t0 + sc.h * np.arange(n_t)
    states = np.zeros((n_t, n_red))
    lam = np.zeros((n_t, m))
    gap = np.zeros((n_t, m))
    iters = np.zeros(n_t, dtype=int)
    resid = np.zeros(n_t)
    version = np.zeros(n_t, dtype=int)
    clock = np.zeros(n_t)

    states[0], states[1] = w0, w1
    gap[0] = _ncp.constraint_F(bundle, w0)
    gap[1] = _ncp.constraint_F(bundle, w1)
    lam_prev = np.zeros(m)
    max_viol = max(complementarity_violation(lam_prev, gap[0]),
                   complementarity_violation(lam_prev, gap[1]))
    pair_version = 0

    def make_traj(upto: int) -> Trajectory:
        full = expand(q_matrix, states[:upto])
        return Trajectory(t=t[:upto], q=full, states=states[:upto].copy(),
                          lam=lam[:upto], gap=gap[:upto], iterations=iters[:upto],
                          residual=resid[:upto],
                          pairing_version=version[:upto], wall_clock=clock[:upto],
                          mode=sc.mode,
                          dims={"N": n_free, "n": n_red, "m": m,
                                "n_master": partition.n_master,
                                "n_slave": partition.n_slave},
                          Q=q_matrix, mesh=sc.mesh, sensors=tuple(sc.sensors),
                          contact_sensor=sc.contact_sensor,
                          max_complementarity=max_viol)

    for i in range(2, n_t):
        tic = _time.perf_counter()
        hist = StepHistory(w_prev=states[i - 1], w_prev2=states[i - 2],
                           lam_prev=lam_prev, h=sc.h, t_next=t[i])
        rep = solve_ncp(bundle, hist, lam_prev, tol=sc.solver_tol, max_iter=sc.max_iter)
        if rep.status is not NcpStatus.CONVERGED:
            raise SimError(f"NCP did not converge at step {i} (t={t[i]:g}): "
                           f"{rep.status.value}, residuals {rep.residuals[-3:]}",
                           trajectory=make_traj(i))
        states[i] = rep.w
        lam[i] = rep.lam
        gap[i] = rep.gap
        iters[i] = rep.iterations
        resid[i] = rep.residuals[-1] if rep.residuals else 0.0
        version[i] = pair_version
        lam_prev = rep.lam
        viol = complementarity_violation(rep.lam, rep.gap)
        max_viol = max(max_viol, viol)
        if viol > 1.0:
            raise SimError(f"complementarity certificate failed at step {i} "
                           f"(t={t[i]:g}, violation {viol:.3g}x tolerance)",
                           trajectory=make_traj(i))

        if sc.contact_update:
            q_full = expand(q_matrix, states[i])
            new_pairing = update_pairing(pairing, q_full, sc.mesh, tol=sc.update_tol)
            if not np.array_equal(new_pairing.selecting, pairing.selecting):
                pairing = new_pairing
                cs = assemble_constraints(sc.mesh, pairing, partition)
                bundle = rebuild(cs)
                pair_version += 1
        clock[i] = _time.perf_counter() - tic

    return make_traj(n_t)


# ----------------------------------------------------------------------
# Nodal stress recovery
# ----------------------------------------------------------------------

def recover_stress(mesh: Mesh2D, q: np.ndarray, node: int,
                   materials) -> tuple[np.ndarray, float]:
    """Average the displacement gradient over the elements adjacent to a node,
    then apply the plane-stress law; returns (sigma 2x2, von Mises)."""
    table = _fem._materials_by_body(mesh, materials)
    fmap, n_free = mesh.free_dof_map()
    q = np.asarray(q, dtype=float)
    if q.shape != (n_free,):
        raise SimError(f"displacement vector has length {q.shape}, expected ({n_free},)")
    adjacent = np.nonzero((mesh.elements == node).any(axis=1))[0]
    if len(adjacent) == 0:
        raise SimError(f"node {node} is not attached to any element")

    def u_of(nid: int) -> np.ndarray:
        dx, dy = fmap[2 * nid], fmap[2 * nid + 1]
        return np.array([q[dx] if dx >= 0 else 0.0, q[dy] if dy >= 0 else 0.0])

    grad = np.zeros((2, 2))
    for e in adjacent:
        conn = mesh.elements[e]
        coords = mesh.node_coords[conn]
        u_elem = np.array([u_of(int(nid)) for nid in conn])   # (npe, 2)
        if mesh.element_kind is ElementKind.T3:
            b, _ = _fem.t3_bmatrix(coords)
            dndx = np.column_stack([b[0, 0::2], b[1, 1::2]])  # (3, 2)
        else:
            corner = int(np.nonzero(conn == node)[0][0])
            xi, eta = _Q4_CORNERS[corner]
            dshape = _q4_dshape(xi, eta)
            jac = dshape.T @ coords
            dndx = dshape @ np.linalg.inv(jac).T
        grad += u_elem.T @ dndx                               # du_i/dx_j
    grad /= len(adjacent)

    strain = 0.5 * (grad + grad.T)
    mat = table[int(mesh.body_id[node])]
    e, nu = mat.young_modulus, mat.poisson_ratio
    c = e / (1.0 - nu * nu)
    s11 = c * (strain[0, 0] + nu * strain[1, 1])
    s22 = c * (strain[1, 1] + nu * strain[0, 0])
    s12 = e / (1.0 + nu) * strain[0, 1]
    sigma = np.array([[s11, s12], [s12, s22]])
    vm = float(np.sqrt(s11 ** 2 - s11 * s22 + s22 ** 2 + 3.0 * s12 ** 2))
    return sigma, vm
