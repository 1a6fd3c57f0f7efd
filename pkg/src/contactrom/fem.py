"""Plane-stress linear elasticity: element matrices, global assembly, load vectors.

Q4 elements are integrated with a 2x2 Gauss rule (stiffness and consistent
mass); T3 elements use the closed-form constant-strain expressions.  Global
matrices are assembled on the free DOFs only: Dirichlet rows/columns are
eliminated a priori.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp

from contactrom.mesh import ElementKind, Mesh2D, _Q4_CORNERS, _q4_dshape

_G = 1.0 / np.sqrt(3.0)
_GAUSS_2X2 = [(-_G, -_G, 1.0), (_G, -_G, 1.0), (_G, _G, 1.0), (-_G, _G, 1.0)]


class FemError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    """Linear-elastic plane-stress material."""

    young_modulus: float
    poisson_ratio: float
    density: float

    def __post_init__(self):
        if self.young_modulus <= 0.0:
            raise FemError(f"Young's modulus must be positive, got {self.young_modulus}")
        if not (-1.0 <= self.poisson_ratio <= 0.5):
            raise FemError(f"Poisson ratio {self.poisson_ratio} outside [-1, 0.5]")
        if self.poisson_ratio == 0.5:
            raise FemError("Poisson ratio 0.5 makes the plane-stress law singular")
        if self.density <= 0.0:
            raise FemError(f"density must be positive, got {self.density}")

    def plane_stress_matrix(self) -> np.ndarray:
        e, nu = self.young_modulus, self.poisson_ratio
        c = e / (1.0 - nu * nu)
        return c * np.array([[1.0, nu, 0.0],
                             [nu, 1.0, 0.0],
                             [0.0, 0.0, 0.5 * (1.0 - nu)]])


@dataclass(frozen=True)
class LoadSpec:
    """Nodal load: direction (unit 2-vector) times a scalar magnitude over time."""

    loaded_nodes: np.ndarray
    direction: np.ndarray
    magnitude_fn: Callable[[float], float]

    def __post_init__(self):
        object.__setattr__(self, "loaded_nodes", np.asarray(self.loaded_nodes, dtype=int))
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise FemError(f"load direction {d} is not a unit vector")
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class SystemMatrices:
    """Free-DOF mass/stiffness matrices and the unit load position pattern.

    For several simultaneous loads f_pos is the sum of the individual unit
    patterns (it seeds the Krylov basis and carries no time dependence).
    """

    M: sp.csc_matrix
    K: sp.csc_matrix
    f_pos: np.ndarray
    n: int


def q4_bmatrix(coords: np.ndarray, xi: float, eta: float) -> tuple[np.ndarray, float]:
    """Strain-displacement matrix (3x8) and det J at a local point."""
    dshape = _q4_dshape(xi, eta)          # (4, 2) in local coords
    jac = dshape.T @ coords               # (2, 2)
    det = float(np.linalg.det(jac))
    if det <= 0.0:
        raise FemError(f"non-positive Jacobian {det:g}")
    dxy = dshape @ np.linalg.inv(jac).T   # (4, 2) in physical coords
    b = np.zeros((3, 8))
    b[0, 0::2] = dxy[:, 0]
    b[1, 1::2] = dxy[:, 1]
    b[2, 0::2] = dxy[:, 1]
    b[2, 1::2] = dxy[:, 0]
    return b, det


def t3_bmatrix(coords: np.ndarray) -> tuple[np.ndarray, float]:
    """Constant strain-displacement matrix (3x6) and the element area."""
    x, y = coords[:, 0], coords[:, 1]
    area = 0.5 * ((x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]))
    if area <= 0.0:
        raise FemError(f"non-positive triangle area {area:g}")
    bcoef = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]]) / (2.0 * area)
    ccoef = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]]) / (2.0 * area)
    b = np.zeros((3, 6))
    b[0, 0::2] = bcoef
    b[1, 1::2] = ccoef
    b[2, 0::2] = ccoef
    b[2, 1::2] = bcoef
    return b, float(area)


def element_matrices(coords: np.ndarray, kind: ElementKind,
                     mat: Material) -> tuple[np.ndarray, np.ndarray]:
    """Element stiffness and consistent mass for one Q4 or T3 element."""
    coords = np.asarray(coords, dtype=float)
    d = mat.plane_stress_matrix()
    if kind is ElementKind.T3:
        b, area = t3_bmatrix(coords)
        ke = area * b.T @ d @ b
        me = np.zeros((6, 6))
        block = mat.density * area / 12.0
        for i in range(3):
            for j in range(3):
                v = block * (2.0 if i == j else 1.0)
                me[2 * i, 2 * j] = v
                me[2 * i + 1, 2 * j + 1] = v
        return ke, me
    ke = np.zeros((8, 8))
    me = np.zeros((8, 8))
    for xi, eta, w in _GAUSS_2X2:
        b, det = q4_bmatrix(coords, xi, eta)
        ke += w * det * b.T @ d @ b
        shp = 0.25 * (1.0 + _Q4_CORNERS[:, 0] * xi) * (1.0 + _Q4_CORNERS[:, 1] * eta)
        nmat = np.zeros((2, 8))
        nmat[0, 0::2] = shp
        nmat[1, 1::2] = shp
        me += w * det * mat.density * nmat.T @ nmat
    return ke, me


def _materials_by_body(mesh: Mesh2D, materials) -> dict[int, Material]:
    bodies = set(int(b) for b in np.unique(mesh.body_id))
    if isinstance(materials, Material):
        return {b: materials for b in bodies}
    table = dict(materials)
    missing = bodies - set(table)
    if missing:
        raise FemError(f"no material for body id(s) {sorted(missing)}")
    return table


def assemble(mesh: Mesh2D, materials, loads: Iterable[LoadSpec] = (),
             eliminate_dirichlet: bool = True) -> SystemMatrices:
    """Scatter-add element matrices into sparse global M and K.

    ``materials`` is a single Material or a {body_id: Material} map.  With
    ``eliminate_dirichlet`` the fixed rows/columns are removed, which is the
    production path; the full matrices are available for rigid-body checks.
    """
    table = _materials_by_body(mesh, materials)
    npe = 4 if mesh.element_kind is ElementKind.Q4 else 3
    ndl = 2 * npe
    ne = mesh.n_elements
    rows = np.empty(ne * ndl * ndl, dtype=int)
    cols = np.empty_like(rows)
    kvals = np.empty(ne * ndl * ndl)
    mvals = np.empty_like(kvals)
    for e, conn in enumerate(mesh.elements):
        mat = table[int(mesh.body_id[conn[0]])]
        try:
            ke, me = element_matrices(mesh.node_coords[conn], mesh.element_kind, mat)
        except FemError as exc:
            raise FemError(f"element {e}: {exc}") from exc
        dofs = np.empty(ndl, dtype=int)
        dofs[0::2] = 2 * conn
        dofs[1::2] = 2 * conn + 1
        sl = slice(e * ndl * ndl, (e + 1) * ndl * ndl)
        rows[sl] = np.repeat(dofs, ndl)
        cols[sl] = np.tile(dofs, ndl)
        kvals[sl] = ke.ravel()
        mvals[sl] = me.ravel()
    nfull = mesh.n_dofs
    kfull = sp.coo_matrix((kvals, (rows, cols)), shape=(nfull, nfull)).tocsc()
    mfull = sp.coo_matrix((mvals, (rows, cols)), shape=(nfull, nfull)).tocsc()

    if eliminate_dirichlet:
        fmap, nfree = mesh.free_dof_map()
        free = np.nonzero(fmap >= 0)[0]
        kfull = kfull[free][:, free]
        mfull = mfull[free][:, free]
        n = nfree
    else:
        n = nfull
    fpos = np.zeros(n)
    for spec in loads:
        fpos += load_pattern(spec, mesh, eliminated=eliminate_dirichlet)
    return SystemMatrices(M=mfull, K=kfull, f_pos=fpos, n=n)


def load_pattern(spec: LoadSpec, mesh: Mesh2D, eliminated: bool = True) -> np.ndarray:
    """Unit spatial pattern of one load (nonzero only at the loaded DOFs)."""
    if eliminated:
        fmap, n = mesh.free_dof_map()
    else:
        fmap, n = np.arange(mesh.n_dofs), mesh.n_dofs
    f = np.zeros(n)
    for node in spec.loaded_nodes:
        dx, dy = fmap[2 * node], fmap[2 * node + 1]
        if dx < 0 or dy < 0:
            raise FemError(f"loaded node {node} is Dirichlet-fixed")
        f[dx] += spec.direction[0]
        f[dy] += spec.direction[1]
    return f


def load_vector(specs, t: float, mesh: Mesh2D) -> np.ndarray:
    """f(t) on the free DOFs: sum of magnitude_fn(t) times each unit pattern."""
    if isinstance(specs, LoadSpec):
        specs = [specs]
    _, n = mesh.free_dof_map()
    f = np.zeros(n)
    for spec in specs:
        f += spec.magnitude_fn(t) * load_pattern(spec, mesh)
    return f


def make_force_provider(specs, mesh: Mesh2D,
                        projector: np.ndarray | None = None) -> Callable[[float], np.ndarray]:
    """Time -> load vector closure; with ``projector`` Q the loads are
    premultiplied by Q^T once so the online evaluation stays in reduced size."""
    if isinstance(specs, LoadSpec):
        specs = [specs]
    patterns = [load_pattern(spec, mesh) for spec in specs]
    if projector is not None:
        patterns = [projector.T @ p for p in patterns]
        n = projector.shape[1]
    else:
        n = patterns[0].shape[0] if patterns else mesh.free_dof_map()[1]
    mags = [spec.magnitude_fn for spec in specs]

    def provider(t: float) -> np.ndarray:
        f = np.zeros(n)
        for pat, mag in zip(patterns, mags):
            f += mag(t) * pat
        return f

    return provider
