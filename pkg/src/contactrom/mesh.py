"""Mesh construction, file I/O, Dirichlet handling and master/slave DOF partitioning.

Meshes are plain 2D node/element containers (Q4 or T3, one kind per mesh)
with a per-node body label for multi-body problems.  The rectangular
generator can cut an interior tear along mesh lines by duplicating nodes,
which is how the self-contact crack scenario is built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ElementKind(str, Enum):
    Q4 = "Q4"
    T3 = "T3"


class MeshError(ValueError):
    """Raised for malformed mesh files or invalid mesh data."""


# Gauss points for validating Q4 Jacobians (same rule as the assembly).
_G = 1.0 / np.sqrt(3.0)
_Q4_GAUSS = [(-_G, -_G), (_G, -_G), (_G, _G), (-_G, _G)]
_Q4_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def _q4_dshape(xi: float, eta: float) -> np.ndarray:
    """Derivatives of the bilinear shape functions, shape (4, 2)."""
    d = np.empty((4, 2))
    for a, (xa, ya) in enumerate(_Q4_CORNERS):
        d[a, 0] = 0.25 * xa * (1.0 + ya * eta)
        d[a, 1] = 0.25 * ya * (1.0 + xa * xi)
    return d


@dataclass(frozen=True)
class Mesh2D:
    """Immutable 2D mesh: node coordinates, element connectivity, boundary data.

    Contact metadata (penetrating nodes, segment endpoint pairs and the
    initial node-to-segment assignment) travels with the mesh because the
    mesh file format carries it; it is empty for plain meshes.
    """

    node_coords: np.ndarray            # (n_nodes, 2)
    elements: np.ndarray               # (n_elems, 4) for Q4, (n_elems, 3) for T3
    element_kind: ElementKind
    dirichlet_nodes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    body_id: np.ndarray | None = None  # (n_nodes,), defaults to a single body
    contact_nodes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    contact_segments: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=int))
    contact_selecting: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    crack_pairs: np.ndarray | None = None  # (k, 2) original/duplicate face-pairing table

    def __post_init__(self):
        coords = np.ascontiguousarray(np.asarray(self.node_coords, dtype=float))
        elems = np.ascontiguousarray(np.asarray(self.elements, dtype=int))
        object.__setattr__(self, "node_coords", coords)
        object.__setattr__(self, "elements", elems)
        object.__setattr__(self, "dirichlet_nodes",
                           np.unique(np.asarray(self.dirichlet_nodes, dtype=int)))
        if self.body_id is None:
            object.__setattr__(self, "body_id", np.zeros(len(coords), dtype=int))
        else:
            object.__setattr__(self, "body_id", np.asarray(self.body_id, dtype=int))
        object.__setattr__(self, "contact_nodes", np.asarray(self.contact_nodes, dtype=int))
        object.__setattr__(self, "contact_segments",
                           np.asarray(self.contact_segments, dtype=int).reshape(-1, 2))
        sel = np.asarray(self.contact_selecting, dtype=int)
        if sel.size == 0 and len(self.contact_nodes) > 0:
            nseg = len(self.contact_segments)
            sel = np.minimum(np.arange(len(self.contact_nodes)), max(nseg - 1, 0))
        object.__setattr__(self, "contact_selecting", sel)
        self._validate()

    # -- basic sizes ---------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_dofs(self) -> int:
        """Total displacement DOFs before Dirichlet elimination."""
        return 2 * self.n_nodes

    def diameter(self) -> float:
        lo = self.node_coords.min(axis=0)
        hi = self.node_coords.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    # -- validation ----------------------------------------------------

    def _validate(self) -> None:
        n = self.n_nodes
        npe = 4 if self.element_kind is ElementKind.Q4 else 3
        if self.elements.ndim != 2 or self.elements.shape[1] != npe:
            raise MeshError(f"expected {npe}-node connectivity for {self.element_kind.value}, "
                            f"got shape {self.elements.shape}")
        if self.n_elements and (self.elements.min() < 0 or self.elements.max() >= n):
            bad = int(np.argmax((self.elements < 0) | (self.elements >= n)).item() // npe)
            raise MeshError(f"element {bad} references a node outside 0..{n - 1}")
        if len(self.dirichlet_nodes) and (self.dirichlet_nodes.min() < 0
                                          or self.dirichlet_nodes.max() >= n):
            raise MeshError("Dirichlet node index out of range")
        if len(self.body_id) != n:
            raise MeshError("body_id length does not match node count")
        for e, conn in enumerate(self.elements):
            xy = self.node_coords[conn]
            if self.element_kind is ElementKind.T3:
                d1, d2 = xy[1] - xy[0], xy[2] - xy[0]
                area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
                if area <= 0.0:
                    raise MeshError(f"element {e}: non-positive signed area {area:g}")
            else:
                for xi, eta in _Q4_GAUSS:
                    jac = _q4_dshape(xi, eta).T @ xy
                    if np.linalg.det(jac) <= 0.0:
                        raise MeshError(f"element {e}: non-positive Jacobian")
            bodies = self.body_id[conn]
            if bodies.min() != bodies.max():
                raise MeshError(f"element {e} spans bodies {sorted(set(bodies))}")
        seg = self.contact_segments
        if len(seg) and np.any(seg[:, 0] == seg[:, 1]):
            raise MeshError("contact segment with coincident endpoints")
        for arr in (self.contact_nodes, seg.ravel()):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise MeshError("contact section references node out of range")
        if len(self.contact_selecting) != len(self.contact_nodes):
            raise MeshError("selecting function length does not match contact nodes")
        if self.contact_selecting.size and len(seg) and (
                self.contact_selecting.min() < 0 or self.contact_selecting.max() >= len(seg)):
            raise MeshError("selecting function references segment out of range")

    # -- DOF bookkeeping -------------------------------------------------

    def free_dof_map(self) -> tuple[np.ndarray, int]:
        """Map full DOF index (2*node + comp) -> free index, -1 where fixed.

        Free DOFs keep their relative full-index order, so the numbering is
        deterministic for a given mesh.
        """
        fixed = np.zeros(self.n_dofs, dtype=bool)
        fixed[2 * self.dirichlet_nodes] = True
        fixed[2 * self.dirichlet_nodes + 1] = True
        fmap = -np.ones(self.n_dofs, dtype=int)
        free = ~fixed
        fmap[free] = np.arange(int(free.sum()))
        return fmap, int(free.sum())

    def node_dofs(self, node: int) -> tuple[int, int]:
        return 2 * node, 2 * node + 1


@dataclass(frozen=True)
class DofPartition:
    """Master/slave split of the free DOFs (post Dirichlet elimination).

    master_dofs come first in the reordered system.  full_to_reordered maps
    a free-DOF index to its position in the reordered (master-block-first)
    numbering; the inverse permutation is derived on demand.
    """

    master_dofs: np.ndarray
    slave_dofs: np.ndarray
    full_to_reordered: np.ndarray

    @property
    def n_master(self) -> int:
        return len(self.master_dofs)

    @property
    def n_slave(self) -> int:
        return len(self.slave_dofs)

    @property
    def n_free(self) -> int:
        return self.n_master + self.n_slave

    def reordered_to_full(self) -> np.ndarray:
        inv = np.empty_like(self.full_to_reordered)
        inv[self.full_to_reordered] = np.arange(len(self.full_to_reordered))
        return inv


def partition_dofs(mesh: Mesh2D, contact_nodes) -> DofPartition:
    """Partition free DOFs into contact (master) and interior (slave) DOFs.

    ``contact_nodes`` must contain every node that appears in a contact
    constraint, i.e. the penetrating nodes and all segment endpoints.  The
    Dirichlet DOFs are eliminated a priori and appear in neither set.
    """
    contact = np.unique(np.asarray(list(contact_nodes), dtype=int))
    if contact.size and (contact.min() < 0 or contact.max() >= mesh.n_nodes):
        raise MeshError("contact node index out of range")
    clash = np.intersect1d(contact, mesh.dirichlet_nodes)
    if clash.size:
        raise MeshError(f"contact nodes {clash.tolist()} are Dirichlet-fixed")
    fmap, n_free = mesh.free_dof_map()
    master = np.empty(2 * len(contact), dtype=int)
    master[0::2] = fmap[2 * contact]
    master[1::2] = fmap[2 * contact + 1]
    is_master = np.zeros(n_free, dtype=bool)
    is_master[master] = True
    slave = np.nonzero(~is_master)[0]
    perm = np.empty(n_free, dtype=int)
    perm[master] = np.arange(len(master))
    perm[slave] = len(master) + np.arange(len(slave))
    return DofPartition(master_dofs=master, slave_dofs=slave, full_to_reordered=perm)


# ----------------------------------------------------------------------
# Rectangular generator with an optional interior tear
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CrackSpec:
    """Interior tear along mesh lines, described by a lattice polyline.

    ``path`` is a sequence of (ix, iy) lattice points; consecutive points
    must differ by exactly one grid step in x or y.  Every path node except
    an interior tip is duplicated, so the two tear faces are topologically
    disconnected while coinciding geometrically (the tear starts closed).
    The contact zone picks ``zone_nseg`` consecutive path edges starting at
    path index ``zone_start``: the original-face nodes there become the
    segment chain and the duplicate-face nodes the penetrating nodes.
    """

    path: tuple[tuple[int, int], ...]
    zone_start: int
    zone_nseg: int

    @classmethod
    def reference_layout(cls, nx: int, ny: int) -> "CrackSpec":
        """L-shaped tear of the crack-in-square scenario, scaled to (nx, ny).

        Mouth at the right boundary mid-height, horizontal run to
        x = 0.15, then a vertical run up to y = 0.975.  The contact zone
        sits on the vertical leg between y = 0.575 and y = 0.875.  At
        nx = ny = 40 this duplicates 53 nodes and exposes a 25-grid-point
        contact zone (13 segment endpoints + 12 penetrating nodes).
        """
        if nx < 8 or ny < 8:
            raise MeshError("reference crack layout needs at least an 8x8 grid")
        bend_ix = round(0.15 * nx)
        mid_iy = ny // 2
        tip_iy = min(round(0.975 * ny), ny - 1)
        path = [(ix, mid_iy) for ix in range(nx, bend_ix - 1, -1)]
        path += [(bend_ix, iy) for iy in range(mid_iy + 1, tip_iy + 1)]
        zone_lo = round(0.575 * ny)
        # the zone's topmost point must stay below the (shared) tip
        zone_nseg = min(max(1, round(0.3 * ny)), tip_iy - zone_lo - 1)
        if zone_nseg < 1 or zone_lo <= mid_iy:
            raise MeshError("contact zone does not fit on the vertical tear leg")
        zone_start = (nx - bend_ix) + (zone_lo - mid_iy)
        return cls(path=tuple(path), zone_start=zone_start, zone_nseg=zone_nseg)


_QUADRANT_ANGLE = {(0, 0): 45.0, (-1, 0): 135.0, (-1, -1): 225.0, (0, -1): 315.0}
_DIR_ANGLE = {(1, 0): 0.0, (0, 1): 90.0, (-1, 0): 180.0, (0, -1): 270.0}


def _ccw_between(theta: float, a: float, b: float) -> bool:
    return (theta - a) % 360.0 < (b - a) % 360.0


def build_rect_mesh(nx: int, ny: int, width: float = 1.0, height: float = 1.0,
                    crack: CrackSpec | None = None) -> Mesh2D:
    """Conforming Q4 grid on [0, width] x [0, height], optionally torn.

    Nodes are numbered lexicographically by (y, x); tear duplicates are
    appended in path order.  The left edge is returned as the Dirichlet set
    (the crack must not touch it).  With a crack, the contact zone sections
    (penetrating nodes, segments, initial assignment) are filled in.
    """
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be >= 1")
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    coords = [(x, y) for y in ys for x in xs]

    def nid(ix: int, iy: int) -> int:
        return iy * (nx + 1) + ix

    elems = np.empty((nx * ny, 4), dtype=int)
    for ey in range(ny):
        for ex in range(nx):
            elems[ey * nx + ex] = (nid(ex, ey), nid(ex + 1, ey),
                                   nid(ex + 1, ey + 1), nid(ex, ey + 1))

    dirichlet = np.array([nid(0, iy) for iy in range(ny + 1)], dtype=int)

    if crack is None:
        return Mesh2D(node_coords=np.array(coords), elements=elems,
                      element_kind=ElementKind.Q4, dirichlet_nodes=dirichlet)

    path = list(crack.path)
    if len(path) < 2:
        raise MeshError("crack path needs at least two points")
    for (ax, ay), (bx, by) in zip(path, path[1:]):
        if abs(ax - bx) + abs(ay - by) != 1:
            raise MeshError(f"crack path not mesh-aligned between ({ax},{ay}) and ({bx},{by})")
    for ix, iy in path:
        if not (0 <= ix <= nx and 0 <= iy <= ny):
            raise MeshError(f"crack point ({ix},{iy}) outside the grid")
        if ix == 0:
            raise MeshError("crack touches the Dirichlet (left) edge")

    def on_boundary(ix: int, iy: int) -> bool:
        return ix in (0, nx) or iy in (0, ny)

    if on_boundary(*path[-1]) and on_boundary(*path[0]):
        raise MeshError("tear connects two boundary points and would split the domain")
    if not on_boundary(*path[0]):
        # both ends interior tips: duplicate interiors only
        dup_points = path[1:-1]
    else:
        dup_points = path[:-1]  # mouth duplicated, interior tip shared
    if on_boundary(*path[-1]):
        raise MeshError("crack tip must be interior")

    point_index = {p: k for k, p in enumerate(path)}
    elem_of = {}
    for ey in range(ny):
        for ex in range(nx):
            elem_of[(ex, ey)] = ey * nx + ex

    # virtual continuation direction for a boundary mouth: outward normal
    def mouth_dir(ix: int, iy: int) -> tuple[int, int]:
        if ix == nx:
            return (1, 0)
        if iy == 0:
            return (0, -1)
        if iy == ny:
            return (0, 1)
        raise MeshError("unsupported mouth position")

    coords = list(coords)
    body = None  # single body with a tear
    dup_of = {}
    elems = elems.copy()
    for p in dup_points:
        k = point_index[p]
        prev_dir = (mouth_dir(*p) if k == 0 else
                    (path[k - 1][0] - p[0], path[k - 1][1] - p[1]))
        next_dir = (path[k + 1][0] - p[0], path[k + 1][1] - p[1])
        a, b = _DIR_ANGLE[prev_dir], _DIR_ANGLE[next_dir]
        new_id = len(coords)
        coords.append(coords[nid(*p)])
        dup_of[p] = new_id
        # duplicates take the clockwise side of the directed path; the
        # originals keep the counterclockwise side, whose segment chain
        # (in path order) then has its angular normal facing the duplicates
        for (dx, dy), theta in _QUADRANT_ANGLE.items():
            ex, ey = p[0] + dx, p[1] + dy
            if not (0 <= ex < nx and 0 <= ey < ny):
                continue
            if _ccw_between(theta, b, a):
                conn = elems[elem_of[(ex, ey)]]
                conn[conn == nid(*p)] = new_id

    zone = range(crack.zone_start, crack.zone_start + crack.zone_nseg + 1)
    if crack.zone_start < 0 or zone[-1] >= len(path):
        raise MeshError("contact zone outside the crack path")
    zone_points = [path[k] for k in zone]
    for p in zone_points:
        if p not in dup_of:
            raise MeshError(f"contact zone point {p} is not duplicated")
    seg_nodes = [nid(*p) for p in zone_points]                 # original face
    pen_nodes = [dup_of[p] for p in zone_points[:-1]]          # duplicate face
    segments = np.array(list(zip(seg_nodes[:-1], seg_nodes[1:])), dtype=int)
    selecting = np.arange(len(pen_nodes), dtype=int)
    pairs = np.array([[nid(*p), dup_of[p]] for p in dup_points], dtype=int)

    return Mesh2D(node_coords=np.array(coords), elements=elems,
                  element_kind=ElementKind.Q4, dirichlet_nodes=dirichlet,
                  body_id=body, contact_nodes=np.array(pen_nodes, dtype=int),
                  contact_segments=segments, contact_selecting=selecting,
                  crack_pairs=pairs)


# ----------------------------------------------------------------------
# File I/O (line-oriented text format)
# ----------------------------------------------------------------------

def save_mesh(mesh: Mesh2D, path) -> None:
    """Write the canonical text form (floats as shortest round-trip decimals)."""
    lines = [f"NODES {mesh.n_nodes}"]
    for (x, y), b in zip(mesh.node_coords, mesh.body_id):
        lines.append(f"{float(x)!r} {float(y)!r} {int(b)}")
    lines.append(f"ELEMENTS {mesh.n_elements} {mesh.element_kind.value}")
    for conn in mesh.elements:
        lines.append(" ".join(str(i) for i in conn))
    lines.append("DIRICHLET")
    lines.append(" ".join(str(i) for i in mesh.dirichlet_nodes))
    lines.append("CONTACT_NODES")
    for nd, sg in zip(mesh.contact_nodes, mesh.contact_selecting):
        lines.append(f"{nd} {sg}")
    lines.append("CONTACT_SEGMENTS")
    for p, q in mesh.contact_segments:
        lines.append(f"{p} {q}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh2D:
    """Parse the mesh format; raises MeshError naming the offending line."""
    with open(path) as fh:
        raw = fh.read().splitlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw)
             if ln.strip() and not ln.strip().startswith("#")]
    pos = 0

    def fail(lineno, msg):
        raise MeshError(f"{path}:{lineno}: {msg}")

    if pos >= len(lines) or not lines[pos][1].startswith("NODES"):
        fail(1, "expected NODES header")
    lineno, header = lines[pos]
    try:
        n_nodes = int(header.split()[1])
    except (IndexError, ValueError):
        fail(lineno, "malformed NODES header")
    pos += 1
    coords = np.empty((n_nodes, 2))
    body = np.zeros(n_nodes, dtype=int)
    for i in range(n_nodes):
        if pos >= len(lines):
            fail(lineno, "unexpected end of file in NODES")
        ln_no, ln = lines[pos]
        parts = ln.split()
        if len(parts) not in (2, 3):
            fail(ln_no, f"expected 'x y [body_id]', got {ln!r}")
        try:
            coords[i] = (float(parts[0]), float(parts[1]))
            if len(parts) == 3:
                body[i] = int(parts[2])
        except ValueError:
            fail(ln_no, f"cannot parse node line {ln!r}")
        pos += 1

    if pos >= len(lines) or not lines[pos][1].startswith("ELEMENTS"):
        fail(lines[pos - 1][0], "expected ELEMENTS header")
    ln_no, header = lines[pos]
    parts = header.split()
    try:
        n_elems = int(parts[1])
        kind = ElementKind(parts[2])
    except (IndexError, ValueError):
        fail(ln_no, "malformed ELEMENTS header")
    pos += 1
    npe = 4 if kind is ElementKind.Q4 else 3
    elems = np.empty((n_elems, npe), dtype=int)
    for e in range(n_elems):
        if pos >= len(lines):
            fail(ln_no, "unexpected end of file in ELEMENTS")
        ln_no2, ln = lines[pos]
        parts = ln.split()
        if len(parts) != npe:
            fail(ln_no2, f"expected {npe} node indices, got {ln!r}")
        try:
            elems[e] = [int(p) for p in parts]
        except ValueError:
            fail(ln_no2, f"cannot parse element line {ln!r}")
        pos += 1

    dirichlet: list[int] = []
    contact_nodes: list[int] = []
    selecting: list[int] = []
    segments: list[tuple[int, int]] = []
    section = None
    keywords = {"DIRICHLET", "CONTACT_NODES", "CONTACT_SEGMENTS"}
    while pos < len(lines):
        ln_no, ln = lines[pos]
        word = ln.split()[0]
        if word in keywords:
            section = word
            pos += 1
            continue
        parts = ln.split()
        try:
            if section == "DIRICHLET":
                dirichlet.extend(int(p) for p in parts)
            elif section == "CONTACT_NODES":
                contact_nodes.append(int(parts[0]))
                selecting.append(int(parts[1]) if len(parts) > 1 else -1)
            elif section == "CONTACT_SEGMENTS":
                if len(parts) != 2:
                    fail(ln_no, f"expected 'p ptilde', got {ln!r}")
                segments.append((int(parts[0]), int(parts[1])))
            else:
                fail(ln_no, f"unexpected content outside a section: {ln!r}")
        except ValueError:
            fail(ln_no, f"cannot parse line {ln!r}")
        pos += 1

    sel = np.array(selecting, dtype=int)
    if sel.size and (sel < 0).any():
        default = np.minimum(np.arange(len(sel)), max(len(segments) - 1, 0))
        sel = np.where(sel < 0, default, sel)
    try:
        return Mesh2D(node_coords=coords, elements=elems, element_kind=kind,
                      dirichlet_nodes=np.array(dirichlet, dtype=int), body_id=body,
                      contact_nodes=np.array(contact_nodes, dtype=int),
                      contact_segments=np.array(segments, dtype=int).reshape(-1, 2),
                      contact_selecting=sel)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from exc
