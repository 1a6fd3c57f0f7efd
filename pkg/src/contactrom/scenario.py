"""Reference scenario builders and the declarative scenario file format.

A scenario file is TOML with sections mesh / material / load / contact /
time / solver / reduction / sensors, referencing a mesh file that carries
the contact sections.  The two built-in generators emit the crack-in-square
self-contact scenario and a simplified wheel-rail two-body scenario
(half-annulus wheel on a block rail).
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                      # Python 3.10
    import tomli as tomllib

from contactrom.contact import ContactPairing
from contactrom.fem import LoadSpec, Material
from contactrom.mesh import CrackSpec, ElementKind, Mesh2D, build_rect_mesh, load_mesh, save_mesh
from contactrom.sim import Scenario


class ScenarioError(ValueError):
    pass


# ----------------------------------------------------------------------
# Crack in a square
# ----------------------------------------------------------------------

CRACK_MATERIAL = Material(young_modulus=1000.0, poisson_ratio=0.3, density=1.0)
CRACK_LOAD_AMPLITUDE = 1.5
CRACK_LOAD_OMEGA = 0.1 * math.pi


def crack_mesh(nx: int = 40, ny: int = 40) -> Mesh2D:
    return build_rect_mesh(nx, ny, crack=CrackSpec.reference_layout(nx, ny))


def crack_scenario(nx: int = 40, ny: int = 40, mode: str = "full", h: float = 0.05,
                   n_steps: int = 400, n_s: int = 3, label: str = "crack",
                   complete_basis: bool = False) -> Scenario:
    """Self-contact square under the oscillating edge load, tear initially closed."""
    mesh = crack_mesh(nx, ny)
    pairing = ContactPairing.from_mesh(mesh)
    width = mesh.node_coords[:, 0].max()
    right = [i for i in range(mesh.n_nodes) if mesh.node_coords[i, 0] == width]
    load = attach_waveform(
        LoadSpec(loaded_nodes=right, direction=(1.0, 0.0),
                 magnitude_fn=lambda t: CRACK_LOAD_AMPLITUDE * math.sin(CRACK_LOAD_OMEGA * t)),
        waveform="sin", amplitude=CRACK_LOAD_AMPLITUDE, omega=CRACK_LOAD_OMEGA)
    # sensor 1 on the loaded edge, sensor 2 a penetrating node mid-zone
    k_mid = len(pairing.nodes) // 2
    height = mesh.node_coords[:, 1].max()
    edge_sensor = min(right, key=lambda i: abs(mesh.node_coords[i, 1] - 0.75 * height))
    contact_sensor_node = int(pairing.nodes[k_mid])
    return Scenario(label=label, mesh=mesh, materials=CRACK_MATERIAL, loads=[load],
                    pairing=pairing, h=h, n_steps=n_steps, mode=mode, n_s=n_s,
                    contact_update=False, sensors=(edge_sensor, contact_sensor_node),
                    contact_sensor=k_mid, complete_basis=complete_basis)


# ----------------------------------------------------------------------
# Wheel on rail (simplified two-body geometry)
# ----------------------------------------------------------------------

WHEEL_MATERIAL = Material(young_modulus=206940.0, poisson_ratio=0.288, density=7.85e-9)
WHEELRAIL_FREQ_HZ = 4.0
WHEELRAIL_FMAG = 25000.0


def wheelrail_mesh(rail_nx: int = 24, rail_ny: int = 4, wheel_nr: int = 4,
                   wheel_na: int = 28, rail_width: float = 120.0,
                   rail_height: float = 16.0, r_inner: float = 12.0,
                   r_outer: float = 36.0) -> Mesh2D:
    """Block rail (body 0, bottom fixed) under a half-annulus wheel (body 1).

    The wheel's outer rim rests tangentially on the rail top at t = 0; the
    lowest rim nodes are the penetrating contact nodes, the rail top edge
    supplies the segment chain.  The hub ring is Dirichlet-fixed (the axle
    holds the wheel: frictionless contact leaves the lateral and rotational
    rigid modes unresisted otherwise), so loads act on the wheel web.
    """
    rail = build_rect_mesh(rail_nx, rail_ny, width=rail_width, height=rail_height)
    coords = [tuple(p) for p in rail.node_coords]
    elements = rail.elements.tolist()
    n_rail = len(coords)

    cx = rail_width / 2.0
    cy = rail_height + r_outer          # tangent contact at t0
    radii = np.linspace(r_inner, r_outer, wheel_nr + 1)
    thetas = np.linspace(math.pi, 2.0 * math.pi, wheel_na + 1)

    def wid(j: int, i: int) -> int:
        return n_rail + j * (wheel_na + 1) + i

    for r in radii:
        for th in thetas:
            coords.append((cx + r * math.cos(th), cy + r * math.sin(th)))
    for j in range(wheel_nr):
        for i in range(wheel_na):
            elements.append([wid(j, i), wid(j + 1, i), wid(j + 1, i + 1), wid(j, i + 1)])

    body = np.array([0] * n_rail + [1] * ((wheel_nr + 1) * (wheel_na + 1)))
    dirichlet = [i for i in range(n_rail) if coords[i][1] == 0.0]
    dirichlet += [wid(0, i) for i in range(wheel_na + 1)]   # hub ring = axle

    # penetrating nodes: outer-rim nodes around the lowest point
    rim = [wid(wheel_nr, i) for i in range(wheel_na + 1)]
    rim_low = sorted(rim, key=lambda nid: coords[nid][1])
    n_pen = max(3, wheel_na // 4)
    pen = sorted(rim_low[:n_pen], key=lambda nid: coords[nid][0])

    # rail-top segment chain spanning the patch with one segment margin
    top = sorted((i for i in range(n_rail) if coords[i][1] == rail_height),
                 key=lambda nid: coords[nid][0])
    dx = rail_width / rail_nx
    lo = min(coords[n][0] for n in pen) - 1.5 * dx
    hi = max(coords[n][0] for n in pen) + 1.5 * dx
    chain = [nid for nid in top if lo <= coords[nid][0] <= hi]
    if len(chain) < 2:
        raise ScenarioError("contact patch does not cover any rail segment")
    segments = np.array(list(zip(chain[:-1], chain[1:])), dtype=int)
    seg_mid = 0.5 * (np.array([coords[a][0] for a, _ in segments])
                     + np.array([coords[b][0] for _, b in segments]))
    selecting = np.array([int(np.argmin(np.abs(seg_mid - coords[nid][0]))) for nid in pen])

    return Mesh2D(node_coords=np.array(coords), elements=np.array(elements),
                  element_kind=ElementKind.Q4, dirichlet_nodes=np.array(dirichlet),
                  body_id=body, contact_nodes=np.array(pen, dtype=int),
                  contact_segments=segments, contact_selecting=selecting)


def wheelrail_scenario(mode: str = "full", h: float = 2.5e-3, n_steps: int = 200,
                       n_s: int = 6, label: str = "wheelrail",
                       **mesh_kw) -> Scenario:
    """Two-body wheel-rail run: constant vertical web load plus the
    oscillating horizontal component at 4 Hz."""
    mesh = wheelrail_mesh(**mesh_kw)
    pairing = ContactPairing.from_mesh(mesh)
    web = _wheel_web_ring(mesh)
    omega = 2.0 * math.pi * WHEELRAIL_FREQ_HZ
    amp_v = 50000.0 / len(web)
    amp_h = WHEELRAIL_FMAG / len(web)
    vertical = attach_waveform(
        LoadSpec(loaded_nodes=web, direction=(0.0, -1.0),
                 magnitude_fn=lambda t, a=amp_v: a),
        waveform="const", amplitude=amp_v)
    lateral = attach_waveform(
        LoadSpec(loaded_nodes=web, direction=(1.0, 0.0),
                 magnitude_fn=lambda t, a=amp_h: a * math.sin(omega * t)),
        waveform="sin", amplitude=amp_h, omega=omega)
    k_mid = len(pairing.nodes) // 2
    sensor_node = int(pairing.nodes[k_mid])
    return Scenario(label=label, mesh=mesh, materials=WHEEL_MATERIAL,
                    loads=[vertical, lateral], pairing=pairing, h=h, n_steps=n_steps,
                    mode=mode, n_s=n_s, contact_update=True, update_tol=0.1,
                    sensors=(sensor_node,), contact_sensor=k_mid)


def _wheel_web_ring(mesh: Mesh2D) -> list[int]:
    """Free wheel nodes on the middle radius ring (where the loads act)."""
    wheel = np.nonzero(mesh.body_id == 1)[0]
    center = _wheel_center(mesh)
    dist = np.hypot(*(mesh.node_coords[wheel] - center).T)
    fixed = set(int(n) for n in mesh.dirichlet_nodes)
    free = [int(n) for n, d in zip(wheel, dist) if int(n) not in fixed]
    dist_free = [d for n, d in zip(wheel, dist) if int(n) not in fixed]
    target = 0.5 * (min(dist_free) + max(dist_free))
    ring_r = min(set(np.round(dist_free, 9)), key=lambda r: abs(r - target))
    return [n for n, d in zip(free, dist_free) if abs(d - ring_r) < 1e-6]


def _wheel_center(mesh: Mesh2D) -> np.ndarray:
    wheel_nodes = mesh.node_coords[mesh.body_id == 1]
    cx = 0.5 * (wheel_nodes[:, 0].min() + wheel_nodes[:, 0].max())
    return np.array([cx, wheel_nodes[:, 1].max()])


# ----------------------------------------------------------------------
# Scenario files
# ----------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(int(v))


def write_scenario(sc: Scenario, directory, mesh_filename: str | None = None) -> Path:
    """Emit <label>.toml plus the referenced mesh file; returns the TOML path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mesh_filename = mesh_filename or f"{sc.label}.mesh"
    save_mesh(sc.mesh, directory / mesh_filename)

    mats = sc.materials if isinstance(sc.materials, dict) else {
        int(b): sc.materials for b in np.unique(sc.mesh.body_id)}
    lines = [f"label = {_fmt(sc.label)}", "", "[mesh]", f"file = {_fmt(mesh_filename)}"]
    for body, mat in sorted(mats.items()):
        lines += ["", "[[material]]", f"body = {body}",
                  f"young_modulus = {_fmt(mat.young_modulus)}",
                  f"poisson_ratio = {_fmt(mat.poisson_ratio)}",
                  f"density = {_fmt(mat.density)}"]
    for spec in sc.loads:
        wf = getattr(spec, "_toml", None) or _infer_waveform(spec)
        lines += ["", "[[load]]", f"nodes = {_fmt(list(map(int, spec.loaded_nodes)))}",
                  f"direction = {_fmt(list(spec.direction))}"]
        lines += [f"{k} = {_fmt(v)}" for k, v in wf.items()]
    lines += ["", "[contact]", f"update = {_fmt(sc.contact_update)}",
              f"update_tol = {_fmt(sc.update_tol)}",
              "", "[time]", f"t0 = {_fmt(float(sc.t0))}", f"h = {_fmt(float(sc.h))}",
              f"steps = {sc.n_steps}",
              "", "[solver]", f"max_iter = {sc.max_iter}",
              f"s_eval = {_fmt(sc.s_eval)}"]
    if sc.solver_tol is not None:
        lines.append(f"tol = {_fmt(float(sc.solver_tol))}")
    lines += ["", "[reduction]", f"mode = {_fmt(sc.mode)}", f"n_s = {sc.n_s}",
              f"complete_basis = {_fmt(sc.complete_basis)}",
              "", "[sensors]", f"nodes = {_fmt(list(map(int, sc.sensors)))}",
              f"contact_constraint = {sc.contact_sensor}"]
    if sc.extra_master_nodes:
        lines.append(f"extra_master_nodes = {_fmt(list(map(int, sc.extra_master_nodes)))}")
    path = directory / f"{sc.label}.toml"
    path.write_text("\n".join(lines) + "\n")
    return path


def _infer_waveform(spec: LoadSpec) -> dict:
    """Best-effort serialization of a magnitude function by sampling.

    Generator-produced scenarios attach the exact parameters; this fallback
    fits amplitude * sin(omega t) or a constant on a coarse sample.
    """
    ts = np.linspace(0.0, 10.0, 41)
    vals = np.array([spec.magnitude_fn(t) for t in ts])
    if np.allclose(vals, vals[0]):
        return {"waveform": "const", "amplitude": float(vals[0])}
    raise ScenarioError("cannot serialize a non-constant load without waveform metadata; "
                        "attach spec._toml")


def _load_from_table(tbl: dict) -> LoadSpec:
    nodes = tbl["nodes"]
    direction = tbl["direction"]
    amp = float(tbl.get("amplitude", 0.0))
    waveform = tbl.get("waveform", "const")
    if "frequency_hz" in tbl:
        omega = 2.0 * math.pi * float(tbl["frequency_hz"])
    else:
        omega = float(tbl.get("omega", 0.0))
    if waveform == "const":
        fn = lambda t, a=amp: a
    elif waveform == "sin":
        fn = lambda t, a=amp, w=omega: a * math.sin(w * t)
    elif waveform == "cos":
        fn = lambda t, a=amp, w=omega: a * math.cos(w * t)
    else:
        raise ScenarioError(f"unknown waveform {waveform!r}")
    spec = LoadSpec(loaded_nodes=nodes, direction=direction, magnitude_fn=fn)
    meta = {"waveform": waveform, "amplitude": amp}
    if waveform != "const":
        meta["omega"] = omega
    object.__setattr__(spec, "_toml", meta)
    return spec


def attach_waveform(spec: LoadSpec, **meta) -> LoadSpec:
    object.__setattr__(spec, "_toml", meta)
    return spec


def load_scenario(path, mode_override: str | None = None) -> Scenario:
    """Parse a scenario file; the mesh path resolves relative to the TOML."""
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    try:
        mesh = load_mesh(path.parent / doc["mesh"]["file"])
        mats = {int(t.get("body", 0)): Material(float(t["young_modulus"]),
                                                float(t["poisson_ratio"]),
                                                float(t["density"]))
                for t in doc["material"]}
        loads = [_load_from_table(t) for t in doc.get("load", [])]
        contact = doc.get("contact", {})
        tm = doc["time"]
        solver = doc.get("solver", {})
        red = doc.get("reduction", {})
        sensors = doc.get("sensors", {})
    except KeyError as exc:
        raise ScenarioError(f"{path}: missing required key {exc}") from exc
    pairing = ContactPairing.from_mesh(mesh)
    mode = mode_override or red.get("mode", "full")
    return Scenario(label=doc.get("label", path.stem), mesh=mesh, materials=mats,
                    loads=loads, pairing=pairing, h=float(tm["h"]),
                    n_steps=int(tm["steps"]), t0=float(tm.get("t0", 0.0)),
                    mode=mode, n_s=int(red.get("n_s", 3)),
                    solver_tol=(float(solver["tol"]) if "tol" in solver else None),
                    max_iter=int(solver.get("max_iter", 25)),
                    s_eval=solver.get("s_eval", "current"),
                    contact_update=bool(contact.get("update", False)),
                    update_tol=float(contact.get("update_tol", 0.1)),
                    sensors=tuple(int(n) for n in sensors.get("nodes", [])),
                    contact_sensor=int(sensors.get("contact_constraint", 0)),
                    extra_master_nodes=tuple(int(n) for n in
                                             sensors.get("extra_master_nodes", [])),
                    complete_basis=bool(red.get("complete_basis", False)))
