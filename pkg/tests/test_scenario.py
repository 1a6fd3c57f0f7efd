import numpy as np
import pytest

from contactrom.scenario import (crack_scenario, load_scenario, wheelrail_mesh,
                                 wheelrail_scenario, write_scenario)
from contactrom.sim import run


def test_crack_scenario_reference_dims():
    sc = crack_scenario(nx=40, ny=40)
    _, n_free = sc.mesh.free_dof_map()
    assert n_free == 3386
    from contactrom.mesh import partition_dofs
    part = partition_dofs(sc.mesh, sc.pairing.all_nodes())
    assert part.n_master == 50
    # 25 grid points at the contact zone: 13 endpoints + 12 penetrating
    assert len(sc.pairing.nodes) == 12
    assert len(sc.pairing.segments) == 12


def test_crack_load_matches_oscillation():
    sc = crack_scenario(nx=12, ny=12)
    f = sc.loads[0].magnitude_fn
    assert f(0.0) == pytest.approx(0.0)
    assert f(5.0) == pytest.approx(1.5)      # sin(0.5 pi) = 1


def test_wheelrail_mesh_two_bodies():
    mesh = wheelrail_mesh()
    assert set(np.unique(mesh.body_id)) == {0, 1}
    assert len(mesh.contact_nodes) >= 3
    assert len(mesh.contact_segments) >= 2
    # penetrating nodes start on or above the rail top: all offsets nonnegative
    from contactrom.contact import ContactPairing, assemble_constraints
    from contactrom.mesh import partition_dofs
    pairing = ContactPairing.from_mesh(mesh)
    cs = assemble_constraints(mesh, pairing, partition_dofs(mesh, pairing.all_nodes()))
    assert cs.b.min() >= -1e-12
    assert cs.b.min() == pytest.approx(0.0, abs=1e-9)   # tangent at t0


def test_wheelrail_load_magnitudes():
    sc = wheelrail_scenario()
    const, osc = sc.loads
    n = len(const.loaded_nodes)
    assert const.magnitude_fn(123.0) * n == pytest.approx(50000.0)
    assert osc.magnitude_fn(1.0 / 16.0) * n == pytest.approx(25000.0)  # sin(2pi)
    assert osc.magnitude_fn(0.0) == 0.0


def test_scenario_file_roundtrip(tmp_path):
    sc = crack_scenario(nx=10, ny=10, mode="rom-cb", h=0.5, n_steps=8)
    toml_path = write_scenario(sc, tmp_path)
    back = load_scenario(toml_path)
    assert back.label == sc.label
    assert back.mode == "rom-cb"
    assert back.h == sc.h
    assert back.n_steps == sc.n_steps
    assert back.sensors == sc.sensors
    assert back.contact_sensor == sc.contact_sensor
    np.testing.assert_array_equal(back.pairing.nodes, sc.pairing.nodes)
    for t in np.linspace(0, 20, 9):
        assert back.loads[0].magnitude_fn(t) == pytest.approx(
            sc.loads[0].magnitude_fn(t))
    # a loaded roundtrip scenario actually runs
    traj = run(back)
    assert traj.n_steps == sc.n_steps + 1


def test_scenario_mode_override(tmp_path):
    sc = crack_scenario(nx=10, ny=10, mode="full", h=0.5, n_steps=8)
    toml_path = write_scenario(sc, tmp_path)
    back = load_scenario(toml_path, mode_override="rom-plain")
    assert back.mode == "rom-plain"


def test_scenario_missing_key(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('label = "x"\n[mesh]\nfile = "nope.mesh"\n')
    from contactrom.scenario import ScenarioError
    with pytest.raises((ScenarioError, OSError)):
        load_scenario(bad)
