import numpy as np
import pytest

from porompm.errors import EmptyDomainError, InvalidPorosityError
from porompm.grid import StructuredGrid
from porompm.particles import (MaterialPoints, center_of_mass, delta_correction, dump_csv, init_particles,
                               measure_heights, read_csv, update_particle_porosity_volume, volume_for_porosity)
from porompm.porous import build_fields, tessellate
from porompm.scenarios import Simulation, case1


def _free_field(grid):
    return build_fields(tessellate(grid, [], 2), grid)


def _points(x, mass=None, volume=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = len(x)
    mass = np.ones(n) if mass is None else np.asarray(mass, dtype=float)
    volume = np.ones(n) if volume is None else np.asarray(volume, dtype=float)
    z = np.zeros_like(x)
    return MaterialPoints(x=x, v=z.copy(), a=z.copy(), mass=mass, volume0=volume, theta0=np.ones(n))


def test_case1_particle_count():
    sim = Simulation(case1(n=10))
    assert len(sim.particles) == 1600


def test_single_cell_single_particle():
    g = StructuredGrid.from_extents([0.0], [0.1], 0.1)
    P = init_particles([([0.0], [0.1])], 1, g, _free_field(g), 1000.0)
    assert len(P) == 1
    assert P.mass[0] == pytest.approx(1000.0 * 0.1)


def test_quarter_points_tessellate_cell():
    g = StructuredGrid.from_extents([0.0, 0.0], [0.2, 0.2], 0.1)
    P = init_particles([([0.0, 0.0], [0.1, 0.1])], 2, g, _free_field(g), 1000.0)
    assert len(P) == 4
    np.testing.assert_allclose(np.sort(P.x[:, 0]), [0.025, 0.025, 0.075, 0.075])
    assert P.volume0.sum() == pytest.approx(0.01)


def test_volume_update_keeps_mass():
    P = _points([[0.0]], volume=[1e-4])
    update_particle_porosity_volume(P, 0.5)
    assert P.volume[0] == pytest.approx(2e-4)
    update_particle_porosity_volume(P, 1.0)
    assert P.volume[0] == pytest.approx(1e-4)
    assert volume_for_porosity(0.5, 1e-4, 0.39) == pytest.approx(1.2821e-4, rel=1e-4)
    with pytest.raises(InvalidPorosityError):
        update_particle_porosity_volume(P, 0.0)


def test_center_of_mass():
    c, m = center_of_mass(_points([[0.0], [1.0]]))
    assert c[0] == pytest.approx(0.5) and m == 2.0
    c, _ = center_of_mass(_points([[0.0], [1.0]], mass=[1.0, 3.0]))
    assert c[0] == pytest.approx(0.75)
    with pytest.raises(EmptyDomainError):
        center_of_mass(_points(np.zeros((0, 1))))


def test_heights_of_uniform_column():
    s = 0.01
    P = _points((np.arange(10) + 0.5)[:, None] * s + 1.0, volume=np.full(10, s))
    above, below = measure_heights(P, 0, 1.0)
    assert above == pytest.approx(10 * s)
    assert below == 0.0


def test_detached_slug_reports_own_length():
    s = 0.01
    y = np.concatenate([(np.arange(5) + 0.5) * s + 0.2, -(np.arange(3) + 0.5) * s])
    P = _points(y[:, None], volume=np.full(len(y), s))
    above, below = measure_heights(P, 0, 0.0)
    assert above == pytest.approx(5 * s)
    assert below == pytest.approx(3 * s)


def test_delta_correction_leaves_lattice_alone():
    g = StructuredGrid.from_extents([0.0, 0.0], [1.0, 1.0], 0.1)
    P = init_particles([([0.2, 0.2], [0.8, 0.8])], 2, g, _free_field(g), 1000.0)
    m = P.mass.copy()
    shift = delta_correction(P, g, 2)
    np.testing.assert_allclose(shift, 0.0, atol=1e-15)
    np.testing.assert_array_equal(P.mass, m)


def test_delta_correction_separates_clump():
    g = StructuredGrid.from_extents([0.0, 0.0], [1.0, 1.0], 0.1)
    P = init_particles([([0.2, 0.2], [0.8, 0.8])], 2, g, _free_field(g), 1000.0)
    extra = _points([[0.5, 0.51], [0.5, 0.51]])
    x = np.vstack([P.x, extra.x])
    Q = _points(x, mass=np.concatenate([P.mass, [1.0, 1.0]]))
    before = Q.x.copy()
    shift = delta_correction(Q, g, 2)
    near = np.linalg.norm(before - [0.5, 0.51], axis=1) < 0.15
    away = (before[near] - [0.5, 0.51])
    moved = np.einsum("pd,pd->p", shift[near], away)
    assert np.all(moved >= -1e-18) and np.any(moved > 0)


def test_csv_round_trip(tmp_path):
    P = _points([[0.1, 0.2], [0.3, 0.4]])
    P.v[:] = [[1.0, -1.0], [0.5, 0.25]]
    dump_csv(P, tmp_path / "p.csv")
    d = read_csv(tmp_path / "p.csv")
    np.testing.assert_allclose(d["x"], [0.1, 0.3])
    np.testing.assert_allclose(d["vy"], [-1.0, 0.25])
