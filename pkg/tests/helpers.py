"""Small randomised solver states shared by the unit and property tests."""
import numpy as np

from porompm.grid import StructuredGrid, corrected_basis
from porompm.mixed import NewmarkParams, StabilizationParams, build_context
from porompm.particles import init_particles
from porompm.porous import PorousBlock, build_fields, sample_field, tessellate
from porompm.transfer import apply_boundary_conditions, p2g


def random_context(seed=0, porous=True, stab=True, h=0.02, free_fluid=False):
    """A 2D state of about a dozen active nodes with random kinematics."""
    rng = np.random.default_rng(seed)
    grid = StructuredGrid.from_extents([0.0, 0.0], [3 * h, 3 * h], h)
    blocks = [PorousBlock([0, 0], [3 * h, 1.5 * h], theta=0.5, A=150, B=1.75, K=0.1)] if porous else []
    field = build_fields(tessellate(grid, blocks, 2), grid)
    P = init_particles([([0.5 * h, 0.5 * h], [2.5 * h, 2.5 * h])], 2, grid, field, 1000.0)
    P.x = P.x + rng.uniform(-0.1, 0.1, P.x.shape) * h
    P.v = rng.normal(size=P.v.shape) * 0.1
    P.a = rng.normal(size=P.a.shape)
    b = corrected_basis(P.x, grid, 1)
    fs = sample_field(b, field)
    st = p2g(P, b, grid)
    cons = apply_boundary_conditions(st, [], grid, 1e-3)
    ctx = build_context(grid, b, P, fs, st, cons, NewmarkParams(1e-3), StabilizationParams(enabled=stab), 1000.0,
                        1e-3, [0.0, -9.81], free_fluid=free_fluid)
    U = rng.normal(size=(ctx.na, 2)) * 1e-4
    Pn = rng.normal(size=ctx.na) * 10.0
    return ctx, U, Pn
