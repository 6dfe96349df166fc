"""Particle-grid transfers (FLIP, APIC, TPIC) and nodal boundary conditions.

Periodic axes need no special treatment here: the basis already maps
wrapped nodes onto shared ids, so paired nodes accumulate into, and read
from, the same storage.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .grid import BasisSample, StructuredGrid
from .particles import MaterialPoints

SCHEMES = ("flip", "apic", "tpic")
MASS_EPSILON = 1e-14


@dataclass
class NodalState:
    """Grid quantities for one step (full-grid arrays, inactive rows zero)."""

    mass: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    pressure: np.ndarray
    active: np.ndarray
    velocity_raw: np.ndarray = None  # P2G velocity before constraints (for FLIP increments)
    displacement: np.ndarray = None

    def __post_init__(self):
        if self.velocity_raw is None:
            self.velocity_raw = self.velocity.copy()
        if self.displacement is None:
            self.displacement = np.zeros_like(self.velocity)

    @property
    def n_nodes(self):
        return len(self.mass)

    @property
    def active_ids(self):
        return np.flatnonzero(self.active)


def _check_scheme(scheme):
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown transfer scheme {scheme!r}; expected one of {SCHEMES}")


def apic_inertia(h):
    """Inertia factor of the quadratic B-spline, D_p = h^2/4 I."""
    return 0.25 * h * h


def p2g(particles: MaterialPoints, basis: BasisSample, grid: StructuredGrid, scheme="flip",
        mass_epsilon=MASS_EPSILON) -> NodalState:
    """Scatter mass, momentum, mass-weighted acceleration and pressure.

    APIC and TPIC add the affine term C_p (x_I - x_p) to the particle velocity
    seen by each node.  For APIC the stored matrix is B_p and C_p = B_p / D_p;
    for TPIC the stored matrix is the velocity gradient itself.
    """
    _check_scheme(scheme)
    n = grid.n_nodes
    dim = grid.dim
    ids = basis.node_ids.ravel()
    mw = basis.weights * particles.mass[:, None]  # (np, nn)
    mass = np.bincount(ids, weights=mw.ravel(), minlength=n)
    vel = particles.v[:, None, :].repeat(basis.weights.shape[1], axis=1)
    if scheme != "flip":
        C = particles.affine / apic_inertia(grid.h) if scheme == "apic" else particles.affine
        vel = vel + np.einsum("pij,paj->pai", C, basis.offsets)
    mom = np.stack([np.bincount(ids, weights=(mw * vel[..., d]).ravel(), minlength=n) for d in range(dim)], axis=1)
    facc = np.stack([np.bincount(ids, weights=(mw * particles.a[:, None, d]).ravel(), minlength=n) for d in range(dim)], axis=1)
    fp = np.bincount(ids, weights=(mw * particles.p[:, None]).ravel(), minlength=n)
    cutoff = mass_epsilon * (particles.mass.max() if len(particles) else 0.0)
    active = mass > cutoff
    safe = np.where(active, mass, 1.0)
    v = np.where(active[:, None], mom / safe[:, None], 0.0)
    a = np.where(active[:, None], facc / safe[:, None], 0.0)
    p = np.where(active, fp / safe, 0.0)
    return NodalState(mass=np.where(active, mass, 0.0), velocity=v, acceleration=a, pressure=p, active=active)


def g2p(particles: MaterialPoints, basis: BasisSample, grid: StructuredGrid, v_new, v_old, a_new, u, p,
        scheme="flip"):
    """Gather the converged nodal solution back to the particles (in place)."""
    _check_scheme(scheme)
    if scheme == "flip":
        particles.v = particles.v + basis.interpolate(v_new - v_old)
    else:
        particles.v = basis.interpolate(v_new)
        if scheme == "apic":
            particles.affine = np.einsum("pa,pai,paj->pij", basis.weights, v_new[basis.node_ids], basis.offsets)
        else:
            particles.affine = basis.gradient(v_new)
    particles.x = grid.wrap(particles.x + basis.interpolate(u))
    particles.a = basis.interpolate(a_new)
    particles.p = basis.interpolate(p)
    return particles


# --- boundary conditions -------------------------------------------------

BC_TYPES = ("slip", "fixed", "moving_plate", "periodic")


@dataclass
class BoundaryCondition:
    """A constraint on the node plane ``axis = index``.

    ``slip`` fixes the normal component, ``fixed`` all components,
    ``moving_plate`` drives the tangential components towards ``velocity``
    with a Newmark-consistent displacement and fixes the normal one.
    ``periodic`` is a marker validated against the grid.
    """

    axis: int
    side: str = None
    position: float = None
    type: str = "slip"
    velocity: tuple = None
    index: int = field(default=None)

    def resolve(self, grid: StructuredGrid):
        if self.type not in BC_TYPES:
            raise ConfigurationError(f"unknown boundary type {self.type!r}")
        if not (0 <= self.axis < grid.dim):
            raise ConfigurationError(f"boundary axis {self.axis} outside grid dimension")
        if self.type == "periodic":
            if not grid.periodic[self.axis]:
                raise ConfigurationError(f"axis {self.axis} is not periodic in the grid")
            return self
        if self.position is not None:
            self.index = grid.plane_index(self.axis, self.position)
        elif self.side in ("low", "high"):
            if grid.periodic[self.axis]:
                raise ConfigurationError("wall on a periodic axis")
            self.index = 0 if self.side == "low" else grid.node_counts[self.axis] - 1
        else:
            raise ConfigurationError("boundary needs side 'low'/'high' or a plane position")
        return self


def newmark_plate_displacement(v_target, v_n, a_n, dt, gamma=1.0, beta=0.5):
    """Displacement increment that makes the Newmark update land on v_target."""
    return (beta * dt / gamma) * v_target + (1.0 - beta / gamma) * dt * v_n + (0.5 - beta / gamma) * dt * dt * a_n


@dataclass
class Constraints:
    """Constrained nodal components and their prescribed displacement."""

    nodes: np.ndarray
    comps: np.ndarray
    values: np.ndarray
    velocities: np.ndarray

    def mask(self, n_nodes, dim):
        m = np.zeros((n_nodes, dim), dtype=bool)
        m[self.nodes, self.comps] = True
        return m


def apply_boundary_conditions(state: NodalState, bcs, grid: StructuredGrid, dt=None, gamma=1.0, beta=0.5):
    """Zero constrained kinematics on ``state`` and return the constraints.

    Later entries override earlier ones on shared nodes.  Only active nodes
    are constrained.  Returns a ``Constraints`` record whose ``values`` are
    prescribed displacement increments and ``velocities`` the target nodal
    velocities (used by the explicit solver).
    """
    dim = grid.dim
    table = {}
    for bc in bcs:
        if bc.index is None and bc.type != "periodic":
            bc.resolve(grid)
        if bc.type == "periodic":
            continue
        nodes = grid.plane_nodes(bc.axis, bc.index)
        nodes = nodes[state.active[nodes]]
        if bc.type == "slip":
            comps = [bc.axis]
        else:
            comps = list(range(dim))
        for c in comps:
            if bc.type == "moving_plate" and c != bc.axis:
                vt = 0.0 if bc.velocity is None else float(bc.velocity[c])
                if dt is None:
                    raise ConfigurationError("moving plate needs the time step")
                u = newmark_plate_displacement(vt, state.velocity[nodes, c], state.acceleration[nodes, c], dt, gamma, beta)
                for i, node in enumerate(nodes):
                    table[(int(node), c)] = (float(u[i]), vt, 1.0)
            else:
                for node in nodes:
                    table[(int(node), c)] = (0.0, 0.0, 0.0)
    if table:
        keys = np.array(list(table.keys()), dtype=np.int64)
        vals = np.array(list(table.values()), dtype=float)
    else:
        keys = np.zeros((0, 2), dtype=np.int64)
        vals = np.zeros((0, 3))
    cons = Constraints(keys[:, 0], keys[:, 1], vals[:, 0], vals[:, 1])
    # fixed components carry no velocity or acceleration into the step;
    # driven components keep theirs, the prescribed increment depends on them
    still = vals[:, 2] == 0.0
    state.velocity[cons.nodes[still], cons.comps[still]] = 0.0
    state.acceleration[cons.nodes[still], cons.comps[still]] = 0.0
    return cons
