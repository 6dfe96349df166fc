"""Material points: storage, initialisation, porosity-driven volume update,
bulk diagnostics and an optional particle-shifting correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EmptyDomainError, InvalidPorosityError
from .grid import StructuredGrid, corrected_basis, evaluate_basis
from .porous import PorosityField, sample_field


@dataclass
class MaterialPoints:
    """Structure-of-arrays particle set.  Masses are fixed at creation."""

    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    mass: np.ndarray
    volume0: np.ndarray
    theta0: np.ndarray
    volume: np.ndarray = None
    theta: np.ndarray = None
    grad_theta: np.ndarray = None
    p: np.ndarray = None
    affine: np.ndarray = None
    A_tilde: np.ndarray = None
    B_tilde: np.ndarray = None
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        n, dim = self.x.shape
        if self.volume is None:
            self.volume = self.volume0.copy()
        if self.theta is None:
            self.theta = self.theta0.copy()
        if self.grad_theta is None:
            self.grad_theta = np.zeros((n, dim))
        if self.p is None:
            self.p = np.zeros(n)
        if self.affine is None:
            self.affine = np.zeros((n, dim, dim))
        if self.A_tilde is None:
            self.A_tilde = np.zeros(n)
        if self.B_tilde is None:
            self.B_tilde = np.zeros(n)
        if self.ids is None:
            self.ids = np.arange(n)

    def __len__(self):
        return len(self.mass)

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def total_mass(self):
        return float(np.sum(self.mass))

    def copy(self):
        kw = {k: (None if v is None else np.array(v, copy=True)) for k, v in self.__dict__.items()}
        return MaterialPoints(**kw)


def lattice_points(lower, upper, h, ppc):
    """Sub-cell centroids of a box partitioned into cells of size h/ppc."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    ppc = np.broadcast_to(np.atleast_1d(ppc), lower.shape).astype(int)
    axes = []
    for d in range(len(lower)):
        s = h / ppc[d]
        n = int(np.rint((upper[d] - lower[d]) / s))
        axes.append(lower[d] + (np.arange(n) + 0.5) * s)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def init_particles(regions, ppc, grid: StructuredGrid, field: PorosityField, rho, kernel_iterations=3) -> MaterialPoints:
    """Place particles on a regular lattice inside each box of ``regions``.

    Initial volume is h^dim / prod(ppc); initial porosity is sampled from the
    porosity field and the mass is theta0 * rho * V0.
    """
    ppc = np.broadcast_to(np.atleast_1d(ppc), (grid.dim,)).astype(int)
    if np.any(ppc < 1):
        raise ConfigurationError("ppc must be at least 1 per axis")
    pts = []
    lo_g, hi_g = grid.lower, grid.upper
    for lower, upper in regions:
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if np.any(lower < lo_g - 1e-12) or np.any(upper > hi_g + 1e-12) or np.any(upper <= lower):
            raise ConfigurationError(f"fluid region {lower.tolist()}..{upper.tolist()} is not inside the grid")
        pts.append(lattice_points(lower, upper, grid.h, ppc))
    x = np.concatenate(pts) if pts else np.zeros((0, grid.dim))
    if len(x):
        key = np.round(x / grid.h * ppc * 4).astype(np.int64)
        _, first = np.unique(key, axis=0, return_index=True)
        x = x[np.sort(first)]
    n = len(x)
    v0 = np.full(n, grid.h ** grid.dim / np.prod(ppc))
    if n:
        fs = sample_field(corrected_basis(x, grid, kernel_iterations), field, rho)
        theta0 = fs.theta
    else:
        theta0 = np.ones(0)
    mass = theta0 * rho * v0
    zeros = np.zeros((n, grid.dim))
    return MaterialPoints(x=x, v=zeros.copy(), a=zeros.copy(), mass=mass, volume0=v0, theta0=theta0.copy())


def update_particle_porosity_volume(particles: MaterialPoints, theta_new):
    """Set porosity and rescale volume so that V theta = V0 theta0."""
    theta_new = np.asarray(theta_new, dtype=float)
    if np.any(theta_new <= 0) or np.any(theta_new > 1.0 + 1e-12):
        raise InvalidPorosityError("porosity must lie in (0, 1]")
    particles.theta = np.broadcast_to(theta_new, particles.theta.shape).copy()
    particles.volume = particles.theta0 * particles.volume0 / particles.theta
    return particles


def volume_for_porosity(theta0, volume0, theta):
    return theta0 * volume0 / theta


def center_of_mass(particles: MaterialPoints):
    """Mass-weighted centre and total mass."""
    if len(particles) == 0:
        raise EmptyDomainError("center of mass of an empty particle set")
    m = particles.mass
    total = float(np.sum(m))
    return np.einsum("p,pd->d", m, particles.x) / total, total


def mean_velocity(particles: MaterialPoints):
    if len(particles) == 0:
        raise EmptyDomainError("mean velocity of an empty particle set")
    return np.einsum("p,pd->d", particles.mass, particles.v) / np.sum(particles.mass)


def measure_heights(particles: MaterialPoints, axis, interface_position):
    """Extent of the fluid on each side of a plane.

    Particles are extended by half a particle size (volume^(1/dim)) and the
    extents are clipped at the plane, so a column still attached to the
    plane reports its full height and a detached slug its own length.
    """
    if len(particles) == 0:
        return 0.0, 0.0
    y = particles.x[:, axis]
    half = 0.5 * particles.volume ** (1.0 / particles.dim)
    lo, hi = y - half, y + half
    above = y > interface_position
    h_above = h_below = 0.0
    if np.any(above):
        h_above = float(np.max(hi[above]) - max(interface_position, np.min(lo[above])))
    if np.any(~above):
        h_below = float(min(interface_position, np.max(hi[~above])) - np.min(lo[~above]))
    return h_above, h_below


def delta_correction(particles: MaterialPoints, grid: StructuredGrid, ppc, alpha=0.01, cap=0.05, enabled=True):
    """Shift particles down the gradient of the nodal number-density surplus.

    The nodal number density n_I = sum_p S_Ip is compared with the lattice
    value prod(ppc); only the surplus max(n_I / n_ref - 1, 0) drives the
    shift, so a regular lattice (including its free edges) is left alone.
    Displacement is -alpha h^2 grad(surplus), capped at ``cap`` * h.
    """
    if not enabled or len(particles) == 0:
        return np.zeros_like(particles.x)
    n_ref = float(np.prod(np.broadcast_to(np.atleast_1d(ppc), (grid.dim,))))
    basis = evaluate_basis(particles.x, grid)
    dens = np.bincount(basis.node_ids.ravel(), weights=basis.weights.ravel(), minlength=grid.n_nodes)
    surplus = np.maximum(dens / n_ref - 1.0, 0.0)
    grad = basis.gradient(surplus)
    shift = -alpha * grid.h ** 2 * grad
    norm = np.linalg.norm(shift, axis=1)
    limit = cap * grid.h
    scale = np.where(norm > limit, limit / np.maximum(norm, 1e-300), 1.0)
    shift *= scale[:, None]
    new_x = particles.x + shift
    lo, hi = grid.lower, grid.upper
    for d in range(grid.dim):
        if not grid.periodic[d]:
            new_x[:, d] = np.clip(new_x[:, d], lo[d], hi[d])
    particles.x = grid.wrap(new_x)
    return shift


CSV_HEADER = ["id", "x", "y", "z", "vx", "vy", "vz", "p", "theta", "volume"]


def dump_csv(particles: MaterialPoints, path):
    n, dim = particles.x.shape
    pos = np.zeros((n, 3))
    vel = np.zeros((n, 3))
    pos[:, :dim] = particles.x
    vel[:, :dim] = particles.v
    table = np.column_stack([particles.ids, pos, vel, particles.p, particles.theta, particles.volume])
    fmt = ["%d"] + ["%.17g"] * 9
    np.savetxt(path, table, delimiter=",", header=",".join(CSV_HEADER), comments="", fmt=fmt)


def read_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return np.atleast_1d(data)
