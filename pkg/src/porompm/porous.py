"""Blurred porosity and permeability fields.

Porous media are described by static field particles that tessellate the
whole domain (free fluid is represented by samples with porosity one).
Their porosity and permeability parameters are smoothed onto the grid with
the raw B-spline kernels; fluid particles then sample the nodal fields with
the corrected kernels.

Permeability is carried internally as the Kozeny-Carman reference value
kappa in ``k(theta) = theta^3 / (1 - theta)^2 * kappa`` together with the
Ergun constants A and B.  All three input conventions (intrinsic
permeability, hydraulic conductivity, grain size) map onto kappa.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, CoverageError, InvalidPorosityError
from .grid import BasisSample, StructuredGrid, evaluate_basis

FREE_THETA_TOL = 1e-12

INPUT_MODES = ("permeability", "conductivity", "grain_size")


@dataclass
class PorousBlock:
    """Axis-aligned porous region.

    Exactly one of ``k`` (intrinsic permeability at ``theta_ref``), ``K``
    (hydraulic conductivity at ``theta_ref``) or ``d`` (grain size) is used,
    selected by which one is given.
    """

    lower: tuple
    upper: tuple
    theta: float
    A: float = 150.0
    B: float = 0.0
    k: float = None
    K: float = None
    d: float = None
    theta_ref: float = None
    mu_e: float = None

    def __post_init__(self):
        if self.theta_ref is None:
            self.theta_ref = self.theta
        given = [m for m, v in zip(INPUT_MODES, (self.k, self.K, self.d)) if v is not None]
        if len(given) != 1:
            raise ConfigurationError("a porous block needs exactly one of k, K or d")
        if not (0.0 < self.theta < 1.0):
            raise ConfigurationError(f"block porosity must lie in (0, 1), got {self.theta}")
        if not (0.0 < self.theta_ref < 1.0):
            raise ConfigurationError("theta_ref must lie in (0, 1)")
        if self.A <= 0 or self.B < 0:
            raise ConfigurationError("Ergun constants need A > 0 and B >= 0")
        value = {"permeability": self.k, "conductivity": self.K, "grain_size": self.d}[given[0]]
        if not value > 0:
            raise ConfigurationError("permeability parameter must be positive")

    @property
    def input_mode(self):
        return [m for m, v in zip(INPUT_MODES, (self.k, self.K, self.d)) if v is not None][0]

    def params(self):
        return {"k": self.k, "K": self.K, "d": self.d, "A": self.A, "B": self.B, "theta_ref": self.theta_ref}

    def contains(self, x):
        x = np.atleast_2d(x)
        return np.all((x >= np.asarray(self.lower)) & (x <= np.asarray(self.upper)), axis=1)


def reference_permeability(params, input_mode, rho=1000.0, mu=1e-3, g=9.81):
    """Kozeny-Carman reference permeability kappa for one input convention."""
    if input_mode == "grain_size":
        return params["d"] ** 2 / params["A"]
    if input_mode == "permeability":
        k_ref = params["k"]
    elif input_mode == "conductivity":
        k_ref = params["K"] * mu / (rho * g)
    else:
        raise ConfigurationError(f"unknown permeability input mode {input_mode!r}")
    t = params["theta_ref"]
    return k_ref * (1.0 - t) ** 2 / t ** 3


def drag_coefficients(theta, params, input_mode, rho=1000.0, mu=1e-3, g=9.81):
    """Linear and quadratic drag coefficients (A~ [1/s], B~ [1/m]).

    Direct evaluation of the three conversion columns with Kozeny-Carman
    rescaling from the reference porosity.  ``theta == 1`` returns zero drag.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0) or np.any(theta > 1 + FREE_THETA_TOL):
        raise InvalidPorosityError("porosity must lie in (0, 1]")
    free = theta >= 1.0 - FREE_THETA_TOL
    th = np.where(free, 0.5, theta)
    A, B = params["A"], params["B"]
    if input_mode == "grain_size":
        d = params["d"]
        a_t = A * mu * (1 - th) ** 2 / (th ** 2 * rho * d ** 2)
        b_t = B * (1 - th) / (th * d)
    else:
        t0 = params["theta_ref"]
        ratio = th ** 3 / t0 ** 3 * (1 - t0) ** 2 / (1 - th) ** 2
        if input_mode == "permeability":
            k = ratio * params["k"]
            a_t = th * mu / (rho * k)
            b_t = B * np.sqrt(th) / np.sqrt(A * k)
        elif input_mode == "conductivity":
            K = ratio * params["K"]
            a_t = th * g / K
            b_t = B * np.sqrt(th * rho * g) / np.sqrt(A * K * mu)
        else:
            raise ConfigurationError(f"unknown permeability input mode {input_mode!r}")
    a_t = np.where(free, 0.0, a_t)
    b_t = np.where(free, 0.0, b_t)
    if a_t.ndim == 0:
        return float(a_t), float(b_t)
    return a_t, b_t


def drag_from_reference(theta, kappa, A, B, rho, mu):
    """Drag coefficients from kappa, A, B (the internal representation).

    Zero where the sample is free fluid or carries no porous material.
    """
    theta = np.asarray(theta, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    porous = (theta < 1.0 - FREE_THETA_TOL) & (kappa > 0) & (np.asarray(A) > 0)
    th = np.where(porous, theta, 0.5)
    kap = np.where(porous, kappa, 1.0)
    a_ = np.where(porous, A, 1.0)
    k = th ** 3 / (1.0 - th) ** 2 * kap
    a_t = np.where(porous, th * mu / (rho * k), 0.0)
    b_t = np.where(porous, B * np.sqrt(th) / np.sqrt(a_ * k), 0.0)
    return a_t, b_t


def viscosity_slope(mu, mu_e, theta_ref):
    if not (0.0 < theta_ref < 1.0):
        raise ConfigurationError("theta_ref must lie in (0, 1) for the viscosity slope")
    return (mu_e - mu) / (mu * (1.0 - theta_ref))


def effective_viscosity(theta, mu, mu_e, theta_ref):
    """Porosity-dependent viscosity (1 + eta (1 - theta)) mu."""
    eta = viscosity_slope(mu, mu_e, theta_ref)
    return (1.0 + eta * (1.0 - np.asarray(theta, dtype=float))) * mu


@dataclass
class PorousSamples:
    """Static field particles (positions, porosity, volume, parameters)."""

    x: np.ndarray
    theta: np.ndarray
    volume: np.ndarray
    kappa: np.ndarray
    A: np.ndarray
    B: np.ndarray
    eta: np.ndarray

    @property
    def porous(self):
        return self.theta < 1.0 - FREE_THETA_TOL


def tessellate(grid: StructuredGrid, blocks, ppc=4, rho=1000.0, mu=1e-3, g=9.81) -> PorousSamples:
    """Cover the whole grid with field particles on a regular sub-cell lattice.

    Samples inside a block take its porosity and parameters (the last block
    listed wins on overlaps); everything else is free fluid.
    """
    ppc = np.broadcast_to(np.atleast_1d(ppc), (grid.dim,)).astype(int)
    axes = [grid.origin[d] + (np.arange(grid.cells[d] * ppc[d]) + 0.5) * grid.h / ppc[d] for d in range(grid.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    x = np.stack([m.ravel() for m in mesh], axis=-1)
    n = len(x)
    theta = np.ones(n)
    kappa = np.zeros(n)
    A = np.zeros(n)
    B = np.zeros(n)
    eta = np.zeros(n)
    for blk in blocks:
        inside = blk.contains(x)
        theta[inside] = blk.theta
        kappa[inside] = reference_permeability(blk.params(), blk.input_mode, rho, mu, g)
        A[inside] = blk.A
        B[inside] = blk.B
        mu_e = mu if blk.mu_e is None else blk.mu_e
        eta[inside] = viscosity_slope(mu, mu_e, blk.theta_ref)
    volume = np.full(n, grid.h ** grid.dim / np.prod(ppc))
    return PorousSamples(x, theta, volume, kappa, A, B, eta)


@dataclass
class PorosityField:
    """Nodal porosity, nodal volumes and permeability parameters."""

    grid: StructuredGrid
    theta: np.ndarray
    volume: np.ndarray
    kappa: np.ndarray
    A: np.ndarray
    B: np.ndarray
    eta: np.ndarray
    active: np.ndarray

    @property
    def blur_half_width(self):
        return 1.5 * self.grid.h

    @property
    def theta_bounds(self):
        return float(self.theta[self.active].min()), float(self.theta[self.active].max())


def _scatter(basis: BasisSample, values, n_nodes):
    return np.bincount(basis.node_ids.ravel(), weights=(basis.weights * values[:, None]).ravel(), minlength=n_nodes)


def build_fields(samples: PorousSamples, grid: StructuredGrid) -> PorosityField:
    """Kernel-smoothed nodal porosity theta_I = (1/V_I) sum S theta V.

    Nodal volumes are the kernel integrals evaluated with the tessellating
    samples as quadrature points.  Permeability parameters are smoothed the
    same way, with free samples contributing zero.  The viscosity slope is
    averaged over porous samples only, because it is a property of the
    solid skeleton rather than a volumetric quantity.
    """
    basis = evaluate_basis(samples.x, grid)
    n = grid.n_nodes
    vol = _scatter(basis, samples.volume, n)
    active = vol > 0
    if not np.all(active):
        raise CoverageError(f"{np.count_nonzero(~active)} node(s) carry no field samples")
    theta = _scatter(basis, samples.theta * samples.volume, n) / vol
    kappa = _scatter(basis, samples.kappa * samples.volume, n) / vol
    A = _scatter(basis, samples.A * samples.volume, n) / vol
    B = _scatter(basis, samples.B * samples.volume, n) / vol
    pv = np.where(samples.porous, samples.volume, 0.0)
    pvol = _scatter(basis, pv, n)
    eta = np.divide(_scatter(basis, samples.eta * pv, n), pvol, out=np.zeros(n), where=pvol > 0)
    lo = samples.theta.min()
    theta = np.clip(theta, lo, 1.0)
    return PorosityField(grid, theta, vol, kappa, A, B, eta, active)


def shepard_field(samples: PorousSamples, grid: StructuredGrid) -> PorosityField:
    """Shepard-normalised porosity from the porous samples only (diagnostic).

    Nodes touched by no porous sample are inactive and report theta = 1.
    """
    keep = samples.porous
    if not np.any(keep):
        keep = np.ones_like(keep)
    basis = evaluate_basis(samples.x[keep], grid)
    n = grid.n_nodes
    v = samples.volume[keep]
    den = _scatter(basis, v, n)
    active = den > 0
    num = _scatter(basis, samples.theta[keep] * v, n)
    theta = np.where(active, num / np.where(active, den, 1.0), 1.0)
    full = build_fields(samples, grid)
    return PorosityField(grid, theta, full.volume, full.kappa, full.A, full.B, full.eta, active)


@dataclass
class FieldSample:
    """Porosity-related quantities at fluid particles."""

    theta: np.ndarray
    grad_theta: np.ndarray
    A_tilde: np.ndarray
    B_tilde: np.ndarray
    eta: np.ndarray
    theta_min: np.ndarray
    theta_max: np.ndarray


def sample_field(basis: BasisSample, field: PorosityField, rho=1000.0, mu=1e-3) -> FieldSample:
    """Interpolate the nodal fields to particles with their (corrected) basis."""
    theta = np.clip(basis.interpolate(field.theta), None, 1.0)
    grad = basis.gradient(field.theta)
    kappa = basis.interpolate(field.kappa)
    A = basis.interpolate(field.A)
    B = basis.interpolate(field.B)
    eta = basis.interpolate(field.eta)
    theta = np.where(theta >= 1.0 - FREE_THETA_TOL, 1.0, theta)
    connected = basis.weights > 0
    nodal = field.theta[basis.node_ids]
    uniform = np.all(~connected | (nodal == nodal[:, :1]), axis=1)
    grad[uniform] = 0.0
    a_t, b_t = drag_from_reference(theta, kappa, A, B, rho, mu)
    tmin = np.where(connected, nodal, np.inf).min(axis=1)
    tmax = np.where(connected, nodal, -np.inf).max(axis=1)
    if np.any(theta <= 0):
        raise InvalidPorosityError("sampled porosity is not positive")
    return FieldSample(theta, grad, a_t, b_t, eta, tmin, tmax)


def update_porosity_iterative(theta_n, grad_theta_n, u, theta_min, theta_max):
    """First-order porosity at the displaced position, clamped to the
    nodal porosity range of the particle's connectivity."""
    theta = np.asarray(theta_n) + np.einsum("...d,...d->...", np.asarray(grad_theta_n), np.asarray(u))
    return np.clip(theta, theta_min, theta_max)
