"""Explicit-drag fractional-step (projection) baseline.

Predictor with drag evaluated at the step-start velocity, pressure Poisson
equation with zero pressure on detected free-surface nodes, and a velocity
corrector.  Operators use the same corrected kernels and material-point
quadrature as the mixed solver.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LinearSolverError
from .grid import BasisSample, StructuredGrid
from .particles import MaterialPoints
from .porous import FieldSample, PorosityField
from .transfer import Constraints, NodalState, g2p

log = logging.getLogger(__name__)


@dataclass
class FreeSurfaceMask:
    """Nodes whose pressure is fixed to zero."""

    fixed: np.ndarray
    fraction: np.ndarray
    threshold: float = 0.5


def free_surface_mask(basis: BasisSample, particles: MaterialPoints, field: PorosityField, active,
                      threshold=0.5) -> FreeSurfaceMask:
    """Mask active nodes whose fluid volume fraction sum(S V_p)/V_I is at most ``threshold``."""
    n = field.grid.n_nodes
    vol = np.bincount(basis.node_ids.ravel(), weights=(basis.weights * particles.volume[:, None]).ravel(),
                      minlength=n)
    frac = vol / field.volume
    return FreeSurfaceMask(active & (frac <= threshold), frac, threshold)


def _particle_quantities(basis: BasisSample, nodal_v):
    vel = basis.interpolate(nodal_v)
    grad = basis.gradient(nodal_v)  # [p, i, j] = d v_i / d x_j
    return vel, grad


def predictor(state: NodalState, particles: MaterialPoints, basis: BasisSample, fs: FieldSample, mu, body, dt):
    """Intermediate nodal acceleration and velocity with explicit drag."""
    n, dim = state.velocity.shape
    ids = basis.node_ids.ravel()
    _, grad_v = _particle_quantities(basis, state.velocity)
    mu_t = (1.0 + fs.eta * (1.0 - particles.theta)) * mu
    stress = mu_t[:, None, None] * (grad_v + np.swapaxes(grad_v, 1, 2))
    fint = -np.einsum("pij,paj->pai", stress, basis.grads) * particles.volume[:, None, None]
    speed = np.linalg.norm(particles.v, axis=1)
    coef = particles.mass * (fs.A_tilde + fs.B_tilde * speed)
    drag = np.bincount(ids, weights=(basis.weights * coef[:, None]).ravel(), minlength=n)
    force = np.empty((n, dim))
    for d in range(dim):
        force[:, d] = np.bincount(ids, weights=fint[..., d].ravel(), minlength=n)
        force[:, d] += np.bincount(ids, weights=(basis.weights * particles.mass[:, None]).ravel(), minlength=n) * body[d]
    force -= drag[:, None] * state.velocity
    safe = np.where(state.active, state.mass, 1.0)
    a_star = np.where(state.active[:, None], force / safe[:, None], 0.0)
    v_star = state.velocity + dt * a_star
    return v_star, a_star


def _laplacian(basis: BasisSample, particles: MaterialPoints, n):
    npart, nn = basis.weights.shape
    vals = np.einsum("pad,pbd->pab", basis.grads, basis.grads) * (particles.theta * particles.volume)[:, None, None]
    rows = np.broadcast_to(basis.node_ids[:, :, None], vals.shape).ravel()
    cols = np.broadcast_to(basis.node_ids[:, None, :], vals.shape).ravel()
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(n, n))


def divergence_rhs(basis: BasisSample, particles: MaterialPoints, fs: FieldSample, v_star, rho, dt):
    """D v* = -(rho/dt) sum S_I V (theta div v* + grad(theta) . v*)."""
    n = v_star.shape[0]
    vel, grad = _particle_quantities(basis, v_star)
    rate = particles.theta * np.trace(grad, axis1=1, axis2=2) + np.einsum("pd,pd->p", fs.grad_theta, vel)
    w = basis.weights * (particles.volume * rate)[:, None]
    return -(rho / dt) * np.bincount(basis.node_ids.ravel(), weights=w.ravel(), minlength=n)


def solve_ppe(v_star, basis: BasisSample, particles: MaterialPoints, fs: FieldSample, mask: FreeSurfaceMask, active,
              rho, dt, tol=1e-10):
    """Nodal pressure from L p = D v* with p = 0 on masked nodes."""
    n = len(active)
    free = active & ~mask.fixed
    if not np.any(free):
        raise LinearSolverError("every active node is a free-surface node")
    L = _laplacian(basis, particles, n)
    rhs = divergence_rhs(basis, particles, fs, v_star, rho, dt)
    idx = np.flatnonzero(free)
    A = L[idx][:, idx].tocsc()
    b = rhs[idx]
    p = np.zeros(n)
    if np.linalg.norm(b) == 0.0:
        return p
    try:
        x = spla.spsolve(A, b)
    except RuntimeError as exc:
        raise LinearSolverError(f"pressure Poisson solve failed: {exc}") from exc
    res = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
    if not np.isfinite(res) or res > tol:
        raise LinearSolverError(f"pressure Poisson residual {res:.3e} above {tol:.1e} (singular system?)")
    p[idx] = x
    return p


def pressure_gradient_force(basis: BasisSample, particles: MaterialPoints, p):
    """G p with G_IJ = -sum theta S_I grad S_J V."""
    n, dim = len(p), basis.dim
    gp = basis.gradient(p)
    w = -(particles.theta * particles.volume)[:, None, None] * basis.weights[..., None] * gp[:, None, :]
    ids = basis.node_ids.ravel()
    return np.stack([np.bincount(ids, weights=w[..., d].ravel(), minlength=n) for d in range(dim)], axis=1)


def corrector(v_star, a_star, p, state: NodalState, basis: BasisSample, particles: MaterialPoints, dt):
    gp = pressure_gradient_force(basis, particles, p)
    safe = np.where(state.active, state.mass, 1.0)
    dv = np.where(state.active[:, None], gp / safe[:, None], 0.0)
    return v_star + dt * dv, a_star + dv


def _impose(v, cons: Constraints):
    v[cons.nodes, cons.comps] = cons.velocities
    return v


def fractional_timestep(grid: StructuredGrid, particles: MaterialPoints, basis: BasisSample, fs: FieldSample,
                        state: NodalState, cons: Constraints, field: PorosityField, dt, rho, mu, body,
                        scheme="flip", threshold=0.5):
    """One predictor / PPE / corrector step; particles are updated in place."""
    body = np.asarray(body, dtype=float)
    v_star, a_star = predictor(state, particles, basis, fs, mu, body, dt)
    _impose(v_star, cons)
    mask = free_surface_mask(basis, particles, field, state.active, threshold)
    p = solve_ppe(v_star, basis, particles, fs, mask, state.active, rho, dt)
    v_new, a_new = corrector(v_star, a_star, p, state, basis, particles, dt)
    _impose(v_new, cons)
    u = dt * v_new
    g2p(particles, basis, grid, v_new, state.velocity_raw, a_new, u, p, scheme)
    return {"u": u, "v": v_new, "a": a_new, "p": p, "active": state.active.copy(),
            "masked": int(np.count_nonzero(mask.fixed))}
