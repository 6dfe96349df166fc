"""Structured background grid, quadratic B-spline basis and the iterative
weighted-least-squares kernel correction.

All basis routines are vectorised over particles.  A particle is connected
to the 3^dim nodes nearest to it; nodes that fall outside a non-periodic
grid are kept as padded slots with zero weight so every array has a fixed
shape ``(n_particles, 3**dim)``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DegenerateSupportError, DomainEscapeError

log = logging.getLogger(__name__)

PARTITION_TOL = 1e-13
BOUNDARY_NUDGE = 1e-12


def bspline_weight_and_grad(xi, h=1.0):
    """Quadratic B-spline w(xi) and dw/dx for signed normalised distance xi.

    Works on scalars or arrays.  The gradient is with respect to the
    physical coordinate, hence the 1/h factor.
    """
    xi = np.asarray(xi, dtype=float)
    a = np.abs(xi)
    inner = a < 0.5
    outer = (a >= 0.5) & (a < 1.5)
    w = np.where(inner, 0.75 - xi * xi, np.where(outer, 0.5 * (1.5 - a) ** 2, 0.0))
    dw = np.where(inner, -2.0 * xi, np.where(outer, np.sign(xi) * (a - 1.5), 0.0)) / h
    if w.ndim == 0:
        return float(w), float(dw)
    return w, dw


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform grid with ``node_counts[d]`` nodes along axis d.

    A periodic axis of n nodes spans n cells (node n coincides with node 0);
    a bounded axis of n nodes spans n-1 cells.
    """

    origin: np.ndarray
    h: float
    node_counts: tuple
    periodic: tuple = None

    def __post_init__(self):
        origin = np.atleast_1d(np.asarray(self.origin, dtype=float))
        counts = tuple(int(n) for n in np.atleast_1d(self.node_counts))
        periodic = tuple(bool(p) for p in (self.periodic or (False,) * len(counts)))
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "node_counts", counts)
        object.__setattr__(self, "periodic", periodic)
        if not (self.h > 0):
            raise ConfigurationError("cell size h must be positive")
        if len(counts) not in (1, 2, 3) or len(origin) != len(counts) or len(periodic) != len(counts):
            raise ConfigurationError("origin, node_counts and periodic must share dimension 1, 2 or 3")
        # three distinct support nodes per axis; bounded axes need two cells
        for n, per in zip(counts, periodic):
            if n < (3 if per else 2):
                raise ConfigurationError(f"too few nodes on an axis: {n}")

    @classmethod
    def from_extents(cls, lower, upper, h, periodic=None):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        cells = np.rint((upper - lower) / h).astype(int)
        if np.any(np.abs(cells * h - (upper - lower)) > 1e-9 * max(h, 1.0)):
            raise ConfigurationError("grid extents are not a whole number of cells")
        periodic = tuple(periodic or (False,) * len(lower))
        counts = tuple(int(c) if p else int(c) + 1 for c, p in zip(cells, periodic))
        return cls(lower, float(h), counts, periodic)

    @property
    def dim(self):
        return len(self.node_counts)

    @property
    def n_nodes(self):
        return int(np.prod(self.node_counts))

    @property
    def cells(self):
        return tuple(n if p else n - 1 for n, p in zip(self.node_counts, self.periodic))

    @property
    def lower(self):
        return self.origin.copy()

    @property
    def upper(self):
        return self.origin + np.array(self.cells) * self.h

    def node_index(self, multi):
        """Flat node id from an integer multi-index array of shape (..., dim)."""
        multi = np.asarray(multi)
        return np.ravel_multi_index(tuple(multi[..., d] for d in range(self.dim)), self.node_counts)

    def node_multi_index(self, ids):
        return np.stack(np.unravel_index(np.asarray(ids), self.node_counts), axis=-1)

    def node_positions(self, ids=None):
        if ids is None:
            ids = np.arange(self.n_nodes)
        return self.origin + self.node_multi_index(ids) * self.h

    def node_coordinate(self, axis, index):
        return self.origin[axis] + index * self.h

    def plane_nodes(self, axis, index):
        """Flat ids of every node whose ``axis`` index equals ``index``."""
        ranges = [np.arange(n) for n in self.node_counts]
        ranges[axis] = np.array([index])
        mesh = np.meshgrid(*ranges, indexing="ij")
        return self.node_index(np.stack([m.ravel() for m in mesh], axis=-1))

    def plane_index(self, axis, position):
        """Index of the node plane at ``position``; raises if off-grid."""
        s = (position - self.origin[axis]) / self.h
        i = int(np.rint(s))
        if abs(s - i) > 1e-9 or i < 0 or i >= self.node_counts[axis]:
            raise ConfigurationError(f"plane at {position} is not a node plane of axis {axis}")
        return i

    def wrap(self, x):
        """Map positions on periodic axes back into the primary cell range."""
        x = np.array(x, dtype=float, copy=True)
        for d, per in enumerate(self.periodic):
            if per:
                length = self.cells[d] * self.h
                x[..., d] = self.origin[d] + np.mod(x[..., d] - self.origin[d], length)
        return x

    def cell_of(self, x):
        """Flat cell id containing each position (bounded axes clipped)."""
        xi = np.floor((np.atleast_2d(x) - self.origin) / self.h).astype(np.int64)
        cells = np.array(self.cells)
        xi = np.clip(xi, 0, cells - 1)
        return np.ravel_multi_index(tuple(xi[:, d] for d in range(self.dim)), tuple(cells))

    @property
    def n_cells(self):
        return int(np.prod(self.cells))


@dataclass
class BasisSample:
    """Connectivity and shape-function values for a set of particles."""

    node_ids: np.ndarray  # (np, nn) flat node ids (padded slots hold 0)
    weights: np.ndarray  # (np, nn)
    grads: np.ndarray  # (np, nn, dim)
    offsets: np.ndarray  # (np, nn, dim) x_I - x_p using unwrapped node positions
    valid: np.ndarray  # (np, nn) node exists in the grid
    correction_iterations: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.correction_iterations is None:
            self.correction_iterations = np.zeros(len(self.weights), dtype=np.int64)

    @property
    def n_particles(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.grads.shape[-1]

    def subset(self, idx):
        return BasisSample(self.node_ids[idx], self.weights[idx], self.grads[idx],
                           self.offsets[idx], self.valid[idx], self.correction_iterations[idx])

    def interpolate(self, nodal):
        """Sum_I S_Ip f_I for nodal values of shape (n_nodes, ...)."""
        vals = np.asarray(nodal)[self.node_ids]
        return np.einsum("pa,pa...->p...", self.weights, vals)

    def gradient(self, nodal):
        """Sum_I f_I (x) grad S_Ip; scalar f gives (np, dim), vector f gives (np, ncomp, dim)."""
        vals = np.asarray(nodal)[self.node_ids]
        if vals.ndim == 2:
            return np.einsum("pad,pa->pd", self.grads, vals)
        return np.einsum("pad,pac->pcd", self.grads, vals)


_STENCILS = {d: np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64) for d in (1, 2, 3)}


def _prepare_positions(x, grid):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != grid.dim:
        raise ConfigurationError(f"positions have dimension {x.shape[1]}, grid has {grid.dim}")
    x = grid.wrap(x)
    lo, hi = grid.lower, grid.upper
    nudge = BOUNDARY_NUDGE * grid.h
    for d in range(grid.dim):
        if grid.periodic[d]:
            continue
        bad = np.flatnonzero((x[:, d] < lo[d] - nudge) | (x[:, d] > hi[d] + nudge) | ~np.isfinite(x[:, d]))
        if bad.size:
            raise DomainEscapeError(bad[0], d, x[bad[0], d])
        x[:, d] = np.clip(x[:, d], lo[d] + nudge, hi[d] - nudge)
    return x


def evaluate_basis(x, grid: StructuredGrid) -> BasisSample:
    """Raw tensor-product quadratic B-spline basis at positions ``x``."""
    x = _prepare_positions(x, grid)
    n, dim = x.shape
    xi = (x - grid.origin) / grid.h
    centre = np.floor(xi + 0.5).astype(np.int64)
    stencil = _STENCILS[dim]
    idx = centre[:, None, :] + stencil[None, :, :]  # (np, nn, dim) unwrapped
    dist = xi[:, None, :] - idx
    w1, dw1 = bspline_weight_and_grad(dist, grid.h)
    counts = np.array(grid.node_counts)
    periodic = np.array(grid.periodic)
    inside = (idx >= 0) & (idx < counts)
    valid = np.all(inside | periodic, axis=-1)
    w1 = np.where(valid[..., None], w1, 0.0)
    dw1 = np.where(valid[..., None], dw1, 0.0)
    weights = np.prod(w1, axis=-1)
    grads = np.empty_like(dw1)
    for d in range(dim):
        others = [e for e in range(dim) if e != d]
        grads[..., d] = dw1[..., d] * (np.prod(w1[..., others], axis=-1) if others else 1.0)
    wrapped = np.where(periodic, np.mod(idx, counts), np.clip(idx, 0, counts - 1))
    node_ids = grid.node_index(wrapped)
    offsets = (idx - xi[:, None, :]) * grid.h
    return BasisSample(node_ids, weights, grads, offsets, valid)


def _wls_pass(weights, offsets, h):
    """One WLS correction of ``weights`` for the particles in the batch."""
    n, nn, dim = offsets.shape
    P = np.concatenate([np.ones((n, nn, 1)), offsets / h], axis=-1)  # scaled basis [1, d/h]
    M = np.einsum("pa,pai,paj->pij", weights, P, P)
    eig_min = np.linalg.eigvalsh(M)[:, 0]
    singular = eig_min < 1e-12 * np.maximum(1.0, np.abs(M).max(axis=(1, 2)))
    C = np.zeros_like(M)
    if np.any(~singular):
        C[~singular] = np.linalg.inv(M[~singular])
    corr = np.einsum("pj,paj->pa", C[:, 0, :], P) * weights
    grad = np.einsum("pdj,paj->pad", C[:, 1:, :], P) * weights[..., None] / h
    return corr, grad, singular


def iterative_kernel_correction(sample: BasisSample, h, max_iteration=3, clamp_on_exit=True) -> BasisSample:
    """Iterative WLS kernel correction of a raw basis sample.

    Particles whose weights already sum to one are returned untouched.  For
    the others the moment matrix is inverted and the corrected weights and
    gradients are formed; negative weights are clamped to zero and the
    correction repeated up to ``max_iteration`` passes.  Negative weights
    that survive the last pass are clamped and the weights renormalised
    when ``clamp_on_exit`` is set.
    """
    if max_iteration < 1:
        raise ConfigurationError("max_iteration must be >= 1")
    total = sample.weights.sum(axis=1)
    todo = np.flatnonzero(np.abs(total - 1.0) > PARTITION_TOL)
    out = replace(sample, weights=sample.weights.copy(), grads=sample.grads.copy(),
                  correction_iterations=np.zeros(sample.n_particles, dtype=np.int64))
    if todo.size == 0:
        return out
    w = sample.weights[todo]
    offsets = sample.offsets[todo]
    iters = np.zeros(todo.size, dtype=np.int64)
    active = np.ones(todo.size, dtype=bool)
    new_w = np.empty_like(w)
    new_g = np.empty(w.shape + (sample.dim,))
    k = 0
    while np.any(active):
        sel = np.flatnonzero(active)
        corr, grad, singular = _wls_pass(w[sel], offsets[sel], h)
        if np.any(singular):
            raise DegenerateSupportError(todo[sel[singular]])
        new_w[sel], new_g[sel] = corr, grad
        iters[sel] += 1
        k += 1
        negative = np.any(corr < 0.0, axis=1)
        if k >= max_iteration:
            break
        w[sel] = np.maximum(corr, 0.0)
        active[sel] = negative
    leftover = np.flatnonzero(np.any(new_w < 0.0, axis=1))
    if leftover.size and clamp_on_exit:
        log.debug("negative kernel weights after %d passes on %d particle(s); clamping", max_iteration, leftover.size)
        cw = np.maximum(new_w[leftover], 0.0)
        cg = np.where((new_w[leftover] < 0.0)[..., None], 0.0, new_g[leftover])
        cw /= cw.sum(axis=1, keepdims=True)
        cg -= cw[..., None] * cg.sum(axis=1, keepdims=True)
        new_w[leftover], new_g[leftover] = cw, cg
    out.weights[todo] = new_w
    out.grads[todo] = new_g
    out.correction_iterations[todo] = iters
    return out


def corrected_basis(x, grid: StructuredGrid, max_iteration=3, clamp_on_exit=True) -> BasisSample:
    """Raw basis followed by the iterative kernel correction."""
    return iterative_kernel_correction(evaluate_basis(x, grid), grid.h, max_iteration, clamp_on_exit)
