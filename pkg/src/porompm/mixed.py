"""Stabilised mixed displacement-pressure solver.

One call to :func:`advance_timestep` performs an implicit step: P2G on the
step-start configuration, a Newton loop on the coupled momentum/mass
residuals with VMS stabilisation and Newmark kinematics, and G2P.

Unknowns are nodal displacement increments u_I and pressures p_I on the
active nodes, interleaved per node as ``[u_0, .., u_{dim-1}, p]``.

Material-point quadrature is used throughout.  Local element matrices are
formed per particle with shape ``(np, nn, nn, nb, nb)`` (nb = dim + 1) and
summed into a block-sparse matrix through a precomputed block map.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, ConfigurationError, LinearSolverError, NonConvergenceError
from .grid import BasisSample, StructuredGrid
from .particles import MaterialPoints
from .porous import FieldSample, update_porosity_iterative
from .transfer import Constraints, NodalState

log = logging.getLogger(__name__)

SINGULAR_SHIFT = 1e-10


@dataclass
class NewmarkParams:
    dt: float
    gamma: float = 1.0
    beta: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("time step must be positive")
        if not (2.0 * self.beta >= self.gamma >= 0.5):
            log.warning("Newmark parameters gamma=%g beta=%g are outside the unconditionally stable range",
                        self.gamma, self.beta)

    @property
    def c_v(self):
        """d(velocity)/d(displacement increment)."""
        return self.gamma / (self.beta * self.dt)

    @property
    def c_a(self):
        """d(acceleration)/d(displacement increment)."""
        return 1.0 / (self.beta * self.dt ** 2)


def newmark_kinematics(u, v_n, a_n, params: NewmarkParams):
    """Velocity and acceleration implied by the displacement increment u."""
    dt, g, b = params.dt, params.gamma, params.beta
    a = (u - dt * v_n - dt * dt * (0.5 - b) * a_n) / (b * dt * dt)
    v = v_n + dt * ((1.0 - g) * a_n + g * a)
    return v, a


@dataclass
class StabilizationParams:
    c1: float = 4.0
    c2: float = 2.0
    tau_dyn: float = 1.0
    enabled: bool = True


def compute_tau(theta_bar, speed_bar, A_bar, B_bar, mu_bar, rho, h, dt, params: StabilizationParams):
    """Stabilisation parameters tau_1 and tau_2 from cell-averaged data."""
    inv = (theta_bar * rho * params.tau_dyn / dt + params.c2 * theta_bar * rho * speed_bar / h
           + params.c1 * mu_bar / h ** 2 + theta_bar * rho * (A_bar + B_bar * speed_bar))
    tau1 = 1.0 / inv
    tau2 = h ** 2 / (params.c1 * tau1)
    return tau1, tau2


def cell_tau(grid: StructuredGrid, x, volume, theta, v, A_t, B_t, mu_t, rho, dt, params: StabilizationParams):
    """Per-particle tau from volume-weighted averages over each grid cell."""
    cells = grid.cell_of(x)
    nc = grid.n_cells
    vol = np.bincount(cells, weights=volume, minlength=nc)
    safe = np.where(vol > 0, vol, 1.0)

    def avg(q):
        return np.bincount(cells, weights=volume * q, minlength=nc) / safe

    th = avg(theta)
    vbar = np.stack([avg(v[:, d]) for d in range(v.shape[1])], axis=1)
    speed = np.linalg.norm(vbar, axis=1)
    return compute_tau(th[cells], speed[cells], avg(A_t)[cells], avg(B_t)[cells], avg(mu_t)[cells], rho, grid.h,
                       dt, params)


@dataclass
class SolverSettings:
    rel_tol: float = 1e-10
    energy_tol: float = 1e-15
    max_iterations: int = 20
    linear_tol: float = 1e-10
    kernel_iterations: int = 1


@dataclass
class StepContext:
    """Everything that stays fixed during the Newton loop of one step."""

    grid: StructuredGrid
    dim: int
    act: np.ndarray  # active node ids (global)
    loc: np.ndarray  # (np, nn) active index per slot
    S: np.ndarray
    dS: np.ndarray
    mass_p: np.ndarray
    theta_n: np.ndarray
    grad_theta: np.ndarray
    theta_min: np.ndarray
    theta_max: np.ndarray
    volume_n: np.ndarray
    A_t: np.ndarray
    B_t: np.ndarray
    eta: np.ndarray
    tau1: np.ndarray
    tau2: np.ndarray
    mass_I: np.ndarray
    v_n: np.ndarray
    a_n: np.ndarray
    body: np.ndarray
    rho: float
    mu: float
    newmark: NewmarkParams
    stabilized: bool
    fixed_dofs: np.ndarray  # flat dof ids
    fixed_values: np.ndarray
    free_fluid: bool = False
    _pattern: tuple = field(default=None, repr=False)

    @property
    def na(self):
        return len(self.act)

    @property
    def nb(self):
        return self.dim + 1

    @property
    def n_dofs(self):
        return self.na * self.nb


def build_context(grid, basis: BasisSample, particles: MaterialPoints, fs: FieldSample, state: NodalState,
                  cons: Constraints, newmark: NewmarkParams, stab: StabilizationParams, rho, mu, body,
                  tau=None, free_fluid=False, pressure_pin=None, dry_nodes=None):
    """Assemble the per-step context from P2G output and sampled fields.

    ``dry_nodes`` lists grid nodes whose pressure is fixed to zero.
    """
    act = state.active_ids
    amap = np.full(grid.n_nodes, -1, dtype=np.int64)
    amap[act] = np.arange(len(act))
    loc = amap[basis.node_ids]
    keep = (loc >= 0) & basis.valid
    S = np.where(keep, basis.weights, 0.0)
    dS = np.where(keep[..., None], basis.grads, 0.0)
    loc = np.where(keep, loc, 0)
    theta = fs.theta
    volume = particles.theta0 * particles.volume0 / theta
    mu_t = (1.0 + fs.eta * (1.0 - theta)) * mu
    if tau is None:
        tau1, tau2 = cell_tau(grid, particles.x, volume, theta, particles.v, fs.A_tilde, fs.B_tilde, mu_t, rho,
                              newmark.dt, stab)
    else:
        tau1, tau2 = (np.broadcast_to(t, theta.shape).astype(float) for t in tau)
    nb = grid.dim + 1
    dofs = amap[cons.nodes] * nb + cons.comps
    ok = amap[cons.nodes] >= 0
    fixed_dofs = dofs[ok]
    fixed_values = cons.values[ok]
    if pressure_pin is not None:
        pin = amap[pressure_pin]
        if pin < 0:
            raise ConfigurationError("pressure reference node is not active")
        fixed_dofs = np.append(fixed_dofs, pin * nb + grid.dim)
        fixed_values = np.append(fixed_values, 0.0)
    if dry_nodes is not None:
        dry = amap[np.asarray(dry_nodes, dtype=np.int64)]
        dry = np.setdiff1d(dry[dry >= 0] * nb + grid.dim, fixed_dofs)
        fixed_dofs = np.append(fixed_dofs, dry)
        fixed_values = np.append(fixed_values, np.zeros(len(dry)))
    return StepContext(grid=grid, dim=grid.dim, act=act, loc=loc, S=S, dS=dS, mass_p=particles.mass,
                       theta_n=theta, grad_theta=fs.grad_theta, theta_min=fs.theta_min, theta_max=fs.theta_max,
                       volume_n=volume, A_t=fs.A_tilde, B_t=fs.B_tilde, eta=fs.eta, tau1=tau1, tau2=tau2,
                       mass_I=state.mass[act], v_n=state.velocity[act], a_n=state.acceleration[act],
                       body=np.asarray(body, dtype=float), rho=rho, mu=mu, newmark=newmark,
                       stabilized=stab.enabled, fixed_dofs=fixed_dofs, fixed_values=fixed_values,
                       free_fluid=free_fluid)


@dataclass
class IterateState:
    """Particle-level quantities at the current Newton iterate."""

    v_I: np.ndarray
    a_I: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    grad_v: np.ndarray  # [p, i, j] = d v_i / d x_j
    p_p: np.ndarray
    grad_p: np.ndarray
    theta: np.ndarray
    grad_theta: np.ndarray
    volume: np.ndarray
    mu_t: np.ndarray
    A_t: np.ndarray
    B_t: np.ndarray
    speed: np.ndarray
    w: np.ndarray


def _gather(ctx, nodal):
    return nodal[ctx.loc]


def iterate_state(ctx: StepContext, U, P, frozen=None) -> IterateState:
    """Evaluate kinematics, porosity, volume and viscosity at (U, P).

    ``frozen`` may hold (theta, volume) to bypass the porosity update, as
    used by the finite-difference Jacobian checks.
    """
    v_I, a_I = newmark_kinematics(U, ctx.v_n, ctx.a_n, ctx.newmark)
    S, dS = ctx.S, ctx.dS
    vel = np.einsum("pa,pad->pd", S, _gather(ctx, v_I))
    acc = np.einsum("pa,pad->pd", S, _gather(ctx, a_I))
    grad_v = np.einsum("pae,pai->pie", dS, _gather(ctx, v_I))
    Pg = _gather(ctx, P)
    p_p = np.einsum("pa,pa->p", S, Pg)
    grad_p = np.einsum("pad,pa->pd", dS, Pg)
    if ctx.free_fluid:
        n = len(S)
        theta = np.ones(n)
        gth = np.zeros_like(ctx.grad_theta)
        A_t = np.zeros(n)
        B_t = np.zeros(n)
        volume = ctx.volume_n
        mu_t = np.full(n, ctx.mu)
    else:
        gth = ctx.grad_theta
        A_t, B_t = ctx.A_t, ctx.B_t
        if frozen is not None:
            theta, volume = frozen
        else:
            u_p = np.einsum("pa,pad->pd", S, _gather(ctx, U))
            theta = update_porosity_iterative(ctx.theta_n, gth, u_p, ctx.theta_min, ctx.theta_max)
            volume = ctx.volume_n * ctx.theta_n / theta
        mu_t = (1.0 + ctx.eta * (1.0 - theta)) * ctx.mu
    speed = np.linalg.norm(vel, axis=1)
    w = np.where(speed[:, None] > 0, vel / np.where(speed > 0, speed, 1.0)[:, None], 0.0)
    return IterateState(v_I, a_I, vel, acc, grad_v, p_p, grad_p, theta, gth, volume, mu_t, A_t, B_t, speed, w)


def residual(ctx: StepContext, U, P, frozen=None, it: IterateState = None):
    """Momentum and mass residuals on the active nodes, shape (na, nb)."""
    if it is None:
        it = iterate_state(ctx, U, P, frozen)
    S, dS = ctx.S, ctx.dS
    V, th, gth = it.volume, it.theta, it.grad_theta
    m = ctx.mass_p
    drag = it.A_t + it.B_t * it.speed
    Q = th[:, None, None] * dS + gth[:, None, :] * S[..., None]  # (np, nn, dim)
    stress = it.mu_t[:, None, None] * (it.grad_v + np.swapaxes(it.grad_v, 1, 2))
    div = np.trace(it.grad_v, axis1=1, axis2=2)
    vol_rate = th * div + np.einsum("pd,pd->p", it.vel, gth)
    mom = (np.einsum("pij,paj->pai", stress, dS) * V[:, None, None]
           - (m[:, None, None] * S[..., None]) * ctx.body
           - Q * (V * it.p_p)[:, None, None])
    mass = S * (V * vol_rate)[:, None]
    if ctx.stabilized:
        mom += Q * (ctx.tau2 * vol_rate * V)[:, None, None]
        strong = it.acc - ctx.body + drag[:, None] * it.vel
        mass += np.einsum("pad,pd->pa", dS, (ctx.tau1 * th * m)[:, None] * strong
                          + (ctx.tau1 * th * th * V)[:, None] * it.grad_p)
    na, dim = ctx.na, ctx.dim
    idx = ctx.loc.ravel()
    R = np.empty((na, dim + 1))
    lumped_drag = np.bincount(idx, weights=(S * (drag * m)[:, None]).ravel(), minlength=na)
    for d in range(dim):
        R[:, d] = np.bincount(idx, weights=mom[..., d].ravel(), minlength=na)
        R[:, d] += ctx.mass_I * it.a_I[:, d] + lumped_drag * it.v_I[:, d]
    R[:, dim] = np.bincount(idx, weights=mass.ravel(), minlength=na)
    if not np.all(np.isfinite(R)):
        raise AssemblyError("residual")
    return R


def _pattern(ctx: StepContext):
    """Block-sparse pattern of the local matrices and the map from
    (particle, node, node) triples to its blocks."""
    if ctx._pattern is not None:
        return ctx._pattern
    na = ctx.na
    key = (ctx.loc[:, :, None] * na + ctx.loc[:, None, :]).ravel()
    pairs, inv = np.unique(key, return_inverse=True)
    rows = pairs // na
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=na))])
    # flat target of every local entry, in the (np, nn, nb, nn, nb) layout
    npart, nn = ctx.loc.shape
    nb = ctx.nb
    comp = (np.arange(nb)[:, None] * nb + np.arange(nb)).reshape(1, 1, nb, 1, nb)
    target = inv.reshape(npart, nn, 1, nn, 1) * (nb * nb) + comp
    ctx._pattern = (indptr, pairs % na, target.ravel(), len(pairs))
    return ctx._pattern


def local_matrices(ctx: StepContext, it: IterateState, stabilized=None, blocks=True):
    """Per-particle Jacobian contributions, shape (np, nn, nn, nb, nb), or
    (np, nn * nb, nn * nb) in local dof order when ``blocks`` is false.

    Every term is a low-rank product in the particle's local dof space
    (row = node * nb + component), so each block is formed as L @ R^T plus
    the lumped diagonal.
    """
    if stabilized is None:
        stabilized = ctx.stabilized
    S, dS = ctx.S, ctx.dS
    npart, nn, dim = dS.shape
    nb = dim + 1
    c, ca = ctx.newmark.c_v, ctx.newmark.c_a
    V, th, gth = it.volume, it.theta, it.grad_theta
    m = ctx.mass_p
    drag = it.A_t + it.B_t * it.speed
    Q = th[:, None, None] * dS + gth[:, None, :] * S[..., None]
    rank = 2 * dim * dim + 3 + (2 + 2 * dim if stabilized else 0)
    L = np.zeros((npart, nn, nb, rank))
    R = np.zeros((npart, nn, nb, rank))
    muV = c * it.mu_t * V
    r = 0
    # viscous: mu V (delta_de dS_a.dS_b + dS_a[e] dS_b[d])
    for d in range(dim):
        for j in range(dim):
            L[:, :, d, r] = muV[:, None] * dS[:, :, j]
            R[:, :, d, r] = dS[:, :, j]
            L[:, :, d, r + 1] = muV[:, None] * dS[:, :, j]
            R[:, :, j, r + 1] = dS[:, :, d]
            r += 2
    # exact derivative of the lumped quadratic drag: B m S_a S_b v_a (x) w
    L[:, :, :dim, r] = (c * it.B_t * m)[:, None, None] * S[..., None] * _gather(ctx, it.v_I)
    R[:, :, :dim, r] = S[..., None] * it.w[:, None, :]
    r += 1
    # pressure coupling -V Q_a S_b and its (scaled) transpose
    L[:, :, :dim, r] = -V[:, None, None] * Q
    R[:, :, dim, r] = S
    L[:, :, dim, r + 1] = c * V[:, None] * S
    R[:, :, :dim, r + 1] = Q
    r += 2
    if stabilized:
        L[:, :, :dim, r] = (c * ctx.tau2 * V)[:, None, None] * Q
        R[:, :, :dim, r] = Q
        r += 1
        coef = ctx.tau1 * th * m
        for d in range(dim):
            L[:, :, dim, r] = (coef * (ca + c * drag))[:, None] * dS[:, :, d]
            R[:, :, d, r] = S
            r += 1
        dSu = np.einsum("pad,pd->pa", dS, it.vel)
        L[:, :, dim, r] = (c * coef * it.B_t)[:, None] * dSu
        R[:, :, :dim, r] = S[..., None] * it.w[:, None, :]
        r += 1
        for j in range(dim):
            L[:, :, dim, r] = (ctx.tau1 * th * th * V)[:, None] * dS[:, :, j]
            R[:, :, dim, r] = dS[:, :, j]
            r += 1
    K = L.reshape(npart, nn * nb, r) @ R.reshape(npart, nn * nb, r).transpose(0, 2, 1)
    # lumped inertia and drag on the node diagonal
    K = K.reshape(npart, nn, nb, nn, nb)
    diag = ((ca + c * drag) * m)[:, None] * S
    idx = np.arange(nn)
    for d in range(dim):
        K[:, idx, d, idx, d] += diag
    return K.transpose(0, 1, 3, 2, 4) if blocks else K.reshape(npart, nn * nb, nn * nb)


def jacobian(ctx: StepContext, U, P, frozen=None, it: IterateState = None, stabilized=None):
    """Global sparse Jacobian (CSR) before constraint elimination."""
    if it is None:
        it = iterate_state(ctx, U, P, frozen)
    npart, nn = ctx.loc.shape
    nb = ctx.nb
    K = local_matrices(ctx, it, stabilized, blocks=False).reshape(npart, nn, nb, nn, nb)
    indptr, cols, target, npairs = _pattern(ctx)
    data = np.bincount(target, weights=K.ravel(), minlength=npairs * nb * nb).reshape(npairs, nb, nb)
    if not np.all(np.isfinite(data)):
        raise AssemblyError("jacobian")
    return sp.bsr_matrix((data, cols, indptr), shape=(ctx.n_dofs, ctx.n_dofs)).tocsr()


@dataclass
class SaddleSystem:
    """Jacobian blocks and residuals of one Newton iterate."""

    K_uu: sp.csr_matrix
    K_up: sp.csr_matrix
    K_pu: sp.csr_matrix
    K_pp: sp.csr_matrix
    R_mom: np.ndarray
    R_mass: np.ndarray
    fixed_dofs: np.ndarray
    matrix: sp.csr_matrix = None
    rhs: np.ndarray = None


def _split(J, na, dim):
    nb = dim + 1
    all_ = np.arange(na * nb).reshape(na, nb)
    u = all_[:, :dim].ravel()
    p = all_[:, dim]
    return J[u][:, u], J[u][:, p], J[p][:, u], J[p][:, p]


def eliminate(J, R, fixed_dofs):
    """Symmetric elimination of constrained dofs with a unit diagonal."""
    n = J.shape[0]
    keep = np.ones(n)
    keep[fixed_dofs] = 0.0
    D = sp.diags(keep)
    A = (D @ J @ D + sp.diags(1.0 - keep)).tocsr()
    b = R * keep
    return A, b


def assemble_system(ctx: StepContext, U, P, frozen=None, stabilized=None) -> SaddleSystem:
    it = iterate_state(ctx, U, P, frozen)
    R = residual(ctx, U, P, frozen, it)
    J = jacobian(ctx, U, P, frozen, it, stabilized)
    Kuu, Kup, Kpu, Kpp = _split(J, ctx.na, ctx.dim)
    A, b = eliminate(J, R.ravel(), ctx.fixed_dofs)
    return SaddleSystem(Kuu, Kup, Kpu, Kpp, R[:, :ctx.dim].copy(), R[:, ctx.dim].copy(), ctx.fixed_dofs, A, b)


@dataclass
class LinearSolveInfo:
    iterations: int
    relative_residual: float


def solve_linear_system(A, rhs, tol=1e-10, max_refine=3):
    """Solve A x = -rhs by sparse LU with equilibration and refinement.

    Returns the correction and a ``LinearSolveInfo``.  ``iterations`` counts
    the LU solve plus refinement sweeps.
    """
    A = sp.csr_matrix(A)
    rhs = np.asarray(rhs, dtype=float)
    nrm = np.linalg.norm(rhs)
    if nrm == 0.0:
        return np.zeros_like(rhs), LinearSolveInfo(0, 0.0)
    absA = abs(A)
    r = np.asarray(absA.max(axis=1).todense()).ravel()
    if np.any(r == 0):
        raise LinearSolverError("empty row in the linear system")
    Dr = sp.diags(1.0 / r)
    c = np.asarray((Dr @ absA).max(axis=0).todense()).ravel()
    c[c == 0] = 1.0
    Dc = sp.diags(1.0 / c)
    As = (Dr @ A @ Dc).tocsc()
    b = -rhs

    def attempt(M, sweeps):
        try:
            lu = spla.splu(M, permc_spec="COLAMD", diag_pivot_thresh=0.1)
        except RuntimeError:
            return None, np.inf, 0
        with np.errstate(over="ignore", invalid="ignore"):
            x = Dc @ lu.solve(Dr @ b)
            its = 1
            res = np.linalg.norm(A @ x - b) / nrm
            while np.isfinite(res) and res > tol and its <= sweeps:
                x = x + Dc @ lu.solve(Dr @ (b - A @ x))
                its += 1
                res = np.linalg.norm(A @ x - b) / nrm
        return x, res, its

    x, res, its = attempt(As, max_refine)
    if not np.isfinite(res) or res > tol:
        # Pressure modes invisible to every particle (nodes touched by too few
        # particles) make A singular but consistent.  Factor a shifted copy
        # and refine against A itself.
        x, res, extra = attempt((As + SINGULAR_SHIFT * sp.eye(As.shape[0])).tocsc(), 30)
        its += extra
    if x is None:
        raise LinearSolverError("sparse factorisation failed")
    if not np.isfinite(res) or res > tol:
        raise LinearSolverError(f"linear solve residual {res:.3e} above tolerance {tol:.1e} after {its} sweeps")
    return x, LinearSolveInfo(its, float(res))


@dataclass
class StepReport:
    newton_iters: int
    c_rel: list
    c_en: list
    linear_iters: list
    converged: bool = True

    def as_dict(self, step=None):
        d = {"newton_iters": self.newton_iters, "c_rel": self.c_rel, "c_en": self.c_en,
             "linear_iters": self.linear_iters}
        if step is not None:
            d = {"step": step, **d}
        return d


def newton_solve(ctx: StepContext, P0, settings: SolverSettings):
    """Newton iteration from U = 0 (plus prescribed values), P = P0."""
    na, dim, nb = ctx.na, ctx.dim, ctx.nb
    X = np.zeros(na * nb)
    X.reshape(na, nb)[:, dim] = P0
    X[ctx.fixed_dofs] = ctx.fixed_values
    free = np.ones(na * nb, dtype=bool)
    free[ctx.fixed_dofs] = False

    def split(X):
        Y = X.reshape(na, nb)
        return Y[:, :dim], Y[:, dim]

    it = iterate_state(ctx, *split(X))
    R = residual(ctx, *split(X), it=it).ravel()
    R[~free] = 0.0
    r0 = np.linalg.norm(R)
    report = StepReport(0, [1.0], [None], [])
    if r0 == 0.0:
        return X, it, report
    c = ctx.newmark.c_v
    for k in range(1, settings.max_iterations + 1):
        J = jacobian(ctx, *split(X), it=it)
        A, b = eliminate(J, R, ctx.fixed_dofs)
        dX, info = solve_linear_system(A, b, settings.linear_tol)
        dX[~free] = 0.0
        X = X + dX
        Rm = R.reshape(na, nb)
        dXm = dX.reshape(na, nb)
        radicand = -(c * np.sum(Rm[:, :dim] * dXm[:, :dim])) - np.sum(Rm[:, dim] * dXm[:, dim])
        c_en = float(np.sqrt(max(radicand, 0.0)))
        it = iterate_state(ctx, *split(X))
        R = residual(ctx, *split(X), it=it).ravel()
        R[~free] = 0.0
        c_rel = float(np.linalg.norm(R) / r0)
        report.newton_iters = k
        report.c_rel.append(c_rel)
        report.c_en.append(c_en)
        report.linear_iters.append(info.iterations)
        if c_rel <= settings.rel_tol or c_en <= settings.energy_tol:
            return X, it, report
    report.converged = False
    raise NonConvergenceError(report.as_dict())


def advance_timestep(grid, particles: MaterialPoints, basis: BasisSample, fs: FieldSample, state: NodalState,
                     cons: Constraints, newmark: NewmarkParams, stab: StabilizationParams, settings: SolverSettings,
                     rho, mu, body, scheme="flip", pressure_pin=None, dry_nodes=None):
    """Solve one implicit step and update the particles in place.

    ``state`` must come from P2G with boundary conditions already applied.
    Returns the nodal solution (full-grid arrays) and the step report.
    """
    from .transfer import g2p

    ctx = build_context(grid, basis, particles, fs, state, cons, newmark, stab, rho, mu, body,
                        pressure_pin=pressure_pin, dry_nodes=dry_nodes)
    X, it, report = newton_solve(ctx, state.pressure[ctx.act], settings)
    na, nb, dim = ctx.na, ctx.nb, ctx.dim
    Y = X.reshape(na, nb)
    n = grid.n_nodes
    u = np.zeros((n, dim))
    v = np.zeros((n, dim))
    a = np.zeros((n, dim))
    p = np.zeros(n)
    u[ctx.act] = Y[:, :dim]
    v[ctx.act] = it.v_I
    a[ctx.act] = it.a_I
    p[ctx.act] = Y[:, dim]
    v_old = state.velocity_raw
    g2p(particles, basis, grid, v, v_old, a, u, p, scheme)
    # keep porosity and volume of the converged iterate on the particles
    particles.theta = it.theta.copy()
    particles.volume = particles.theta0 * particles.volume0 / particles.theta
    return {"u": u, "v": v, "a": a, "p": p, "active": state.active.copy()}, report
