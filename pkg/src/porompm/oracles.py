"""Semi-analytical reference solutions for the 1D gravity-driven columns
and the composite-channel Couette flow.

All ODEs are integrated with tight tolerances (rtol 1e-10, atol 1e-12) and
terminal events; stiff parameter sets switch to an implicit method.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import OracleError

RTOL = 1e-10
ATOL = 1e-12


@dataclass
class OdeSolution:
    """Time samples of an oracle trajectory plus a dense evaluator."""

    t: np.ndarray
    fields: dict
    t_star: float = None
    terminal_state: np.ndarray = None
    evaluate: object = field(default=None, repr=False)

    def __getitem__(self, key):
        return self.fields[key]


def _integrate(rhs, y0, t_end, event=None, stiff=False, rtol=RTOL, atol=ATOL, max_step=np.inf):
    method = "Radau" if stiff else "DOP853"
    events = None
    if event is not None:
        event.terminal = True
        event.direction = -1
        events = [event]
    sol = solve_ivp(rhs, (0.0, t_end), y0, method=method, rtol=rtol, atol=atol, dense_output=True,
                    events=events, max_step=max_step)
    if sol.status < 0:
        # one automatic retry with the implicit integrator and tighter tolerances
        sol = solve_ivp(rhs, (0.0, t_end), y0, method="Radau", rtol=rtol * 0.1, atol=atol * 0.1,
                        dense_output=True, events=events, max_step=max_step)
        if sol.status < 0:
            raise OracleError(f"integration failed: {sol.message}")
    return sol


def _stiff(*rates, t_end=1.0):
    return max(rates) * t_end > 1e4


# --- Case 3 ----------------------------------------------------------------

def seepage_steady_state(A_tilde, B_tilde, g=9.81):
    """Positive root of g = A v + B v^2."""
    if A_tilde == 0 and B_tilde == 0:
        raise OracleError("no drag: the column is in free fall and has no steady state")
    if B_tilde == 0:
        return g / A_tilde
    return (-A_tilde + np.sqrt(A_tilde ** 2 + 4.0 * B_tilde * g)) / (2.0 * B_tilde)


def case3_velocity(t, A_tilde, B_tilde, g=9.81):
    """Seepage velocity v(t) from rest under gravity and drag (downward positive)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if B_tilde == 0:
        if A_tilde == 0:
            return g * t
        return g / A_tilde * (-np.expm1(-A_tilde * t))

    def rhs(_, y):
        return [g - A_tilde * y[0] - B_tilde * abs(y[0]) * y[0]]

    sol = _integrate(rhs, [0.0], float(t.max()) if t.max() > 0 else 1.0,
                     stiff=_stiff(A_tilde, B_tilde * g, t_end=t.max()))
    return sol.sol(t)[0]


# --- Case 4 ----------------------------------------------------------------

def case4_solve(h0, theta, A_tilde, B_tilde, g=9.81, t_end=5.0, rho=1000.0) -> OdeSolution:
    """Free column of height h0 draining into a porous bed below it.

    The unknown is the free-fluid height h_ff; h_fp = (h0 - h_ff)/theta and
    the interface pressure is p_i = rho h_ff (g + h_ff'').
    """
    def accel(h, hd):
        hfp = (h0 - h) / theta
        num = -h * g - hfp * (g + (A_tilde + B_tilde * abs(hd) / theta) * hd / theta)
        return num / (h + hfp / theta)

    def rhs(_, y):
        return [y[1], accel(y[0], y[1])]

    def event(_, y):
        return y[0]

    sol = _integrate(rhs, [h0, 0.0], t_end, event, stiff=_stiff(A_tilde, t_end=t_end))

    def evaluate(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tmax = sol.t[-1]
        h, hd = sol.sol(np.clip(t, 0.0, tmax))
        hdd = accel(h, hd)
        after = t > tmax
        p = rho * h * (g + hdd)
        h = np.where(after, 0.0, h)
        p = np.where(after, 0.0, p)
        return {"t": t, "h_ff": h, "h_fp": (h0 - h) / theta, "p_i": p, "hdot": hd, "hddot": hdd}

    t_star = float(sol.t_events[0][0]) if len(sol.t_events[0]) else None
    return OdeSolution(sol.t, evaluate(sol.t), t_star, sol.y[:, -1], evaluate)


# --- Case 5 ----------------------------------------------------------------

def _case5_terms(h0, theta, A_tilde, B_tilde, g):
    def accel(h, hd):
        D = theta ** 2 * h0 + (1.0 - theta ** 2) * h
        N = -theta * (h0 - h) * g - h * (g + (A_tilde + B_tilde * np.abs(hd)) * hd)
        return N / D
    return accel


def case5_solve(h0, theta, A_tilde, B_tilde, g=9.81, t_end=10.0, rho=1000.0) -> OdeSolution:
    """Pore column of height h0 draining out of the bottom of a porous block.

    The unknown is the pore-fluid height h_fp; h_ff = theta (h0 - h_fp) and
    p_i = -rho theta (h0 - h_fp)(g + theta h_fp'').  Integration stops at the
    event h_fp = 0, which defines t*.
    """
    accel = _case5_terms(h0, theta, A_tilde, B_tilde, g)

    def rhs(_, y):
        return [y[1], accel(y[0], y[1])]

    def event(_, y):
        return y[0]

    sol = _integrate(rhs, [h0, 0.0], t_end, event, stiff=_stiff(A_tilde, t_end=t_end))
    if not len(sol.t_events[0]):
        raise OracleError("pore column did not drain within t_end")
    t_star = float(sol.t_events[0][0])

    def evaluate(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        h, hd = sol.sol(np.clip(t, 0.0, t_star))
        hdd = accel(h, hd)
        after = t > t_star
        h = np.where(after, 0.0, h)
        p = -rho * theta * (h0 - h) * (g + theta * hdd)
        p = np.where(after, 0.0, p)
        return {"t": t, "h_fp": h, "h_ff": theta * (h0 - h), "p_i": p, "v": -hd, "a": -hdd}

    out = OdeSolution(sol.t, evaluate(sol.t), t_star, sol.y[:, -1], evaluate)
    out.fields["terminal_velocity"] = float(-sol.y[1, -1])
    out.dense = sol.sol
    out.params = (h0, theta, A_tilde, B_tilde, g)
    return out


def case5_series_coefficients(c0, c1, h0, theta, A_tilde, B_tilde, g=9.81, order=6, sign=-1.0):
    """Taylor coefficients of h_fp about an endpoint from the ODE itself.

    Substituting h = sum c_k s^k turns the ODE into a recurrence for
    c_2, c_3, ...; ``sign`` is the sign of h' on the expansion side, so that
    |h'| h' = sign h'^2.
    """
    c = np.zeros(order + 1)
    c[0], c[1] = c0, c1

    def mul(a, b):
        return np.convolve(a, b)[: order + 1]

    for k in range(order - 1):
        # coefficients known up to index k+1; solve for c[k+2]
        h = c.copy()
        hd = np.array([(j + 1) * c[j + 1] for j in range(order)] + [0.0])
        hdd = np.array([(j + 2) * (j + 1) * c[j + 2] for j in range(order - 1)] + [0.0, 0.0])
        D = (1.0 - theta ** 2) * h
        D[0] += theta ** 2 * h0
        N = theta * g * h - g * h - A_tilde * mul(h, hd) - sign * B_tilde * mul(h, mul(hd, hd))
        N[0] -= theta * h0 * g
        # [D hdd]_k = D_0 e_k + sum_{i>=1} D_i e_{k-i}
        rest = sum(D[i] * hdd[k - i] for i in range(1, k + 1))
        e_k = (N[k] - rest) / D[0]
        c[k + 2] = e_k / ((k + 2) * (k + 1))
    return c


def endpoint_limits(sol: OdeSolution, route="series", offset=None):
    """Acceleration and jerk (downward positive) at t = 0 and t = t*.

    ``route='series'`` uses the Taylor recurrence; ``route='dense'`` uses the
    ODE right-hand side on the dense output for a and a one-sided finite
    difference of it for the jerk.
    """
    h0, theta, A_t, B_t, g = sol.params
    t_star = sol.t_star
    v_star = sol.fields["terminal_velocity"]
    if route == "series":
        c_start = case5_series_coefficients(h0, 0.0, h0, theta, A_t, B_t, g)
        c_end = case5_series_coefficients(0.0, -v_star, h0, theta, A_t, B_t, g)
        return {"a0": -2.0 * c_start[2], "j0": -6.0 * c_start[3],
                "a_star": -2.0 * c_end[2], "j_star": -6.0 * c_end[3]}
    if route != "dense":
        raise ValueError(f"unknown route {route!r}")
    accel = _case5_terms(h0, theta, A_t, B_t, g)
    d = offset if offset is not None else 1e-6 * t_star

    def a_at(t):
        h, hd = sol.dense(t)
        return -accel(h, hd)

    a0, a1, a2 = a_at(0.0), a_at(d), a_at(2 * d)
    b0, b1, b2 = a_at(t_star), a_at(t_star - d), a_at(t_star - 2 * d)
    return {"a0": float(a0), "j0": float((-3 * a0 + 4 * a1 - a2) / (2 * d)),
            "a_star": float(b0), "j_star": float((3 * b0 - 4 * b1 + b2) / (2 * d))}


# --- Case 6 ----------------------------------------------------------------

def case6_solve(h0, theta1, theta2, A1, B1, A2, B2, g=9.81, t_end=13.0, rho=1000.0) -> OdeSolution:
    """Pore column in medium 1 draining into medium 2 below it.

    The unknown is h_1; h_2 = (theta1/theta2)(h0 - h_1) and
    p_i = rho h_1 (g + h_1'' + A1 h_1' + B1 |h_1'| h_1').
    """
    r = theta1 / theta2

    def accel(h, hd):
        q = np.abs(hd) * hd
        num = -h * (g + A1 * hd + B1 * q) - r * (h0 - h) * (g + r * A2 * hd + r * r * B2 * q)
        return num / (h + r * r * (h0 - h))

    def rhs(_, y):
        return [y[1], accel(y[0], y[1])]

    def event(_, y):
        return y[0]

    sol = _integrate(rhs, [h0, 0.0], t_end, event, stiff=_stiff(A1, A2, t_end=t_end))

    def evaluate(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tmax = sol.t[-1]
        h, hd = sol.sol(np.clip(t, 0.0, tmax))
        hdd = accel(h, hd)
        p = rho * h * (g + hdd + A1 * hd + B1 * np.abs(hd) * hd)
        after = t > tmax
        h = np.where(after, 0.0, h)
        p = np.where(after, 0.0, p)
        return {"t": t, "h_1": h, "h_2": r * (h0 - h), "p_i": p, "hdot": hd}

    t_star = float(sol.t_events[0][0]) if len(sol.t_events[0]) else None
    return OdeSolution(sol.t, evaluate(sol.t), t_star, sol.y[:, -1], evaluate)


# --- Couette ---------------------------------------------------------------

@dataclass
class CouetteParams:
    delta_over_H: float = 0.1
    L_over_H: float = 0.9
    Da_H: float = 1e-2
    Re_H: float = 10.0
    theta: float = 0.5
    A: float = 150.0
    B: float = 1.75
    gamma_e: float = 1.0
    beta_prime: float = 0.0

    def __post_init__(self):
        if not self.Da_H < 1:
            raise OracleError("far-field solution needs Da_H < 1")

    @property
    def F(self):
        return self.B * np.sqrt(self.theta) / np.sqrt(self.A)

    @property
    def A_prime(self):
        return self.Re_H * self.F / np.sqrt(self.Da_H)

    @property
    def B_prime(self):
        return 1.0 / self.Da_H


def interface_velocity(params: CouetteParams):
    """Normalised tangential velocity at the porous interface."""
    Ap, Bp, ge = params.A_prime, params.B_prime, params.gamma_e
    Hd = 1.0 / params.delta_over_H

    def f(v):
        return -ge * v * np.sqrt(2.0 / 3.0 * Ap * v + Bp) + (1.0 - v) * Hd - params.beta_prime * np.sqrt(Bp) * v

    if not f(0.0) > 0 > f(1.0):
        raise OracleError("interface velocity is not bracketed in [0, 1]")
    return brentq(f, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def couette_profile(y_norm, params: CouetteParams):
    """Normalised horizontal velocity v/v_bottom at y/H (interface at 0)."""
    y = np.asarray(y_norm, dtype=float)
    vi = interface_velocity(params)
    Ap, Bp, ge = params.A_prime, params.B_prime, params.gamma_e
    free = vi - (1.0 - vi) * y / params.delta_over_H
    k = np.sqrt(Bp) / ge
    if Ap == 0.0:
        porous = vi * np.exp(-k * np.maximum(y, 0.0))
    else:
        s = np.sqrt(1.0 + 2.0 / 3.0 * Ap / Bp * vi)
        D = (1.0 + s) / (1.0 - s)
        e = D * np.exp(k * np.maximum(y, 0.0))
        porous = 1.5 * Bp / Ap * (((e - 1.0) / (e + 1.0)) ** 2 - 1.0)
    return np.where(y <= 0.0, free, porous)
