import numpy as np
import pytest

from porompm.errors import OracleError
from porompm.oracles import (CouetteParams, case3_velocity, case4_solve, case5_series_coefficients, case5_solve,
                             case6_solve, couette_profile, endpoint_limits, interface_velocity, seepage_steady_state)
from porompm.scenarios import case_drag, couette_reference

G = 9.81
DARCY = case_drag(0.5, 0.1, "darcy")
ERGUN = case_drag(0.5, 0.1, "forchheimer")


def test_seepage_darcy_root():
    assert seepage_steady_state(*DARCY) == pytest.approx(0.2, rel=1e-12)


def test_seepage_ergun_root():
    assert ERGUN[0] == pytest.approx(49.05)
    assert ERGUN[1] == pytest.approx(1000.718, rel=1e-6)
    assert seepage_steady_state(*ERGUN) == pytest.approx(0.0774905, rel=1e-6)


def test_seepage_no_drag_rejected():
    with pytest.raises(OracleError):
        seepage_steady_state(0.0, 0.0)


def test_case3_velocity_starts_at_g():
    t = np.array([0.0, 1e-7])
    for A, B in (DARCY, ERGUN):
        v = case3_velocity(t, A, B)
        assert v[0] == 0.0
        assert (v[1] - v[0]) / 1e-7 == pytest.approx(G, rel=1e-4)


def test_case3_velocity_approaches_root():
    for A, B in (DARCY, ERGUN):
        v = case3_velocity([2.0], A, B)
        assert v[0] == pytest.approx(seepage_steady_state(A, B), rel=1e-6)


@pytest.mark.parametrize("drag", [DARCY, ERGUN])
def test_case4_start_and_closure(drag):
    sol = case4_solve(0.3, 0.5, *drag, t_end=10.0)
    ev = sol.evaluate(np.linspace(0.0, sol.t_star, 500))
    assert ev["hddot"][0] == pytest.approx(-G, rel=1e-12)
    assert ev["p_i"][0] == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(ev["h_ff"] + 0.5 * ev["h_fp"], 0.3, atol=1e-10)


@pytest.mark.parametrize("drag,t_star,peak", [(DARCY, 1.833655, 3152.336), (ERGUN, 5.589939, 3641.306)])
def test_case4_trace_shape(drag, t_star, peak):
    sol = case4_solve(0.3, 0.5, *drag, t_end=10.0)
    assert sol.t_star == pytest.approx(t_star, rel=1e-5)
    p = sol.evaluate(np.linspace(0.0, sol.t_star, 4001))["p_i"]
    assert p.max() == pytest.approx(peak, rel=1e-4)
    k = int(np.argmax(p))
    # single hump: rises to the extremum, then decays to zero as h_ff vanishes
    assert np.all(np.diff(p[:k]) >= -1e-9) and np.all(np.diff(p[k:]) <= 1e-9)
    assert abs(p[-1]) < 1e-6 * peak
    assert sol.evaluate([sol.t_star + 1.0])["p_i"][0] == 0.0


def test_case5_darcy_table_values():
    sol = case5_solve(0.3, 0.5, *DARCY)
    assert sol.t_star == pytest.approx(0.9988, rel=1e-3)
    assert sol["terminal_velocity"] == pytest.approx(1.0803, rel=1e-3)
    lim = endpoint_limits(sol)
    assert lim["a0"] == pytest.approx(9.81)
    assert lim["a_star"] == pytest.approx(19.62, rel=5e-4)
    assert lim["a_star"] == pytest.approx(19.6197, abs=0.01)


def test_case5_ergun_table_values():
    sol = case5_solve(0.3, 0.5, *ERGUN)
    assert sol.t_star == pytest.approx(2.8136, rel=1e-3)
    assert sol["terminal_velocity"] == pytest.approx(0.5323, rel=1e-3)
    lim = endpoint_limits(sol)
    assert lim["a0"] == pytest.approx(9.81)
    assert lim["a_star"] == pytest.approx(19.62, rel=5e-4)
    assert lim["j_star"] == pytest.approx(2267.358, rel=5e-3)


def test_case5_frozen_values():
    d = case5_solve(0.3, 0.5, *DARCY)
    e = case5_solve(0.3, 0.5, *ERGUN)
    assert d.t_star == pytest.approx(0.998801, rel=1e-6)
    assert d["terminal_velocity"] == pytest.approx(1.080344, rel=1e-6)
    assert e.t_star == pytest.approx(2.813623, rel=1e-6)
    assert e["terminal_velocity"] == pytest.approx(0.532308, rel=1e-6)
    assert endpoint_limits(d)["j0"] == pytest.approx(-481.1805, rel=1e-6)
    assert endpoint_limits(d)["j_star"] == pytest.approx(904.6208, rel=1e-6)


@pytest.mark.parametrize("drag", [DARCY, ERGUN])
def test_case5_series_and_dense_agree(drag):
    sol = case5_solve(0.3, 0.5, *drag)
    s = endpoint_limits(sol, "series")
    d = endpoint_limits(sol, "dense")
    for k in ("a0", "a_star"):
        assert d[k] == pytest.approx(s[k], rel=1e-6)
    assert d["j_star"] == pytest.approx(s["j_star"], rel=1e-3)


def test_case5_series_start_coefficients():
    A, B = DARCY
    c = case5_series_coefficients(0.3, 0.0, 0.3, 0.5, A, B, G)
    assert c[0] == 0.3 and c[1] == 0.0
    assert -2.0 * c[2] == pytest.approx(G)


def test_case5_pressure_negative():
    sol = case5_solve(0.3, 0.5, *DARCY)
    p = sol.evaluate(np.linspace(0.05, 0.95, 50))["p_i"]
    assert np.all(p < 0)
    assert sol.evaluate([0.5])["p_i"][0] == pytest.approx(-512.642, rel=1e-5)


def _set1():
    A1, B1 = case_drag(0.5, 0.1, "forchheimer")
    A2, B2 = case_drag(0.3, 0.01, "forchheimer")
    return A1, B1, A2, B2


def test_case6_closure_and_limit():
    A1, B1, A2, B2 = _set1()
    sol = case6_solve(0.3, 0.5, 0.3, A1, B1, A2, B2, t_end=200.0)
    ev = sol.evaluate(np.linspace(0.0, sol.t_star, 400))
    np.testing.assert_allclose(0.5 * ev["h_1"] + 0.3 * ev["h_2"], 0.5 * 0.3, atol=1e-10)
    assert ev["h_2"][-1] == pytest.approx(0.5 / 0.3 * 0.3, rel=1e-8)


def test_case6_same_media_continuous():
    A, B = ERGUN
    sol = case6_solve(0.3, 0.5, 0.5, A, B, A, B, t_end=30.0)
    p = sol.evaluate(np.linspace(0.0, sol.t_star, 400))["p_i"]
    # uniform medium: both sides move together and the interface carries no pressure jump
    assert np.max(np.abs(p)) < 1e-6 * 1000 * G * 0.3


def test_couette_plate_value():
    p = couette_reference(1.0)
    assert couette_profile(-0.1, p) == pytest.approx(1.0, abs=1e-12)


def test_couette_interface_continuity():
    for ratio in (1.0, 4.0):
        p = couette_reference(ratio)
        vi = interface_velocity(p)
        eps = 1e-12
        assert couette_profile(-eps, p) == pytest.approx(vi, abs=1e-9)
        assert couette_profile(eps, p) == pytest.approx(vi, abs=1e-9)


def test_couette_frozen_interface_velocity():
    assert interface_velocity(couette_reference(1.0)) == pytest.approx(0.4958930, rel=1e-6)
    assert interface_velocity(couette_reference(4.0)) == pytest.approx(0.3308886, rel=1e-6)


def _slopes(p, eps=1e-7):
    left = (couette_profile(0.0, p) - couette_profile(-eps, p)) / eps
    right = (couette_profile(eps, p) - couette_profile(0.0, p)) / eps
    return left, right


def test_couette_shear_continuous_for_equal_viscosity():
    left, right = _slopes(couette_reference(1.0))
    assert right == pytest.approx(left, rel=1e-4)


def test_couette_kink_for_higher_viscosity():
    p = couette_reference(4.0)
    left, right = _slopes(p)
    # traction balance: mu dv/dy(0-) = mu_e dv/dy(0+)
    assert right * p.gamma_e ** 2 == pytest.approx(left, rel=1e-4)
    assert abs(right - left) > 0.5 * abs(left)


def test_couette_porous_ode_residual():
    p = couette_reference(4.0)
    y = np.linspace(0.01, 0.5, 50)
    e = 1e-4
    v = couette_profile(y, p)
    d2 = (couette_profile(y + e, p) - 2 * v + couette_profile(y - e, p)) / e ** 2
    # gamma_e^2 v'' = A' v^2 + B' v in normalised form
    np.testing.assert_allclose(p.gamma_e ** 2 * d2, p.A_prime * v ** 2 + p.B_prime * v, rtol=1e-4, atol=1e-6)


def test_couette_far_field_decay():
    p = couette_reference(1.0)
    assert couette_profile(p.L_over_H, p) < 1e-4
    assert couette_profile(2.0, p) < 1e-6


def test_couette_requires_small_darcy():
    with pytest.raises(OracleError):
        CouetteParams(Da_H=2.0)
