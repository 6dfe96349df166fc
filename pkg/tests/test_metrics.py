import numpy as np
import pytest

from porompm.metrics import convergence_report, convergence_slope, error_metrics


def test_slope_of_quadratic_errors():
    h = np.array([0.1, 0.05, 0.025, 0.0125])
    assert convergence_slope(h, 3.0 * h ** 2) == pytest.approx(2.0, abs=1e-12)


def test_exact_field_has_zero_error():
    v = np.linspace(-1, 0, 11)
    rep = error_metrics(v, v, scale=0.2)
    assert rep.e_rms == 0.0 and rep.e_inf == 0.0


def test_uniform_bias_normalised():
    ref = np.full(20, -0.2)
    rep = error_metrics(ref * 1.01, ref, scale=0.2)
    assert rep.e_rms == pytest.approx(0.01, rel=1e-10)
    assert rep.e_inf == pytest.approx(0.01, rel=1e-10)


def test_zero_normaliser_flagged():
    rep = error_metrics(p_i=3.0, p_i_ref=0.0)
    assert rep.e_p_i == 3.0
    assert rep.absolute["e_p_i"]


def test_pressure_error_relative():
    rep = error_metrics(p_i=-505.0, p_i_ref=-500.0)
    assert rep.e_p_i == pytest.approx(0.01)
    assert not rep.absolute


def test_non_monotone_flagged():
    h = [0.1, 0.05, 0.025]
    rep = convergence_report(h, {"a": [4e-2, 1e-2, 2.5e-3], "b": [1e-2, 2e-2, 5e-3]})
    assert rep.monotone["a"] and not rep.monotone["b"]
    assert rep.slopes["a"] == pytest.approx(2.0)


def test_single_mesh_rejected():
    with pytest.raises(ValueError):
        convergence_slope([0.1], [1.0])
