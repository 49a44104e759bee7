import math

import numpy as np
import pytest
from scipy import integrate as sp_integrate

from rellich_lab.quadrature import (QuadratureError, RadialMeasure, adaptive_gk, cascade_oracle,
                                    integrate, integrate_log, log_breakpoints,
                                    trapezoid_with_error)


def test_gk_polynomial_exact():
    res = adaptive_gk(lambda x: x**9 - 3 * x**2, [0.0, 2.0])
    assert res.value == pytest.approx(2**10 / 10 - 8, rel=1e-14)


def test_gk_vector_components_share_mesh():
    res = adaptive_gk(lambda x: np.stack([np.sin(x), np.exp(x)]), [0.0, 1.0, 3.0])
    assert res.value == pytest.approx([1 - math.cos(3), math.e**3 - 1], rel=1e-12)
    assert np.all(res.error <= 1e-10 * np.abs(res.value))


def test_gk_against_scipy_quad():
    f = lambda x: np.exp(-x) * np.cos(5 * x) / (1 + x**2)
    ref, _ = sp_integrate.quad(f, 0, 10, epsabs=0, epsrel=1e-13, limit=200)
    assert adaptive_gk(f, [0.0, 10.0]).value == pytest.approx(ref, rel=1e-10)


def test_gk_errors():
    with pytest.raises(ValueError):
        adaptive_gk(np.sin, [1.0, 0.0])
    with pytest.raises(QuadratureError, match="non-finite"):
        adaptive_gk(lambda x: np.full_like(x, np.nan), [0.0, 1.0])
    # fast oscillation near 0: the budget runs out first
    with pytest.raises(QuadratureError):
        adaptive_gk(lambda x: np.sin(1 / x), [1e-6, 1.0], budget=3000)


def test_radial_weight_from_zero():
    # int_0^1 r^4 r^-2.5 dr = 1/2.5
    res = integrate(lambda r: r**-2.5, RadialMeasure(0.0, 1.0, weight=4))
    assert res.value == pytest.approx(1 / 2.5, rel=1e-10)


def test_log_mode_agrees_with_linear():
    f = lambda r: np.exp(-r) * r**-0.5
    a = integrate(f, RadialMeasure(1e-8, 2.0, weight=2.0))
    b = integrate(f, RadialMeasure(1e-8, 2.0, weight=2.0, mode="log", D=4.0))
    assert a.value == pytest.approx(b.value, rel=1e-10)


def test_measure_validation():
    with pytest.raises(ValueError):
        RadialMeasure(1.0, 0.5)
    with pytest.raises(ValueError):
        RadialMeasure(0.0, 1.0, mode="log")
    with pytest.raises(ValueError):
        RadialMeasure(0.1, 1.0, D=0.5)
    with pytest.raises(ValueError):
        integrate(np.exp, RadialMeasure(0.1, 1.0), tol=1e-15)


def test_log_integrand_deep_interval():
    # int_0^1e4 exp(-u) du through log-values
    res = integrate_log(lambda u: -u, 1.0, (0.0, 1e4), log_integrand=True, jacobian=False)
    assert res.value == pytest.approx(1.0, rel=1e-12)


def test_log_breakpoints_cover_interval():
    pts = log_breakpoints(0.0, 100.0)
    assert pts[0] == 0.0 and pts[-1] == 100.0 and np.all(np.diff(pts) > 0)


def test_trapezoid_error_estimate():
    x = np.linspace(0, 1, 201)
    val, err = trapezoid_with_error(x**2, x)
    assert abs(val - 1 / 3) <= 2 * err


def test_cascade_oracle_small():
    res = cascade_oracle(depths=(1, 2), betas=(0.5,), u_intervals=((0.0, 5.0),))
    assert res["max_rel_error"] <= 1e-10
    assert len(res["rows"]) == 2
