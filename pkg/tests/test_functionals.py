import math

import numpy as np
import pytest
from scipy import integrate as sp_integrate

from rellich_lab.cascade import x_chain
from rellich_lab.constants import InequalityParams, ParameterError
from rellich_lab.functionals import (ClosedFormProfile, DegenerateProfileError, GridProfile,
                                     HypothesisError, ProfileError, hardy_deficit,
                                     hardy_special_nd, j_functional, lemma_gap, radial_laplacian,
                                     radial_model, random_bumps, rellich_quotient, search_D)
from rellich_lab.geometry import (AffineSubspace, BallBoundary, ConvexPolygonBoundary, PointSet,
                                  SlabBoundary, sphere_area)


def bump(a=0.1, b=0.9):
    # (x-a)^4 (b-x)^4 on [a, b]
    def u(x):
        x = np.asarray(x, float)
        return np.where((x > a) & (x < b), (x - a) ** 4 * (b - x) ** 4, 0.0)

    def du(x):
        x = np.asarray(x, float)
        v = 4 * (x - a) ** 3 * (b - x) ** 4 - 4 * (x - a) ** 4 * (b - x) ** 3
        return np.where((x > a) & (x < b), v, 0.0)

    def d2u(x):
        x = np.asarray(x, float)
        v = (12 * (x - a) ** 2 * (b - x) ** 4 - 32 * (x - a) ** 3 * (b - x) ** 3
             + 12 * (x - a) ** 4 * (b - x) ** 2)
        return np.where((x > a) & (x < b), v, 0.0)
    return ClosedFormProfile(u, du, d2u, (a, b))


def quad(f, a, b):
    return sp_integrate.quad(f, a, b, epsabs=0, epsrel=1e-13, limit=200)[0]


def test_hardy_terms_against_scipy():
    prof = bump()
    N = 5
    rep = hardy_deficit(prof, PointSet(N), InequalityParams(p=2, k=N, m=1))
    w = sphere_area(N)
    grad = quad(lambda x: float(prof.du(x)) ** 2 * x ** (N - 1) * w, 0.1, 0.9)
    base = quad(lambda x: float(prof.u(x)) ** 2 * x ** (N - 3) * w, 0.1, 0.9)
    zeta = quad(lambda x: float(prof.u(x)) ** 2 * x ** (N - 3) * w * x_chain(x, 1)[0] ** 2,
                0.1, 0.9)
    assert rep.terms["grad"] == pytest.approx(grad, rel=1e-10)
    assert rep.terms["u"] == pytest.approx(base, rel=1e-10)
    assert rep.terms["u_zeta"] == pytest.approx(zeta, rel=1e-10)
    assert rep.value == pytest.approx(grad - 2.25 * base - 0.25 * zeta, rel=1e-9)
    assert rep.holds


def test_rellich_quotient_against_scipy_and_homogeneity():
    prof = bump()
    N = 5
    rep = rellich_quotient(prof, PointSet(N), 2)

    def lap(x):
        return float(prof.d2u(x) + (N - 1) / x * prof.du(x))
    num = quad(lambda x: lap(x) ** 2 * x ** (N - 1), 0.1, 0.9)
    den = quad(lambda x: float(prof.u(x)) ** 2 * x ** (N - 5), 0.1, 0.9)
    assert rep.value == pytest.approx(num / den, rel=1e-9)
    assert rep.value >= 25 / 16 and rep.holds
    assert rellich_quotient(prof.scaled(7.5), PointSet(N), 2).value == pytest.approx(
        rep.value, rel=1e-12)


def test_j_functional_terms_are_consistent():
    rep = j_functional(bump(), PointSet(5), 2, 3)
    t = rep.terms
    G = rep.coefficients["G"]
    assert t["J_3"] == pytest.approx(rep.value)
    assert t["J_2"] - t["J_3"] == pytest.approx(G * t["A_3"], rel=1e-12)
    assert t["A_1"] >= t["A_2"] >= t["A_3"] > 0
    assert rep.holds


def test_grid_profile_matches_closed_form():
    prof = bump()
    x = np.linspace(0.1, 0.9, 4001)
    grid = GridProfile.from_function(prof.u, x)
    a = rellich_quotient(prof, PointSet(5), 2).value
    b = rellich_quotient(grid, PointSet(5), 2).value
    assert b == pytest.approx(a, rel=1e-4)
    lap = radial_laplacian(grid, PointSet(5))
    assert np.isfinite(lap(0.5))


def test_profile_validation():
    with pytest.raises(ProfileError):
        ClosedFormProfile(np.sin, np.cos, np.cos, (0.0, 1.0))
    with pytest.raises(ProfileError, match="disagrees"):
        ClosedFormProfile(np.sin, np.cos, np.cos, (0.1, 1.0))
    with pytest.raises(ProfileError, match="too coarse"):
        GridProfile(np.linspace(0.1, 1, 5), np.ones(5))


def test_degenerate_profile():
    zero = ClosedFormProfile(lambda x: 0 * x, lambda x: 0 * x, lambda x: 0 * x, (0.1, 0.5))
    with pytest.raises(DegenerateProfileError):
        rellich_quotient(zero, PointSet(5), 2)


def test_mode_and_hypothesis_errors():
    with pytest.raises(HypothesisError, match="requires k>2p"):
        rellich_quotient(bump(), PointSet(3), 2)
    with pytest.raises(HypothesisError, match="sign condition"):
        hardy_deficit(bump(0.1, 0.5), BallBoundary(2), InequalityParams(p=2, k=1, s=1.5))
    with pytest.raises(ParameterError):
        hardy_deficit(bump(), PointSet(5), InequalityParams(p=2, k=4))
    with pytest.raises(ParameterError, match="below sup d"):
        j_functional(bump(), PointSet(5), 2, 1, D=0.5)


def test_psi_failure_triggers_D_doubling():
    prm = InequalityParams(p=2, k=5, m=1, alpha=-3.0)
    with pytest.raises(HypothesisError, match="weight"):
        hardy_deficit(bump(), PointSet(5), prm)
    rep, D = search_D(lambda D: hardy_deficit(bump(), PointSet(5), prm.with_D(D)), 1.0)
    assert D > 1.0 and rep.hypotheses["D_search"] == D


def test_random_bumps_are_reproducible_and_hold():
    field = AffineSubspace(7, 5)
    model = radial_model(field)
    a = random_bumps(model, 5, seed=4)
    b = random_bumps(model, 5, seed=4)
    for pa, pb in zip(a, b):
        assert pa.support == pb.support
        ra = j_functional(pa, field, 2, 2)
        assert ra.value == j_functional(pb, field, 2, 2).value
        assert ra.holds


def test_slab_bump_across_midpoint():
    rep = j_functional(bump(0.2, 0.9), SlabBoundary(1.0), 2, 2)
    assert rep.holds
    rep = hardy_deficit(bump(0.2, 0.9), SlabBoundary(1.0), InequalityParams(p=2, k=1, m=2))
    assert rep.holds


def test_lemma_gap_nonnegative():
    lam = (5 / 4)
    rep = lemma_gap(bump(), PointSet(5), 2, lam=lam, alpha=0.5, m=1)
    assert rep.value >= -rep.tolerance
    rep = lemma_gap(bump(0.2, 0.9), SlabBoundary(1.0), 2, lam=0.3)
    assert rep.holds


def test_hardy_special_nd():
    rep = hardy_special_nd(bump(), PointSet(5), q=1.0)
    assert rep.holds
    assert rep.coefficients["c0"] == pytest.approx(9 / 4)
    with pytest.raises(ParameterError):
        hardy_special_nd(bump(), PointSet(4), q=2.0)


def test_polygon_has_no_radial_reduction():
    from rellich_lab.geometry import GeometryError
    with pytest.raises(GeometryError):
        rellich_quotient(bump(), ConvexPolygonBoundary(((0, 0), (1, 0), (0, 1))), 2)
