import math

import numpy as np
import pytest

from rellich_lab.geometry import (AffineSubspace, BallBoundary, ConvexPolygonBoundary,
                                  GeometryError, PointSet, SlabBoundary, check_condition,
                                  default_samples, eval_field, field_from_descriptor,
                                  sphere_area, sup_distance)


def test_sphere_area_low_dimensions():
    assert sphere_area(1) == pytest.approx(2.0)
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


def fd_laplacian(field, x, h=1e-4):
    lap = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        lap += (field.evaluate(x + e).d - 2 * field.evaluate(x).d + field.evaluate(x - e).d)
    return lap / h**2


@pytest.mark.parametrize("field, x", [
    (PointSet(5), np.array([0.2, -0.1, 0.3, 0.05, 0.1])),
    (AffineSubspace(7, 5), np.array([0.2, -0.1, 0.3, 0.05, 0.1, 0.4, 0.7])),
    (BallBoundary(3, 2.0), np.array([0.3, -0.4, 0.5])),
    (SlabBoundary(1.0, 2), np.array([0.3, 0.5])),
])
def test_laplacian_of_distance_against_differences(field, x):
    fv = field.evaluate(x)
    assert float(fv.lap) == pytest.approx(fd_laplacian(field, x), abs=1e-5)
    assert np.linalg.norm(fv.grad) == pytest.approx(1.0)


def test_point_set_medial_axis():
    field = PointSet(2, ((-0.5, 0.0), (0.5, 0.0)), radius=2.0)
    fv = field.evaluate(np.array([[0.0, 0.3], [0.1, 0.3]]))
    assert list(fv.medial) == [True, False]
    assert fv.lap[0] == 0.0
    with pytest.raises(GeometryError):
        field.radial_model()


def test_points_on_K_are_rejected():
    with pytest.raises(GeometryError):
        PointSet(3).evaluate(np.zeros(3))
    with pytest.raises(GeometryError):
        eval_field(BallBoundary(2), np.array([2.0, 0.0]))
    with pytest.raises(GeometryError):
        PointSet(2, ((3.0, 0.0),))


def test_sup_distance():
    assert sup_distance(SlabBoundary(3.0)) == 1.5
    assert sup_distance(BallBoundary(2, 0.5)) == 0.5
    square = ConvexPolygonBoundary(((0, 0), (2, 0), (2, 2), (0, 2)))
    assert square.sup_distance() == pytest.approx(1.0, abs=1e-9)


def test_polygon_validation_and_distance():
    with pytest.raises(GeometryError):
        ConvexPolygonBoundary(((0, 0), (1, 0)))
    with pytest.raises(GeometryError):
        ConvexPolygonBoundary(((0, 0), (2, 0), (1, 0.1), (2, 2), (0, 2)))
    square = ConvexPolygonBoundary(((0, 0), (2, 0), (2, 2), (0, 2)))
    assert square.distance(np.array([0.5, 1.2])) == pytest.approx(0.5)
    with pytest.raises(GeometryError):
        square.radial_model()


@pytest.mark.parametrize("field, k, s, p", [
    (PointSet(5), 5, 0, 2),
    (AffineSubspace(7, 5), 5, 0, 2),
    (BallBoundary(2), 1, 0, 2),
    (SlabBoundary(1.0), 1, 0, 2),
    (ConvexPolygonBoundary(((0, 0), (2, 0), (1, 2))), 1, 0, 2),
])
def test_condition_holds_on_standard_geometries(field, k, s, p):
    rep = check_condition(field, k, s, p)
    assert rep.passed, rep.message


def test_condition_fails_for_convex_boundary_with_positive_factor():
    rep = check_condition(BallBoundary(2), 1, 1.5, 2)
    assert not rep.passed
    assert "hypothesis violated" in rep.message
    with pytest.raises(GeometryError):
        check_condition(BallBoundary(2), 1, 1.0, 2)


def test_slab_weak_form_sign():
    rep = check_condition(SlabBoundary(2.0), 1, 0, 2)
    assert rep.weak_form_max <= 0 and rep.weak_form_tests > 0


def test_default_samples_are_interior():
    for field in (PointSet(3), AffineSubspace(4, 2), BallBoundary(2), SlabBoundary(1.0, 2),
                  ConvexPolygonBoundary(((0, 0), (2, 0), (1, 2)))):
        x = default_samples(field, 50, seed=1)
        assert np.all(field.contains(x))
        assert np.all(field.evaluate(x).d > 0)


def test_descriptor_round_trip():
    f = field_from_descriptor({"kind": "polygon", "vertices": "0,0;1,0;0,1"})
    assert isinstance(f, ConvexPolygonBoundary)
    assert field_from_descriptor({"kind": "subspace", "N": 7, "k": 5}).k == 5
    with pytest.raises(GeometryError, match="missing key"):
        field_from_descriptor({"kind": "subspace", "N": 7})
    with pytest.raises(GeometryError):
        field_from_descriptor({"kind": "torus"})


def test_radial_models():
    m = AffineSubspace(7, 5, period=2.0).radial_model()
    assert m.constant == pytest.approx(sphere_area(5) * 4.0)
    assert SlabBoundary(2.0).radial_model().singular_points == ((1.0, -2.0),)
    assert BallBoundary(3).radial_model().equality_case is False
