import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rellich_lab.constants import (InequalityParams, ParameterError, coefficient_identities,
                                   constant_set, cross_check_classical, hardy_H,
                                   hardy_constants, identity_sweep, rellich_Q, rellich_constants)


def test_classical_cross_checks():
    res = cross_check_classical()
    assert res["max_residual"] <= 1e-12
    assert "convex_Q2" in res["checks"] and "rellich_1d_p2" in res["checks"]


def test_point_values_by_hand():
    c = rellich_constants(2, 5)
    assert c["Q"] == pytest.approx(5 / 4, rel=1e-15)
    assert c["Qp"] == pytest.approx(25 / 16, rel=1e-15)
    assert c["G"] == pytest.approx(13 / 8, rel=1e-15)
    assert c["lambda"] == pytest.approx(5 / 4, rel=1e-15)


def test_convex_case_values():
    c = rellich_constants(2, 1)
    assert c["Qp"] == pytest.approx(9 / 16, rel=1e-15)
    assert c["G"] == pytest.approx(5 / 8, rel=1e-15)
    assert c["lambda"] is None


def test_hardy_constants_p2():
    # p = 2: c3 = 1/4 independent of k and s
    Hp, c1, c2, c3 = hardy_constants(InequalityParams(p=2, k=5))
    assert Hp == pytest.approx(9 / 4)
    assert (c1, c2) == (0.0, 0.0)
    assert c3 == pytest.approx(0.25)
    assert hardy_H(2, 5, 1) == 2.0


def test_hardy_rejects_vanishing_H():
    with pytest.raises(ParameterError):
        hardy_constants(InequalityParams(p=2, k=1, s=1))


@given(st.floats(1.05, 5.0), st.floats(0.05, 15.0), st.floats(-5.0, 5.0))
def test_coefficient_identities_vanish(p, margin, beta):
    res = coefficient_identities(p, 2 * p + margin, beta)
    assert res["max_residual"] <= 1e-9


def test_identity_sweep_is_reproducible():
    a = identity_sweep(50, seed=7)
    b = identity_sweep(50, seed=7)
    assert a["max_residual"] == b["max_residual"] <= 1e-9
    assert len(a["rows"]) == 50


def test_identities_require_k_above_2p():
    with pytest.raises(ParameterError, match="requires k>2p"):
        coefficient_identities(2, 3)
    with pytest.raises(ParameterError, match="requires k>2p"):
        rellich_constants(2, 3, strict=True)


def test_signed_Q_below_threshold():
    c = rellich_constants(2, 3)
    assert c["Q"] < 0 and c["Qp"] == pytest.approx(c["Q"] ** 2)
    assert c["alpha_star"] is None
    with pytest.raises(ParameterError):
        rellich_constants(2, 4)


def test_params_validation_collects_errors():
    with pytest.raises(ParameterError) as info:
        InequalityParams(p=1.0, k=5, m=-1).validate()
    msg = str(info.value)
    assert "p must exceed 1" in msg and "m must be" in msg
    with pytest.raises(ParameterError, match="Rellich mode requires k>2p"):
        InequalityParams(p=2, k=3).validate("rellich")
    InequalityParams(p=2, k=1).validate("rellich")


def test_constant_set_is_serialisable():
    cs = constant_set(InequalityParams(p=2, k=5)).to_dict()
    assert cs["Qp"] == pytest.approx(25 / 16)
    assert cs["r0"] == pytest.approx(cs["Qp"], rel=1e-12)
    assert math.isclose(cs["r1"], 0.0, abs_tol=1e-12)
    # p = k + s leaves the Hardy entries empty
    assert constant_set(InequalityParams(p=2, k=5, s=-3)).H is None


def test_rellich_Q_formula():
    assert rellich_Q(3, 9) == pytest.approx(2 * 9 * 3 / 9)
