import math

import numpy as np
import pytest

from qtkw import expr as ex
from qtkw.functionals import (
    FOUR_PI2,
    CandidateSolution,
    PrescribedData,
    cocycle_terms,
    curvature_integrals,
    energy,
    gbc_defect,
    manufacture,
    q_bilinear,
    q_bilinear_operator_form,
    s_functional,
    scale_of,
    weak_residual,
    weak_residual_terms,
)
from qtkw.sphere import NotInHError

from conftest import BATTERY, random_sphere_points

PI2 = math.pi**2
TESTS = ("1", "x1", "x1*x2", "x5^2", "x3*x5^2", "x4^2 - x1^2 + x5^4")
DIRECTIONS = ("0.1 - 0.2*x2 + 0.15*x5^2", "0.3*x1*x3 - 0.1*x4", "0.05*x3*x5^2 + 0.2*x1 - 0.1")


@pytest.fixture(scope="module")
def battery(rules16):
    return [(u, manufacture(u, rules16)) for u in BATTERY]


def test_trivial_solution_data(rules16):
    data = manufacture("0", rules16)
    p = random_sphere_points(20, 1)
    assert np.allclose(ex.evaluate(data.Q.expr, p), 3.0, atol=1e-14)
    assert np.allclose(ex.evaluate(data.T.expr, p), 0.0, atol=1e-14)


def test_boundary_data_of_x5_cubed(rules16):
    data = manufacture("x5^3", rules16)
    q = random_sphere_points(20, 2, boundary=True)
    assert np.allclose(ex.evaluate(data.T.expr, q), 3.0, atol=1e-13)
    assert 5 not in ex.variables(data.T.expr)


def test_gbc_battery(battery, rules16):
    for u, data in battery:
        assert abs(gbc_defect(u, data, rules16)) < 1e-7 * FOUR_PI2, u


def test_gbc_split_for_x5_cubed(battery, rules16):
    u, data = battery[2]
    nq, bt = curvature_integrals(u, data, rules16)
    assert abs(nq / (-2 * PI2) - 1) < 1e-8
    assert abs(bt / (6 * PI2) - 1) < 1e-8


def test_gbc_fails_for_wrong_data(rules16):
    data = PrescribedData("3 + 0.5*x5", "0")
    assert abs(gbc_defect("0", data, rules16)) > 1.0


def test_weak_residuals_battery(battery, rules16):
    for u, data in battery:
        for v in TESTS:
            terms = weak_residual_terms(u, data, v, rules16)
            assert abs(sum(terms)) < 1e-6 * scale_of(terms), (u, v)


def test_weak_residual_detects_perturbation(battery, rules16):
    u, data = battery[3]
    bad = PrescribedData(ex.parse("0.2*x1") + data.Q.expr, data.T)
    assert abs(weak_residual(u, bad, "x1", rules16)) > 1e-2


def test_cocycle_battery(battery, rules16):
    for u, data in battery:
        for v in DIRECTIONS:
            terms = cocycle_terms(u, data, v, rules16)
            assert abs(sum(terms)) < 1e-6 * scale_of(terms), (u, v)


def test_cocycle_fails_off_solution(rules16):
    data = manufacture("x5^3", rules16)
    terms = cocycle_terms("0.3*x1", data, DIRECTIONS[0], rules16)
    assert abs(sum(terms)) > 1e-3 * scale_of(terms)


def test_quadratic_form_two_ways(rules16):
    pairs = [("x1", "x1"), ("x1*x2 + x5^2", "x3*x5^2"), ("x5^3 + 0.2*x1", "x4^2 - x1^2 + x5^4")]
    for u, v in pairs:
        a = q_bilinear(u, v, rules16)
        b = q_bilinear_operator_form(u, v, rules16)
        assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def test_quadratic_form_on_first_harmonic(rules16):
    # int x1^2 = |S^4_+| / 5; lap x1 = -4 x1
    assert q_bilinear("x1", "x1", rules16) == pytest.approx(24 * 4 * PI2 / 15, rel=1e-12)
    assert s_functional("x1", rules16) == pytest.approx(24 * 4 * PI2 / 15, rel=1e-12)


def test_energy_first_variation_is_twice_weak_residual(rules16):
    data = PrescribedData("3 + 0.2*x2", "0.5 + 0.1*x1")
    u = ex.parse("0.1*x1 + 0.05*x5^2")
    v = ex.parse("x3*x5^2 + 0.3*x2")
    e = 1e-4
    fd = (energy(u + e * v, data, rules16) - energy(u - e * v, data, rules16)) / (2 * e)
    assert fd == pytest.approx(2 * weak_residual(u, data, v, rules16), rel=1e-6)


def test_candidate_requires_neumann():
    with pytest.raises(NotInHError):
        CandidateSolution.check("x5 + x1")
    assert CandidateSolution.check("x5^2*x1").neumann < 1e-14


def test_boundary_data_may_not_use_x5():
    with pytest.raises(ValueError):
        PrescribedData("3", "x5")
