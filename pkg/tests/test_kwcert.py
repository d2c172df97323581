import math

import numpy as np
import pytest

from qtkw import expr as ex
from qtkw.conformal import AlgebraElement, ConformalMap
from qtkw.functionals import PrescribedData, manufacture
from qtkw.kwcert import (
    Certificate,
    CertifyOptions,
    NoneFound,
    NonTangentField,
    accepts,
    certify,
    derivative_values,
    fine_rules,
    kw_report,
    kw_residual,
    observed_order,
    orbit_derivative_check,
    verify_certificate,
)
from qtkw.quadrature import Rules

from conftest import BATTERY, random_sphere_points

X1 = np.eye(10)[6]


@pytest.fixture(scope="module")
def battery(rules16):
    return [(u, manufacture(u, rules16)) for u in BATTERY]


@pytest.fixture(scope="module")
def sampling():
    return Rules.from_nodes(6, 6, 12)


def test_kw_identity_on_battery(battery, rules16):
    for u, data in battery:
        report = kw_report(u, data, rules16)
        assert len(report.entries) == 10
        assert report.passes(1e-7), (u, report.max_normalized)


def test_kw_identity_for_pushed_fields(battery, rules16):
    psi = ConformalMap.from_params([0.2, -0.1, 0.0, 0.3], [(1, 3, 0.7)])
    u, data = battery[4]
    report = kw_report(u, data, rules16, psi)
    assert report.entries[0].name == "Psi*J12"
    assert report.passes(1e-7)


def test_corrupted_data_fails(battery, rules16):
    u, data = battery[3]
    bad = PrescribedData(data.Q.expr + ex.parse("0.1*x1"), data.T)
    report = kw_report(u, bad, rules16)
    assert report.max_normalized > 1e-3
    assert not report.passes()


def test_residual_is_linear_in_field(battery, rules16):
    u, data = battery[4]
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=10), rng.normal(size=10)
    bad = PrescribedData(data.Q.expr + ex.parse("0.1*x1*x2 + 0.2*x3"), data.T)
    ra, _ = kw_residual(u, bad, a, rules16)
    rb, _ = kw_residual(u, bad, b, rules16)
    rab, _ = kw_residual(u, bad, 2 * a - 3 * b, rules16)
    assert abs(rab - (2 * ra - 3 * rb)) < 1e-12 * (abs(ra) + abs(rb))


def test_kw_residual_closed_form(rules16):
    # u = 0, Q = 3 + x1, T = 0: int X1(Q) = int (1 - x1^2) = |S^4_+| (1 - 1/5)
    data = PrescribedData("3 + x1", "0")
    raw, normalized = kw_residual("0", data, X1, rules16)
    assert raw == pytest.approx(4 * math.pi**2 / 3 * 0.8, rel=1e-12)
    assert normalized == pytest.approx(1.0, rel=1e-7)


def test_non_tangent_field_rejected(rules16):
    data = PrescribedData("3 + x1", "0")
    with pytest.raises(NonTangentField):
        kw_residual("0", data, lambda p: np.tile([1.0, 0, 0, 0, 0], (len(p), 1)), rules16)
    with pytest.raises(NonTangentField):
        # tangent to S^4 but moves the equator
        kw_residual("0", data, lambda p: np.eye(5)[4] - p[:, 4:5] * p, rules16)


def test_derivative_values_closed_form(rules16):
    # X1 = e1 - x1 x (tangential part of e1); X1(x1) = 1 - x1^2
    f = "3 + 0.1*x1"
    vals = derivative_values(AlgebraElement(X1), f, rules16.hemi)
    assert np.allclose(vals, 0.1 * (1 - rules16.hemi.points[:, 0] ** 2), atol=1e-15)


def test_observed_order():
    assert observed_order(4e-6, 1e-6, 1e-12) == pytest.approx(2.0)
    assert observed_order(1e-14, 1e-15, 1e-12) is None
    assert observed_order(1e-6, 0.0, 1e-12) == math.inf


def test_orbit_defects_converge(rules12):
    u = "0.2*x1*x2 + 0.1*x5^3"
    data = PrescribedData("3 + 0.1*x1 + 0.2*x2*x5", "1 + 0.3*x1*x2")
    c = AlgebraElement([0.3, 0, 0, 0, 0, 0.2, 0.5, -0.4, 0.1, 0])
    h = 1e-3
    coarse = orbit_derivative_check(u, data, c, h, rules12)
    fine = orbit_derivative_check(u, data, c, h / 2, rules12)
    floor = 1e-10 * coarse.scale
    for k in range(2):
        order = observed_order(tuple(coarse)[k], tuple(fine)[k], floor)
        assert order is None or order >= 1.9
    assert abs(coarse.d3) <= 1e-4 * coarse.scale


def test_orbit_step_range(rules12):
    with pytest.raises(ValueError):
        orbit_derivative_check("0", PrescribedData("3", "0"), X1, 0.1, rules12)


def test_certificate_for_linear_perturbation(sampling):
    res = certify(PrescribedData("3 + 0.1*x1", "1"), sampling)
    assert isinstance(res, Certificate)
    assert np.allclose(res.direction, X1, atol=1e-6)
    assert res.margins.interior_min >= -1e-9
    assert res.margins.boundary_min >= -1e-9
    assert res.margins.maximum == pytest.approx(0.1, rel=1e-3)


def test_certificate_is_sound_on_random_points(sampling):
    data = PrescribedData("3 + 0.1*x1 - 0.03*x1^3", "1 + 0.05*x1")
    res = certify(data, sampling)
    assert isinstance(res, Certificate)
    p = random_sphere_points(20000, 7)
    q = random_sphere_points(5000, 8, boundary=True)
    gq = ex.evaluate_many([ex.diff(data.Q.expr, i) for i in range(1, 6)], p).T
    gt = ex.evaluate_many([ex.diff(data.T.expr, i) for i in range(1, 6)], q).T
    xq = np.einsum("ij,ij->i", res.c(p), gq)
    xt = np.einsum("ij,ij->i", res.c(q), gt)
    assert xq.min() >= -1e-6 * res.margins.scale
    assert xt.min() >= -1e-6 * res.margins.scale


def test_constant_shift_does_not_change_certificate(sampling):
    a = certify(PrescribedData("3 + 0.1*x1", "1"), sampling)
    b = certify(PrescribedData("7 + 0.1*x1", "-2"), sampling)
    assert isinstance(a, Certificate) and isinstance(b, Certificate)
    assert np.allclose(a.direction, b.direction, atol=1e-9)


def test_round_data_has_no_certificate(sampling):
    res = certify(PrescribedData("3", "0"), sampling)
    assert isinstance(res, NoneFound)
    assert res.objective == 0.0


def test_no_certificate_for_solvable_data(battery, sampling):
    for u, data in battery:
        res = certify(data, sampling)
        assert not isinstance(res, Certificate), u


def test_conjugated_example(sampling):
    psi = ConformalMap.from_params([0.0, 0.5, 0.0, 0.0])
    Q = ex.parse("3") + 0.05 * psi.push(ex.parse("x1"))
    res = certify(PrescribedData(Q, "1"), sampling, CertifyOptions(psi=psi))
    assert isinstance(res, Certificate)
    assert np.allclose(res.direction, X1, atol=1e-6)
    assert res.margins.interior_min >= -1e-9 * res.margins.scale


def test_verifier_rejects_sign_changing_field(sampling):
    data = PrescribedData("3 + 0.1*x1", "1")
    fine = fine_rules(sampling)
    m = verify_certificate(np.eye(10)[0], data, fine)  # J12(Q) = -0.1 x2
    assert m.interior_min < -0.05
    assert not accepts(m, CertifyOptions())
    good = verify_certificate(X1, data, fine)
    assert accepts(good, CertifyOptions())


def test_sampling_must_be_dense_enough():
    with pytest.raises(ValueError):
        certify(PrescribedData("3 + 0.1*x1", "1"), Rules.from_nodes(2, 2, 4))
