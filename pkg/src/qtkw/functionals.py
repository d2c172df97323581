"""Variational functionals of the prescribed Q/T-curvature problem on S^4_+.

Background: round metric, ``Q_g = 3``, ``T_g = 0``.  For ``u`` with
``du/dnu = 0`` on the equator the problem reads

    lap^2 u - 2 lap u + 6 = 2 Q e^{4u}     in S^4_+
    -d(lap u)/dnu         = 2 T e^{3u}     on S^3

and every solution satisfies ``int Q e^{4u} + int T e^{3u} = 4 pi^2``.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
import weakref

import numpy as np

from . import expr as ex
from .quadrature import QuadRule, Rules, integrate_values
from .sphere import (
    NEUMANN_TOL,
    NotInHError,
    ScalarField,
    field,
    laplace,
    paneitz4,
    tangent_project,
)

FOUR_PI2 = 4.0 * np.pi**2


# ---------------------------------------------------------------------------
# node-value cache: fields are immutable and rules are long-lived

_CACHE: "weakref.WeakKeyDictionary[QuadRule, OrderedDict]" = weakref.WeakKeyDictionary()
_CACHE_SIZE = 96


def _cached(rule: QuadRule, key, compute):
    store = _CACHE.get(rule)
    if store is None:
        store = _CACHE[rule] = OrderedDict()
    hit = store.get(key)
    if hit is not None:
        store.move_to_end(key)
        return hit
    val = compute()
    val.setflags(write=False)
    store[key] = val
    if len(store) > _CACHE_SIZE:
        store.popitem(last=False)
    return val


def values(f, rule: QuadRule) -> np.ndarray:
    f = field(f)
    return _cached(rule, ("val", id(f.expr)), lambda: np.asarray(ex.evaluate(f.expr, rule.points)))


def gradients(f, rule: QuadRule) -> np.ndarray:
    """Tangential gradients at the nodes, ``(N, 5)``."""
    f = field(f)

    def compute():
        amb = ex.evaluate_many(f.partials, rule.points).T
        return tangent_project(rule.points, amb)

    return _cached(rule, ("grad", id(f.expr)), compute)


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, b)


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True, eq=False)
class PrescribedData:
    """Interior curvature ``Q`` and boundary curvature ``T`` (in x1..x4)."""

    Q: ScalarField
    T: ScalarField

    def __post_init__(self):
        object.__setattr__(self, "Q", field(self.Q))
        object.__setattr__(self, "T", field(self.T))
        if 5 in ex.variables(self.T.expr):
            raise ValueError("boundary curvature T may reference x1..x4 only")


@dataclass(frozen=True, eq=False)
class CandidateSolution:
    """A field with vanishing normal derivative on the equator."""

    u: ScalarField
    neumann: float

    @classmethod
    def check(cls, u, rules: Rules | None = None, tol: float = NEUMANN_TOL) -> "CandidateSolution":
        u = field(u)
        worst = neumann_defect(u, rules)
        if worst > tol:
            raise NotInHError(f"field not in H: max |du/dnu| = {worst:.3e} > {tol:.0e}")
        return cls(u, worst)


def neumann_defect(u, rules: Rules | None = None) -> float:
    """``max |du/dnu|`` over the boundary nodes."""
    rules = rules or Rules.from_nodes()
    u = field(u)
    return float(np.max(np.abs(values(ScalarField(u.partials[4]), rules.bd))))


def _solution(u, rules=None) -> ScalarField:
    if isinstance(u, CandidateSolution):
        return u.u
    return CandidateSolution.check(u, rules).u


def manufacture(u, rules: Rules | None = None) -> PrescribedData:
    """The data ``(Q, T)`` for which ``u`` solves the problem exactly."""
    u = _solution(u, rules)
    Q = (paneitz4(u).expr + 6.0) * ex.exp(-4.0 * u.expr) * 0.5
    # -d(lap u)/dnu = +d/dx5 (lap u) at the equator; restrict to x5 = 0
    T_ext = ex.diff(laplace(u).expr, 5) * ex.exp(-3.0 * u.expr) * 0.5
    T = ex.compose(T_ext, (ex.X[1], ex.X[2], ex.X[3], ex.X[4], ex.ZERO))
    return PrescribedData(ScalarField(Q), ScalarField(T))


# ---------------------------------------------------------------------------
# integrals


def curvature_integrals(u, data: PrescribedData, rules: Rules) -> tuple[float, float]:
    """``(int Q e^{4u} dV, int T e^{3u} dS)``."""
    u = field(u)
    nq = integrate_values(values(data.Q, rules.hemi) * np.exp(4.0 * values(u, rules.hemi)), rules.hemi)
    bt = integrate_values(values(data.T, rules.bd) * np.exp(3.0 * values(u, rules.bd)), rules.bd)
    return nq, bt


def gbc_defect(u, data: PrescribedData, rules: Rules) -> float:
    nq, bt = curvature_integrals(u, data, rules)
    return nq + bt - FOUR_PI2


def s_terms(u, rules: Rules) -> tuple[float, float, float]:
    u = field(u)
    h = rules.hemi
    lap = values(laplace(u), h)
    g = gradients(u, h)
    return (
        integrate_values(lap * lap, h),
        2.0 * integrate_values(_dot(g, g), h),
        12.0 * integrate_values(values(u, h), h),
    )


def s_functional(u, rules: Rules) -> float:
    """``int (lap u)^2 + 2 int |grad u|^2 + 12 int u``."""
    return sum(s_terms(u, rules))


def q_bilinear(u, v, rules: Rules) -> float:
    """Quadratic form ``int lap u lap v + 2 int <grad u, grad v>`` (both interior)."""
    u, v = field(u), field(v)
    h = rules.hemi
    return (integrate_values(values(laplace(u), h) * values(laplace(v), h), h)
            + 2.0 * integrate_values(_dot(gradients(u, h), gradients(v, h)), h))


def q_bilinear_operator_form(u, v, rules: Rules) -> float:
    """Same form written with the operators: ``int (P4 u) v + 2 int_{S^3} (P3 u) v``.

    ``P3 u = -1/2 d(lap u)/dnu = 1/2 d(lap u)/dx5`` at the equator.
    """
    u, v = field(u), field(v)
    interior = integrate_values(values(paneitz4(u), rules.hemi) * values(v, rules.hemi), rules.hemi)
    p3 = 0.5 * values(ScalarField(ex.diff(laplace(u).expr, 5)), rules.bd)
    return interior + 2.0 * integrate_values(p3 * values(v, rules.bd), rules.bd)


def energy(u, data: PrescribedData, rules: Rules) -> float:
    """``I(u) = S(u) - N_Q(u) - 4/3 B_T(u)``."""
    nq, bt = curvature_integrals(u, data, rules)
    return s_functional(u, rules) - nq - 4.0 / 3.0 * bt


def weak_residual_terms(u, data: PrescribedData, v, rules: Rules) -> tuple[float, ...]:
    u, v = field(u), field(v)
    h, b = rules.hemi, rules.bd
    vh, vb = values(v, h), values(v, b)
    return (
        integrate_values(values(laplace(u), h) * values(laplace(v), h), h),
        2.0 * integrate_values(_dot(gradients(u, h), gradients(v, h)), h),
        6.0 * integrate_values(vh, h),
        -2.0 * integrate_values(values(data.T, b) * np.exp(3.0 * values(u, b)) * vb, b),
        -2.0 * integrate_values(values(data.Q, h) * np.exp(4.0 * values(u, h)) * vh, h),
    )


def weak_residual(u, data: PrescribedData, v, rules: Rules) -> float:
    return sum(weak_residual_terms(u, data, v, rules))


def scale_of(terms) -> float:
    """Tolerance scale: ``max(1, sum |term|)``."""
    return max(1.0, float(sum(abs(t) for t in terms)))


def s_tilde(u, data: PrescribedData, v, rules: Rules) -> float:
    """``S`` of ``v`` in the metric ``e^{2u} g``, written in background terms."""
    u, v = field(u), field(v)
    h, b = rules.hemi, rules.bd
    interior = integrate_values(values(data.Q, h) * values(v, h) * np.exp(4.0 * values(u, h)), h)
    boundary = integrate_values(values(data.T, b) * values(v, b) * np.exp(3.0 * values(u, b)), b)
    return q_bilinear(v, v, rules) + 4.0 * interior + 4.0 * boundary


def cocycle_terms(u, data: PrescribedData, v, rules: Rules) -> tuple[float, float, float]:
    u, v = field(u), field(v)
    w = ScalarField(u.expr + v.expr)
    return s_functional(w, rules), -s_functional(u, rules), -s_tilde(u, data, v, rules)


def cocycle_defect(u, data: PrescribedData, v, rules: Rules) -> float:
    """``S(u + v) - S(u) - S~(v)``; zero when ``u`` solves the problem for ``data``."""
    return sum(cocycle_terms(u, data, v, rules))
