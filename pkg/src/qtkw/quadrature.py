"""Product quadrature on the hemisphere S^4_+ and the equator S^3.

Equator: Hopf coordinates ``w = (cos a cos s1, cos a sin s1, sin a cos s2, sin a sin s2)``.
With ``t = cos 2a`` the area element is ``dt ds1 ds2 / 4``; Gauss-Legendre in
``t`` and the periodic trapezoid rule in both angles.

Hemisphere: ``x = (sin th * w, cos th)`` with ``dV = sin^3 th dth dS(w)``;
Gauss-Legendre in ``th`` on ``[0, pi/2]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import expr as ex
from .expr import EvaluationError

HEMISPHERE_VOLUME = 4.0 * np.pi**2 / 3.0
EQUATOR_AREA = 2.0 * np.pi**2

# (n_theta, n_t, n_psi); see README for the accuracy study behind this choice
DEFAULT_NODES = (16, 16, 32)


class IntegrationError(ArithmeticError):
    def __init__(self, node: int, point: np.ndarray, cause: str):
        super().__init__(f"integrand failed at node {node} ({np.array2string(point, precision=6)}): {cause}")
        self.node = node
        self.point = point


@dataclass(frozen=True, eq=False)
class QuadRule:
    domain: str  # "hemisphere" or "boundary"
    points: np.ndarray
    weights: np.ndarray
    params: tuple[int, ...]

    def __len__(self):
        return len(self.weights)

    def __repr__(self):
        return f"QuadRule({self.domain}, params={self.params}, nodes={len(self)})"


@dataclass(frozen=True, eq=False)
class Rules:
    """A matching pair of interior and boundary rules."""

    hemi: QuadRule
    bd: QuadRule

    @classmethod
    def from_nodes(cls, n_theta: int = DEFAULT_NODES[0], n_t: int = DEFAULT_NODES[1],
                   n_psi: int = DEFAULT_NODES[2]) -> "Rules":
        return cls(hemisphere_rule(n_theta, n_t, n_psi), boundary_rule(n_t, n_psi))

    @classmethod
    def with_n(cls, n: int) -> "Rules":
        """The CLI convention ``--nodes N``: ``(N, N, 2N)``."""
        return cls.from_nodes(n, n, 2 * n)


def _check(n: int, low: int, name: str):
    if int(n) != n or n < low:
        raise ValueError(f"{name} must be an integer >= {low}, got {n}")


def _gauss(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


@lru_cache(maxsize=16)
def boundary_rule(n_t: int, n_psi: int) -> QuadRule:
    _check(n_t, 2, "n_t")
    _check(n_psi, 4, "n_psi")
    t, wt = _gauss(n_t, -1.0, 1.0)
    psi = 2.0 * np.pi * np.arange(n_psi) / n_psi
    wpsi = 2.0 * np.pi / n_psi
    ca = np.sqrt((1.0 + t) / 2.0)
    sa = np.sqrt((1.0 - t) / 2.0)
    T, P1, P2 = np.meshgrid(np.arange(n_t), psi, psi, indexing="ij")
    T = T.ravel()
    pts = np.zeros((T.size, 5))
    pts[:, 0] = ca[T] * np.cos(P1.ravel())
    pts[:, 1] = ca[T] * np.sin(P1.ravel())
    pts[:, 2] = sa[T] * np.cos(P2.ravel())
    pts[:, 3] = sa[T] * np.sin(P2.ravel())
    weights = 0.25 * wt[T] * wpsi * wpsi
    pts.setflags(write=False)
    weights.setflags(write=False)
    return QuadRule("boundary", pts, weights, (n_t, n_psi))


@lru_cache(maxsize=16)
def hemisphere_rule(n_theta: int, n_t: int, n_psi: int) -> QuadRule:
    _check(n_theta, 2, "n_theta")
    bd = boundary_rule(n_t, n_psi)
    th, wth = _gauss(n_theta, 0.0, np.pi / 2)
    s, c = np.sin(th), np.cos(th)
    m = len(bd)
    pts = np.empty((n_theta * m, 5))
    pts[:, :4] = (s[:, None, None] * bd.points[None, :, :4]).reshape(-1, 4)
    pts[:, 4] = np.repeat(c, m)
    weights = (wth * s**3)[:, None] * bd.weights[None, :]
    weights = weights.ravel()
    pts.setflags(write=False)
    weights.setflags(write=False)
    return QuadRule("hemisphere", pts, weights, (n_theta, n_t, n_psi))


def pairwise_sum(values: np.ndarray) -> float:
    """Sum in a fixed binary tree over the node order (bit-stable)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0.0
    while v.size > 1:
        if v.size % 2:
            v = np.append(v, 0.0)
        v = v[0::2] + v[1::2]
    return float(v[0])


def node_values(f, rule: QuadRule) -> np.ndarray:
    """Evaluate an integrand at all nodes; ``f`` is an Expr, ScalarField, text,
    number, or a callable on ``(N, 5)`` arrays."""
    from .sphere import ScalarField  # local: sphere does not depend on quadrature

    try:
        if isinstance(f, (int, float)):
            return np.full(len(rule), float(f))
        if isinstance(f, str):
            f = ex.parse(f)
        if isinstance(f, ScalarField):
            f = f.expr
        if isinstance(f, ex.Expr):
            vals = ex.evaluate(f, rule.points)
        else:
            vals = np.broadcast_to(np.asarray(f(rule.points), dtype=float), (len(rule),))
    except EvaluationError as err:
        raise IntegrationError(err.index, rule.points[err.index], err.message) from err
    bad = ~np.isfinite(vals)
    if bad.any():
        k = int(np.argmax(bad))
        raise IntegrationError(k, rule.points[k], "non-finite value")
    return vals


def integrate(f, rule: QuadRule) -> float:
    """``sum_i w_i f(p_i)`` with pairwise summation in node order."""
    return pairwise_sum(rule.weights * node_values(f, rule))


def integrate_values(values: np.ndarray, rule: QuadRule) -> float:
    return pairwise_sum(rule.weights * np.asarray(values, dtype=float))
