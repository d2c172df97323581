"""Intrinsic calculus on the upper hemisphere S^4_+ and its equator S^3.

Scalar fields are expressions in the ambient coordinates; only their
restriction to the unit sphere matters.  Every intrinsic quantity is built
from ambient partial derivatives of *some* extension:

* gradient: tangential projection ``(I - p p^T) grad F``;
* Laplace-Beltrami: ``lap F - x^T (Hess F) x - 4 x . grad F`` on ``|x| = 1``
  (the radial part of the flat Laplacian in R^5 removed);
* outward normal derivative at the equator: ``-dF/dx5``.

``laplace_homogeneous`` computes the Laplacian independently as the flat
Laplacian of the degree-0 extension and is kept as a cross-check.

Sign convention: ``laplace`` has nonpositive spectrum, ``laplace(x_i) = -4 x_i``.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from . import expr as ex
from .expr import Expr

SPHERE_TOL = 1e-12
NEUMANN_TOL = 1e-9


class NotInHError(ValueError):
    """Field has nonzero normal derivative on the equator."""


class ScalarField:
    """A smooth function on the hemisphere, given by an ambient expression."""

    def __init__(self, expr: Expr):
        self.expr = expr

    def __repr__(self):
        return f"ScalarField({ex.to_text(self.expr)!r})"

    @cached_property
    def partials(self) -> tuple[Expr, ...]:
        return tuple(ex.diff(self.expr, i) for i in range(1, 6))

    @cached_property
    def extension0(self) -> Expr:
        return ex.homogenize0(self.expr)

    @cached_property
    def laplacian(self) -> "ScalarField":
        return ScalarField(_restrict(_tangential_laplacian(self.expr)))

    def __call__(self, points):
        return ex.evaluate(self.expr, points)


def field(f) -> ScalarField:
    """Coerce text, numbers, expressions or fields to a :class:`ScalarField`."""
    if isinstance(f, ScalarField):
        return f
    if isinstance(f, Expr):
        return ScalarField(f)
    if isinstance(f, str):
        return ScalarField(ex.parse(f))
    if isinstance(f, (int, float, np.floating, np.integer)):
        return ScalarField(ex.const(float(f)))
    raise TypeError(f"cannot make a scalar field from {type(f).__name__}")


def _restrict(e: Expr) -> Expr:
    # r == 1 on the sphere; dropping it keeps the restriction and shrinks the DAG
    return ex.substitute(e, lambda n: ex.ONE if n.kind == "radius" else None)


def _tangential_laplacian(f: Expr) -> Expr:
    x = ex.X
    g = [ex.diff(f, i) for i in range(1, 6)]
    out = ex.ZERO
    for i in range(1, 6):
        for j in range(1, 6):
            h = ex.diff(g[i - 1], j)
            if i == j:
                out = out + (1.0 - x[i] * x[i]) * h
            else:
                out = out - x[i] * x[j] * h
    radial = ex.ZERO
    for i in range(1, 6):
        radial = radial + x[i] * g[i - 1]
    return out - 4.0 * radial


# ---------------------------------------------------------------------------
# points


def sphere_points(p, tol: float = SPHERE_TOL) -> np.ndarray:
    """Validate points of the closed upper hemisphere; returns ``(N, 5)``."""
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    if pts.shape[-1] != 5:
        raise ValueError("sphere points are 5-vectors")
    norms = np.linalg.norm(pts, axis=1)
    if np.any(np.abs(norms - 1) > tol):
        raise ValueError(f"point off the unit sphere (| |x|-1 | = {np.max(np.abs(norms - 1)):.2e})")
    if np.any(pts[:, 4] < -tol):
        raise ValueError("point below the equator (x5 < 0)")
    return pts


def boundary_points(q, tol: float = SPHERE_TOL) -> np.ndarray:
    """Validate points of the equator S^3 (x5 = 0); returns ``(N, 5)``."""
    pts = sphere_points(q, tol)
    if np.any(np.abs(pts[:, 4]) > tol):
        raise ValueError("boundary point with x5 != 0")
    return pts


def tangent_project(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Project ambient vectors ``v`` onto the tangent spaces at ``p`` (both ``(N, 5)``)."""
    return v - np.einsum("ij,ij->i", v, p)[:, None] * p


def tangent_frame(p: np.ndarray) -> np.ndarray:
    """Orthonormal tangent frames at ``p``: shape ``(N, 4, 5)``.

    Householder reflection sending ``p`` to ``-+e5``; its other columns span p-perp.
    """
    p = np.atleast_2d(p)
    sigma = np.where(p[:, 4] >= 0, -1.0, 1.0)
    w = p.copy()
    w[:, 4] -= sigma
    ww = np.einsum("ij,ij->i", w, w)
    eye = np.eye(5)
    h = eye[None] - 2.0 * w[:, :, None] * w[:, None, :] / ww[:, None, None]
    return np.transpose(h[:, :, :4], (0, 2, 1))


# ---------------------------------------------------------------------------
# operators


def ambient_gradient(f, p) -> np.ndarray:
    f = field(f)
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    return ex.evaluate_many(f.partials, pts).T


def grad(f, p) -> np.ndarray:
    """Intrinsic gradient at sphere points ``p``; shape ``(N, 5)`` (or ``(5,)``)."""
    single = np.ndim(p) == 1
    pts = sphere_points(p)
    out = tangent_project(pts, ambient_gradient(f, pts))
    return out[0] if single else out


def laplace(f) -> ScalarField:
    """Laplace-Beltrami operator of the round metric (nonpositive spectrum)."""
    return field(f).laplacian


def laplace_homogeneous(f) -> ScalarField:
    """Independent route: flat Laplacian of the degree-0 extension."""
    F = field(f).extension0
    return ScalarField(sum((ex.diff(ex.diff(F, i), i) for i in range(2, 6)),
                           ex.diff(ex.diff(F, 1), 1)))


def paneitz4(f) -> ScalarField:
    """Paneitz operator of the round 4-sphere, ``lap^2 - 2 lap``."""
    f = field(f)
    lap = laplace(f)
    return ScalarField(laplace(lap).expr - 2.0 * lap.expr)


def normal_derivative(f, q) -> np.ndarray | float:
    """Outward normal derivative (direction ``-e5``) at equator points."""
    single = np.ndim(q) == 1
    pts = boundary_points(q)
    out = -ex.evaluate(field(f).partials[4], pts)
    return float(out[0]) if single else out


def normal_derivative_homogeneous(f, q) -> np.ndarray | float:
    """Same quantity computed from the degree-0 extension."""
    single = np.ndim(q) == 1
    pts = boundary_points(q)
    out = -ex.evaluate(ex.diff(field(f).extension0, 5), pts)
    return float(out[0]) if single else out


def check_neumann(f, q, tol: float = NEUMANN_TOL) -> float:
    """Max ``|df/dnu|`` over ``q``; raises :class:`NotInHError` above ``tol``."""
    worst = float(np.max(np.abs(np.atleast_1d(normal_derivative(f, q)))))
    if worst > tol:
        raise NotInHError(f"field not in H: |du/dnu| = {worst:.3e} on the equator")
    return worst


def paneitz3(f, q) -> np.ndarray | float:
    """Boundary operator ``-1/2 d/dnu (lap f)`` for fields with ``df/dnu = 0``."""
    f = field(f)
    check_neumann(f, q)
    out = -0.5 * np.asarray(normal_derivative(laplace(f), q))
    return float(out) if out.ndim == 0 else out


def dirderiv(X, f, p) -> np.ndarray | float:
    """Action ``X(f) = <X, grad f>`` of a tangent vector field ``X``.

    ``X`` is a callable mapping ``(N, 5)`` points to ``(N, 5)`` vectors.
    """
    single = np.ndim(p) == 1
    pts = sphere_points(p)
    vec = np.asarray(X(pts), dtype=float).reshape(pts.shape)
    out = np.einsum("ij,ij->i", vec, ambient_gradient(f, pts))
    return float(out[0]) if single else out
