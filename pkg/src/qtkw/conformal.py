"""Boundary-preserving conformal geometry of the hemisphere.

Stereographic projection from the south pole identifies S^4_+ with the unit
ball B^4 (the equator is fixed pointwise), Moebius automorphisms of the ball
give the conformal diffeomorphisms ``Psi = Pi^-1 o Phi_a o R o Pi``, and the
10-dimensional algebra of boundary-preserving conformal fields is spanned by
six rotations of the first four axes and the four gradient fields
``X_i = e_i - x_i x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from . import expr as ex
from .expr import Expr
from .sphere import tangent_frame

ROTATION_PLANES = ((1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4))
BASIS_NAMES = tuple(f"J{i}{j}" for i, j in ROTATION_PLANES) + tuple(f"X{i}" for i in range(1, 5))
SOUTH_POLE_TOL = 1e-9


class FlowError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# stereographic projection and ball automorphisms


def stereo(p) -> np.ndarray:
    """``(xbar, x5) -> xbar / (1 + x5)``."""
    p = np.asarray(p, dtype=float)
    if np.any(p[..., 4] <= -1.0 + SOUTH_POLE_TOL):
        raise ValueError("stereographic projection undefined near the south pole")
    return p[..., :4] / (1.0 + p[..., 4:5])


def stereo_inv(y) -> np.ndarray:
    """``y -> (2y, 1 - |y|^2) / (1 + |y|^2)``."""
    y = np.asarray(y, dtype=float)
    yy = np.sum(y * y, axis=-1, keepdims=True)
    return np.concatenate([2.0 * y, 1.0 - yy], axis=-1) / (1.0 + yy)


def rotation_from_planes(planes: Sequence[tuple[int, int, float]] = ()) -> np.ndarray:
    """4x4 rotation from ``(i, j, angle)`` triples applied left to right.

    Each factor rotates ``e_i`` toward ``e_j``: ``e_i -> cos e_i + sin e_j``.
    """
    R = np.eye(4)
    for i, j, angle in planes:
        if not (1 <= i <= 4 and 1 <= j <= 4 and i != j):
            raise ValueError(f"bad rotation plane ({i}, {j})")
        G = np.eye(4)
        c, s = math.cos(angle), math.sin(angle)
        G[i - 1, i - 1] = c
        G[j - 1, j - 1] = c
        G[j - 1, i - 1] = s
        G[i - 1, j - 1] = -s
        R = G @ R
    return R


@dataclass(frozen=True, eq=False)
class MobiusMap:
    """``y -> Phi_a(R y)`` on the unit ball."""

    a: np.ndarray = dc_field(default_factory=lambda: np.zeros(4))
    R: np.ndarray = dc_field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(4)
        R = np.asarray(self.R, dtype=float).reshape(4, 4)
        if not np.linalg.norm(a) < 1.0 - 1e-9:
            raise ValueError(f"|a| must be < 1, got {np.linalg.norm(a)}")
        if np.max(np.abs(R.T @ R - np.eye(4))) > 1e-12:
            raise ValueError("R is not orthogonal")
        if np.linalg.det(R) < 0:
            raise ValueError("R must be a proper rotation")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "R", R)


def phi(a, y) -> np.ndarray:
    """Ball automorphism sending 0 to ``a`` and preserving S^3."""
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    ay = np.sum(y * a, axis=-1, keepdims=True)
    yy = np.sum(y * y, axis=-1, keepdims=True)
    aa = float(a @ a)
    return ((1.0 - aa) * y + (1.0 + 2.0 * ay + yy) * a) / (1.0 + 2.0 * ay + aa * yy)


def mobius_ball(m: MobiusMap, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return phi(m.a, y @ m.R.T)


def mobius_ball_inv(m: MobiusMap, z) -> np.ndarray:
    return phi(-m.a, np.asarray(z, dtype=float)) @ m.R


def flat_factor(a, y) -> np.ndarray:
    """Conformal stretch of ``Phi_a`` at ``y``: ``|dPhi_a v| = J |v|``."""
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    ay = np.sum(y * a, axis=-1)
    yy = np.sum(y * y, axis=-1)
    aa = float(a @ a)
    return (1.0 - aa) / (1.0 + 2.0 * ay + aa * yy)


# symbolic counterparts (components as Expr) ---------------------------------


def _dot(u: Sequence[Expr], v: Sequence) -> Expr:
    out = ex.ZERO
    for a, b in zip(u, v):
        out = out + a * b
    return out


def _linear(M: np.ndarray, v: Sequence[Expr]) -> list[Expr]:
    out = []
    for row in M:
        acc = ex.ZERO
        for coef, comp in zip(row, v):
            if coef != 0.0:
                acc = acc + float(coef) * comp
        out.append(acc)
    return out


def stereo_exprs(x: Sequence[Expr] | None = None) -> list[Expr]:
    x = x or ex.X[1:]
    den = 1.0 + x[4]
    return [x[i] / den for i in range(4)]


def stereo_inv_exprs(y: Sequence[Expr]) -> list[Expr]:
    yy = _dot(y, y)
    den = 1.0 + yy
    return [2.0 * c / den for c in y] + [(1.0 - yy) / den]


def phi_exprs(a: np.ndarray, y: Sequence[Expr]) -> list[Expr]:
    a = [float(v) for v in a]
    aa = sum(v * v for v in a)
    ay = _dot(y, a)
    yy = _dot(y, y)
    num_scale = 1.0 + 2.0 * ay + yy
    den = 1.0 + 2.0 * ay + aa * yy
    return [((1.0 - aa) * y[i] + num_scale * a[i]) / den for i in range(4)]


class ConformalMap:
    """``Psi = Pi^-1 o Phi_a o R o Pi`` with inverse and conformal factor.

    ``Psi^* g = exp(2 P) g``.  The inverse uses ``Phi_a^-1 = Phi_{-a}``, which is
    checked by a round trip when the map is built.
    """

    def __init__(self, m: MobiusMap | None = None):
        self.m = m or MobiusMap()
        self._check_inverse()

    @classmethod
    def from_params(cls, a=(0.0, 0.0, 0.0, 0.0), planes=()) -> "ConformalMap":
        return cls(MobiusMap(np.asarray(a, dtype=float), rotation_from_planes(planes)))

    @property
    def is_identity(self) -> bool:
        return not np.any(self.m.a) and np.array_equal(self.m.R, np.eye(4))

    def _check_inverse(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=(16, 4))
        y *= (rng.uniform(0, 0.95, size=16) / np.linalg.norm(y, axis=1))[:, None]
        back = mobius_ball_inv(self.m, mobius_ball(self.m, y))
        err = np.max(np.abs(back - y))
        if err > 1e-10:
            raise ArithmeticError(f"Moebius inverse round trip failed (error {err:.2e})")

    # point maps --------------------------------------------------------

    def forward(self, p) -> np.ndarray:
        return stereo_inv(mobius_ball(self.m, stereo(p)))

    def inverse(self, p) -> np.ndarray:
        return stereo_inv(mobius_ball_inv(self.m, stereo(p)))

    def __call__(self, p) -> np.ndarray:
        return self.forward(p)

    def factor(self, p) -> np.ndarray:
        """Conformal factor ``P(p)`` with ``Psi^* g = e^{2P} g``."""
        y = stereo(p)
        z = y @ self.m.R.T
        w = phi(self.m.a, z)
        yy = np.sum(y * y, axis=-1)
        ww = np.sum(w * w, axis=-1)
        return np.log((1.0 + yy) / (1.0 + ww) * flat_factor(self.m.a, z))

    # symbolic forms ----------------------------------------------------

    @cached_property
    def forward_exprs(self) -> tuple[Expr, ...]:
        y = stereo_exprs()
        return tuple(stereo_inv_exprs(phi_exprs(self.m.a, _linear(self.m.R, y))))

    @cached_property
    def inverse_exprs(self) -> tuple[Expr, ...]:
        w = phi_exprs(-self.m.a, stereo_exprs())
        return tuple(stereo_inv_exprs(_linear(self.m.R.T, w)))

    @cached_property
    def factor_expr(self) -> Expr:
        # log rho(w) + log J(z) - log rho(y), rho(y) = 2 / (1 + |y|^2)
        a = self.m.a
        aa = float(a @ a)
        y = stereo_exprs()
        z = _linear(self.m.R, y)
        w = phi_exprs(a, z)
        yy = _dot(y, y)
        ww = _dot(w, w)
        out = ex.log(1.0 + yy) - ex.log(1.0 + ww)
        if aa > 0:
            az = _dot(z, a)
            out = out + math.log(1.0 - aa) - ex.log(1.0 + 2.0 * az + aa * yy)
        return out

    @cached_property
    def jacobian_exprs(self) -> tuple[tuple[Expr, ...], ...]:
        return tuple(tuple(ex.diff(c, j) for j in range(1, 6)) for c in self.forward_exprs)

    def jacobian(self, p) -> np.ndarray:
        """Ambient Jacobian of the forward map, shape ``(N, 5, 5)``."""
        pts = np.atleast_2d(np.asarray(p, dtype=float))
        flat = [e for row in self.jacobian_exprs for e in row]
        vals = ex.evaluate_many(flat, pts)
        return vals.T.reshape(-1, 5, 5)

    def pull(self, f: Expr) -> Expr:
        """``f o Psi`` as an expression."""
        return ex.compose(f, self.forward_exprs)

    def push(self, f: Expr) -> Expr:
        """``f o Psi^-1`` as an expression."""
        return ex.compose(f, self.inverse_exprs)


def hemi_map(m: MobiusMap) -> ConformalMap:
    return ConformalMap(m)


def conformal_factor(psi: ConformalMap, p) -> np.ndarray:
    return psi.factor(p)


# ---------------------------------------------------------------------------
# the algebra of boundary-preserving conformal fields


class AlgebraElement:
    """``sum_j c_j B_j`` over the fixed basis J12, J13, J14, J23, J24, J34, X1..X4."""

    def __init__(self, c):
        c = np.asarray(c, dtype=float).reshape(10)
        self.c = c

    @classmethod
    def basis(cls, j: int) -> "AlgebraElement":
        """0-based index into the basis order."""
        c = np.zeros(10)
        c[j] = 1.0
        return cls(c)

    @property
    def is_rotation(self) -> bool:
        return not np.any(self.c[6:])

    @property
    def rotation_matrix(self) -> np.ndarray:
        """Generator ``Omega`` (5x5, antisymmetric) of the rotation part: ``J(x) = Omega x``."""
        om = np.zeros((5, 5))
        for cj, (i, j) in zip(self.c[:6], ROTATION_PLANES):
            om[j - 1, i - 1] += cj
            om[i - 1, j - 1] -= cj
        return om

    def __call__(self, p) -> np.ndarray:
        return algebra_eval(self, p)

    def __repr__(self):
        return f"AlgebraElement({np.array2string(self.c, precision=4)})"


def algebra_eval(c, p) -> np.ndarray:
    """Evaluate the field at points ``p`` (``(5,)`` or ``(N, 5)``)."""
    c = c if isinstance(c, AlgebraElement) else AlgebraElement(c)
    p = np.asarray(p)
    if not np.iscomplexobj(p):
        p = p.astype(float)
    out = p @ c.rotation_matrix.T
    g = c.c[6:]
    if np.any(g):
        gx = p[..., :4] @ g
        out = out - gx[..., None] * p
        out[..., :4] += g
    return out


def basis_fields(p) -> np.ndarray:
    """All ten basis fields at ``p``: shape ``(10, N, 5)``."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    return np.stack([algebra_eval(AlgebraElement.basis(j), p) for j in range(10)])


def divergence(c, p) -> np.ndarray:
    """Riemannian divergence; rotations are Killing, ``div X_i = -4 x_i``."""
    c = c if isinstance(c, AlgebraElement) else AlgebraElement(c)
    p = np.asarray(p, dtype=float)
    return -4.0 * (p[..., :4] @ c.c[6:])


class PushedField:
    """Pushforward ``Psi_* X`` of an algebra element by a conformal map."""

    def __init__(self, psi: ConformalMap, c):
        self.psi = psi
        self.element = c if isinstance(c, AlgebraElement) else AlgebraElement(c)

    def __call__(self, p) -> np.ndarray:
        return pushforward(self.psi, self.element, p)

    def __repr__(self):
        return f"PushedField({self.element!r})"


def pushforward(psi: ConformalMap, c, p) -> np.ndarray:
    """``dPsi|_{Psi^-1 p} X(Psi^-1 p)``."""
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    q = psi.inverse(pts)
    v = algebra_eval(c, q)
    out = np.einsum("nij,nj->ni", psi.jacobian(q), v)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# flows

FLOW_STEP = 1e-3
CSTEP = 1e-20  # complex-step size for the flow differential


@dataclass(frozen=True)
class FlowResult:
    endpoint: np.ndarray
    factor: np.ndarray


def _flow_points(c: AlgebraElement, p: np.ndarray, t: float) -> np.ndarray:
    if t == 0.0:
        return p.copy()
    if c.is_rotation:
        return p @ expm(t * c.rotation_matrix).T
    steps = max(1, math.ceil(abs(t) / FLOW_STEP - 1e-12))
    h = t / steps
    x = p.copy()
    for _ in range(steps):
        k1 = algebra_eval(c, x)
        k2 = algebra_eval(c, x + 0.5 * h * k1)
        k3 = algebra_eval(c, x + 0.5 * h * k2)
        k4 = algebra_eval(c, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        x = x / np.sqrt(np.sum(x * x, axis=-1, keepdims=True))  # analytic, for complex steps
    if not np.all(np.isfinite(x)):
        raise FlowError("flow integration produced non-finite values")
    return x


def flow_endpoint(c, p, t: float) -> np.ndarray:
    c = c if isinstance(c, AlgebraElement) else AlgebraElement(c)
    return _flow_points(c, np.atleast_2d(np.asarray(p, dtype=float)), float(t))


def flow(c, p, t: float) -> FlowResult:
    """Flow of ``c`` for time ``t`` from ``p`` with the conformal factor ``P_t(p)``.

    RK4 (step <= 1e-3, renormalized each step; exact exponential for pure
    rotations).  ``P_t = 1/8 log det G`` with ``G`` the Gram matrix of
    ``dphi_t`` on an orthonormal tangent frame, by complex-step differentiation.
    """
    if abs(t) > 0.5:
        raise ValueError("flow time limited to |t| <= 0.5")
    c = c if isinstance(c, AlgebraElement) else AlgebraElement(c)
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    end = _flow_points(c, pts, float(t))
    if np.any(end[:, 4] < -1e-9):
        raise FlowError("flow left the closed hemisphere")
    if t == 0.0:
        factor = np.zeros(len(pts))
    else:
        # the flow is analytic in p, so the complex step gives dphi_t exactly
        frame = tangent_frame(pts)  # (N, 4, 5)
        cols = []
        for k in range(4):
            z = pts + 1j * CSTEP * frame[:, k]
            z = z / np.sqrt(np.sum(z * z, axis=1, keepdims=True))
            cols.append(_flow_points(c, z, t).imag / CSTEP)
        D = np.stack(cols, axis=1)  # (N, 4, 5)
        gram = np.einsum("nik,njk->nij", D, D)
        sign, logdet = np.linalg.slogdet(gram)
        if np.any(sign <= 0):
            raise FlowError("degenerate flow differential")
        factor = 0.125 * logdet  # det(e^{2P} I_4) = e^{8P}
    if single:
        return FlowResult(end[0], np.float64(factor[0]))
    return FlowResult(end, factor)


def map_of_flow(c, t: float) -> ConformalMap:
    """The conformal map ``Psi(a, R)`` that agrees with the time-``t`` flow.

    ``a`` is the image of the north pole in the ball; the columns of ``R`` are
    ``Phi_{-a}`` of the images of ``e_1..e_4`` (equator points, where ``Pi``
    is the identity).  ``R`` is projected onto SO(4) to drop integration error.
    """
    c = c if isinstance(c, AlgebraElement) else AlgebraElement(c)
    anchors = np.vstack([np.eye(5)[4], np.eye(5)[:4]])
    img = flow_endpoint(c, anchors, t)
    a = stereo(img[0])
    cols = phi(-a, img[1:, :4])  # rows are R e_i
    u, _, vt = np.linalg.svd(cols.T)
    R = u @ vt
    return ConformalMap(MobiusMap(a, R))
