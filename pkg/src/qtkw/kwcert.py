"""Kazdan-Warner obstruction: residual checks and nonexistence certificates.

Every solution ``u`` of the prescribed-curvature problem satisfies, for each
boundary-preserving conformal field ``X``,

    int X(Q) e^{4u} dV + 4/3 int_{S^3} X(T) e^{3u} dS = 0.

So a field with ``X(Q) >= 0`` and ``X(T) >= 0``, not both identically zero,
certifies that no solution exists.  Certificates are found by a linear
program over the 10-dimensional algebra (optionally conjugated by a conformal
map) and checked on a denser grid.  They are numerical, not formal proofs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import expr as ex
from .conformal import (
    BASIS_NAMES,
    AlgebraElement,
    ConformalMap,
    PushedField,
    basis_fields,
    flow,
    map_of_flow,
)
from .functionals import (
    PrescribedData,
    _dot,
    gradients,
    s_functional,
    values,
)
from .quadrature import QuadRule, Rules, boundary_rule, hemisphere_rule, integrate_values
from .simplex import max_box_cone, min_l1_on_face
from .sphere import ScalarField, field, tangent_frame

TANGENCY_TOL = 1e-10


class NonTangentField(ValueError):
    pass


# ---------------------------------------------------------------------------
# residuals


def _field_at(X, pts: np.ndarray) -> np.ndarray:
    return np.asarray(X(pts), dtype=float).reshape(pts.shape)


def _check_tangent(X, rules: Rules) -> tuple[np.ndarray, np.ndarray]:
    xi = _field_at(X, rules.hemi.points)
    xb = _field_at(X, rules.bd.points)
    scale = 1.0 + np.max(np.abs(xi))
    if np.max(np.abs(_dot(xi, rules.hemi.points))) > TANGENCY_TOL * scale:
        raise NonTangentField("vector field is not tangent to the sphere")
    if np.max(np.abs(xb[:, 4])) > TANGENCY_TOL * scale:
        raise NonTangentField("vector field does not preserve the equator")
    return xi, xb


def derivative_values(X, f, rule: QuadRule) -> np.ndarray:
    """``X(f)`` at the nodes of ``rule``."""
    return _dot(_field_at(X, rule.points), gradients(f, rule))


# A field with X(Q) = 0 identically (by symmetry) leaves only round-off in
# both the residual and its absolute counterpart.  The floor is the round-off
# scale of <X, grad Q>, so such entries read as ~0 instead of noise/noise.
ROUNDOFF_FLOOR = float(np.sqrt(np.finfo(float).eps))


@dataclass(frozen=True)
class KWTerms:
    interior: float       # int X(Q) e^{4u}
    boundary: float       # 4/3 int X(T) e^{3u}
    absolute: float       # same with |X(Q)|, |X(T)|
    magnitude: float      # same with |X| |grad Q|, |X| |grad T|

    @property
    def raw(self) -> float:
        return self.interior + self.boundary

    @property
    def normalization(self) -> float:
        return self.absolute + ROUNDOFF_FLOOR * self.magnitude + 1e-300

    @property
    def normalized(self) -> float:
        return self.raw / self.normalization


def kw_terms(u, data: PrescribedData, X, rules: Rules) -> KWTerms:
    if not callable(X):
        X = AlgebraElement(X)
    u = field(u)
    xi, xb = _check_tangent(X, rules)
    h, b = rules.hemi, rules.bd
    gq, gt = gradients(data.Q, h), gradients(data.T, b)
    eq, et = np.exp(4.0 * values(u, h)), np.exp(3.0 * values(u, b))
    xq, xt = _dot(xi, gq) * eq, _dot(xb, gt) * et
    mq = np.linalg.norm(xi, axis=1) * np.linalg.norm(gq, axis=1) * eq
    mt = np.linalg.norm(xb, axis=1) * np.linalg.norm(gt, axis=1) * et
    k = 4.0 / 3.0
    return KWTerms(
        integrate_values(xq, h), k * integrate_values(xt, b),
        integrate_values(np.abs(xq), h) + k * integrate_values(np.abs(xt), b),
        integrate_values(mq, h) + k * integrate_values(mt, b),
    )


def kw_residual(u, data: PrescribedData, X, rules: Rules) -> tuple[float, float]:
    """``(raw, normalized)`` Kazdan-Warner residual for the field ``X``
    (an :class:`AlgebraElement`, coefficient vector, or pushed-forward field)."""
    t = kw_terms(u, data, X, rules)
    return t.raw, t.normalized


@dataclass(frozen=True)
class KWEntry:
    name: str
    raw: float
    normalization: float
    normalized: float


@dataclass(frozen=True)
class KWReport:
    entries: tuple[KWEntry, ...]
    params: tuple[tuple[int, ...], tuple[int, ...]]

    @property
    def max_normalized(self) -> float:
        return max(abs(e.normalized) for e in self.entries)

    def passes(self, tol: float = 1e-7) -> bool:
        return self.max_normalized < tol


def kw_report(u, data: PrescribedData, rules: Rules, psi: ConformalMap | None = None) -> KWReport:
    """Residuals for all ten basis fields (pushed forward by ``psi`` if given)."""
    entries = []
    for j, name in enumerate(BASIS_NAMES):
        X = AlgebraElement.basis(j)
        if psi is not None:
            X, name = PushedField(psi, X), f"Psi*{name}"
        t = kw_terms(u, data, X, rules)
        entries.append(KWEntry(name, t.raw, t.normalization, t.normalized))
    return KWReport(tuple(entries), (rules.hemi.params, rules.bd.params))


# ---------------------------------------------------------------------------
# derivatives along conformal orbits


@dataclass(frozen=True)
class OrbitDefects:
    d1: float
    d2: float
    d3: float
    scale: float

    def __iter__(self):
        return iter((self.d1, self.d2, self.d3))


def _orbit_values(u: ScalarField, data: PrescribedData, c: AlgebraElement, t: float, rules: Rules):
    h, b = rules.hemi, rules.bd
    fi = flow(c, h.points, t)
    fb = flow(c, b.points, t)
    ut_i = ex.evaluate(u.expr, fi.endpoint) + fi.factor
    ut_b = ex.evaluate(u.expr, fb.endpoint) + fb.factor
    nq = integrate_values(values(data.Q, h) * np.exp(4.0 * ut_i), h)
    bt = integrate_values(values(data.T, b) * np.exp(3.0 * ut_b), b)
    psi = map_of_flow(c, t)
    ut = ScalarField(psi.pull(u.expr) + psi.factor_expr)
    return nq, bt, s_functional(ut, rules)


def orbit_derivative_check(u, data: PrescribedData, c, h: float, rules: Rules) -> OrbitDefects:
    """Centered differences along ``u_t = u o phi_t + P_t`` against the
    first-order formulas.

    ``d1 = dN_Q/dt + int X(Q) e^{4u}``, ``d2 = dB_T/dt + int X(T) e^{3u}``,
    ``d3 = dS/dt``; all vanish as ``h -> 0``.
    """
    if not 1e-4 <= abs(h) <= 1e-2:
        raise ValueError("orbit step must satisfy 1e-4 <= |h| <= 1e-2")
    u = field(u)
    c = c if isinstance(c, AlgebraElement) else AlgebraElement(c)
    plus = _orbit_values(u, data, c, h, rules)
    minus = _orbit_values(u, data, c, -h, rules)
    hemi, bd = rules.hemi, rules.bd
    xq = integrate_values(derivative_values(c, data.Q, hemi) * np.exp(4.0 * values(u, hemi)), hemi)
    xt = integrate_values(derivative_values(c, data.T, bd) * np.exp(3.0 * values(u, bd)), bd)
    d1 = (plus[0] - minus[0]) / (2 * h) + xq
    d2 = (plus[1] - minus[1]) / (2 * h) + xt
    d3 = (plus[2] - minus[2]) / (2 * h)
    return OrbitDefects(d1, d2, d3, max(1.0, abs(s_functional(u, rules))))


def observed_order(coarse: float, fine: float, floor: float) -> float | None:
    """``log2`` of the defect ratio under step halving; ``None`` when both
    defects sit below ``floor`` (nothing left to converge)."""
    if abs(coarse) <= floor and abs(fine) <= floor:
        return None
    if fine == 0.0:
        return math.inf
    return math.log2(abs(coarse) / abs(fine))


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class CertifyOptions:
    eps_obj: float = 1e-6
    eps_verify: float = 1e-9      # relative to the verification scale
    eps_strict: float = 1e-6      # relative to the verification scale
    psi: ConformalMap | None = None
    fine: Rules | None = None
    max_rounds: int = 8
    cuts_per_round: int = 400
    polish_starts: int = 6        # local minimizations per domain; 0 disables


@dataclass(frozen=True)
class Margins:
    interior_min: float
    boundary_min: float
    maximum: float
    scale: float
    samples: tuple[int, int]


@dataclass(frozen=True)
class Certificate:
    c: AlgebraElement
    psi: ConformalMap | None
    objective: float
    coarse_margins: tuple[float, float]
    margins: Margins
    polished_min: tuple[float, float]
    rounds: int

    @property
    def direction(self) -> np.ndarray:
        return self.c.c / np.max(np.abs(self.c.c))


@dataclass(frozen=True)
class NoneFound:
    """No certificate; this says nothing about existence of solutions."""

    reason: str
    objective: float
    c: AlgebraElement | None = None
    margins: Margins | None = None


def _basis_at(pts: np.ndarray, psi: ConformalMap | None) -> np.ndarray:
    """Basis fields (or their pushforwards) at ``pts``: ``(10, N, 5)``."""
    if psi is None or psi.is_identity:
        return basis_fields(pts)
    q = psi.inverse(pts)
    jac = psi.jacobian(q)
    return np.einsum("nij,knj->kni", jac, basis_fields(q))


def derivative_matrix(f, pts: np.ndarray, psi: ConformalMap | None = None) -> np.ndarray:
    """``M[k, j] = B_j(f)(p_k)``, shape ``(N, 10)``."""
    f = field(f)
    amb = ex.evaluate_many(f.partials, pts).T
    return np.einsum("knj,nj->nk", _basis_at(pts, psi), amb)


def fine_rules(coarse: Rules, factor: float = 10.0) -> Rules:
    """A grid with about ``factor`` times as many nodes as ``coarse``."""
    nt, nt2, npsi = coarse.hemi.params
    s4 = factor ** 0.25
    s3 = factor ** (1.0 / 3.0)
    hemi = hemisphere_rule(math.ceil(nt * s4), math.ceil(nt2 * s4), math.ceil(npsi * s4))
    bt, bpsi = coarse.bd.params
    bd = boundary_rule(math.ceil(bt * s3), math.ceil(bpsi * s3))
    return Rules(hemi, bd)


def verify_certificate(c, data: PrescribedData, fine: Rules, psi: ConformalMap | None = None) -> Margins:
    """Minimum of ``X(Q)`` inside, of ``X(T)`` on the equator, and the overall
    maximum, on the nodes of ``fine``."""
    c = c if isinstance(c, AlgebraElement) else AlgebraElement(c)
    X = c if psi is None else PushedField(psi, c)
    xq = derivative_values(X, data.Q, fine.hemi)
    xt = derivative_values(X, data.T, fine.bd)
    scale = float(np.max(np.abs(xq)) + np.max(np.abs(xt)))
    return Margins(float(xq.min()), float(xt.min()), float(max(xq.max(), xt.max())),
                   scale, (len(fine.hemi), len(fine.bd)))


def accepts(m: Margins, opts: CertifyOptions) -> bool:
    return (m.interior_min >= -opts.eps_verify * m.scale
            and m.boundary_min >= -opts.eps_verify * m.scale
            and m.maximum > opts.eps_strict * m.scale
            and m.maximum > 0.0)


def _transported(rules: Rules, psi: ConformalMap | None) -> tuple[np.ndarray, np.ndarray]:
    if psi is None or psi.is_identity:
        return rules.hemi.points, rules.bd.points
    bd = psi.forward(rules.bd.points)
    bd[:, 4] = 0.0
    return psi.forward(rules.hemi.points), bd


def _onto_domain(p: np.ndarray, boundary: bool) -> np.ndarray:
    p = np.array(p, dtype=float)
    if boundary:
        p[..., 4] = 0.0
    else:
        p[..., 4] = np.abs(p[..., 4])
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def _local_frame(p: np.ndarray, boundary: bool) -> np.ndarray:
    """Orthonormal tangent directions at ``p`` (N, k, 5), inside the equator
    for boundary points."""
    if not boundary:
        return tangent_frame(p)
    q = p.copy()
    q[:, 4] = 0.0
    frame = tangent_frame(q)
    # drop the e5 direction: project it out and re-orthonormalize
    frame[:, :, 4] = 0.0
    out = []
    for f in frame:
        u, s, _ = np.linalg.svd(f.T, full_matrices=False)
        out.append(u[:, :3].T)
    return np.array(out)


_STENCIL_CACHE: dict[int, np.ndarray] = {}


def _stencil(k: int) -> np.ndarray:
    if k not in _STENCIL_CACHE:
        g = np.array(np.meshgrid(*([[-1.0, 0.0, 1.0]] * k), indexing="ij")).reshape(k, -1).T
        _STENCIL_CACHE[k] = g
    return _STENCIL_CACHE[k]


def compass_minimize(objective: Callable[[np.ndarray], np.ndarray], starts: np.ndarray,
                     boundary: bool, radius: float = 0.05, floor: float = 1e-9,
                     max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Compass search for local minima of a vectorized objective on the closed
    hemisphere (or the equator), all starts advanced together."""
    x = _onto_domain(np.atleast_2d(starts), boundary)
    n = len(x)
    val = objective(x)
    step = np.full(n, radius)
    for _ in range(max_iter):
        active = step > floor
        if not active.any():
            break
        frame = _local_frame(x[active], boundary)
        sten = _stencil(frame.shape[1])
        cand = x[active, None, :] + step[active, None, None] * np.einsum("sk,nkd->nsd", sten, frame)
        cand = _onto_domain(cand, boundary)
        m = cand.shape[1]
        cv = objective(cand.reshape(-1, 5)).reshape(-1, m)
        best = np.argmin(cv, axis=1)
        idx = np.flatnonzero(active)
        bv = cv[np.arange(len(idx)), best]
        better = bv < val[idx]
        x[idx[better]] = cand[better, best[better]]
        val[idx[better]] = bv[better]
        step[idx[~better]] *= 0.5
    return x, val


def _field_values(cvec: np.ndarray, pts: np.ndarray, psi: ConformalMap | None) -> np.ndarray:
    return np.einsum("k,knd->nd", cvec, _basis_at(pts, psi))


def field_zeros(cvec: np.ndarray, pts: np.ndarray, psi: ConformalMap | None,
                boundary: bool, count: int = 8) -> np.ndarray:
    """Approximate zeros of the field on the domain, refined from the
    ``count`` grid points where it is smallest."""
    def sq(p):
        v = _field_values(cvec, p, psi)
        return np.einsum("nd,nd->n", v, v)

    starts = pts[_worst(sq(pts), count)]
    x, val = compass_minimize(sq, starts, boundary)
    scale = np.max(sq(pts))
    return x[val <= 1e-4 * scale]


def polish_minima(f, cvec: np.ndarray, starts: np.ndarray, psi: ConformalMap | None,
                  boundary: bool) -> tuple[np.ndarray, np.ndarray]:
    """Local minima of ``X(f)`` reached from ``starts``: (points, values)."""
    return compass_minimize(lambda p: derivative_matrix(f, p, psi) @ cvec, starts, boundary)


def _cut_cloud(p: np.ndarray, boundary: bool) -> np.ndarray:
    """Points at geodesic-ish offsets 1e-1 .. 1e-5 around ``p`` along each
    tangent direction; constrains the LP near a touching minimum at all scales."""
    if len(p) == 0:
        return p
    frame = _local_frame(p, boundary)
    offs = []
    for delta in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5):
        for sgn in (1.0, -1.0):
            offs.append(p[:, None, :] + sgn * delta * frame)
    pts = np.concatenate([o.reshape(-1, 5) for o in offs] + [p])
    return _onto_domain(pts, boundary)


def _worst(vals: np.ndarray, count: int) -> np.ndarray:
    return np.argsort(vals, kind="stable")[:count]


def certify(data: PrescribedData, sampling: Rules | None = None,
            options: CertifyOptions | None = None) -> Certificate | NoneFound:
    """Search the algebra for a field with ``X(Q) >= 0`` and ``X(T) >= 0``.

    The LP maximizes the mean derivative over the coarse samples subject to
    sign constraints and ``|c_j| <= 1``; the sparsest field on the optimal
    face is kept.  It is then checked on the fine grid and by local
    minimization from the worst fine nodes.  Violations become new LP
    constraints, for up to ``max_rounds`` rounds.  Raises :class:`LPError`
    on a numerical failure of the LP itself.
    """
    opts = options or CertifyOptions()
    sampling = sampling or Rules.from_nodes(6, 6, 12)
    if len(sampling.hemi) < 500 or len(sampling.bd) < 200:
        raise ValueError("certify needs at least 500 interior and 200 boundary samples")
    fine = opts.fine or fine_rules(sampling)
    psi = opts.psi

    # With a conjugating map, sample at the images of the grids: there the
    # pushed basis sees the pulled-back data on the symmetric grid.
    s_int, s_bd = _transported(sampling, psi)
    f_int, f_bd = _transported(fine, psi)
    if psi is not None:
        f_int = np.vstack([f_int, fine.hemi.points])
        f_bd = np.vstack([f_bd, fine.bd.points])
    A_int = derivative_matrix(data.Q, s_int, psi)
    A_bd = derivative_matrix(data.T, s_bd, psi)
    gvec = A_int.mean(axis=0) + A_bd.mean(axis=0)
    F_int = derivative_matrix(data.Q, f_int, psi)
    F_bd = derivative_matrix(data.T, f_bd, psi)
    rows = np.vstack([A_int, A_bd])

    objective, cvec, polished = 0.0, None, (math.inf, math.inf)
    for rnd in range(1, opts.max_rounds + 1):
        objective = max_box_cone(gvec, rows).objective
        if objective <= opts.eps_obj:
            return NoneFound(f"LP objective {objective:.3e} <= {opts.eps_obj:.0e}", objective)
        cvec = min_l1_on_face(gvec, rows, objective * (1.0 - 1e-9)).x
        xq, xt = F_int @ cvec, F_bd @ cvec
        scale = float(np.max(np.abs(xq)) + np.max(np.abs(xt)))
        tol = opts.eps_verify * scale
        bad_i = np.flatnonzero(xq < -tol)
        bad_b = np.flatnonzero(xt < -tol)
        if bad_i.size or bad_b.size:
            worst_i = bad_i[_worst(xq[bad_i], opts.cuts_per_round)]
            worst_b = bad_b[_worst(xt[bad_b], opts.cuts_per_round)]
            rows = np.vstack([rows, F_int[worst_i], F_bd[worst_b]])
            continue
        if opts.polish_starts <= 0:
            break
        # near-feasible fields violate next to their own zeros, where X(f)
        # is linear in the offset; start there as well as at the worst nodes
        zi = field_zeros(cvec, f_int, psi, False)
        zb = field_zeros(cvec, f_bd, psi, True)
        si = np.vstack([f_int[_worst(xq, opts.polish_starts)], zi, zb])
        sb = np.vstack([f_bd[_worst(xt, opts.polish_starts)], zb])
        pi, vi = polish_minima(data.Q, cvec, si, psi, False)
        pb, vb = polish_minima(data.T, cvec, sb, psi, True)
        polished = (float(vi.min()), float(vb.min()))
        if min(polished) >= -tol:
            break
        cut_i = np.vstack([pi[vi < -tol], zi, zb])
        cut_b = np.vstack([pb[vb < -tol], zb])
        rows = np.vstack([rows,
                          derivative_matrix(data.Q, _cut_cloud(cut_i, False), psi),
                          derivative_matrix(data.T, _cut_cloud(cut_b, True), psi)])
    else:
        c = AlgebraElement(cvec)
        return NoneFound(f"no sign-definite field after {opts.max_rounds} refinement rounds",
                         objective, c, verify_certificate(c, data, fine, psi))

    c = AlgebraElement(cvec)
    margins = verify_certificate(c, data, fine, psi)
    coarse = (float((A_int @ cvec).min()), float((A_bd @ cvec).min()))
    if not accepts(margins, opts):
        return NoneFound("verification rejected the LP solution", objective, c, margins)
    return Certificate(c, psi, objective, coarse, margins, polished, rnd)
