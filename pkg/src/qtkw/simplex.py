"""Small dense LPs with few variables and many constraints.

The solver is the primal simplex in active-set form: ``max g.x s.t. G x <= h``
is walked vertex to vertex, keeping a working set of ``n`` linearly
independent tight constraints.  Every step solves the ``n x n`` working-set
system afresh, so there is no accumulated tableau error.  Pricing is Dantzig
with largest-pivot tie breaking; long runs of degenerate steps switch to
Bland's rule, which cannot cycle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr


# Dantzig pricing and largest-pivot ties by default; Bland's rule (which
# cannot cycle) after this many consecutive degenerate steps
BLAND_AFTER = 50


class LPError(ArithmeticError):
    """Numerical failure (singular working set, iteration limit, lost feasibility)."""


class Unbounded(LPError):
    pass


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int


def active_set_max(g, G, h, x0, working=(), tol: float = 1e-10, max_iter: int = 100_000) -> LPResult:
    """``max g.x s.t. G x <= h`` from a feasible point ``x0``.

    ``working`` lists tight, linearly independent constraints at ``x0``.  If
    it has fewer than ``dim x`` entries, ``x0`` is first moved along the null
    space of the working set until enough constraints are tight (a vertex).
    """
    g = np.asarray(g, dtype=float)
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    x = np.array(x0, dtype=float)
    n = g.size
    if G.shape[1] != n:
        raise ValueError("constraint matrix does not match the objective")
    in_W = np.zeros(len(G), dtype=bool)
    in_W[list(working)] = True
    W = list(working)

    row_norm = np.linalg.norm(G, axis=1)
    stall = 0  # consecutive degenerate steps

    def ratio(d):
        rate = G @ d
        rate[in_W] = 0.0
        cand = np.flatnonzero(rate > tol * row_norm * np.linalg.norm(d))
        if cand.size == 0:
            return None, 0.0
        slack = np.maximum(h[cand] - G[cand] @ x, 0.0)
        steps = slack / rate[cand]
        best = steps.min()
        tie = steps <= best + tol * max(1.0, best)
        if stall >= BLAND_AFTER:
            return cand[tie].min(), best
        # largest relative rate keeps the working set well conditioned
        rel = np.where(tie, rate[cand] / row_norm[cand], -np.inf)
        return cand[np.argmax(rel)], best

    while len(W) < n:
        if W:
            _, _, vt = np.linalg.svd(G[W])
            d = vt[len(W)]
        else:
            d = np.eye(n)[0]
        if g @ d < 0:
            d = -d
        i, step = ratio(d)
        if i is None:
            i, step = ratio(-d)
            if i is None or abs(g @ d) > tol:
                raise Unbounded("objective unbounded above")
            d = -d
        x = x + step * d
        in_W[i] = True
        W.append(i)
    W = np.array(W, dtype=int)

    for it in range(max_iter + 1):
        B = G[W]
        try:
            lam = np.linalg.solve(B.T, g)
        except np.linalg.LinAlgError as err:
            raise LPError("singular working set") from err
        neg = np.flatnonzero(lam < -tol)
        if neg.size == 0:
            break
        if it == max_iter:
            raise LPError(f"simplex did not converge in {max_iter} pivots")
        if stall >= BLAND_AFTER:
            p = neg[np.argmin(W[neg])]
        else:
            p = neg[np.argmin(lam[neg])]
        e = np.zeros(n)
        e[p] = -1.0
        try:
            d = np.linalg.solve(B, e)
        except np.linalg.LinAlgError as err:
            raise LPError("singular working set") from err
        i, best = ratio(d)
        if i is None:
            raise Unbounded("objective unbounded above")
        stall = stall + 1 if best <= tol else 0
        x = x + best * d
        in_W[W[p]] = False
        in_W[i] = True
        W[p] = i

    if np.any(G @ x - h > 1e-7 * (1.0 + np.abs(h))):
        raise LPError("simplex lost feasibility")
    return LPResult(x, float(g @ x), it)


def simplex_max(c, A, b, tol: float = 1e-10, max_iter: int = 100_000) -> LPResult:
    """``max c.x s.t. A x <= b, x >= 0`` with ``b >= 0`` (origin feasible)."""
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if c.shape != (n,) or b.shape != (m,):
        raise ValueError("shape mismatch between c, A and b")
    if np.any(b < 0):
        raise ValueError("simplex_max needs b >= 0 (origin feasible)")
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    res = active_set_max(c, G, h, np.zeros(n), np.arange(m, m + n), tol, max_iter)
    return LPResult(np.clip(res.x, 0.0, None), res.objective, res.iterations)


def _clean(g, A):
    """Entries at round-off level relative to the whole problem would become
    O(1) after row scaling; treat them as exact zeros."""
    g = np.asarray(g, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    floor = 1e-12 * max(np.max(np.abs(A), initial=0.0), np.max(np.abs(g), initial=0.0))
    return np.where(np.abs(g) > floor, g, 0.0), np.where(np.abs(A) > floor, A, 0.0)


def max_box_cone(g, A, tol: float = 1e-10) -> LPResult:
    """``max g.c  s.t.  A c >= 0, -1 <= c_j <= 1``.

    Rows are scaled to unit max-norm; ``c = 0`` is the feasible start.
    """
    g, A = _clean(g, A)
    # a variable no constraint sees sits at the box bound favoured by g
    live = np.any(A != 0.0, axis=0)
    cvec = np.where(live, 0.0, np.sign(g))
    A, gl = A[:, live], g[live]
    norms = np.max(np.abs(A), axis=1, initial=0.0)
    rows = A[norms > 0] / norms[norms > 0, None]
    kl = int(live.sum())
    if kl == 0:
        return LPResult(cvec, float(g @ cvec), 0)

    # c = 0 is feasible; start from a maximal independent set of cone rows
    _, R, piv = qr(rows.T, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    r = int(np.sum(diag > 1e-10 * diag[0]))
    G = np.vstack([-rows, np.eye(kl), -np.eye(kl)])
    h = np.concatenate([np.zeros(len(rows)), np.ones(2 * kl)])
    res = active_set_max(gl, G, h, np.zeros(kl), np.sort(piv[:r]), tol)
    x = res.x
    x[np.abs(x) < 1e-12] = 0.0
    cvec[live] = x
    return LPResult(cvec, float(g @ cvec), res.iterations)


def min_l1_on_face(g, A, target: float, tol: float = 1e-10) -> LPResult:
    """Among ``A c >= 0, |c_j| <= 1, g.c >= target`` pick the ``c`` of least
    ``l1`` norm (a sparse representative of a degenerate optimal face)."""
    g, A = _clean(g, A)
    k = g.size
    norms = np.max(np.abs(A), axis=1, initial=0.0)
    rows = A[norms > 0] / norms[norms > 0, None]
    eye, zero = np.eye(k), np.zeros((k, k))
    # variables (c, s) with |c_j| <= s_j; maximize -sum s
    G = np.vstack([
        np.hstack([-rows, np.zeros_like(rows)]),
        np.concatenate([-g, np.zeros(k)])[None, :],
        np.hstack([eye, -eye]),
        np.hstack([-eye, -eye]),
        np.hstack([zero, eye]),
    ])
    h = np.concatenate([np.zeros(len(rows)), [-target], np.zeros(2 * k), np.ones(k)])
    start = max_box_cone(g, A, tol)
    if start.objective < target - tol * max(1.0, abs(target)):
        raise LPError("target objective is not attainable")
    x0 = np.concatenate([start.x, np.abs(start.x)])
    res = active_set_max(np.concatenate([np.zeros(k), -np.ones(k)]), G, h, x0, (), tol)
    c = res.x[:k]
    c[np.abs(c) < 1e-12] = 0.0
    return LPResult(c, float(g @ c), res.iterations)
