import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from qtkw.simplex import LPError, Unbounded, active_set_max, max_box_cone, min_l1_on_face, simplex_max


def brute_force_max(c, A, b):
    """Best vertex of {A x <= b, x >= 0} by enumerating all bases."""
    m, n = A.shape
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    best = -np.inf
    for rows in itertools.combinations(range(m + n), n):
        B = G[list(rows)]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        x = np.linalg.solve(B, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = max(best, c @ x)
    return best


@pytest.mark.parametrize("seed", range(20))
def test_small_problems_against_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(2, 6), rng.integers(2, 4)
    A = rng.uniform(0.1, 2.0, (m, n))
    b = rng.uniform(0.5, 3.0, m)
    c = rng.normal(size=n)
    res = simplex_max(c, A, b)
    assert res.objective == pytest.approx(brute_force_max(c, A, b), abs=1e-9)


@pytest.mark.parametrize("seed", range(60))
def test_random_problems_against_linprog(seed):
    rng = np.random.default_rng(100 + seed)
    m, n = rng.integers(3, 60), rng.integers(2, 11)
    A = rng.normal(size=(m, n))
    b = rng.uniform(0.0, 2.0, m)
    if seed % 3 == 0:
        b[: m // 2] = 0.0  # degenerate origin
    c = rng.normal(size=n)
    ref = linprog(-c, A_ub=A, b_ub=b, bounds=[(0, None)] * n, method="highs")
    if ref.status == 3:
        with pytest.raises(Unbounded):
            simplex_max(c, A, b)
        return
    assert ref.status == 0
    res = simplex_max(c, A, b)
    assert res.objective == pytest.approx(-ref.fun, rel=1e-8, abs=1e-8)
    assert np.all(A @ res.x <= b + 1e-8) and np.all(res.x >= 0)


def test_textbook_problem():
    # max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  ->  36 at (2, 6)
    res = simplex_max([3, 5], [[1, 0], [0, 2], [3, 2]], [4, 12, 18])
    assert res.objective == pytest.approx(36)
    assert np.allclose(res.x, [2, 6])


def test_unbounded_detected():
    with pytest.raises(Unbounded):
        simplex_max([1, 1], [[1, -1]], [1])


def test_klee_minty_cube_terminates():
    n = 6
    A = np.zeros((n, n))
    for i in range(n):
        A[i, :i] = 2.0 ** (i - np.arange(i) + 1)
        A[i, i] = 1.0
    b = 5.0 ** np.arange(1, n + 1)
    c = 2.0 ** np.arange(n - 1, -1, -1)
    res = simplex_max(c, A, b)
    assert res.objective == pytest.approx(5.0**n)


def test_degenerate_cycling_example():
    # Beale's example cycles under naive Dantzig pricing without anti-cycling
    c = np.array([0.75, -150, 0.02, -6])
    A = np.array([[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]])
    b = np.array([0, 0, 1.0])
    res = simplex_max(c, A, b)
    assert res.objective == pytest.approx(0.05)


def test_shape_and_sign_checks():
    with pytest.raises(ValueError):
        simplex_max([1, 2], [[1, 1]], [-1])
    with pytest.raises(ValueError):
        simplex_max([1, 2, 3], [[1, 1]], [1])


def test_active_set_from_interior_point():
    G = np.array([[1.0, 0], [0, 1], [-1, 0], [0, -1], [1, 1]])
    h = np.array([1.0, 1, 1, 1, 1.5])
    res = active_set_max([1.0, 1.0], G, h, [0.0, 0.0])
    assert res.objective == pytest.approx(1.5)


@pytest.mark.parametrize("seed", range(15))
def test_box_cone_against_linprog(seed):
    rng = np.random.default_rng(200 + seed)
    k = rng.integers(2, 11)
    A = rng.normal(size=(rng.integers(5, 300), k))
    if seed % 2:
        A[:, -1] = 0.0  # a variable no constraint sees
    g = rng.normal(size=k)
    ref = linprog(-g, A_ub=-A, b_ub=np.zeros(len(A)), bounds=[(-1, 1)] * k, method="highs")
    res = max_box_cone(g, A)
    assert res.objective == pytest.approx(-ref.fun, abs=1e-8)
    assert np.all(A @ res.x >= -1e-9 * np.abs(A).max())
    assert np.all(np.abs(res.x) <= 1 + 1e-12)


def test_box_cone_with_only_trivial_solution():
    A = np.array([[1.0, 0], [-1.0, 0], [0, 1.0], [0, -1.0]])
    res = max_box_cone([1.0, 1.0], A)
    assert res.objective == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(res.x, 0)


def test_min_l1_picks_sparse_representative():
    # objective constant along c2 - c3; the cheapest point keeps only c1
    A = np.array([[1.0, 0, 0], [0, 1.0, 1.0]])
    g = np.array([1.0, 0.0, 0.0])
    res = min_l1_on_face(g, A, 1.0 - 1e-12)
    assert np.allclose(res.x, [1, 0, 0], atol=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_min_l1_against_linprog(seed):
    rng = np.random.default_rng(300 + seed)
    k = rng.integers(2, 8)
    A = rng.normal(size=(rng.integers(3, 40), k))
    g = rng.normal(size=k)
    top = max_box_cone(g, A).objective
    if top <= 1e-9:
        return
    target = 0.5 * top
    res = min_l1_on_face(g, A, target)
    # oracle on (c, s): min sum s, -s <= c <= s, A c >= 0, g.c >= target, s <= 1
    I = np.eye(k)
    A_ub = np.vstack([np.hstack([-A, np.zeros_like(A)]), np.hstack([-g, np.zeros(k)]),
                      np.hstack([I, -I]), np.hstack([-I, -I])])
    b_ub = np.concatenate([np.zeros(len(A)), [-target], np.zeros(2 * k)])
    ref = linprog(np.concatenate([np.zeros(k), np.ones(k)]), A_ub=A_ub, b_ub=b_ub,
                  bounds=[(-1, 1)] * k + [(0, 1)] * k, method="highs")
    assert np.abs(res.x).sum() == pytest.approx(ref.fun, abs=1e-8)
    assert g @ res.x >= target - 1e-9


def test_min_l1_rejects_unattainable_target():
    with pytest.raises(LPError):
        min_l1_on_face([1.0, 0.0], np.array([[-1.0, 0.0]]), 0.5)
