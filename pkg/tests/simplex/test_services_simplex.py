# tests/simplex/test_services_simplex.py
import itertools

import numpy as np
import pytest

from app.models.config import PgdConfig
from app.services.simplex import project_to_simplex, projected_gradient, solve_simplex_qp

TIGHT = PgdConfig(max_iters=5000, tol=1e-15)


def _grid(d, step=1e-2):
    """All points of the simplex grid with the given resolution (d <= 3)."""
    k = int(round(1 / step))
    pts = [c for c in itertools.product(range(k + 1), repeat=d - 1) if sum(c) <= k]
    return np.asarray([[*c, k - sum(c)] for c in pts], dtype=float) / k


# ---------- projection ----------
@pytest.mark.parametrize("v, expected", [
    ([0.3, 0.7], [0.3, 0.7]),
    ([2.0, 2.0], [0.5, 0.5]),
    ([-4.0, -4.0], [0.5, 0.5]),
    ([0.8, 0.4, -0.2], [0.7, 0.3, 0.0]),
    ([5.0], [1.0]),
])
def test_projection_examples(v, expected):
    assert project_to_simplex(v) == pytest.approx(expected)


def test_projection_matches_grid_oracle():
    rng = np.random.default_rng(0)
    for _ in range(30):
        d = int(rng.integers(2, 4))
        v = rng.normal(scale=1.5, size=d)
        grid = _grid(d, 1e-3 if d == 2 else 1e-2)
        best = grid[np.argmin(((grid - v) ** 2).sum(axis=1))]
        got = project_to_simplex(v)
        assert np.sum((got - v) ** 2) <= np.sum((best - v) ** 2) + 1e-12
        assert np.abs(got - best).max() <= 2e-2


def test_projection_is_optimal_against_random_simplex_points():
    rng = np.random.default_rng(1)
    for _ in range(50):
        v = rng.normal(size=5)
        p = project_to_simplex(v)
        s = rng.dirichlet(np.ones(5), size=100)
        assert np.linalg.norm(p - v) <= np.linalg.norm(s - v, axis=1).min() + 1e-12


def test_projection_rows_feasible_and_idempotent():
    rng = np.random.default_rng(2)
    M = rng.normal(size=(20, 6)) * 3
    P = project_to_simplex(M)
    assert (P >= 0).all()
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-9)
    assert np.array_equal(project_to_simplex(P), P)


@pytest.mark.parametrize("bad", [[np.nan, 1.0], [np.inf, 0.0], []])
def test_projection_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        project_to_simplex(bad)


# ---------- QP ----------
def test_qp_one_dimensional_is_the_point():
    res = solve_simplex_qp(np.array([[3.0]]))
    assert res.x.tolist() == [1.0] and res.converged


def test_qp_identity_is_uniform():
    res = solve_simplex_qp(np.eye(3), cfg=TIGHT)
    assert res.x == pytest.approx([1 / 3] * 3, abs=1e-6)


def test_qp_diagonal_matches_closed_form():
    res = solve_simplex_qp(np.diag([1.0, 4.0]), cfg=TIGHT)
    assert res.x == pytest.approx([0.8, 0.2], abs=1e-6)


def test_qp_against_grid_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        d = int(rng.integers(2, 4))
        A = rng.normal(size=(d, d))
        P, q = A @ A.T, rng.normal(size=d)
        res = solve_simplex_qp(P, q, delta=0.1, cfg=TIGHT)
        grid = _grid(d, 1e-3 if d == 2 else 1e-2)
        H = P + 0.1 * np.eye(d)
        vals = 0.5 * np.einsum("ij,jk,ik->i", grid, H, grid) + grid @ q
        assert res.value <= vals.min() + 1e-6


def test_qp_unique_minimiser_from_different_starts():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(4, 4))
    P = A @ A.T
    starts = [np.eye(4)[0], np.eye(4)[3], np.full(4, 0.25)]
    sols = [solve_simplex_qp(P, delta=0.5, cfg=TIGHT, init=s).x for s in starts]
    for s in sols[1:]:
        assert s == pytest.approx(sols[0], abs=1e-6)


# ---------- projected gradient ----------
def test_constant_objective_returns_init():
    init = np.array([0.2, 0.3, 0.5])
    res = projected_gradient(lambda x: (1.0, np.zeros_like(x)), init)
    assert np.array_equal(res.x, init)
    assert res.iterations == 0


def test_interior_minimiser_on_two_simplex():
    # ½‖x - (0.6, 0.4)‖² has its minimiser inside the simplex
    target = np.array([0.6, 0.4])
    res = projected_gradient(lambda x: (0.5 * float(((x - target) ** 2).sum()), x - target), np.array([1.0, 0.0]), TIGHT)
    assert res.x == pytest.approx(target, abs=1e-6)


@pytest.mark.parametrize("rule", ["fixed", "backtracking"])
def test_descent_on_random_quadratics(rule):
    rng = np.random.default_rng(6)
    cfg = PgdConfig(step_rule=rule, step=0.05)
    for _ in range(50):
        A = rng.normal(size=(5, 5))
        H, q = A @ A.T, rng.normal(size=5)

        def f(x):
            return 0.5 * float(x @ H @ x) + float(q @ x), H @ x + q

        init = rng.dirichlet(np.ones(5))
        res = projected_gradient(f, init, cfg)
        assert res.value <= f(init)[0] + 1e-12
        assert res.x.sum() == pytest.approx(1.0) and (res.x >= 0).all()


def test_rows_of_a_matrix_stay_feasible():
    rng = np.random.default_rng(7)
    C = rng.normal(size=(6, 4))
    res = projected_gradient(lambda Y: (0.5 * float(((Y - C) ** 2).sum()), Y - C), np.full((6, 4), 0.25))
    assert np.allclose(res.x, project_to_simplex(C), atol=1e-4)
