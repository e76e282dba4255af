"""Simplex projection and projected-gradient solvers.

Used by the reconstruction-weight QP of the offline graphs and by both labeling
solvers. Everything works row-wise: a 1-D array is one simplex vector, a 2-D
array is a label matrix whose rows each live on the simplex.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from app.models.config import PgdConfig

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]

_FEASIBLE_TOL = 1e-12
_MAX_SHRINKS = 60


@dataclass(frozen=True)
class PgdResult:
    """Outcome of a projected-gradient run; ``x`` is the best iterate seen."""

    x: np.ndarray
    value: float
    iterations: int
    converged: bool


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a vector (or each row of a matrix) onto the simplex.

    Sort-based exact projection. Rows that are already feasible are returned
    unchanged, which makes the projection idempotent.

    Examples:
        project_to_simplex([0.8, 0.4, -0.2]) -> [0.7, 0.3, 0.0]
        project_to_simplex([2.0, 2.0]) -> [0.5, 0.5]

    Raises:
        ValueError: non-finite input or a zero-length vector.
    """
    arr = np.asarray(v, dtype=float)
    if arr.ndim not in (1, 2) or arr.shape[-1] == 0:
        raise ValueError("expected a non-empty vector or matrix")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot project non-finite values onto the simplex")

    rows = np.atleast_2d(arr)
    feasible = (rows >= 0).all(axis=1) & (np.abs(rows.sum(axis=1) - 1.0) <= _FEASIBLE_TOL)
    out = rows.copy()
    todo = ~feasible
    if todo.any():
        sub = rows[todo]
        d = sub.shape[1]
        u = -np.sort(-sub, axis=1)
        css = np.cumsum(u, axis=1) - 1.0
        ks = np.arange(1, d + 1)
        positive = u - css / ks > 0
        # last index where the running threshold still leaves u positive
        rho = d - 1 - np.argmax(positive[:, ::-1], axis=1)
        theta = css[np.arange(sub.shape[0]), rho] / (rho + 1)
        out[todo] = np.maximum(sub - theta[:, None], 0.0)
    return out[0] if arr.ndim == 1 else out


def projected_gradient(objective: Objective, init: np.ndarray, cfg: Optional[PgdConfig] = None) -> PgdResult:
    """Minimise ``objective`` over a product of simplices.

    ``objective(x)`` returns ``(value, gradient)``. Every iterate is projected
    row-wise. With the backtracking rule each iteration first tries a slightly
    larger step than the last accepted one and halves it until the projected
    Armijo condition holds. The run stops when the relative decrease falls
    below ``cfg.tol`` or at ``cfg.max_iters``; the best iterate is returned.
    """
    cfg = cfg or PgdConfig()
    x = project_to_simplex(init)
    value, grad = objective(x)
    value = float(value)
    if not np.any(grad):
        return PgdResult(x=x, value=value, iterations=0, converged=True)

    best_x, best_value = x, value
    step = cfg.step
    converged = False
    iterations = 0

    for iterations in range(1, cfg.max_iters + 1):
        if cfg.step_rule == "fixed":
            candidate = project_to_simplex(x - step * grad)
            cand_value, cand_grad = objective(candidate)
        else:
            trial = step / cfg.beta
            for _ in range(_MAX_SHRINKS):
                candidate = project_to_simplex(x - trial * grad)
                cand_value, cand_grad = objective(candidate)
                if cand_value <= value + cfg.armijo * float(np.sum(grad * (candidate - x))):
                    break
                trial *= cfg.beta
            else:
                # no step gives sufficient decrease: numerically stationary
                converged = True
                break
            step = trial

        cand_value = float(cand_value)
        moved = np.any(candidate != x)
        decrease = value - cand_value
        x, value, grad = candidate, cand_value, cand_grad
        if value < best_value:
            best_x, best_value = x, value
        if not moved or abs(decrease) <= cfg.tol * max(1.0, abs(value)):
            converged = True
            break

    if not converged:
        logger.debug("projected gradient stopped at max_iters=%d (value=%.6g)", cfg.max_iters, best_value)
    return PgdResult(x=best_x, value=best_value, iterations=iterations, converged=converged)


def solve_simplex_qp(
    P: np.ndarray,
    q: Optional[np.ndarray] = None,
    delta: float = 0.0,
    cfg: Optional[PgdConfig] = None,
    init: Optional[np.ndarray] = None,
) -> PgdResult:
    """Minimise ``½ wᵀ(P + δI)w + qᵀw`` over the simplex.

    Starts from the uniform vector unless ``init`` is given. A one-dimensional
    problem is solved immediately since the simplex is a single point.
    """
    H = np.asarray(P, dtype=float)
    d = H.shape[0]
    if H.shape != (d, d) or d == 0:
        raise ValueError("P must be a non-empty square matrix")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    H = H + delta * np.eye(d)
    lin = np.zeros(d) if q is None else np.asarray(q, dtype=float)

    def objective(w: np.ndarray) -> tuple[float, np.ndarray]:
        Hw = H @ w
        return 0.5 * float(w @ Hw) + float(lin @ w), Hw + lin

    if d == 1:
        x = np.ones(1)
        return PgdResult(x=x, value=objective(x)[0], iterations=0, converged=True)
    start = np.full(d, 1.0 / d) if init is None else np.asarray(init, dtype=float)
    return projected_gradient(objective, start, cfg)
