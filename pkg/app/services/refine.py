"""Label refinement by column moves.

Both solvers stop at stationary points of ``g``, and a stationary point can
still split one identity over several label columns or share one column
between unrelated groups of nodes. Two moves act on whole columns and never
raise ``g`` for the squared loss:

- split: the nodes carrying a column fall apart into components of the
  positive effective graph; every component but the heaviest moves to an
  unused column. Only non-positive weights cross the cut, so the energy
  cannot grow.
- merge: with ``M = YᵀLY`` (``L`` the signed Laplacian of ``w_eff + w_effᵀ``),
  folding column ``b`` into ``a`` changes ``g`` by exactly ``M[a, b]``;
  columns are merged greedily while some ``M[a, b]`` is negative.

Weak positive links, such as the small ridge weights an appearance
reconstruction spreads over other identities, keep two unrelated groups in
one component. A regroup cuts every link below a floor, merges again and keeps
the result only when ``g`` drops.

`refine_labels` alternates node-wise polishing sweeps with these moves until a
round makes no move.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from app.models.config import NodewiseConfig
from app.services.dc_nodewise import solve_nodewise
from app.services.energy import EnergyTrace, LossFn, SolveResult, is_squared_l2, objective
from app.services.graphs import EffectiveWeights

logger = logging.getLogger(__name__)

_MASS_EPS = 1e-12


@dataclass(frozen=True)
class MoveCount:
    splits: int = 0
    merges: int = 0
    regroups: int = 0

    def __bool__(self) -> bool:
        return bool(self.splits or self.merges or self.regroups)

    def __add__(self, other: "MoveCount") -> "MoveCount":
        return MoveCount(
            self.splits + other.splits, self.merges + other.merges, self.regroups + other.regroups
        )


def _laplacian(eff: EffectiveWeights) -> sparse.csr_matrix:
    sym = eff.w_eff_sym
    degree = np.asarray(sym.sum(axis=1)).ravel()
    return (sparse.diags(degree) - sym).tocsr()


def used_columns(Y: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.asarray(Y).sum(axis=0) > _MASS_EPS)


def split_labels(eff: EffectiveWeights, Y: np.ndarray, min_weight: float = 0.0) -> tuple[np.ndarray, int]:
    """Move disconnected parts of each column to unused columns.

    Parts are components over links heavier than ``min_weight``; with the
    default of zero the move never raises ``g``.

    Returns the new labels and the number of parts moved. Parts stay put when
    no unused column is left.
    """
    Y = np.array(Y, dtype=float, copy=True)
    sym = eff.w_eff_sym
    positive = sym.multiply(sym > min_weight).tocsr()
    free = [int(k) for k in np.flatnonzero(Y.sum(axis=0) <= _MASS_EPS)]
    moved = 0
    for a in used_columns(Y):
        support = np.flatnonzero(Y[:, a] > 0)
        if support.size < 2:
            continue
        count, comp = connected_components(positive[support][:, support], directed=False)
        if count < 2:
            continue
        mass = np.bincount(comp, weights=Y[support, a], minlength=count)
        keep = int(np.argmax(mass))
        for part in range(count):
            if part == keep:
                continue
            if not free:
                logger.debug("split: no unused column left for label %d", a)
                return Y, moved
            b = free.pop(0)
            rows = support[comp == part]
            Y[rows, b] = Y[rows, a]
            Y[rows, a] = 0.0
            moved += 1
    return Y, moved


def merge_labels(eff: EffectiveWeights, Y: np.ndarray, tol: float = 1e-9) -> tuple[np.ndarray, int]:
    """Greedily fold label columns together while that lowers ``g`` by more than ``tol``.

    The most negative ``M[a, b]`` goes first and the higher column is folded
    into the lower one.
    """
    Y = np.array(Y, dtype=float, copy=True)
    cols = used_columns(Y)
    if cols.size < 2:
        return Y, 0
    U = Y[:, cols]
    M = U.T @ (_laplacian(eff) @ U)
    M = 0.5 * (M + M.T)
    alive = np.ones(cols.size, dtype=bool)
    merged = 0
    while True:
        off = np.where(np.outer(alive, alive), M, np.inf)
        np.fill_diagonal(off, np.inf)
        a, b = np.unravel_index(np.argmin(off), off.shape)
        if not off[a, b] < -tol:
            break
        a, b = min(a, b), max(a, b)
        M[a, :] += M[b, :]
        M[:, a] += M[:, b]
        M[b, :] = 0.0
        M[:, b] = 0.0
        alive[b] = False
        Y[:, cols[a]] += Y[:, cols[b]]
        Y[:, cols[b]] = 0.0
        merged += 1
    return Y, merged


def regroup_labels(
    eff: EffectiveWeights, Y: np.ndarray, min_weight: float, phi: Optional[LossFn] = None
) -> tuple[np.ndarray, bool]:
    """Split on links heavier than ``min_weight``, merge, and keep the result if ``g`` drops."""
    if min_weight <= 0:
        return Y, False
    candidate, parts = split_labels(eff, Y, min_weight)
    if not parts:
        return Y, False
    candidate, _ = merge_labels(eff, candidate)
    before, after = objective(eff, Y, phi), objective(eff, candidate, phi)
    if after < before - 1e-9 * max(1.0, abs(before)):
        return candidate, True
    return Y, False


def refine_labels(
    eff: EffectiveWeights,
    Y: np.ndarray,
    cfg: Optional[NodewiseConfig] = None,
    rounds: int = 10,
    phi: Optional[LossFn] = None,
    link_floor: float = 0.05,
) -> SolveResult:
    """Polish ``Y`` with node-wise sweeps, then split, merge and regroup columns, up to ``rounds`` times.

    The trace starts at ``g(Y)`` and never increases. Column moves are only
    made for the squared loss; other losses get the polishing sweeps alone.
    ``link_floor`` is the regroup cut; zero disables regrouping.
    """
    cfg = cfg or NodewiseConfig()
    trace = EnergyTrace()
    trace.record(objective(eff, Y, phi))
    if eff.n == 0:
        return SolveResult(Y=np.asarray(Y, dtype=float), trace=trace)

    def polish(labels: np.ndarray) -> np.ndarray:
        result = solve_nodewise(eff, cfg, labels, phi=phi)
        trace.objectives.extend(result.trace.objectives[1:])
        return result.Y

    Y = polish(Y)
    moves = MoveCount()
    total = MoveCount()
    done = 0
    max_rounds = rounds if is_squared_l2(phi) else 0
    for done in range(1, max_rounds + 1):
        Y, splits = split_labels(eff, Y)
        Y, merges = merge_labels(eff, Y)
        Y, regrouped = regroup_labels(eff, Y, link_floor, phi)
        moves = MoveCount(splits=splits, merges=merges, regroups=int(regrouped))
        total = total + moves
        if not moves:
            break
        trace.record(objective(eff, Y, phi))
        Y = polish(Y)

    logger.info(
        "refine: %d rounds, %d splits, %d merges, %d regroups, %d labels, g=%.6g",
        done, total.splits, total.merges, total.regroups, used_columns(Y).size, trace.final,
    )
    return SolveResult(Y=Y, trace=trace, iterations=done, converged=not moves)
