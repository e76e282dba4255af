"""Node-wise label optimisation and the interference-free parallel scheduler.

Each update re-solves one row ``y_p`` with all other rows fixed. Its local
objective is ``Σ_j w̃_pj φ(y, y_j)`` (plus an optional source term
``w_s φ(y, e_p)``), which collects every term of ``g`` that touches ``p``
because ``φ`` is symmetric. Solving it exactly, or at least not worse than the
current row, makes ``g`` non-increasing update by update.

For the squared loss the local objective is ``½S‖y‖² - ⟨c, y⟩`` up to a
constant, with ``S`` the signed weight total and ``c`` the weighted sum of
neighbour labels. With ``S > 0`` the minimiser is the projection of ``c / S``;
otherwise the problem is concave and a vertex maximising ``c`` is optimal.
Other losses use majorization-minimization with projected gradient.

Nodes with no symmetrised edge between them can be updated at the same time
without changing the result: `schedule_batches` colours the interference graph
and `solve_parallel` runs one batch at a time on a thread pool.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import networkx as nx
import numpy as np
import pandas as pd

from app.models.config import NodewiseConfig, PgdConfig
from app.services.dc_joint import initial_labels
from app.services.energy import (
    EnergyTrace,
    LossFn,
    QuadraticEnergy,
    SolveResult,
    get_loss,
    is_squared_l2,
    pairwise_energy,
)
from app.services.graphs import EffectiveWeights
from app.services.simplex import project_to_simplex, projected_gradient

logger = logging.getLogger(__name__)

_MASS_EPS = 1e-12
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class Batch:
    """Nodes that share no effective edge and can be updated together."""

    nodes: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class NodeUpdate:
    y: np.ndarray
    converged: bool = True


# ---------- single node ----------
def _row_arrays(eff: EffectiveWeights, p: int) -> tuple[np.ndarray, np.ndarray]:
    sym = eff.w_eff_sym
    lo, hi = sym.indptr[p], sym.indptr[p + 1]
    ids, w = sym.indices[lo:hi], sym.data[lo:hi]
    keep = (ids != p) & (w != 0.0)
    return ids[keep], w[keep]


def _local_value(y: np.ndarray, nbr: np.ndarray, w: np.ndarray, w_s: float, anchor: Optional[int], phi: LossFn) -> float:
    value = float(w @ phi.evaluate_rows(np.broadcast_to(y, nbr.shape), nbr)) if w.size else 0.0
    if w_s and anchor is not None:
        e = np.zeros_like(y)
        e[anchor] = 1.0
        value += w_s * phi.evaluate(y, e)
    return value


def _vertex(c: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Vertex maximising ``c``; ties keep the current dominant label, then the lowest index."""
    best = np.flatnonzero(c >= c.max() - _TIE_EPS)
    k = best[np.argmax(current[best])] if best.size > 1 else best[0]
    out = np.zeros_like(c)
    out[k] = 1.0
    return out


def _exact_l2(y_old: np.ndarray, nbr: np.ndarray, w: np.ndarray, w_s: float, anchor: Optional[int]) -> np.ndarray:
    c = w @ nbr if w.size else np.zeros_like(y_old)
    mass = float(w.sum()) if w.size else 0.0
    if w_s and anchor is not None:
        c = c.copy()
        c[anchor] += w_s
        mass += w_s
    if mass > _MASS_EPS:
        # all-positive rows land on the weighted mean, already on the simplex
        return project_to_simplex(c / mass)
    return _vertex(c, y_old)


def _mm_general(
    y_old: np.ndarray,
    nbr: np.ndarray,
    w: np.ndarray,
    w_s: float,
    anchor: Optional[int],
    phi: LossFn,
    inner: PgdConfig,
    mm_iters: int,
) -> tuple[np.ndarray, bool]:
    pos, neg = w > 0, w < 0
    nbr_pos, w_pos = nbr[pos], w[pos]
    nbr_neg, w_neg = nbr[neg], -w[neg]
    e = None
    if w_s and anchor is not None:
        e = np.zeros_like(y_old)
        e[anchor] = 1.0

    y = y_old
    value = _local_value(y, nbr, w, w_s, anchor, phi)
    converged = True
    for _ in range(mm_iters):
        lin = (w_neg @ phi.gradient_rows(np.broadcast_to(y, nbr_neg.shape), nbr_neg)) if w_neg.size else np.zeros_like(y)

        def surrogate(z: np.ndarray, lin: np.ndarray = lin) -> tuple[float, np.ndarray]:
            zs = np.broadcast_to(z, nbr_pos.shape)
            val = float(w_pos @ phi.evaluate_rows(zs, nbr_pos)) if w_pos.size else 0.0
            grad = (w_pos @ phi.gradient_rows(zs, nbr_pos)) if w_pos.size else np.zeros_like(z)
            if e is not None:
                val += w_s * phi.evaluate(z, e)
                grad = grad + w_s * phi.gradient_first_arg(z, e)
            return val - float(lin @ z), grad - lin

        res = projected_gradient(surrogate, y, inner)
        converged = converged and res.converged
        new_value = _local_value(res.x, nbr, w, w_s, anchor, phi)
        if new_value > value:
            break
        done = value - new_value <= inner.tol * max(1.0, abs(value))
        y, value = res.x, new_value
        if done:
            break
    return y, converged


def _update(
    p: int,
    ids: np.ndarray,
    w: np.ndarray,
    Y: np.ndarray,
    w_s: float,
    phi: LossFn,
    cfg: NodewiseConfig,
) -> NodeUpdate:
    y_old = Y[p]
    anchor = p if w_s > 0 and p < Y.shape[1] else None
    if w.size == 0 and anchor is None:
        return NodeUpdate(y=y_old)
    nbr = Y[ids]
    if is_squared_l2(phi):
        y_new, converged = _exact_l2(y_old, nbr, w, w_s, anchor), True
    else:
        y_new, converged = _mm_general(y_old, nbr, w, w_s, anchor, phi, cfg.inner, cfg.mm_iters)
    if _local_value(y_new, nbr, w, w_s, anchor, phi) > _local_value(y_old, nbr, w, w_s, anchor, phi):
        return NodeUpdate(y=y_old, converged=converged)
    return NodeUpdate(y=y_new, converged=converged)


def node_update(
    p: int,
    row: Sequence[tuple[int, float]],
    Y: np.ndarray,
    source_weight: float = 0.0,
    cfg: Optional[NodewiseConfig] = None,
    phi: Optional[LossFn] = None,
) -> np.ndarray:
    """Best row for node ``p`` given its symmetrised row ``[(j, w̃_pj), ...]``.

    ``source_weight`` adds ``w_s φ(y, e_p)`` pulling towards the label column
    reserved for ``p``. The returned row never has a larger local objective than
    ``Y[p]``; an empty row without a source term returns ``Y[p]`` unchanged.
    """
    ids = np.asarray([j for j, _ in row], dtype=int)
    w = np.asarray([wj for _, wj in row], dtype=float)
    return _update(p, ids, w, np.asarray(Y, dtype=float), source_weight, phi or get_loss(), cfg or NodewiseConfig()).y


# ---------- objectives ----------
class _Objective:
    """Global objective plus source terms, cached for repeated evaluation."""

    def __init__(self, eff: EffectiveWeights, source_weights: Optional[np.ndarray], phi: LossFn) -> None:
        self.eff = eff
        self.phi = phi
        self.quad = QuadraticEnergy.of(eff.w_eff) if is_squared_l2(phi) else None
        self.sources = None
        if source_weights is not None:
            self.sources = np.asarray(source_weights, dtype=float)

    def __call__(self, Y: np.ndarray) -> float:
        g = self.quad.value(Y) if self.quad is not None else pairwise_energy(self.eff.w_eff, Y, self.phi)
        if self.sources is not None and self.sources.any():
            idx = np.flatnonzero(self.sources)
            idx = idx[idx < Y.shape[1]]
            E = np.zeros((idx.size, Y.shape[1]))
            E[np.arange(idx.size), idx] = 1.0
            g += float(self.sources[idx] @ self.phi.evaluate_rows(Y[idx], E))
        return g


def objective_with_sources(
    eff: EffectiveWeights,
    Y: np.ndarray,
    source_weights: Optional[np.ndarray] = None,
    phi: Optional[LossFn] = None,
) -> float:
    """``g(Y) + Σ_i w_s,i φ(y_i, e_i)``."""
    return _Objective(eff, source_weights, phi or get_loss())(np.asarray(Y, dtype=float))


# ---------- sweeps ----------
def _visit_order(nodes: np.ndarray, cfg: NodewiseConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.sweep_order == "random":
        return rng.permutation(nodes)
    return nodes


def _active_nodes(n: int, active: Optional[Iterable[int]]) -> np.ndarray:
    if active is None:
        return np.arange(n)
    return np.asarray(sorted(set(int(a) for a in active)), dtype=int)


def sweep(
    eff: EffectiveWeights,
    Y: np.ndarray,
    cfg: Optional[NodewiseConfig] = None,
    *,
    order: Optional[Sequence[int]] = None,
    source_weights: Optional[np.ndarray] = None,
    phi: Optional[LossFn] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, float]:
    """Visit each node once, updating ``Y`` in place; returns ``(Y, objective)``.

    ``order`` overrides the configured order (used for batch-major runs and for
    restricting updates to a window of nodes).
    """
    cfg = cfg or NodewiseConfig()
    phi = phi or get_loss()
    rng = rng or np.random.default_rng(cfg.seed)
    nodes = np.asarray(order, dtype=int) if order is not None else _visit_order(np.arange(eff.n), cfg, rng)
    sources = np.zeros(eff.n) if source_weights is None else np.asarray(source_weights, dtype=float)
    for p in nodes:
        ids, w = _row_arrays(eff, int(p))
        Y[p] = _update(int(p), ids, w, Y, float(sources[p]), phi, cfg).y
    return Y, _Objective(eff, source_weights, phi)(Y)


def _prepare(
    eff: EffectiveWeights,
    cfg: NodewiseConfig,
    init: Optional[np.ndarray],
) -> np.ndarray:
    if init is None:
        return initial_labels(eff.n, eff.n, cfg.init, cfg.seed)
    Y = np.array(init, dtype=float, copy=True)
    if Y.shape[0] != eff.n:
        raise ValueError(f"init has {Y.shape[0]} rows for {eff.n} nodes")
    return project_to_simplex(Y) if Y.size else Y


def solve_nodewise(
    eff: EffectiveWeights,
    cfg: Optional[NodewiseConfig] = None,
    init: Optional[np.ndarray] = None,
    *,
    source_weights: Optional[np.ndarray] = None,
    active: Optional[Iterable[int]] = None,
    order: Optional[Sequence[int]] = None,
    phi: Optional[LossFn] = None,
) -> SolveResult:
    """Run up to ``cfg.t_con`` sweeps, stopping early once a sweep stops paying off.

    ``active`` restricts updates to a subset of nodes (others are read only).
    ``order`` fixes the visiting order of every sweep.
    """
    cfg = cfg or NodewiseConfig()
    phi = phi or get_loss()
    Y = _prepare(eff, cfg, init)
    trace = EnergyTrace()
    if eff.n == 0:
        return SolveResult(Y=Y, trace=trace)

    objective = _Objective(eff, source_weights, phi)
    g = objective(Y)
    trace.record(g)
    nodes = _active_nodes(eff.n, active)
    rng = np.random.default_rng(cfg.seed)
    converged = False
    k = 0
    for k in range(1, cfg.t_con + 1):
        visit = np.asarray(order, dtype=int) if order is not None else _visit_order(nodes, cfg, rng)
        Y, g_new = sweep(eff, Y, cfg, order=visit, source_weights=source_weights, phi=phi)
        decrease = g - g_new
        g = g_new
        trace.record(g)
        logger.debug("sweep %d: g=%.10g", k, g)
        if decrease <= cfg.tol * max(1.0, abs(g)):
            converged = True
            break

    if not converged:
        logger.warning("node-wise solver hit t_con=%d without converging (g=%.6g)", cfg.t_con, g)
    logger.info("node-wise solve: n=%d active=%d, %d sweeps, g=%.6g", eff.n, nodes.size, k, g)
    return SolveResult(Y=Y, trace=trace, iterations=k, converged=converged, inner_solves=k * nodes.size)


# ---------- parallel ----------
def schedule_batches(eff: EffectiveWeights, nodes: Optional[Iterable[int]] = None) -> list[Batch]:
    """Partition nodes into batches with no symmetrised effective edge inside a batch.

    Greedy colouring in descending-degree order; each colour class is a
    maximal independent set of the nodes left after the previous classes.
    Batches are ordered by size (largest first), then by smallest node id.
    """
    members = _active_nodes(eff.n, nodes)
    graph = nx.Graph()
    graph.add_nodes_from(int(p) for p in members)
    coo = eff.w_eff_sym.tocoo()
    inside = np.zeros(eff.n, dtype=bool)
    inside[members] = True
    mask = (coo.data != 0) & (coo.row != coo.col) & inside[coo.row] & inside[coo.col]
    graph.add_edges_from(zip(coo.row[mask].tolist(), coo.col[mask].tolist()))

    colors = nx.greedy_color(graph, strategy="largest_first")
    classes: dict[int, list[int]] = {}
    for node, color in colors.items():
        classes.setdefault(color, []).append(node)
    batches = [Batch(nodes=tuple(sorted(v))) for v in classes.values()]
    batches.sort(key=lambda b: (-len(b), b.nodes[0]))
    return batches


def batch_major_order(batches: Sequence[Batch]) -> list[int]:
    return [p for b in batches for p in b.nodes]


def solve_parallel(
    eff: EffectiveWeights,
    cfg: Optional[NodewiseConfig] = None,
    init: Optional[np.ndarray] = None,
    *,
    source_weights: Optional[np.ndarray] = None,
    active: Optional[Iterable[int]] = None,
    phi: Optional[LossFn] = None,
    batches: Optional[Sequence[Batch]] = None,
) -> SolveResult:
    """Batch-parallel node-wise solve.

    Within a batch every worker reads the same snapshot of ``Y`` and writes only
    its own row; batches run one after another. The result equals a sequential
    sweep in batch-major order. ``SolveResult.trace`` holds one value per sweep;
    per-batch values are kept in ``batch_trace``.
    """
    cfg = cfg or NodewiseConfig()
    phi = phi or get_loss()
    workers = cfg.parallel.workers if cfg.parallel else 1
    Y = _prepare(eff, cfg, init)
    trace, batch_trace = EnergyTrace(), EnergyTrace()
    if eff.n == 0:
        return SolveResult(Y=Y, trace=trace, batch_trace=batch_trace)

    batches = list(batches) if batches is not None else schedule_batches(eff, active)
    sources = np.zeros(eff.n) if source_weights is None else np.asarray(source_weights, dtype=float)
    rows = {int(p): _row_arrays(eff, int(p)) for b in batches for p in b.nodes}
    objective = _Objective(eff, source_weights, phi)

    g = objective(Y)
    trace.record(g)
    batch_trace.record(g)
    converged = False
    k = 0
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for k in range(1, cfg.t_con + 1):
            g_start = g
            for batch in batches:
                snapshot = Y.copy()

                def work(p: int, snapshot: np.ndarray = snapshot) -> tuple[int, np.ndarray]:
                    ids, w = rows[p]
                    return p, _update(p, ids, w, snapshot, float(sources[p]), phi, cfg).y

                for p, y in pool.map(work, batch.nodes):
                    Y[p] = y
                g = objective(Y)
                batch_trace.record(g)
            trace.record(g)
            logger.debug("parallel sweep %d over %d batches: g=%.10g", k, len(batches), g)
            if g_start - g <= cfg.tol * max(1.0, abs(g)):
                converged = True
                break

    if not converged:
        logger.warning("parallel solver hit t_con=%d without converging (g=%.6g)", cfg.t_con, g)
    logger.info("parallel solve: n=%d, %d batches, %d workers, %d sweeps, g=%.6g", eff.n, len(batches), workers, k, g)
    return SolveResult(
        Y=Y, trace=trace, iterations=k, converged=converged, inner_solves=k * len(rows), batch_trace=batch_trace
    )


def write_batch_dump(batches: Sequence[Batch], path: Union[str, Path]) -> None:
    """CSV ``batch_id,node_id``."""
    rows = [(b, p) for b, batch in enumerate(batches) for p in batch.nodes]
    pd.DataFrame(rows, columns=["batch_id", "node_id"]).to_csv(path, index=False, lineterminator="\n")
