"""Offline graph construction and effective-weight combination.

Three kinds of graph are built over the same node set:

- the spatio-temporal graph, whose weights reconstruct each node's ``(γt, c)``
  feature from temporally nearby nodes that pass the gating test;
- one appearance graph per feature id, reconstructing the feature vector from
  featured nodes that do not co-occur in time;
- the exclusion graph, a unit edge between nodes that cannot share an identity
  (same frame, or too far apart for the elapsed time).

Positive graphs get their weights from a ridge-regularised reconstruction QP on
the simplex, so every non-empty outgoing row sums to 1. `combine` folds all of
them into a single signed matrix consumed by the solvers.

For tracklet nodes the time difference is the gap between spans and gating is
measured from the end of the earlier node to the start of the later one.
Spatio-temporal neighbours are compared at the facing ends of the two spans,
extrapolated at constant velocity.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.spatial.distance import cdist

from app.errors import GraphSizeError
from app.models.config import GraphParams, PgdConfig
from app.models.tracking import Node, Tracklet
from app.services.simplex import solve_simplex_qp

logger = logging.getLogger(__name__)

WEIGHT_EPS = 1e-9
_BLOCK = 512


@dataclass
class SparseGraph:
    """Directed weighted graph stored as ``edges[i][j] = weight``."""

    n: int
    edges: dict[int, dict[int, float]] = field(default_factory=dict)

    def add_edge(self, i: int, j: int, weight: float) -> None:
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise GraphSizeError(f"edge ({i}, {j}) outside a graph of {self.n} nodes")
        if i == j:
            return
        self.edges.setdefault(i, {})[j] = float(weight)

    def row(self, i: int) -> dict[int, float]:
        return self.edges.get(i, {})

    def edge_count(self) -> int:
        return sum(len(r) for r in self.edges.values())

    def items(self) -> Iterator[tuple[int, int, float]]:
        """Edges ordered by source then target."""
        for i in sorted(self.edges):
            for j in sorted(self.edges[i]):
                yield i, j, self.edges[i][j]

    def grow(self, n_new: int) -> None:
        if n_new < self.n:
            raise GraphSizeError("graphs only grow")
        self.n = n_new

    def to_csr(self) -> sparse.csr_matrix:
        rows, cols, vals = [], [], []
        for i, j, w in self.items():
            rows.append(i)
            cols.append(j)
            vals.append(w)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n), dtype=float)


@dataclass(frozen=True)
class EffectiveWeights:
    """Signed weights ``w_eff`` and their symmetrisation ``w_eff + w_effᵀ``."""

    w_eff: sparse.csr_matrix
    w_eff_sym: sparse.csr_matrix

    @property
    def n(self) -> int:
        return self.w_eff.shape[0]

    @classmethod
    def from_matrix(cls, w: sparse.spmatrix) -> "EffectiveWeights":
        w = sparse.csr_matrix(w, dtype=float)
        w.eliminate_zeros()
        sym = (w + w.T).tocsr()
        sym.eliminate_zeros()
        return cls(w_eff=w, w_eff_sym=sym)

    def positive_part(self) -> sparse.csr_matrix:
        # multiply builds fresh index arrays; maximum(0) may share them with w_eff
        pos = sparse.csr_matrix(self.w_eff.multiply(self.w_eff > 0), dtype=float, copy=True)
        pos.eliminate_zeros()
        return pos

    def negative_part(self) -> sparse.csr_matrix:
        """Magnitudes of the negative entries (non-negative matrix)."""
        neg = sparse.csr_matrix(self.w_eff.multiply(self.w_eff < 0), dtype=float, copy=True)
        neg.data = -neg.data
        neg.eliminate_zeros()
        return neg

    def patched(self, n_new: int, entries: Iterable[tuple[int, int, float]]) -> "EffectiveWeights":
        """Grow to ``n_new`` nodes and add ``(i, j, value)`` to ``w_eff``."""
        if n_new < self.n:
            raise GraphSizeError("effective weights only grow")
        base = self.w_eff.copy()
        base.resize((n_new, n_new))
        triples = list(entries)
        if triples:
            r, c, v = zip(*triples)
            base = base + sparse.csr_matrix((v, (r, c)), shape=(n_new, n_new), dtype=float)
        return EffectiveWeights.from_matrix(base)


# ---------- reconstruction weights ----------
def lle_weights(
    target: np.ndarray,
    neighbors: np.ndarray,
    delta: float,
    cfg: Optional[PgdConfig] = None,
) -> Optional[np.ndarray]:
    """Simplex weights reconstructing ``target`` from ``neighbors`` (one per row).

    Minimises ``‖x - Xᵀw‖² + (δ/2)‖w‖²`` over the simplex. Because weights sum to
    one the residual only depends on offsets ``x_j - x``, which keeps the QP well
    scaled. Weights below 1e-9 are dropped and the rest renormalised.

    Returns ``None`` for an empty neighbourhood (isolated node).
    """
    X = np.atleast_2d(np.asarray(neighbors, dtype=float))
    if X.size == 0:
        return None
    x = np.asarray(target, dtype=float)
    if X.shape[1] != x.shape[0]:
        raise ValueError(f"neighbour dimension {X.shape[1]} does not match target dimension {x.shape[0]}")
    k = X.shape[0]
    if k == 1:
        return np.ones(1)
    Z = X - x
    result = solve_simplex_qp(2.0 * Z @ Z.T, None, delta, cfg)
    if not result.converged:
        logger.debug("reconstruction QP unconverged for %d neighbours", k)
    w = np.where(result.x < WEIGHT_EPS, 0.0, result.x)
    total = w.sum()
    if total <= 0:
        return np.full(k, 1.0 / k)
    return w / total


# ---------- pair geometry ----------
@dataclass(frozen=True)
class _NodeArrays:
    first: np.ndarray
    last: np.ndarray
    start: np.ndarray
    end: np.ndarray

    @classmethod
    def of(cls, nodes: Sequence[Node]) -> "_NodeArrays":
        return cls(
            first=np.asarray([nd.first_frame for nd in nodes], dtype=float),
            last=np.asarray([nd.last_frame for nd in nodes], dtype=float),
            start=np.asarray([nd.start_center for nd in nodes], dtype=float),
            end=np.asarray([nd.end_center for nd in nodes], dtype=float),
        )


def _pair_blocks(arr: _NodeArrays) -> Iterator[tuple[slice, np.ndarray, np.ndarray]]:
    """Yield ``(rows, gap, dist)`` for row blocks against all nodes.

    ``gap[i, j]`` is the frame gap between spans (<= 0 when they co-occur) and
    ``dist[i, j]`` the distance from the earlier node's end to the later node's start.
    """
    n = arr.first.shape[0]
    for lo in range(0, n, _BLOCK):
        rows = slice(lo, min(lo + _BLOCK, n))
        after = arr.first[None, :] - arr.last[rows, None]
        before = arr.first[rows, None] - arr.last[None, :]
        gap = np.maximum(after, before)
        forward = cdist(arr.end[rows], arr.start)
        backward = cdist(arr.start[rows], arr.end)
        dist = np.where(after >= before, forward, backward)
        yield rows, gap, dist


def _facing_offsets(arr: _NodeArrays, velocity: np.ndarray, i: int, ids: np.ndarray, gamma: float) -> np.ndarray:
    """``(γΔt, Δc)`` of neighbours ``ids`` extrapolated to the facing end of node ``i``."""
    later = arr.first[ids] > arr.last[i]
    frame = np.where(later, arr.last[i], arr.first[i])
    anchor = np.where(later[:, None], arr.end[i], arr.start[i])
    near = np.where(later, arr.first[ids], arr.last[ids])
    base = np.where(later[:, None], arr.start[ids], arr.end[ids])
    predicted = base + velocity[ids] * (frame - near)[:, None]
    return np.column_stack([gamma * (near - frame), predicted - anchor])


def _window(nodes: Sequence[Node], params: GraphParams) -> int:
    if any(isinstance(nd.payload, Tracklet) for nd in nodes):
        return params.tracklet_window
    return params.window


def _solve_rows(
    graph: SparseGraph,
    tasks: list[tuple[int, np.ndarray, np.ndarray, np.ndarray]],
    delta: float,
    cfg: Optional[PgdConfig],
    workers: int,
) -> SparseGraph:
    def run(task: tuple[int, np.ndarray, np.ndarray, np.ndarray]) -> tuple[int, np.ndarray, Optional[np.ndarray]]:
        i, target, ids, feats = task
        return i, ids, lle_weights(target, feats, delta, cfg)

    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    for i, ids, w in results:
        if w is None:
            continue
        for j, wij in zip(ids, w):
            if wij > 0:
                graph.add_edge(i, int(j), float(wij))
    return graph


# ---------- builders ----------
def build_spatiotemporal_graph(
    nodes: Sequence[Node],
    params: Optional[GraphParams] = None,
    cfg: Optional[PgdConfig] = None,
    workers: int = 1,
) -> SparseGraph:
    """Reconstruction graph on ``(γt, c)`` over gated temporal neighbourhoods.

    Each node is reconstructed at the facing end of its span: earlier neighbours
    are extrapolated to its first frame, later ones back to its last frame, both
    at their own constant velocity. Single detections do not move, so for them
    this is the plain ``(γt, c)`` offset between the two detections.
    """
    params = params or GraphParams()
    n = len(nodes)
    graph = SparseGraph(n=n)
    if n < 2:
        return graph
    window = _window(nodes, params)
    arr = _NodeArrays.of(nodes)
    velocity = np.asarray([nd.velocity for nd in nodes], dtype=float)

    # offsets are already relative to the node, so the target is the origin
    origin = np.zeros(1 + arr.start.shape[1])
    tasks = []
    for rows, gap, dist in _pair_blocks(arr):
        ok = (gap > 0) & (gap <= window) & (dist <= params.v_max * gap)
        for local, i in enumerate(range(rows.start, rows.stop)):
            ids = np.flatnonzero(ok[local])
            if ids.size:
                tasks.append((i, origin, ids, _facing_offsets(arr, velocity, i, ids, params.gamma)))

    _solve_rows(graph, tasks, params.delta, cfg, workers)
    logger.debug("spatio-temporal graph: %d nodes, %d edges (window=%d)", n, graph.edge_count(), window)
    return graph


def build_appearance_graph(
    nodes: Sequence[Node],
    feature_id: int,
    params: Optional[GraphParams] = None,
    cfg: Optional[PgdConfig] = None,
    workers: int = 1,
) -> SparseGraph:
    """Reconstruction graph on one appearance feature among non-co-occurring nodes."""
    params = params or GraphParams()
    graph = SparseGraph(n=len(nodes))
    featured = [k for k, nd in enumerate(nodes) if feature_id in nd.features]
    if len(featured) < 2:
        return graph

    idx = np.asarray(featured)
    X = np.asarray([nodes[k].features[feature_id] for k in featured], dtype=float)
    first = np.asarray([nodes[k].first_frame for k in featured])
    last = np.asarray([nodes[k].last_frame for k in featured])
    cap = params.app_neighbors or None

    tasks = []
    for a, i in enumerate(featured):
        disjoint = (first > last[a]) | (last < first[a])
        cand = np.flatnonzero(disjoint)
        if cand.size == 0:
            continue
        if cap is not None and cand.size > cap:
            d = np.linalg.norm(X[cand] - X[a], axis=1)
            keep = np.argpartition(d, cap - 1)[:cap]
            cand = np.sort(cand[keep])
        tasks.append((i, X[a], idx[cand], X[cand]))

    _solve_rows(graph, tasks, params.delta, cfg, workers)
    logger.debug("appearance graph %d: %d featured nodes, %d edges", feature_id, len(featured), graph.edge_count())
    return graph


def build_exclusion_graph(nodes: Sequence[Node], params: Optional[GraphParams] = None) -> SparseGraph:
    """Unit edges between co-occurring nodes and pairs violating the gating speed."""
    params = params or GraphParams()
    n = len(nodes)
    graph = SparseGraph(n=n)
    if n < 2:
        return graph
    arr = _NodeArrays.of(nodes)
    for rows, gap, dist in _pair_blocks(arr):
        bad = (gap <= 0) | (dist > params.v_max * np.maximum(gap, 0))
        bad[np.arange(rows.stop - rows.start), np.arange(rows.start, rows.stop)] = False
        for local, j in zip(*np.nonzero(bad)):
            graph.add_edge(rows.start + int(local), int(j), 1.0)
    logger.debug("exclusion graph: %d nodes, %d edges", n, graph.edge_count())
    return graph


def combine(
    graphs_pos: Sequence[SparseGraph],
    graph_neg: SparseGraph,
    alphas: Sequence[float],
) -> EffectiveWeights:
    """``w_eff = Σ_l α_l W_l - W_neg`` and its symmetrisation."""
    if len(graphs_pos) != len(alphas):
        raise GraphSizeError(f"{len(graphs_pos)} positive graphs but {len(alphas)} weights")
    n = graph_neg.n
    if any(g.n != n for g in graphs_pos):
        raise GraphSizeError("all graphs must share the same node count")
    w = -graph_neg.to_csr()
    for alpha, g in zip(alphas, graphs_pos):
        if alpha:
            w = w + alpha * g.to_csr()
    return EffectiveWeights.from_matrix(w)


def write_graph_dump(graphs: Mapping[Union[str, int], SparseGraph], path: Union[str, Path]) -> None:
    """CSV ``graph_id,i,j,weight`` in graph order, then by ``i`` and ``j``."""
    rows = [(gid, i, j, w) for gid, g in graphs.items() for i, j, w in g.items()]
    pd.DataFrame(rows, columns=["graph_id", "i", "j", "weight"]).to_csv(path, index=False, lineterminator="\n")
