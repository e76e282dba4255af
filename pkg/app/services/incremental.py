"""Online graph growth and windowed label propagation.

Frames arrive one at a time. Each new detection becomes a node (or extends an
existing tracklet node when `OnlineParams.aggregate_tracklets` is set and the
match is unambiguous). New nodes connect to recent nodes with heat-kernel
weights, get exclusion edges to co-occurring and gated nodes, and a virtual
source edge whose weight grows as the detection nears the image border. The
label matrix gains one row and one column per new node: column ``i`` is the
identity seeded at node ``i``. Only nodes inside the trailing observation
window are re-optimised; older rows are frozen.

Notes
-----
- Incoming edges of existing nodes are never rewritten, so the effective
  weights are patched rather than rebuilt.
- A new node's spatio-temporal, appearance and source weights share one
  denominator, so together they sum to 1 (or less, when the total is below
  the normalisation floor). A node with no neighbour and a zero border prior
  gets a unit source weight.
- Gating exclusions reach every earlier node, not just those inside the
  spatio-temporal window.
- Old nodes are represented by their last detection, ``(γ t_end, c_end)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

import numpy as np
from scipy import sparse

from app.errors import FrameOrderError
from app.models.config import NodewiseConfig, OnlineParams
from app.models.tracking import Detection, Node, Tracklet
from app.services.dc_nodewise import solve_nodewise, solve_parallel
from app.services.graphs import WEIGHT_EPS, EffectiveWeights, SparseGraph
from app.utils.geometry import border_distance, unambiguous_links

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DistanceFn = Callable[[np.ndarray, np.ndarray], float]


def _l2(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


@dataclass
class OnlineState:
    """Everything the online tracker carries from one frame to the next."""

    nodes: list[Node] = field(default_factory=list)
    st_graph: SparseGraph = field(default_factory=lambda: SparseGraph(n=0))
    app_graphs: dict[int, SparseGraph] = field(default_factory=dict)
    exclusion: SparseGraph = field(default_factory=lambda: SparseGraph(n=0))
    eff: EffectiveWeights = field(default_factory=lambda: EffectiveWeights.from_matrix(sparse.csr_matrix((0, 0))))
    Y: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    source_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    frozen: set[int] = field(default_factory=set)
    floored: set[int] = field(default_factory=set)
    t: int = -1
    first_frame: Optional[int] = None
    solves: int = 0
    unconverged_solves: int = 0

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    def labels(self) -> np.ndarray:
        """Current identity of every node (argmax, lowest column on ties)."""
        return np.argmax(self.Y, axis=1) if self.n else np.zeros(0, dtype=int)


# ---------- weights ----------
def heat_weight(
    x_i: np.ndarray,
    x_j: np.ndarray,
    t_i: int,
    t_j: int,
    sigma: float,
    window: int,
    distance_fn: Optional[DistanceFn] = None,
) -> float:
    """``exp(-d(x_i, x_j)² / σ²)`` for nodes at most ``window`` frames apart, else 0."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if abs(t_i - t_j) > window:
        return 0.0
    d = (distance_fn or _l2)(x_i, x_j)
    return float(np.exp(-(d * d) / (sigma * sigma)))


def source_weight(det: Detection, params: OnlineParams, first_frame: Optional[int] = None) -> float:
    """Prior that ``det`` starts a new identity.

    Detections at or before the start frame get 1. Otherwise the weight is
    ``exp(-d_min² / border_sigma²)`` with ``d_min`` the distance to the image
    border; without image bounds it is 0.
    """
    start = params.start_frame if params.start_frame is not None else (first_frame if first_frame is not None else 0)
    if det.frame <= start:
        return 1.0
    if params.image_bounds is None:
        return 0.0
    d = border_distance(det.center, params.image_bounds, det.extent)
    return float(np.exp(-(d * d) / (params.border_sigma ** 2)))


def augment_labels(Y_prev: np.ndarray, k_new: int) -> np.ndarray:
    """Pad old rows with ``k_new`` zero columns and append uniform new rows."""
    if k_new == 0:
        return Y_prev
    n_old, m_old = Y_prev.shape
    m_new = m_old + k_new
    Y = np.zeros((n_old + k_new, m_new))
    Y[:n_old, :m_old] = Y_prev
    Y[n_old:, :] = 1.0 / m_new
    return Y


# ---------- graph growth ----------
def _end_feature(node: Node, gamma: float) -> np.ndarray:
    return np.concatenate(([gamma * node.last_frame], node.end_center))


def _extend_matches(state: OnlineState, dets: list[Detection], params: OnlineParams, frame: int) -> dict[int, int]:
    """Map detection index -> existing node id for unambiguous tracklet extensions."""
    candidates = [
        nd.id for nd in state.nodes
        if nd.last_frame == frame - 1 and nd.id not in state.frozen
    ]
    if not candidates or not dets:
        return {}
    prev = np.asarray([state.nodes[k].end_center for k in candidates])
    nxt = np.asarray([d.center for d in dets])
    return {b: candidates[a] for a, b in unambiguous_links(prev, nxt, params.tracklet_distance)}


def increment_graphs(
    state: OnlineState,
    new_dets: Sequence[Detection],
    params: Optional[OnlineParams] = None,
) -> tuple[OnlineState, int]:
    """Add one frame of detections to the graphs; returns ``(state, new node count)``.

    Raises:
        FrameOrderError: the detections are not later than ``state.t``.
    """
    params = params or OnlineParams()
    dets = list(new_dets)
    if not dets:
        return state, 0
    frame = dets[0].frame
    if any(d.frame != frame for d in dets):
        raise ValueError("increment_graphs expects detections from a single frame")
    if frame <= state.t:
        raise FrameOrderError(f"frame {frame} does not follow frame {state.t}")
    if state.first_frame is None:
        state.first_frame = frame

    extended = _extend_matches(state, dets, params, frame) if params.aggregate_tracklets else {}
    for b, k in extended.items():
        old = state.nodes[k]
        tracklet = old.payload.extended(dets[b]) if isinstance(old.payload, Tracklet) else Tracklet.from_detections((old.payload, dets[b]))
        state.nodes[k] = Node.of(k, tracklet)

    fresh = [d for b, d in enumerate(dets) if b not in extended]
    n_old = state.n
    n_new = n_old + len(fresh)
    new_ids = list(range(n_old, n_new))
    state.nodes.extend(Node.of(i, d) for i, d in zip(new_ids, fresh))
    for g in (state.st_graph, state.exclusion, *state.app_graphs.values()):
        g.grow(n_new)
    feature_ids = list(range(1, len(params.alphas)))
    for fid in feature_ids:
        state.app_graphs.setdefault(fid, SparseGraph(n=n_new))

    st = params.spatiotemporal
    earlier = [nd for nd in state.nodes[:n_old] if nd.last_frame < frame]
    earlier_ids = np.asarray([nd.id for nd in earlier], dtype=int)
    earlier_gap = frame - np.asarray([nd.last_frame for nd in earlier], dtype=float)
    earlier_end = np.asarray([nd.end_center for nd in earlier], dtype=float) if earlier else np.zeros((0, 2))
    current = [nd for nd in state.nodes if nd.last_frame == frame]
    entries: list[tuple[int, int, float]] = []
    sources = np.zeros(len(fresh))

    for slot, (i, det) in enumerate(zip(new_ids, fresh)):
        node = state.nodes[i]
        x_i = np.concatenate(([params.gamma * frame], np.asarray(det.center, dtype=float)))

        # gating exclusions against every earlier node, spatio-temporal row inside the window
        st_row: dict[int, float] = {}
        if earlier:
            gated = np.linalg.norm(earlier_end - node.start_center, axis=1) > params.v_max * earlier_gap
            for j in earlier_ids[gated]:
                entries.extend(_exclude(state, i, int(j)))
            for j in earlier_ids[~gated & (earlier_gap <= st.window)]:
                nd = state.nodes[int(j)]
                w = heat_weight(x_i, _end_feature(nd, params.gamma), frame, nd.last_frame, st.sigma, st.window)
                if w > WEIGHT_EPS:
                    st_row[nd.id] = w
        for nd in current:
            if nd.id < i:
                entries.extend(_exclude(state, i, nd.id))

        # appearance rows
        app_rows: dict[int, dict[int, float]] = {}
        for fid in feature_ids:
            if fid not in det.features:
                continue
            cue = params.cue_for(fid)
            x_f = np.asarray(det.features[fid], dtype=float)
            row = {}
            for nd in earlier:
                if fid not in nd.features:
                    continue
                w = heat_weight(x_f, np.asarray(nd.features[fid]), frame, nd.last_frame, cue.sigma, cue.window)
                if w > WEIGHT_EPS:
                    row[nd.id] = w
            if row:
                app_rows[fid] = row

        # one denominator over every positive edge and the source edge
        w_s = source_weight(det, params, state.first_frame)
        total = sum(st_row.values()) + sum(sum(row.values()) for row in app_rows.values()) + w_s
        if total == 0.0:
            # no neighbours and no border prior: the node can only start a new identity
            w_s = total = 1.0
        if total < params.normalization_floor:
            state.floored.add(i)
            logger.debug("node %d: positive weights %.3g below floor; normalising by %.3g", i, total, params.normalization_floor)
        denom = max(total, params.normalization_floor)
        sources[slot] = w_s / denom

        alpha_st = params.alphas[0]
        for j, w in st_row.items():
            state.st_graph.add_edge(i, j, w / denom)
            entries.append((i, j, alpha_st * w / denom))
        for fid, row in app_rows.items():
            for j, w in row.items():
                state.app_graphs[fid].add_edge(i, j, w / denom)
                entries.append((i, j, params.alphas[fid] * w / denom))

    state.source_weights = np.concatenate((state.source_weights, sources))
    state.eff = state.eff.patched(n_new, [e for e in entries if e[2] != 0.0])
    state.t = frame
    logger.debug("frame %d: %d new nodes, %d extended, n=%d", frame, len(fresh), len(extended), n_new)
    return state, len(fresh)


def _exclude(state: OnlineState, i: int, j: int) -> list[tuple[int, int, float]]:
    if j in state.exclusion.row(i):
        return []
    state.exclusion.add_edge(i, j, 1.0)
    state.exclusion.add_edge(j, i, 1.0)
    return [(i, j, -1.0), (j, i, -1.0)]


# ---------- propagation ----------
def window_nodes(state: OnlineState, params: OnlineParams) -> list[int]:
    """Freeze nodes that left the observation window; return the mutable ones."""
    horizon = state.t - params.observation_window
    for nd in state.nodes:
        if nd.last_frame < horizon:
            state.frozen.add(nd.id)
    return [nd.id for nd in state.nodes if nd.id not in state.frozen]


def propagate_window(
    state: OnlineState,
    cfg: Optional[NodewiseConfig] = None,
    params: Optional[OnlineParams] = None,
) -> OnlineState:
    """Node-wise sweeps over the window nodes with their source terms; frozen rows are read only."""
    cfg = cfg or NodewiseConfig()
    params = params or OnlineParams()
    active = window_nodes(state, params)
    if not active:
        return state
    if cfg.parallel is not None and cfg.parallel.workers > 1:
        result = solve_parallel(state.eff, cfg, state.Y, source_weights=state.source_weights, active=active)
    else:
        result = solve_nodewise(state.eff, cfg, state.Y, source_weights=state.source_weights, active=active)
    state.Y = result.Y
    state.solves += 1
    state.unconverged_solves += int(not result.converged)
    return state


def online_step(
    state: OnlineState,
    new_dets: Sequence[Detection],
    params: Optional[OnlineParams] = None,
    cfg: Optional[NodewiseConfig] = None,
    frame: Optional[int] = None,
) -> OnlineState:
    """Grow the graph with one frame, augment the labels and re-optimise the window.

    An empty frame only advances ``t`` (to ``frame`` when given, else by one).
    """
    params = params or OnlineParams()
    dets = list(new_dets)
    if not dets:
        target = state.t + 1 if frame is None else frame
        if target <= state.t:
            raise FrameOrderError(f"frame {target} does not follow frame {state.t}")
        state.t = target
        return state
    state, k_new = increment_graphs(state, dets, params)
    state.Y = augment_labels(state.Y, k_new)
    return propagate_window(state, cfg, params)


@dataclass(frozen=True)
class FrameAssignment:
    """Identities of the nodes observed in one frame, right after that frame was processed."""

    frame: int
    assignments: tuple[tuple[int, int], ...]


def stream_online(
    detections: Iterable[Detection],
    params: Optional[OnlineParams] = None,
    cfg: Optional[NodewiseConfig] = None,
    state: Optional[OnlineState] = None,
) -> Iterator[tuple[OnlineState, FrameAssignment]]:
    """Feed frame-sorted detections through `online_step`, one frame at a time."""
    params = params or OnlineParams()
    state = state or OnlineState()
    batch: list[Detection] = []

    def flush() -> tuple[OnlineState, FrameAssignment]:
        nonlocal state
        frame = batch[0].frame
        state = online_step(state, batch, params, cfg)
        labels = state.labels()
        seen = tuple((nd.id, int(labels[nd.id])) for nd in state.nodes if nd.last_frame == frame)
        return state, FrameAssignment(frame=frame, assignments=seen)

    for det in detections:
        if batch and det.frame != batch[0].frame:
            if det.frame < batch[0].frame:
                raise FrameOrderError(f"frame {det.frame} after frame {batch[0].frame}")
            yield flush()
            batch = []
        batch.append(det)
    if batch:
        yield flush()


# ---------- checkpoints ----------
def _edges_array(g: SparseGraph) -> np.ndarray:
    return np.asarray(list(g.items()), dtype=float).reshape(-1, 3)


def _graph_from(arr: np.ndarray, n: int) -> SparseGraph:
    g = SparseGraph(n=n)
    for i, j, w in arr:
        g.add_edge(int(i), int(j), float(w))
    return g


def save_checkpoint(state: OnlineState, path: Union[str, Path]) -> None:
    """Write the state as a versioned ``.npz`` archive (arrays plus JSON nodes)."""
    w = state.eff.w_eff.tocsr()
    meta = {
        "version": CHECKPOINT_VERSION,
        "t": state.t,
        "first_frame": state.first_frame,
        "solves": state.solves,
        "unconverged_solves": state.unconverged_solves,
        "app_feature_ids": sorted(state.app_graphs),
    }
    arrays = {
        "meta": np.array(json.dumps(meta)),
        "nodes": np.array(json.dumps([nd.model_dump(mode="json") for nd in state.nodes])),
        "Y": state.Y,
        "source_weights": state.source_weights,
        "frozen": np.asarray(sorted(state.frozen), dtype=np.int64),
        "floored": np.asarray(sorted(state.floored), dtype=np.int64),
        "w_data": w.data,
        "w_indices": w.indices,
        "w_indptr": w.indptr,
        "st_edges": _edges_array(state.st_graph),
        "exclusion_edges": _edges_array(state.exclusion),
    }
    for fid, g in state.app_graphs.items():
        arrays[f"app_edges_{fid}"] = _edges_array(g)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: Union[str, Path]) -> OnlineState:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        nodes = [Node.model_validate(obj) for obj in json.loads(str(data["nodes"]))]
        n = len(nodes)
        w = sparse.csr_matrix((data["w_data"], data["w_indices"], data["w_indptr"]), shape=(n, n))
        return OnlineState(
            nodes=nodes,
            st_graph=_graph_from(data["st_edges"], n),
            app_graphs={fid: _graph_from(data[f"app_edges_{fid}"], n) for fid in meta["app_feature_ids"]},
            exclusion=_graph_from(data["exclusion_edges"], n),
            eff=EffectiveWeights.from_matrix(w),
            Y=np.array(data["Y"]),
            source_weights=np.array(data["source_weights"]),
            frozen={int(k) for k in data["frozen"]},
            floored={int(k) for k in data["floored"]},
            t=int(meta["t"]),
            first_frame=meta["first_frame"],
            solves=int(meta.get("solves", 0)),
            unconverged_solves=int(meta.get("unconverged_solves", 0)),
        )
