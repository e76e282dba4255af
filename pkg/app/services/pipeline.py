"""End-to-end tracking runs.

Offline::

    ingest -> strip overlapping features -> tracklets -> nodes -> graphs
    -> combine -> solve -> refine -> extract -> postfilter -> evaluate

Online streams frames through `app.services.incremental.stream_online` and then
shares extraction, post-filtering and evaluation with the offline path.

Every stage runs inside `_stage`, which logs the boundary and re-raises any
failure as `PipelineStageError` labelled with the stage name. The ``track_*``
functions work on in-memory detections (used by the HTTP router); the ``run_*``
functions read and write files (used by the CLI).
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.errors import PipelineStageError
from app.models.config import NodewiseConfig, ParallelConfig, PipelineConfig, PipelineOptions
from app.models.tracking import Detection, EvalReport, Node, TrackBox, Tracklet, TrackRecord, TrackSet, build_nodes
from app.services.clear_mot import evaluate_clear_mot
from app.services.dc_joint import initial_labels, solve_joint
from app.services.dc_nodewise import (
    Batch,
    objective_with_sources,
    schedule_batches,
    solve_nodewise,
    solve_parallel,
    write_batch_dump,
)
from app.services.energy import EnergyTrace, SolveResult
from app.services.graphs import (
    EffectiveWeights,
    SparseGraph,
    build_appearance_graph,
    build_exclusion_graph,
    build_spatiotemporal_graph,
    combine,
    write_graph_dump,
)
from app.services.incremental import FrameAssignment, OnlineState, save_checkpoint, stream_online
from app.services.io import parse_detection_file, parse_track_file, strip_overlapping_features, write_track_file
from app.services.refine import refine_labels
from app.utils.geometry import unambiguous_links

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
SolverKind = Literal["joint", "nodewise"]


@dataclass
class SolveStats:
    """Solver runs and how many of them stopped at their iteration cap."""

    solves: int = 0
    unconverged: int = 0

    def add(self, result: SolveResult) -> None:
        self.solves += 1
        self.unconverged += int(not result.converged)

    @property
    def unconverged_fraction(self) -> float:
        return self.unconverged / self.solves if self.solves else 0.0


@dataclass
class PipelineResult:
    tracks: TrackSet
    report: Optional[EvalReport]
    trace: EnergyTrace
    stats: SolveStats
    nodes: list[Node] = field(default_factory=list)
    assignments: list[FrameAssignment] = field(default_factory=list)


@contextmanager
def _stage(name: str) -> Iterator[None]:
    logger.debug("stage %s: start", name)
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as exc:
        logger.error("stage %s failed: %s", name, exc)
        raise PipelineStageError(name, exc) from exc


# ---------- pre-aggregation ----------
def build_tracklets(detections: Sequence[Detection], max_dist: float) -> list[Tracklet]:
    """Chain detections of successive frames that are mutually unambiguous.

    A detection at ``t`` extends the chain ending at ``t - 1`` when the two are
    closer than ``max_dist`` and no other detection of either frame is within
    ``max_dist`` of them. Every detection lands in exactly one tracklet.
    """
    ordered = sorted(detections, key=lambda d: d.frame)
    chains: list[list[Detection]] = []
    open_chains: list[int] = []
    prev_frame: Optional[int] = None
    frame_dets: list[Detection] = []

    def close_frame(frame: int, dets: list[Detection]) -> list[int]:
        links: dict[int, int] = {}
        if prev_frame == frame - 1 and open_chains and dets:
            prev = np.asarray([chains[c][-1].center for c in open_chains], dtype=float)
            nxt = np.asarray([d.center for d in dets], dtype=float)
            links = {b: open_chains[a] for a, b in unambiguous_links(prev, nxt, max_dist)}
        now_open = []
        for b, det in enumerate(dets):
            if b in links:
                chains[links[b]].append(det)
                now_open.append(links[b])
            else:
                chains.append([det])
                now_open.append(len(chains) - 1)
        return now_open

    for det in ordered:
        if frame_dets and det.frame != frame_dets[0].frame:
            frame = frame_dets[0].frame
            open_chains = close_frame(frame, frame_dets)
            prev_frame, frame_dets = frame, []
        frame_dets.append(det)
    if frame_dets:
        close_frame(frame_dets[0].frame, frame_dets)

    tracklets = [Tracklet.from_detections(c) for c in chains]
    logger.info("tracklets: %d detections -> %d tracklets", len(detections), len(tracklets))
    return tracklets


# ---------- graphs and solve ----------
def build_graphs(
    nodes: Sequence[Node],
    cfg: PipelineConfig,
    workers: int = 1,
) -> tuple[dict[str, SparseGraph], EffectiveWeights]:
    """Build every positive graph plus the exclusion graph and combine them.

    Graph ``appearance_l`` uses feature id ``l`` and weight ``alphas[l]``.
    Appearance graphs with a zero weight are left empty.
    """
    params = cfg.graph
    n = len(nodes)
    graphs: dict[str, SparseGraph] = {
        "spatiotemporal": build_spatiotemporal_graph(nodes, params, cfg.pgd, workers),
    }
    for fid in range(1, len(params.alphas)):
        graphs[f"appearance_{fid}"] = (
            build_appearance_graph(nodes, fid, params, cfg.pgd, workers) if params.alphas[fid] else SparseGraph(n=n)
        )
    graphs["exclusion"] = build_exclusion_graph(nodes, params)
    positives = [g for name, g in graphs.items() if name != "exclusion"]
    eff = combine(positives, graphs["exclusion"], params.alphas)
    logger.info(
        "graphs: n=%d, %s",
        n, ", ".join(f"{name}={g.edge_count()}" for name, g in graphs.items()),
    )
    return graphs, eff


def _nodewise_config(cfg: PipelineConfig, workers: Optional[int]) -> NodewiseConfig:
    nodewise = cfg.nodewise
    if workers is not None and workers > 1:
        return nodewise.model_copy(update={"parallel": ParallelConfig(workers=workers)})
    return nodewise


def solve_labels(
    eff: EffectiveWeights,
    cfg: PipelineConfig,
    solver: Optional[SolverKind] = None,
    workers: Optional[int] = None,
) -> tuple[SolveResult, Optional[list[Batch]]]:
    """Run the configured solver, then refine its labels.

    The joint solver starts from ``[joint].init`` and node-wise from identity
    unless ``[pipeline].init`` says otherwise. The node-wise solver runs in
    batch-parallel mode when ``workers > 1`` or a ``[nodewise.parallel]`` table
    is configured; the batches are returned too. The returned trace covers the
    solve followed by the refinement.
    """
    solver = solver or cfg.pipeline.solver
    n = eff.n
    if n == 0:
        return SolveResult(Y=np.zeros((0, 0)), trace=EnergyTrace()), None
    nodewise = _nodewise_config(cfg, workers)
    batches = None
    if solver == "joint":
        init = initial_labels(n, n, cfg.pipeline.init or cfg.joint.init, cfg.joint.seed)
        result = solve_joint(eff, cfg.joint, init)
    else:
        init = initial_labels(n, n, cfg.pipeline.init or "identity", nodewise.seed)
        if nodewise.parallel is not None:
            batches = schedule_batches(eff)
            result = solve_parallel(eff, nodewise, init, batches=batches)
        else:
            result = solve_nodewise(eff, nodewise, init)
    if cfg.pipeline.refine_rounds:
        result = _refined(eff, result, nodewise.model_copy(update={"parallel": None}), cfg.pipeline)
    return result, batches


def _refined(eff: EffectiveWeights, result: SolveResult, cfg: NodewiseConfig, opts: PipelineOptions) -> SolveResult:
    refined = refine_labels(eff, result.Y, cfg, opts.refine_rounds, link_floor=opts.refine_link_floor)
    trace = EnergyTrace(objectives=result.trace.objectives + refined.trace.objectives[1:])
    return SolveResult(
        Y=refined.Y,
        trace=trace,
        iterations=result.iterations,
        converged=result.converged,
        inner_solves=result.inner_solves,
        inner_unconverged=result.inner_unconverged,
        batch_trace=result.batch_trace,
    )


# ---------- extraction ----------
def extract_tracks(Y: np.ndarray, nodes: Sequence[Node]) -> TrackSet:
    """Assign each node the argmax column of its row and merge nodes per label.

    Ties go to the lowest column. When two nodes of one track cover the same
    frame, the more confident detection keeps the frame (the earlier node on
    equal confidence).
    """
    if not nodes:
        return TrackSet()
    labels = np.argmax(np.asarray(Y, dtype=float), axis=1)
    records: dict[int, TrackRecord] = {}
    provenance: dict[int, int] = {}
    for nd in nodes:
        tid = int(labels[nd.id])
        provenance[nd.id] = tid
        rec = records.setdefault(tid, TrackRecord(track_id=tid))
        for det in nd.detections:
            held = rec.confidences.get(det.frame)
            if held is not None and det.confidence <= held:
                continue
            rec.boxes[det.frame] = TrackBox(
                center=(float(det.center[0]), float(det.center[1])),
                extent=det.extent or (0.0, 0.0),
            )
            rec.confidences[det.frame] = det.confidence

    for rec in records.values():
        rec.boxes = dict(sorted(rec.boxes.items()))
        rec.confidences = dict(sorted(rec.confidences.items()))
    return TrackSet(tracks=[records[k] for k in sorted(records)], provenance=provenance)


def postfilter(tracks: TrackSet, cfg: Optional[PipelineOptions] = None) -> TrackSet:
    """Drop tracks shorter than ``min_length`` frames or never as confident as ``min_conf``."""
    cfg = cfg or PipelineOptions()
    kept = [t for t in tracks.tracks if t.length >= cfg.min_length and t.max_confidence >= cfg.min_conf]
    ids = {t.track_id for t in kept}
    provenance = {node: tid for node, tid in tracks.provenance.items() if tid in ids}
    if len(kept) < len(tracks.tracks):
        logger.info("postfilter: kept %d of %d tracks", len(kept), len(tracks.tracks))
    return TrackSet(tracks=kept, provenance=provenance)


# ---------- offline ----------
def track_offline(
    detections: Sequence[Detection],
    cfg: Optional[PipelineConfig] = None,
    ground_truth: Optional[TrackSet] = None,
    *,
    solver: Optional[SolverKind] = None,
    workers: Optional[int] = None,
    graph_dump: Optional[PathLike] = None,
    batch_dump: Optional[PathLike] = None,
) -> PipelineResult:
    """Offline run over in-memory detections."""
    cfg = cfg or PipelineConfig()
    opts = cfg.pipeline
    stats = SolveStats()
    payloads: list[Union[Detection, Tracklet]] = list(detections)

    if opts.strip_overlap:
        with _stage("strip"):
            payloads = strip_overlapping_features(list(detections), opts.max_overlap)
    if opts.build_tracklets:
        with _stage("tracklets"):
            payloads = build_tracklets(payloads, opts.tracklet_distance)
    with _stage("nodes"):
        nodes = build_nodes(payloads)
        logger.info("nodes: %d from %d detections", len(nodes), len(detections))
    with _stage("graphs"):
        graphs, eff = build_graphs(nodes, cfg, workers or 1)
        if graph_dump is not None:
            write_graph_dump(graphs, graph_dump)
    with _stage("solve"):
        result, batches = solve_labels(eff, cfg, solver, workers)
        stats.add(result)
        if batch_dump is not None and batches is not None:
            write_batch_dump(batches, batch_dump)
    with _stage("extract"):
        tracks = extract_tracks(result.Y, nodes)
    with _stage("postfilter"):
        tracks = postfilter(tracks, opts)
    report = None
    if ground_truth is not None:
        with _stage("evaluate"):
            report = evaluate_clear_mot(tracks, ground_truth, opts.match_rule)
    return PipelineResult(tracks=tracks, report=report, trace=result.trace, stats=stats, nodes=nodes)


def _ingest(cfg: PipelineConfig, det_path: PathLike, gt_path: Optional[PathLike]) -> tuple[list[Detection], Optional[TrackSet]]:
    with _stage("ingest"):
        detections = parse_detection_file(det_path, cfg.pipeline.detection_format)
        ground_truth = parse_track_file(gt_path) if gt_path is not None else None
        logger.info("ingest: %d detections from %s", len(detections), det_path)
    return detections, ground_truth


def _write_outputs(result: PipelineResult, out: Optional[PathLike], energy_trace: Optional[PathLike]) -> None:
    with _stage("write"):
        if out is not None:
            write_track_file(result.tracks, out)
        if energy_trace is not None:
            result.trace.write_csv(energy_trace)


def run_offline(
    cfg: PipelineConfig,
    det_path: PathLike,
    gt_path: Optional[PathLike] = None,
    *,
    solver: Optional[SolverKind] = None,
    workers: Optional[int] = None,
    out: Optional[PathLike] = None,
    energy_trace: Optional[PathLike] = None,
    graph_dump: Optional[PathLike] = None,
    batch_dump: Optional[PathLike] = None,
) -> PipelineResult:
    detections, ground_truth = _ingest(cfg, det_path, gt_path)
    result = track_offline(
        detections, cfg, ground_truth, solver=solver, workers=workers, graph_dump=graph_dump, batch_dump=batch_dump
    )
    _write_outputs(result, out, energy_trace)
    return result


# ---------- online ----------
def track_online(
    detections: Sequence[Detection],
    cfg: Optional[PipelineConfig] = None,
    ground_truth: Optional[TrackSet] = None,
    *,
    window: Optional[int] = None,
    workers: Optional[int] = None,
    checkpoint: Optional[PathLike] = None,
) -> PipelineResult:
    """Incremental run; ``window`` overrides the configured observation window."""
    cfg = cfg or PipelineConfig()
    if window is not None:
        cfg = cfg.with_updates(online={"observation_window": window})
    params = cfg.online
    nodewise = _nodewise_config(cfg, workers)
    trace = EnergyTrace()
    assignments: list[FrameAssignment] = []
    state = OnlineState()

    with _stage("online"):
        for state, assignment in stream_online(detections, params, nodewise, state):
            assignments.append(assignment)
            trace.record(objective_with_sources(state.eff, state.Y, state.source_weights))
        logger.info("online: %d frames, %d nodes, %d frozen", len(assignments), state.n, len(state.frozen))
        if state.floored:
            logger.debug("online: %d nodes normalised at the floor", len(state.floored))
        if checkpoint is not None:
            save_checkpoint(state, checkpoint)

    stats = SolveStats(solves=state.solves, unconverged=state.unconverged_solves)
    with _stage("extract"):
        tracks = extract_tracks(state.Y, state.nodes)
    with _stage("postfilter"):
        tracks = postfilter(tracks, cfg.pipeline)
    report = None
    if ground_truth is not None:
        with _stage("evaluate"):
            report = evaluate_clear_mot(tracks, ground_truth, cfg.pipeline.match_rule)
    return PipelineResult(
        tracks=tracks, report=report, trace=trace, stats=stats, nodes=list(state.nodes), assignments=assignments
    )


def write_assignments(assignments: Iterable[FrameAssignment], path: PathLike) -> None:
    """CSV ``frame,node_id,track_id`` in streaming order."""
    rows = [(a.frame, node, track) for a in assignments for node, track in a.assignments]
    pd.DataFrame(rows, columns=["frame", "node_id", "track_id"]).to_csv(path, index=False, lineterminator="\n")


def run_online(
    cfg: PipelineConfig,
    det_path: PathLike,
    gt_path: Optional[PathLike] = None,
    *,
    window: Optional[int] = None,
    workers: Optional[int] = None,
    out: Optional[PathLike] = None,
    energy_trace: Optional[PathLike] = None,
    stream_out: Optional[PathLike] = None,
    checkpoint: Optional[PathLike] = None,
) -> PipelineResult:
    detections, ground_truth = _ingest(cfg, det_path, gt_path)
    result = track_online(detections, cfg, ground_truth, window=window, workers=workers, checkpoint=checkpoint)
    _write_outputs(result, out, energy_trace)
    if stream_out is not None:
        with _stage("write"):
            write_assignments(result.assignments, stream_out)
    return result
