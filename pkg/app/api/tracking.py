# app/api/tracking.py
"""Tracking API endpoints.

Thin HTTP wrappers around `app.services.pipeline`: request bodies carry CSV
text in the same formats the CLI reads from files, and responses return the
track file as CSV text next to the evaluation report.

Routes
------
- ``POST /track/offline``: graph build plus joint or node-wise solve.
- ``POST /track/online``: frame-by-frame incremental tracking.
- ``POST /track/eval``: CLEAR MOT scores for a track file.
- ``GET /track/synth``: seeded synthetic scenario as CSV text.

Notes
-----
- Parse and configuration errors (any `ValueError`, also when wrapped in a
  `PipelineStageError`) map to 400 with the message as ``detail``.
- ``config`` holds the TOML tables as JSON objects, e.g.
  ``{"graph": {"alphas": [1.0, 0.0]}}``; unknown keys are rejected.
"""
from __future__ import annotations

from typing import Any, Literal, Optional

from fastapi import APIRouter, HTTPException, Query
from pydantic import BaseModel, Field

from app.errors import PipelineStageError
from app.models.config import MatchRule, PipelineConfig, validate_pipeline_config
from app.models.tracking import EvalReport
from app.services.clear_mot import evaluate_clear_mot
from app.services.io import format_tracks, parse_detection_text, parse_track_text
from app.services.pipeline import PipelineResult, track_offline, track_online
from app.services.synth import SCENARIOS, generate_scenario

router = APIRouter(prefix="/track", tags=["Tracking"])


class OfflineRequest(BaseModel):
    """Detections to track, with optional ground truth and configuration."""

    detections: str = Field(..., description="Detection CSV text (format set by pipeline.detection_format)")
    ground_truth: Optional[str] = Field(None, description="Ground-truth track CSV text; enables evaluation")
    config: Optional[dict[str, Any]] = Field(None, description="Pipeline configuration tables as JSON")
    solver: Optional[Literal["joint", "nodewise"]] = Field(None, description="Overrides pipeline.solver")
    workers: Optional[int] = Field(None, ge=1, description="Worker threads for graph building and the parallel solver")

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "detections": "0,-1,80.0,160.0,40.0,80.0,0.9\n1,-1,88.0,160.0,40.0,80.0,0.9\n",
                    "solver": "nodewise",
                }
            ]
        }
    }


class OnlineRequest(BaseModel):
    detections: str = Field(..., description="Detection CSV text, sorted by frame")
    ground_truth: Optional[str] = Field(None, description="Ground-truth track CSV text; enables evaluation")
    config: Optional[dict[str, Any]] = Field(None, description="Pipeline configuration tables as JSON")
    window: Optional[int] = Field(None, ge=1, description="Overrides online.observation_window (T_o)")
    workers: Optional[int] = Field(None, ge=1)


class TrackResponse(BaseModel):
    tracks: str = Field(..., description="Track CSV text: frame,track_id,x,y,w,h")
    report: Optional[EvalReport] = Field(None, description="CLEAR MOT report when ground truth was given")
    energy_trace: list[float] = Field(default_factory=list, description="Objective after each solver step (online: per frame)")
    nodes: int = Field(..., ge=0, description="Graph node count")
    unconverged_fraction: float = Field(..., ge=0, le=1)


class EvalRequest(BaseModel):
    tracks: str = Field(..., description="Track CSV text")
    ground_truth: str = Field(..., description="Ground-truth track CSV text")
    match: str = Field("iou:0.5", description="'iou:<ratio>' or 'dist:<distance>'")


class SynthResponse(BaseModel):
    scenario: str
    seed: int
    detections: str = Field(..., description="mot_csv detection text")
    ground_truth: str = Field(..., description="Ground-truth track CSV text")
    image_bounds: tuple[float, float, float, float]


def _bad_request(exc: BaseException) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


def _config(data: Optional[dict[str, Any]]) -> PipelineConfig:
    return validate_pipeline_config(data or {})


def _response(result: PipelineResult) -> TrackResponse:
    return TrackResponse(
        tracks=format_tracks(result.tracks),
        report=result.report,
        energy_trace=result.trace.objectives,
        nodes=len(result.nodes),
        unconverged_fraction=result.stats.unconverged_fraction,
    )


@router.post(
    "/offline",
    response_model=TrackResponse,
    summary="Track detections offline",
    response_description="Post-filtered tracks, optional CLEAR MOT report and the energy trace.",
)
def offline(body: OfflineRequest) -> TrackResponse:
    try:
        cfg = _config(body.config)
        detections = parse_detection_text(body.detections, cfg.pipeline.detection_format)
        gt = parse_track_text(body.ground_truth) if body.ground_truth is not None else None
        result = track_offline(detections, cfg, gt, solver=body.solver, workers=body.workers)
    except PipelineStageError as exc:
        if isinstance(exc.cause, ValueError):
            raise _bad_request(exc) from exc
        raise
    except ValueError as exc:
        raise _bad_request(exc) from exc
    return _response(result)


@router.post(
    "/online",
    response_model=TrackResponse,
    summary="Track detections frame by frame",
    response_description="Tracks after the last frame, optional CLEAR MOT report and the per-frame objective.",
)
def online(body: OnlineRequest) -> TrackResponse:
    try:
        cfg = _config(body.config)
        detections = parse_detection_text(body.detections, cfg.pipeline.detection_format)
        gt = parse_track_text(body.ground_truth) if body.ground_truth is not None else None
        result = track_online(detections, cfg, gt, window=body.window, workers=body.workers)
    except PipelineStageError as exc:
        if isinstance(exc.cause, ValueError):
            raise _bad_request(exc) from exc
        raise
    except ValueError as exc:
        raise _bad_request(exc) from exc
    return _response(result)


@router.post("/eval", response_model=EvalReport, summary="Score tracks against ground truth (CLEAR MOT)")
def evaluate(body: EvalRequest) -> EvalReport:
    try:
        rule = MatchRule.parse(body.match)
        tracks = parse_track_text(body.tracks)
        gt = parse_track_text(body.ground_truth)
    except ValueError as exc:
        raise _bad_request(exc) from exc
    return evaluate_clear_mot(tracks, gt, rule)


@router.get("/synth", response_model=SynthResponse, summary="Generate a synthetic scenario")
def synth(
    scenario: str = Query("crossing", description=f"One of {', '.join(SCENARIOS)}"),
    seed: int = Query(0, ge=0),
) -> SynthResponse:
    try:
        sc = generate_scenario(scenario, seed)
    except ValueError as exc:
        raise _bad_request(exc) from exc
    return SynthResponse(
        scenario=sc.name,
        seed=seed,
        detections=sc.detections_csv(),
        ground_truth=sc.ground_truth_csv(),
        image_bounds=sc.image_bounds,
    )
