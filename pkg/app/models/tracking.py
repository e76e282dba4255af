# app/models/tracking.py
"""Domain types for detections, graph nodes and track output.

Input-side types (`Detection`, `Tracklet`, `Node`) are frozen pydantic models so
they validate once at the boundary and can be shared read-only across worker
threads. Output-side types (`TrackRecord`, `TrackSet`) are dataclasses: their
per-frame confidences and node provenance are bookkeeping that a track file
does not carry, so they are excluded from equality and a written-then-parsed
track set compares equal to the original.

Notes
-----
- A missing appearance feature is an absent key in ``features``, never NaN.
- Node ids are dense ``0..n-1`` in ``(first frame, input order)`` order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

FeatureMap = dict[int, tuple[float, ...]]


class Detection(BaseModel):
    """One timestamped, located observation with optional sporadic features."""

    model_config = ConfigDict(frozen=True)

    frame: int = Field(..., ge=0, description="Integer time index")
    center: tuple[float, ...] = Field(..., min_length=2, description="Spatial coordinates (pixels or cm)")
    extent: Optional[tuple[float, float]] = Field(
        default=None, description="Box width/height in the same unit; absent for ground-plane points"
    )
    confidence: float = Field(default=1.0, ge=0.0, le=1.0, description="Detector confidence")
    features: FeatureMap = Field(
        default_factory=dict, description="feature-id -> vector; a missing key is a sporadic miss"
    )

    def without_features(self) -> "Detection":
        return self.model_copy(update={"features": {}})


def _mean_features(detections: Sequence[Detection]) -> FeatureMap:
    buckets: dict[int, list[tuple[float, ...]]] = {}
    for det in detections:
        for fid, vec in det.features.items():
            buckets.setdefault(fid, []).append(vec)
    return {fid: tuple(float(v) for v in np.mean(np.asarray(vecs, dtype=float), axis=0)) for fid, vecs in buckets.items()}


class Tracklet(BaseModel):
    """Short chain of detections in consecutive frames, treated as one node."""

    model_config = ConfigDict(frozen=True)

    detections: tuple[Detection, ...] = Field(..., min_length=1)
    aggregate_features: FeatureMap = Field(default_factory=dict)

    @classmethod
    def from_detections(cls, detections: Iterable[Detection]) -> "Tracklet":
        dets = tuple(detections)
        return cls(detections=dets, aggregate_features=_mean_features(dets))

    @model_validator(mode="after")
    def _check_chain(self) -> "Tracklet":
        frames = [d.frame for d in self.detections]
        if any(b - a != 1 for a, b in zip(frames, frames[1:])):
            raise ValueError("tracklet frames must increase by exactly 1")
        expected = _mean_features(self.detections)
        if set(expected) != set(self.aggregate_features):
            raise ValueError("aggregate features must cover exactly the present member features")
        for fid, vec in expected.items():
            if not np.allclose(vec, self.aggregate_features[fid], rtol=1e-12, atol=1e-12):
                raise ValueError(f"aggregate feature {fid} is not the mean of member features")
        return self

    def extended(self, detection: Detection) -> "Tracklet":
        return Tracklet.from_detections((*self.detections, detection))


class Node(BaseModel):
    """Graph vertex wrapping a detection or a tracklet."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0)
    payload: Union[Detection, Tracklet]
    span: tuple[int, int]

    @classmethod
    def of(cls, node_id: int, payload: Union[Detection, Tracklet]) -> "Node":
        dets = payload.detections if isinstance(payload, Tracklet) else (payload,)
        return cls(id=node_id, payload=payload, span=(dets[0].frame, dets[-1].frame))

    @model_validator(mode="after")
    def _check_span(self) -> "Node":
        dets = self.detections
        if self.span != (dets[0].frame, dets[-1].frame):
            raise ValueError("node span must match its payload frames")
        return self

    # ---------- accessors ----------
    @property
    def detections(self) -> tuple[Detection, ...]:
        if isinstance(self.payload, Tracklet):
            return self.payload.detections
        return (self.payload,)

    @property
    def features(self) -> FeatureMap:
        if isinstance(self.payload, Tracklet):
            return self.payload.aggregate_features
        return self.payload.features

    @property
    def first_frame(self) -> int:
        return self.span[0]

    @property
    def last_frame(self) -> int:
        return self.span[1]

    @property
    def start_center(self) -> np.ndarray:
        return np.asarray(self.detections[0].center, dtype=float)

    @property
    def end_center(self) -> np.ndarray:
        return np.asarray(self.detections[-1].center, dtype=float)

    @property
    def confidence(self) -> float:
        return max(d.confidence for d in self.detections)

    @property
    def velocity(self) -> np.ndarray:
        """Mean displacement per frame over the span; zero for single detections."""
        duration = self.last_frame - self.first_frame
        if duration == 0:
            return np.zeros_like(self.start_center)
        return (self.end_center - self.start_center) / duration

    def predicted_center(self, frame: int) -> np.ndarray:
        """Center at ``frame``, extrapolated at constant velocity from the nearer end of the span."""
        if frame >= self.last_frame:
            return self.end_center + self.velocity * (frame - self.last_frame)
        if frame <= self.first_frame:
            return self.start_center - self.velocity * (self.first_frame - frame)
        for d in self.detections:
            if d.frame >= frame:
                return np.asarray(d.center, dtype=float)
        return self.end_center


def build_nodes(payloads: Iterable[Union[Detection, Tracklet]]) -> list[Node]:
    """Assign dense ids ordered by first frame, keeping input order within a frame."""
    items = list(payloads)

    def first(p: Union[Detection, Tracklet]) -> int:
        return p.detections[0].frame if isinstance(p, Tracklet) else p.frame

    order = sorted(range(len(items)), key=lambda k: (first(items[k]), k))
    return [Node.of(new_id, items[k]) for new_id, k in enumerate(order)]


# ---------- output side ----------
@dataclass(frozen=True)
class TrackBox:
    """One per-frame box of a track; ``center`` is the box midpoint."""

    center: tuple[float, float]
    extent: tuple[float, float] = (0.0, 0.0)


@dataclass
class TrackRecord:
    """All boxes of one identity, at most one per frame."""

    track_id: int
    boxes: dict[int, TrackBox] = field(default_factory=dict)
    confidences: dict[int, float] = field(default_factory=dict, compare=False)

    @property
    def first_frame(self) -> int:
        return min(self.boxes)

    @property
    def last_frame(self) -> int:
        return max(self.boxes)

    @property
    def length(self) -> int:
        """Frame span covered by the track, gaps included."""
        return self.last_frame - self.first_frame + 1 if self.boxes else 0

    @property
    def max_confidence(self) -> float:
        return max(self.confidences.values()) if self.confidences else 1.0


@dataclass
class TrackSet:
    """Identity-labelled trajectories; ``provenance`` maps node id -> track id."""

    tracks: list[TrackRecord] = field(default_factory=list)
    provenance: dict[int, int] = field(default_factory=dict, compare=False)

    def by_id(self) -> dict[int, TrackRecord]:
        return {t.track_id: t for t in self.tracks}

    def frames(self) -> list[int]:
        return sorted({f for t in self.tracks for f in t.boxes})

    def boxes_at(self, frame: int) -> list[tuple[int, TrackBox]]:
        return [(t.track_id, t.boxes[frame]) for t in self.tracks if frame in t.boxes]

    def sorted(self) -> "TrackSet":
        return TrackSet(
            tracks=sorted(self.tracks, key=lambda t: t.track_id),
            provenance=dict(self.provenance),
        )


class EvalReport(BaseModel):
    """CLEAR MOT summary for one sequence."""

    mota: float = Field(..., le=1.0, description="1 - (misses + false positives + switches) / total ground truth")
    motp: float = Field(..., description="Mean match distance, or mean IoU for IoU matching")
    motp_kind: str = Field(default="distance", description="'distance' or 'iou'")
    switches: int = Field(default=0, ge=0)
    misses: int = Field(default=0, ge=0)
    false_positives: int = Field(default=0, ge=0)
    matches: int = Field(default=0, ge=0)
    total_ground_truth: int = Field(default=0, ge=0)
    matcher: str = Field(default="greedy-persistent", description="Per-frame association strategy")
