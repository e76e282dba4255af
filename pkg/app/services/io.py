"""Detection, ground-truth and track file I/O.

Formats
-------
- ``mot_csv`` detections: ``frame,id,bb_left,bb_top,bb_width,bb_height,conf[,f1,...,fk]``.
  The id column is ignored. Each feature column holds one vector as
  space-separated numbers; an empty column means the feature is absent on that
  line. Feature ids are the 1-based positions of the feature columns.
- ``apidis_csv`` detections: ``frame,id,x,y,conf[,f1,...,fk]`` in ground-plane
  units (cm) with no box extent.
- Track files (also used for ground truth): ``frame,track_id,x,y,w,h`` where
  ``x,y`` is the box center. Rows are sorted by frame then track id.

Every reader has a ``*_text`` twin used by the HTTP layer. Numbers are parsed
with round-trip float parsing so that a written track file re-parses to exactly the same values.
"""
from __future__ import annotations

import logging
from io import StringIO
from pathlib import Path
from typing import Iterable, Literal, Optional, Union

import numpy as np
import pandas as pd

from app.errors import DetectionParseError, FeatureDimensionError
from app.models.tracking import Detection, TrackBox, TrackRecord, TrackSet
from app.utils.geometry import box_center, iou_matrix

logger = logging.getLogger(__name__)

DetectionFormat = Literal["mot_csv", "apidis_csv"]
PathLike = Union[str, Path]

_FIXED_COLUMNS: dict[str, int] = {"mot_csv": 7, "apidis_csv": 5}
TRACK_COLUMNS = ["frame", "track_id", "x", "y", "w", "h"]


# ---------- helpers ----------
def _read_raw(text: str) -> Optional[pd.DataFrame]:
    """Read ragged CSV text as strings, one row per physical line (blank lines kept)."""
    if not text.strip():
        return None
    width = max(line.count(",") + 1 for line in text.splitlines())
    return pd.read_csv(
        StringIO(text),
        header=None,
        names=list(range(width)),
        dtype=str,
        keep_default_na=False,
        skip_blank_lines=False,
        encoding="utf-8",
    )


def _cells(row: tuple) -> list[str]:
    # short lines are padded with NaN up to the widest line
    return [c.strip() if isinstance(c, str) else "" for c in row]


def _number(value: str, line: int, column: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise DetectionParseError(line, f"{column} is not a number: {value!r}") from None
    if not np.isfinite(out):
        raise DetectionParseError(line, f"{column} is not finite")
    return out


def _frame(value: str, line: int) -> int:
    f = _number(value, line, "frame")
    if f != int(f) or f < 0:
        raise DetectionParseError(line, f"frame must be a non-negative integer, got {value!r}")
    return int(f)


def _feature(value: str, line: int, fid: int) -> Optional[tuple[float, ...]]:
    value = value.strip()
    if not value:
        return None
    return tuple(_number(tok, line, f"feature {fid}") for tok in value.split())


# ---------- detections ----------
def parse_detection_text(text: str, format: DetectionFormat = "mot_csv") -> list[Detection]:
    """Parse detection CSV text into frame-sorted `Detection`s.

    Raises:
        DetectionParseError: a line is malformed (carries the 1-based line number).
        FeatureDimensionError: a feature id changes dimension across lines.
    """
    if format not in _FIXED_COLUMNS:
        raise ValueError(f"unknown detection format: {format}")
    raw = _read_raw(text)
    if raw is None:
        return []
    fixed = _FIXED_COLUMNS[format]
    dims: dict[int, int] = {}
    out: list[Detection] = []

    for idx, row in enumerate(raw.itertuples(index=False, name=None)):
        line = idx + 1
        cells = _cells(row)
        if not any(cells):
            continue
        if len(cells) < fixed or any(not c for c in cells[:fixed]):
            raise DetectionParseError(line, f"expected at least {fixed} fields for {format}")

        frame = _frame(cells[0], line)
        if format == "mot_csv":
            left, top, w, h = (_number(cells[k], line, name) for k, name in zip(range(2, 6), ("bb_left", "bb_top", "bb_width", "bb_height")))
            if w < 0 or h < 0:
                raise DetectionParseError(line, "box extent must be non-negative")
            center: tuple[float, ...] = box_center(left, top, w, h)
            extent: Optional[tuple[float, float]] = (w, h)
            conf = _number(cells[6], line, "conf")
        else:
            center = (_number(cells[2], line, "x"), _number(cells[3], line, "y"))
            extent = None
            conf = _number(cells[4], line, "conf")
        if not 0.0 <= conf <= 1.0:
            raise DetectionParseError(line, f"confidence must be in [0, 1], got {conf}")

        features: dict[int, tuple[float, ...]] = {}
        for pos, cell in enumerate(cells[fixed:], start=1):
            vec = _feature(cell, line, pos)
            if vec is None:
                continue
            expected = dims.setdefault(pos, len(vec))
            if expected != len(vec):
                raise FeatureDimensionError(pos, expected, len(vec), line)
            features[pos] = vec

        out.append(Detection(frame=frame, center=center, extent=extent, confidence=conf, features=features))

    # stable: equal frames keep input order
    out.sort(key=lambda d: d.frame)
    return out


def parse_detection_file(path: PathLike, format: DetectionFormat = "mot_csv") -> list[Detection]:
    """Read and parse a detection file; see `parse_detection_text`."""
    out = parse_detection_text(Path(path).read_text(encoding="utf-8"), format)
    logger.debug("parsed %d detections from %s", len(out), path)
    return out


def _format_number(v: float) -> str:
    return repr(float(v))


def _frame_text(frame: pd.DataFrame) -> str:
    if frame.empty:
        return ""
    return frame.to_csv(header=False, index=False, lineterminator="\n")


def format_detections(detections: Iterable[Detection], format: DetectionFormat = "mot_csv") -> str:
    """Render detections in ``format``; absent features become empty columns."""
    dets = list(detections)
    n_features = max((max(d.features) for d in dets if d.features), default=0)
    rows: list[list[str]] = []
    for d in dets:
        if format == "mot_csv":
            if d.extent is None:
                raise ValueError("mot_csv output needs box extents")
            w, h = d.extent
            head = [str(d.frame), "-1", _format_number(d.center[0] - w / 2.0), _format_number(d.center[1] - h / 2.0),
                    _format_number(w), _format_number(h), _format_number(d.confidence)]
        else:
            head = [str(d.frame), "-1", _format_number(d.center[0]), _format_number(d.center[1]), _format_number(d.confidence)]
        feats = [" ".join(_format_number(v) for v in d.features[fid]) if fid in d.features else "" for fid in range(1, n_features + 1)]
        rows.append(head + feats)
    return _frame_text(pd.DataFrame(rows))


def write_detection_file(detections: Iterable[Detection], path: PathLike, format: DetectionFormat = "mot_csv") -> None:
    Path(path).write_text(format_detections(detections, format), encoding="utf-8")


def strip_overlapping_features(detections: list[Detection], max_overlap: float = 0.05) -> list[Detection]:
    """Drop appearance features of boxes overlapping a same-frame box by IoU > ``max_overlap``.

    Positions and order are untouched. Detections without an extent never overlap.
    """
    by_frame: dict[int, list[int]] = {}
    for k, d in enumerate(detections):
        if d.extent is not None:
            by_frame.setdefault(d.frame, []).append(k)

    drop: set[int] = set()
    for members in by_frame.values():
        if len(members) < 2:
            continue
        centers = np.asarray([detections[k].center[:2] for k in members], dtype=float)
        extents = np.asarray([detections[k].extent for k in members], dtype=float)
        overlap = iou_matrix(centers, extents, centers, extents)
        np.fill_diagonal(overlap, 0.0)
        hits = np.flatnonzero((overlap > max_overlap).any(axis=1))
        drop.update(members[h] for h in hits)

    if drop:
        logger.debug("stripped features from %d overlapping detections", len(drop))
    return [d.without_features() if k in drop and d.features else d for k, d in enumerate(detections)]


# ---------- tracks ----------
def format_tracks(tracks: TrackSet) -> str:
    """``frame,track_id,x,y,w,h`` rows sorted by frame then track id."""
    rows = [
        (frame, rec.track_id, box.center[0], box.center[1], box.extent[0], box.extent[1])
        for rec in tracks.tracks
        for frame, box in rec.boxes.items()
    ]
    frame = pd.DataFrame(rows, columns=TRACK_COLUMNS)
    if not frame.empty:
        frame = frame.astype({"frame": "int64", "track_id": "int64", "x": float, "y": float, "w": float, "h": float})
        frame = frame.sort_values(["frame", "track_id"], kind="stable")
    return _frame_text(frame)


def write_track_file(tracks: TrackSet, path: PathLike) -> None:
    Path(path).write_text(format_tracks(tracks), encoding="utf-8")


def parse_track_text(text: str) -> TrackSet:
    """Parse track (or ground-truth) CSV text into a `TrackSet` ordered by track id."""
    raw = _read_raw(text)
    if raw is None:
        return TrackSet()

    records: dict[int, TrackRecord] = {}
    for idx, row in enumerate(raw.itertuples(index=False, name=None)):
        line = idx + 1
        cells = _cells(row)
        if not any(cells):
            continue
        if len(cells) < len(TRACK_COLUMNS) or any(not c for c in cells[:6]) or any(cells[6:]):
            raise DetectionParseError(line, "expected 6 fields: frame,track_id,x,y,w,h")
        f = _frame(cells[0], line)
        tid = _number(cells[1], line, "track_id")
        if tid != int(tid):
            raise DetectionParseError(line, "track_id must be an integer")
        x, y, w, h = (_number(cells[k], line, TRACK_COLUMNS[k]) for k in range(2, 6))
        rec = records.setdefault(int(tid), TrackRecord(track_id=int(tid)))
        if f in rec.boxes:
            raise DetectionParseError(line, f"track {int(tid)} has two boxes in frame {f}")
        rec.boxes[f] = TrackBox(center=(x, y), extent=(w, h))

    for rec in records.values():
        rec.boxes = dict(sorted(rec.boxes.items()))
    return TrackSet(tracks=[records[k] for k in sorted(records)])


def parse_track_file(path: PathLike) -> TrackSet:
    return parse_track_text(Path(path).read_text(encoding="utf-8"))
