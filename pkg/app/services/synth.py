"""Seeded synthetic tracking scenarios.

``crossing``
    Two targets on opposite horizontal paths cross at frame 25 while both are
    hidden (frames 25-34). Appearance features are present on every fifth frame
    but never within 8 frames of the crossing, so only appearance can tell the
    targets apart after the gap.
``parallel``
    ``n_targets`` targets moving right in lanes 150 px apart, always visible.
``occlusion``
    Three lane targets; the middle one is hidden for frames 20-29.

Boxes are 40x80. Detection centers carry uniform jitter; ground truth holds the
true centers for the visible frames only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Optional, Union

import numpy as np

from app.models.tracking import Detection, TrackBox, TrackRecord, TrackSet
from app.services.io import format_detections, format_tracks

logger = logging.getLogger(__name__)

ScenarioName = Literal["crossing", "parallel", "occlusion"]
SCENARIOS: tuple[str, ...] = ("crossing", "parallel", "occlusion")
BOX_EXTENT = (40.0, 80.0)
FEATURE_DIM = 8

Path2D = Callable[[int], tuple[float, float]]


@dataclass(frozen=True)
class Scenario:
    name: str
    detections: list[Detection]
    ground_truth: TrackSet
    image_bounds: tuple[float, float, float, float]

    def detections_csv(self) -> str:
        return format_detections(self.detections)

    def ground_truth_csv(self) -> str:
        return format_tracks(self.ground_truth)


@dataclass(frozen=True)
class _Target:
    track_id: int
    path: Path2D
    hidden: frozenset[int] = frozenset()


def _appearance(rng: np.random.Generator, k: int) -> np.ndarray:
    base = np.zeros(FEATURE_DIM)
    base[k % FEATURE_DIM] = 1.0
    return base + rng.normal(scale=0.01, size=FEATURE_DIM)


def _render(
    name: str,
    targets: list[_Target],
    n_frames: int,
    rng: np.random.Generator,
    jitter: float,
    has_feature: Callable[[int], bool],
    bounds: tuple[float, float, float, float],
) -> Scenario:
    looks = {t.track_id: _appearance(rng, k) for k, t in enumerate(targets)}
    detections: list[Detection] = []
    records = {t.track_id: TrackRecord(track_id=t.track_id) for t in targets}

    for frame in range(n_frames):
        for target in targets:
            if frame in target.hidden:
                continue
            x, y = target.path(frame)
            records[target.track_id].boxes[frame] = TrackBox(center=(x, y), extent=BOX_EXTENT)
            dx, dy = rng.uniform(-jitter, jitter, size=2)
            features = {}
            if has_feature(frame):
                noisy = looks[target.track_id] + rng.normal(scale=0.01, size=FEATURE_DIM)
                features[1] = tuple(float(v) for v in noisy)
            detections.append(
                Detection(frame=frame, center=(x + dx, y + dy), extent=BOX_EXTENT, confidence=0.9, features=features)
            )

    gt = TrackSet(tracks=[records[t.track_id] for t in targets if records[t.track_id].boxes])
    logger.debug("scenario %s: %d detections, %d targets", name, len(detections), len(gt.tracks))
    return Scenario(name=name, detections=detections, ground_truth=gt, image_bounds=bounds)


def _crossing(rng: np.random.Generator) -> Scenario:
    hidden = frozenset(range(25, 35))
    targets = [
        _Target(1, lambda f: (150.0 + 8.0 * f, 200.0), hidden),
        _Target(2, lambda f: (550.0 - 8.0 * f, 210.0), hidden),
    ]
    return _render(
        "crossing", targets, 60, rng, jitter=0.5,
        has_feature=lambda f: f % 5 == 0 and abs(f - 29.5) > 8,
        bounds=(0.0, 0.0, 800.0, 480.0),
    )


def _lane(k: int) -> Path2D:
    return lambda f: (100.0 + 20.0 * k + 5.0 * f, 100.0 + 150.0 * k)


def _parallel(rng: np.random.Generator, n_targets: int) -> Scenario:
    targets = [_Target(k + 1, _lane(k)) for k in range(n_targets)]
    height = 100.0 + 150.0 * n_targets
    return _render(
        "parallel", targets, 60, rng, jitter=1.0,
        has_feature=lambda f: f % 5 == 0,
        bounds=(0.0, 0.0, 1000.0, height),
    )


def _occlusion(rng: np.random.Generator) -> Scenario:
    targets = [
        _Target(1, _lane(0)),
        _Target(2, _lane(1), frozenset(range(20, 30))),
        _Target(3, _lane(2)),
    ]
    return _render(
        "occlusion", targets, 60, rng, jitter=1.0,
        has_feature=lambda f: f % 5 == 0,
        bounds=(0.0, 0.0, 1000.0, 550.0),
    )


def generate_scenario(name: str, seed: int = 0, n_targets: Optional[int] = None) -> Scenario:
    """Build scenario ``name``; the same seed always yields the same corpus."""
    rng = np.random.default_rng(seed)
    if name == "crossing":
        return _crossing(rng)
    if name == "parallel":
        return _parallel(rng, n_targets or 4)
    if name == "occlusion":
        return _occlusion(rng)
    raise ValueError(f"unknown scenario {name!r}; choose one of {', '.join(SCENARIOS)}")


def write_scenario(scenario: Scenario, det_path: Union[str, Path], gt_path: Union[str, Path]) -> None:
    Path(det_path).write_text(scenario.detections_csv(), encoding="utf-8")
    Path(gt_path).write_text(scenario.ground_truth_csv(), encoding="utf-8")
