"""CLEAR MOT evaluation of a track set against ground truth.

Association is greedy and persistent: in every frame a ground-truth target
first keeps the track it was last matched to, if that pair is still valid under
the match rule, and the remaining targets are then paired with the remaining
tracks by best score. An identity switch is counted whenever a target's matched
track differs from the track it was last matched to, so a swap between two
targets counts twice.

Notes
-----
- ``iou`` rules accept pairs with IoU strictly above the threshold; ``dist``
  rules accept center distances strictly below it.
- MOTP is the mean center distance of matches for ``dist`` rules and the mean
  IoU for ``iou`` rules.
- With no ground-truth boxes the MOTA denominator is taken as 1.
"""
from __future__ import annotations

import logging
from typing import Optional, Union

import numpy as np
from scipy.spatial.distance import cdist

from app.models.config import MatchRule
from app.models.tracking import EvalReport, TrackBox, TrackSet
from app.utils.geometry import iou_matrix

logger = logging.getLogger(__name__)


def _scores(gts: list[TrackBox], hyps: list[TrackBox], rule: MatchRule) -> tuple[np.ndarray, np.ndarray]:
    """Score matrix and validity mask, ground truth on rows."""
    g_centers = np.asarray([b.center for b in gts], dtype=float)
    h_centers = np.asarray([b.center for b in hyps], dtype=float)
    if rule.kind == "iou":
        g_ext = np.asarray([b.extent for b in gts], dtype=float)
        h_ext = np.asarray([b.extent for b in hyps], dtype=float)
        scores = iou_matrix(g_centers, g_ext, h_centers, h_ext)
        return scores, scores > rule.threshold
    scores = cdist(g_centers, h_centers)
    return scores, scores < rule.threshold


def evaluate_clear_mot(
    tracks: TrackSet,
    ground_truth: TrackSet,
    match_rule: Union[str, MatchRule] = "iou:0.5",
) -> EvalReport:
    """Score ``tracks`` against ``ground_truth`` frame by frame."""
    rule = MatchRule.parse(match_rule)
    frames = sorted(set(tracks.frames()) | set(ground_truth.frames()))

    last_match: dict[int, int] = {}
    misses = false_positives = switches = matches = total_gt = 0
    score_sum = 0.0

    for frame in frames:
        gts = ground_truth.boxes_at(frame)
        hyps = tracks.boxes_at(frame)
        total_gt += len(gts)
        if not gts or not hyps:
            misses += len(gts)
            false_positives += len(hyps)
            continue

        scores, valid = _scores([b for _, b in gts], [b for _, b in hyps], rule)
        hyp_index = {tid: k for k, (tid, _) in enumerate(hyps)}
        pairs: list[tuple[int, int]] = []
        used_g: set[int] = set()
        used_h: set[int] = set()

        # keep last correspondences that are still valid
        for gi, (gid, _) in enumerate(gts):
            hi: Optional[int] = hyp_index.get(last_match.get(gid, -1))
            if hi is not None and hi not in used_h and valid[gi, hi]:
                pairs.append((gi, hi))
                used_g.add(gi)
                used_h.add(hi)

        candidates = [
            (gi, hi) for gi, hi in zip(*np.nonzero(valid))
            if gi not in used_g and hi not in used_h
        ]
        sign = -1.0 if rule.kind == "iou" else 1.0
        candidates.sort(key=lambda p: (sign * scores[p], gts[p[0]][0], hyps[p[1]][0]))
        for gi, hi in candidates:
            if gi in used_g or hi in used_h:
                continue
            pairs.append((int(gi), int(hi)))
            used_g.add(gi)
            used_h.add(hi)

        for gi, hi in pairs:
            gid, tid = gts[gi][0], hyps[hi][0]
            previous = last_match.get(gid)
            if previous is not None and previous != tid:
                switches += 1
            last_match[gid] = tid
            score_sum += float(scores[gi, hi])
        matches += len(pairs)
        misses += len(gts) - len(pairs)
        false_positives += len(hyps) - len(pairs)

    mota = 1.0 - (misses + false_positives + switches) / max(total_gt, 1)
    motp = score_sum / matches if matches else 0.0
    report = EvalReport(
        mota=mota,
        motp=motp,
        motp_kind="iou" if rule.kind == "iou" else "distance",
        switches=switches,
        misses=misses,
        false_positives=false_positives,
        matches=matches,
        total_ground_truth=total_gt,
    )
    logger.info(
        "clear mot (%s): MOTA=%.4f MOTP=%.4f sw=%d miss=%d fp=%d", rule, report.mota, report.motp,
        switches, misses, false_positives,
    )
    return report
