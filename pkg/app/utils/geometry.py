"""Helpers for boxes and points shared by I/O, tracklet building and evaluation.

Boxes are carried as ``(center, extent)`` pairs throughout the package:
``center`` is the geometric midpoint and ``extent`` is ``(width, height)`` in the
same unit. Ground-plane datasets have no extent; those helpers accept ``None``.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist


def box_center(left: float, top: float, width: float, height: float) -> tuple[float, float]:
    """Return the midpoint of a ``left, top, width, height`` box.

    Examples:
        box_center(10, 20, 30, 60) -> (25.0, 50.0)
    """
    return (left + width / 2.0, top + height / 2.0)


def box_corners(center: Sequence[float], extent: Sequence[float]) -> tuple[float, float, float, float]:
    """Convert ``(center, extent)`` to ``(x1, y1, x2, y2)``."""
    cx, cy = float(center[0]), float(center[1])
    w, h = float(extent[0]), float(extent[1])
    return (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def iou(
    center_a: Sequence[float],
    extent_a: Sequence[float],
    center_b: Sequence[float],
    extent_b: Sequence[float],
) -> float:
    """Intersection-over-union of two axis-aligned boxes.

    Degenerate boxes (zero area) have IoU 0 with everything, including themselves.
    """
    ax1, ay1, ax2, ay2 = box_corners(center_a, extent_a)
    bx1, by1, bx2, by2 = box_corners(center_b, extent_b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def iou_matrix(centers_a: np.ndarray, extents_a: np.ndarray, centers_b: np.ndarray, extents_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two sets of boxes given as ``(N, 2)`` arrays."""
    a1 = centers_a - extents_a / 2.0
    a2 = centers_a + extents_a / 2.0
    b1 = centers_b - extents_b / 2.0
    b2 = centers_b + extents_b / 2.0
    lt = np.maximum(a1[:, None, :], b1[None, :, :])
    rb = np.minimum(a2[:, None, :], b2[None, :, :])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = np.prod(extents_a, axis=1)
    area_b = np.prod(extents_b, axis=1)
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Euclidean distance between two points."""
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def border_distance(center: Sequence[float], bounds: Sequence[float], extent: Optional[Sequence[float]] = None) -> float:
    """Smallest distance from a detection to the image (or court) border.

    ``bounds`` is ``(x_min, y_min, x_max, y_max)``. With an extent the box edges
    are used, so a box touching the border is at distance 0. Points outside the
    bounds are clamped to 0.
    """
    x_min, y_min, x_max, y_max = (float(v) for v in bounds)
    half_w = float(extent[0]) / 2.0 if extent is not None else 0.0
    half_h = float(extent[1]) / 2.0 if extent is not None else 0.0
    cx, cy = float(center[0]), float(center[1])
    d = min(cx - half_w - x_min, cy - half_h - y_min, x_max - (cx + half_w), y_max - (cy + half_h))
    return max(d, 0.0)


def unambiguous_links(prev: np.ndarray, nxt: np.ndarray, max_dist: float) -> list[tuple[int, int]]:
    """Pairs ``(a, b)`` of points in consecutive frames that can be chained safely.

    ``a`` (from ``prev``) and ``b`` (from ``nxt``) link when they are closer than
    ``max_dist`` and no other point of either frame lies within ``max_dist`` of
    ``a`` or of ``b``.

    Examples:
        unambiguous_links([[0, 0], [100, 0]], [[3, 0], [104, 0]], 15) -> [(0, 0), (1, 1)]
        unambiguous_links([[0, 0]], [[3, 0], [6, 0]], 15) -> []
    """
    P = np.asarray(prev, dtype=float)
    N = np.asarray(nxt, dtype=float)
    if P.size == 0 or N.size == 0:
        return []
    P, N = P.reshape(len(P), -1), N.reshape(len(N), -1)
    close_pn = cdist(P, N) < max_dist
    close_pp = cdist(P, P) < max_dist
    close_nn = cdist(N, N) < max_dist
    np.fill_diagonal(close_pp, False)
    np.fill_diagonal(close_nn, False)

    links = []
    for a, b in zip(*np.nonzero(close_pn)):
        others_next = close_pn[a].sum() - 1 + close_nn[b].sum()
        others_prev = close_pn[:, b].sum() - 1 + close_pp[a].sum()
        if others_next == 0 and others_prev == 0:
            links.append((int(a), int(b)))
    return links
