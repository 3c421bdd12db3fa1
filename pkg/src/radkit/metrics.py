"""Rotated-box detection metrics and embedding retrieval accuracy.

IoU between oriented BEV boxes is exact: the intersection is computed by
clipping one rectangle against the other's edges (Sutherland-Hodgman on
convex polygons) and measuring the clipped polygon with the shoelace
formula.

AP follows the COCO convention: per-frame greedy matching of
score-ordered detections to ground truth at an IoU threshold, a global
score-sorted precision/recall accumulation across frames, and 101-point
interpolated average precision.  mAP averages AP over the ten thresholds
0.50 to 0.95 in steps of 0.05.  Score ties are broken by input order.
No cap is imposed on detections per frame.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .types import RotatedBox

__all__ = [
    "Detection",
    "PRCurve",
    "rotated_iou",
    "greedy_match",
    "pr_curve",
    "average_precision",
    "mean_ap",
    "MAP_THRESHOLDS",
    "categorize_box",
    "retrieval_topk",
    "evaluate_detections",
]

MAP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
_RECALL_GRID = np.linspace(0.0, 1.0, 101)
_CATEGORY_HALF_ANGLE = 5.0 * math.pi / 180.0


@dataclass(frozen=True)
class Detection:
    """A scored box prediction attached to a frame."""

    frame_id: str
    box: RotatedBox

    def __post_init__(self) -> None:
        if self.box.score is None:
            raise ValueError("detections require a score")


@dataclass(frozen=True)
class PRCurve:
    """101-point interpolated precision over the uniform recall grid."""

    recall: np.ndarray
    precision: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.recall, dtype=np.float64)
        p = np.asarray(self.precision, dtype=np.float64)
        if r.shape != (101,) or p.shape != (101,):
            raise ValueError("PR curve must have exactly 101 points")
        if np.any(np.diff(p) > 1e-12):
            raise ValueError("interpolated precision must be non-increasing")
        object.__setattr__(self, "recall", r)
        object.__setattr__(self, "precision", p)


# ---------------------------------------------------------------------------
# rotated IoU

def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_polygon(poly: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Keep the part of ``poly`` on the left of directed edge a->b.

    Box corners are counter-clockwise, so the interior of the clip box is
    the left side of each of its edges.
    """
    if len(poly) == 0:
        return poly
    ex, ey = b[0] - a[0], b[1] - a[1]
    # cross product (b-a) x (v-a): positive on the left of the edge
    d = ex * (poly[:, 1] - a[1]) - ey * (poly[:, 0] - a[0])
    out = []
    n = len(poly)
    for i in range(n):
        cur, nxt = poly[i], poly[(i + 1) % n]
        dc, dn = d[i], d[(i + 1) % n]
        if dc >= 0.0:
            out.append(cur)
            if dn < 0.0:
                out.append(cur + (dc / (dc - dn)) * (nxt - cur))
        elif dn >= 0.0:
            out.append(cur + (dc / (dc - dn)) * (nxt - cur))
    return np.asarray(out) if out else np.zeros((0, 2))


def _intersection_area(pa: np.ndarray, pb: np.ndarray) -> float:
    poly = pa
    nb = len(pb)
    for i in range(nb):
        poly = _clip_polygon(poly, pb[i], pb[(i + 1) % nb])
        if len(poly) == 0:
            return 0.0
    return _polygon_area(poly)


def rotated_iou(a: RotatedBox, b: RotatedBox) -> float:
    """Intersection over union of two oriented boxes, in [0, 1]."""
    area_a, area_b = a.area, b.area
    if area_a <= 0.0 or area_b <= 0.0:
        raise ValueError("degenerate (zero-area) box")
    ca, cb = a.corners(), b.corners()
    # quick reject: farther apart than the sum of circumradii
    ra = 0.5 * math.hypot(a.length, a.width)
    rb = 0.5 * math.hypot(b.length, b.width)
    if math.hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb:
        return 0.0
    inter = _intersection_area(ca, cb)
    union = area_a + area_b - inter
    return float(min(max(inter / union, 0.0), 1.0))


# ---------------------------------------------------------------------------
# matching and AP

def greedy_match(dets: Sequence[Detection], gts: Sequence[RotatedBox],
                 iou_thr: float) -> tuple[list[bool], int]:
    """Match one frame's detections to its ground truth.

    Detections are processed in descending score (ties by input order);
    each claims the unmatched GT with the highest IoU >= ``iou_thr``.
    Returns per-detection TP flags in the *input* order, and the count of
    unmatched GTs (false negatives).
    """
    frame_ids = {d.frame_id for d in dets}
    if len(frame_ids) > 1:
        raise ValueError(f"detections span multiple frames: {sorted(frame_ids)}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].box.score, i))
    taken = [False] * len(gts)
    tp = [False] * len(dets)
    for i in order:
        best_j = -1
        best_iou = -1.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            iou = rotated_iou(dets[i].box, gt)
            if iou >= iou_thr and iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            tp[i] = True
    return tp, taken.count(False)


def _match_all(dets: Sequence[Detection],
               gts: dict[str, Sequence[RotatedBox]],
               iou_thr: float) -> tuple[np.ndarray, np.ndarray, int]:
    """Global score-ordered TP/FP flags across frames, plus total GT count."""
    by_frame: dict[str, list[tuple[int, Detection]]] = defaultdict(list)
    for i, d in enumerate(dets):
        by_frame[d.frame_id].append((i, d))
    n_gt = sum(len(v) for v in gts.values())

    tp_global = np.zeros(len(dets), dtype=bool)
    for frame_id, items in by_frame.items():
        flags, _ = greedy_match([d for _, d in items],
                                gts.get(frame_id, ()), iou_thr)
        for (i, _), flag in zip(items, flags):
            tp_global[i] = flag

    order = sorted(range(len(dets)), key=lambda i: (-dets[i].box.score, i))
    return tp_global[order], np.array(order), n_gt


def pr_curve(dets: Sequence[Detection],
             gts: dict[str, Sequence[RotatedBox]],
             iou_thr: float) -> PRCurve:
    """101-point interpolated precision/recall at one IoU threshold."""
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        raise ValueError("need at least one ground-truth box")
    if not dets:
        return PRCurve(_RECALL_GRID.copy(), np.zeros(101))
    tp_sorted, _, _ = _match_all(dets, gts, iou_thr)
    tp_cum = np.cumsum(tp_sorted)
    fp_cum = np.cumsum(~tp_sorted)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)

    # precision at recall r = max precision among points with recall >= r
    interp = np.zeros(101)
    for gi, r in enumerate(_RECALL_GRID):
        mask = recall >= r - 1e-12
        interp[gi] = precision[mask].max() if mask.any() else 0.0
    return PRCurve(_RECALL_GRID.copy(), interp)


def average_precision(dets: Sequence[Detection],
                      gts: dict[str, Sequence[RotatedBox]],
                      iou_thr: float) -> float:
    """Mean of the interpolated precision over the 101-point recall grid."""
    return float(pr_curve(dets, gts, iou_thr).precision.mean())


def mean_ap(dets: Sequence[Detection],
            gts: dict[str, Sequence[RotatedBox]]) -> float:
    """Mean AP over IoU thresholds 0.50, 0.55, ..., 0.95."""
    return float(np.mean([average_precision(dets, gts, t)
                          for t in MAP_THRESHOLDS]))


# ---------------------------------------------------------------------------
# category split and retrieval

def _angle_dist(a: float, b: float) -> float:
    d = (a - b) % (2.0 * math.pi)
    return min(d, 2.0 * math.pi - d)


def categorize_box(box: RotatedBox) -> str:
    """Orientation class: ``straight`` within 5 degrees of the forward
    axis, ``incoming`` within 5 degrees of facing the sensor, else
    ``oriented``.  Distances are wrapped, so yaw just below -pi counts as
    incoming."""
    if _angle_dist(box.yaw, 0.0) <= _CATEGORY_HALF_ANGLE:
        return "straight"
    if _angle_dist(box.yaw, math.pi) <= _CATEGORY_HALF_ANGLE:
        return "incoming"
    return "oriented"


def retrieval_topk(queries: np.ndarray, keys: np.ndarray, k: int) -> float:
    """Fraction of queries whose index-matched key ranks in the top ``k``
    by cosine similarity.  Ties rank by key index."""
    q = np.asarray(queries, dtype=np.float64)
    key = np.asarray(keys, dtype=np.float64)
    if q.shape != key.shape or q.ndim != 2:
        raise ValueError("queries and keys must be equal-shape 2-D arrays")
    n = q.shape[0]
    if not 1 <= k:
        raise ValueError("k must be >= 1")
    qn = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-300)
    kn = key / np.maximum(np.linalg.norm(key, axis=1, keepdims=True), 1e-300)
    sims = qn @ kn.T
    true_sim = np.diag(sims)
    better = (sims > true_sim[:, None]).sum(axis=1)
    tied_before = ((sims == true_sim[:, None])
                   & (np.arange(n)[None, :] < np.arange(n)[:, None])).sum(axis=1)
    rank = better + tied_before
    return float(np.mean(rank < k))


# ---------------------------------------------------------------------------
# report

def evaluate_detections(dets: Sequence[Detection],
                        gts: dict[str, Sequence[RotatedBox]],
                        per_category: bool = True) -> dict:
    """Full detection report: ap50, ap75, map, and per-category entries.

    Category membership is decided by each box's own yaw (detections and
    ground truth alike).
    """
    report = {
        "ap50": average_precision(dets, gts, 0.5),
        "ap75": average_precision(dets, gts, 0.75),
        "map": mean_ap(dets, gts),
        "n_detections": len(dets),
        "n_ground_truth": sum(len(v) for v in gts.values()),
    }
    if per_category:
        cats = {}
        for cat in ("straight", "oriented", "incoming"):
            cat_gts = {fid: [b for b in boxes if categorize_box(b) == cat]
                       for fid, boxes in gts.items()}
            n_gt = sum(len(v) for v in cat_gts.values())
            cat_dets = [d for d in dets if categorize_box(d.box) == cat]
            if n_gt == 0:
                cats[cat] = {"map": None, "n_ground_truth": 0}
            else:
                cats[cat] = {"map": mean_ap(cat_dets, cat_gts),
                             "n_ground_truth": n_gt}
        report["categories"] = cats
    return report
