"""COCO-style average precision for box and mask detections.

Matching follows the COCO evaluator: detections are visited by descending
score, each takes the still-unmatched ground truth of its class with the
highest IoU at or above the threshold, and ground truth outside the active
area bucket is "ignored" (a detection matched to it counts neither way, an
unmatched detection whose own area is outside the bucket is dropped).
AP is the 101-point interpolated area under the precision envelope.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .annotation import BBox, RleMask, mask_area
from .detection_geom import iou_matrix, mask_iou_matrix
from .detections import Detection, read_detections
from .errors import SchemaError

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
SMALL_MAX = 32**2
MEDIUM_MAX = 96**2
AREA_BUCKETS = {
    "all": (0.0, math.inf),
    "small": (0.0, float(SMALL_MAX)),
    "medium": (float(SMALL_MAX), float(MEDIUM_MAX)),
    "large": (float(MEDIUM_MAX), math.inf),
}
METRICS = ("ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large")
RECALL_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    area_buckets: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(AREA_BUCKETS))
    iou_kind: str = "box"
    max_dets_per_image: int = 100

    def __post_init__(self):
        t = tuple(float(v) for v in self.iou_thresholds)
        if not t or any(not 0 < v <= 1 for v in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("iou_thresholds must be strictly increasing values in (0, 1]")
        object.__setattr__(self, "iou_thresholds", t)
        if self.iou_kind not in ("box", "mask"):
            raise ValueError(f"iou_kind must be 'box' or 'mask', got {self.iou_kind!r}")
        if self.max_dets_per_image < 1:
            raise ValueError("max_dets_per_image must be positive")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    label: str
    bbox: BBox
    rle: RleMask | None = None


def _area(obj, iou_kind: str) -> float:
    if iou_kind == "mask":
        return float(mask_area(obj.rle))
    return obj.bbox.area


def _pair_ious(gts: Sequence, dets: Sequence, iou_kind: str) -> np.ndarray:
    if not gts or not dets:
        return np.zeros((len(dets), len(gts)))
    if iou_kind == "mask":
        return mask_iou_matrix([d.rle for d in dets], [g.rle for g in gts])
    return iou_matrix(
        np.array([d.bbox.as_list() for d in dets]), np.array([g.bbox.as_list() for g in gts])
    )


@dataclass
class Matching:
    """Result of matching one image/class: indices refer to the input lists."""

    det_to_gt: list[int]
    det_ignored: list[bool]
    gt_ignored: list[bool]

    @property
    def true_positives(self) -> list[int]:
        return [i for i, g in enumerate(self.det_to_gt) if g >= 0 and not self.det_ignored[i]]

    @property
    def false_positives(self) -> list[int]:
        return [i for i, g in enumerate(self.det_to_gt) if g < 0 and not self.det_ignored[i]]

    @property
    def false_negatives(self) -> list[int]:
        hit = set(self.det_to_gt)
        return [j for j, ign in enumerate(self.gt_ignored) if not ign and j not in hit]


def _match(ious, order, gt_ignored, det_areas, threshold, area_range) -> Matching:
    n_det, n_gt = ious.shape
    det_to_gt = [-1] * n_det
    det_ignored = [False] * n_det
    gt_taken = [False] * n_gt
    # non-ignored ground truth is preferred over ignored
    gt_order = sorted(range(n_gt), key=lambda j: gt_ignored[j])
    for d in order:
        best = min(threshold, 1 - 1e-10)
        m = -1
        for g in gt_order:
            if gt_taken[g]:
                continue
            if m > -1 and not gt_ignored[m] and gt_ignored[g]:
                break
            if ious[d, g] < best:
                continue
            best = ious[d, g]
            m = g
        if m == -1:
            lo, hi = area_range
            det_ignored[d] = not (lo <= det_areas[d] < hi)
            continue
        det_to_gt[d] = m
        det_ignored[d] = gt_ignored[m]
        gt_taken[m] = True
    return Matching(det_to_gt, det_ignored, list(gt_ignored))


def _det_order(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match_detections(
    gt: Sequence[GroundTruth],
    det: Sequence[Detection],
    iou_threshold: float,
    iou_kind: str = "box",
    area_range: tuple[float, float] = (0.0, math.inf),
) -> Matching:
    """Greedy-by-score matching of one image's detections to its ground truth.

    Only same-label pairs may match. Ground truth whose area falls outside
    ``area_range`` (half-open) is ignored.
    """
    gt_ignored = [not (area_range[0] <= _area(g, iou_kind) < area_range[1]) for g in gt]
    ious = _pair_ious(gt, det, iou_kind)
    for d, dd in enumerate(det):
        for g, gg in enumerate(gt):
            if dd.label != gg.label:
                ious[d, g] = -1.0
    areas = [_area(d, iou_kind) for d in det]
    return _match(ious, _det_order(det), gt_ignored, areas, iou_threshold, area_range)


@dataclass(frozen=True)
class PRCurve:
    """Cumulative precision (already made monotone) and recall over pooled detections."""

    precision: np.ndarray
    recall: np.ndarray
    scores: np.ndarray
    num_gt: int


def precision_recall_curve(records: Iterable[tuple[float, int, bool]], num_gt: int) -> PRCurve | None:
    """Build the curve from ``(score, tie_key, is_true_positive)`` records.

    Ignored detections must already be filtered out. Records are ordered by
    descending score, ties by ascending ``tie_key``. Returns None when there is
    no ground truth.
    """
    if num_gt <= 0:
        return None
    recs = sorted(records, key=lambda r: (-r[0], r[1]))
    tp = np.array([bool(r[2]) for r in recs], dtype=float)
    fp = 1.0 - tp
    ctp, cfp = np.cumsum(tp), np.cumsum(fp)
    recall = ctp / num_gt
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(ctp + cfp > 0, ctp / np.maximum(ctp + cfp, 1e-300), 0.0)
    precision = np.maximum.accumulate(precision[::-1])[::-1] if precision.size else precision
    return PRCurve(precision, recall, np.array([r[0] for r in recs]), num_gt)


def average_precision(curve: PRCurve | None, method: str = "coco101") -> float | None:
    """Area under the interpolated curve; ``None`` if the curve is undefined.

    ``method="coco101"`` samples max precision at recall >= r for
    r = 0, 0.01, ..., 1. ``method="all_points"`` integrates over every
    recall step instead.
    """
    if curve is None:
        return None
    if method == "all_points":
        prev, total = 0.0, 0.0
        for p, r in zip(curve.precision, curve.recall):
            total += (r - prev) * p
            prev = r
        return float(total)
    if method != "coco101":
        raise ValueError(f"unknown method {method!r}")
    q = np.zeros(RECALL_GRID.size)
    idx = np.searchsorted(curve.recall, RECALL_GRID, side="left")
    hit = idx < curve.precision.size
    q[hit] = curve.precision[idx[hit]]
    return math.fsum(q) / q.size


@dataclass(frozen=True)
class EvalSummary:
    per_class: dict[str, dict[str, float | None]]
    overall: dict[str, float | None]
    iou_kind: str = "box"

    def to_json(self) -> dict:
        return {"iou_kind": self.iou_kind, "overall": self.overall, "per_class": self.per_class}


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def evaluate(
    gt: Iterable[GroundTruth],
    detections: Iterable[Detection] | str | PathLike,
    cfg: EvalConfig = EvalConfig(),
) -> EvalSummary:
    """Six COCO metrics per class, macro-averaged over classes for the overall row."""
    if isinstance(detections, (str, PathLike)):
        detections = read_detections(detections)
    gt = list(gt)
    dets = list(detections)
    if cfg.iou_kind == "mask":
        for i, d in enumerate(dets):
            if d.rle is None:
                raise SchemaError(f"detection {i} ({d.image_id}) has no 'rle' but iou_kind is mask")
        for g in gt:
            if g.rle is None:
                raise SchemaError(f"ground truth on {g.image_id} has no mask but iou_kind is mask")

    gt_by = defaultdict(list)
    for g in gt:
        gt_by[(g.image_id, g.label)].append(g)
    det_by = defaultdict(list)
    for line, d in enumerate(dets):
        det_by[(d.image_id, d.label)].append((line, d))
    labels = sorted({k[1] for k in gt_by} | {k[1] for k in det_by})
    images = sorted({k[0] for k in gt_by} | {k[0] for k in det_by})

    per_class: dict[str, dict[str, float | None]] = {}
    for label in labels:
        # per-image state shared across thresholds/buckets
        cells = []
        for image in images:
            g = gt_by.get((image, label), [])
            tagged = sorted(det_by.get((image, label), []), key=lambda t: (-t[1].score, t[0]))
            tagged = tagged[: cfg.max_dets_per_image]
            d = [t[1] for t in tagged]
            lines = [t[0] for t in tagged]
            if not g and not d:
                continue
            ious = _pair_ious(g, d, cfg.iou_kind)
            cells.append((g, d, lines, ious,
                          [_area(x, cfg.iou_kind) for x in g], [_area(x, cfg.iou_kind) for x in d]))

        def ap_for(threshold: float, bucket: tuple[float, float]) -> float | None:
            lo, hi = bucket
            records, num_gt = [], 0
            for g, d, lines, ious, gareas, dareas in cells:
                gt_ign = [not (lo <= a < hi) for a in gareas]
                num_gt += gt_ign.count(False)
                m = _match(ious, range(len(d)), gt_ign, dareas, threshold, bucket)
                for k in range(len(d)):
                    if not m.det_ignored[k]:
                        records.append((d[k].score, lines[k], m.det_to_gt[k] >= 0))
            return average_precision(precision_recall_curve(records, num_gt))

        buckets = cfg.area_buckets
        full = {t: ap_for(t, buckets["all"]) for t in cfg.iou_thresholds}
        row = {
            "ap": _mean(full.values()),
            "ap50": full.get(0.5) if 0.5 in full else ap_for(0.5, buckets["all"]),
            "ap75": full.get(0.75) if 0.75 in full else ap_for(0.75, buckets["all"]),
        }
        for name in ("small", "medium", "large"):
            row[f"ap_{name}"] = _mean(ap_for(t, buckets[name]) for t in cfg.iou_thresholds)
        per_class[label] = row

    overall = {m: _mean(per_class[c][m] for c in labels) for m in METRICS}
    return EvalSummary(per_class, overall, cfg.iou_kind)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

COLUMNS = ("AP", "AP50", "AP75", "APs", "APm", "APl")


def format_table(summaries: Mapping[str, EvalSummary], per_class: bool = False) -> str:
    """Aligned text table, one row per attribute ("bbox" / "mask")."""
    head = f"{'Attribute':<10}{'Class':<15}" if per_class else f"{'Attribute':<10}"
    lines = [head + "".join(f"{c:>8}" for c in COLUMNS)]
    for attribute, s in summaries.items():
        rows = [("all", s.overall)]
        if per_class:
            rows += list(s.per_class.items())
        for cls, metrics in rows:
            cells = "".join(f"{'-':>8}" if metrics[m] is None else f"{metrics[m]:>8.4f}" for m in METRICS)
            prefix = f"{attribute:<10}{cls:<15}" if per_class else f"{attribute:<10}"
            lines.append(prefix + cells)
    return "\n".join(lines) + "\n"


def write_report(summaries: Mapping[str, EvalSummary], out_dir: str | PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(
        json.dumps({k: s.to_json() for k, s in summaries.items()}, indent=2, sort_keys=True) + "\n"
    )
    (out / "eval.txt").write_text(format_table(summaries, per_class=True))
