"""Box geometry used around a two-stage detector: anchors, IoU, NMS, RoI resampling.

Boxes are ``(x_min, y_min, x_max, y_max)`` in input-image pixels with
continuous coordinates, so a box's area is ``(x_max - x_min) * (y_max - y_min)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .annotation import BBox, RleMask, rle_decode
from .errors import DimensionMismatchError, EmptyWindowError

DEFAULT_SCALES = (128.0, 256.0, 512.0)
DEFAULT_RATIOS = (0.5, 1.0, 2.0)  # width:height of 1:2, 1:1, 2:1
PRE_NMS_TOP_K = 15000
NMS_IOU_THRESHOLD = 0.5
ROI_OUTPUT_SIZE = (32, 32)


@dataclass(frozen=True)
class AnchorConfig:
    scales: tuple[float, ...] = DEFAULT_SCALES
    aspect_ratios: tuple[float, ...] = DEFAULT_RATIOS
    stride: float = 16.0

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "aspect_ratios", tuple(float(r) for r in self.aspect_ratios))
        if not self.scales or not self.aspect_ratios:
            raise ValueError("scales and aspect_ratios must be non-empty")
        if min(self.scales) <= 0 or min(self.aspect_ratios) <= 0 or self.stride <= 0:
            raise ValueError("scales, aspect ratios and stride must be positive")

    @property
    def anchors_per_location(self) -> int:
        return len(self.scales) * len(self.aspect_ratios)


@dataclass(frozen=True)
class Proposal:
    """RPN output: box centre/size plus objectness."""

    center_x: float
    center_y: float
    width: float
    height: float
    objectness: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError("proposal width and height must be positive")
        if not 0.0 <= self.objectness <= 1.0:
            raise ValueError(f"objectness {self.objectness} outside [0, 1]")

    @property
    def score(self) -> float:
        return self.objectness

    @property
    def bbox(self) -> BBox:
        hw, hh = self.width / 2, self.height / 2
        return BBox(self.center_x - hw, self.center_y - hh, self.center_x + hw, self.center_y + hh)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """``values`` is ``(channels, height, width)``; ``stride`` is image pixels per cell."""

    values: np.ndarray
    stride: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"feature map must be (C, H, W) with positive dims, got {v.shape}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


def generate_anchors(cfg: AnchorConfig, fm_width: int, fm_height: int) -> np.ndarray:
    """All anchors as an ``(N, 4)`` array, cells row-major, then scale, then ratio."""
    shapes = []
    for s in cfg.scales:
        for r in cfg.aspect_ratios:
            shapes.append((s * math.sqrt(r), s / math.sqrt(r)))
    wh = np.asarray(shapes)
    cy, cx = np.meshgrid(
        (np.arange(fm_height) + 0.5) * cfg.stride,
        (np.arange(fm_width) + 0.5) * cfg.stride,
        indexing="ij",
    )
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)
    c = centers[:, None, :]
    half = wh[None, :, :] / 2
    boxes = np.concatenate([c - half, c + half], axis=2)
    return boxes.reshape(-1, 4)


def _as_array(box) -> np.ndarray:
    if isinstance(box, BBox):
        return np.array(box.as_list())
    if hasattr(box, "bbox"):
        return _as_array(box.bbox)
    return np.asarray(box, dtype=float)


def iou_box(a, b) -> float:
    ax0, ay0, ax1, ay1 = _as_array(a)
    bx0, by0, bx1, by1 = _as_array(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise box IoU, ``(len(a), len(b))``; same arithmetic as :func:`iou_box`."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def iou_mask(a: RleMask, b: RleMask) -> float:
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatchError(
            f"mask sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    ma, mb = rle_decode(a).bits, rle_decode(b).bits
    union = int(np.count_nonzero(ma | mb))
    if union == 0:
        return 0.0
    return np.count_nonzero(ma & mb) / union


def mask_iou_matrix(a: Sequence[RleMask], b: Sequence[RleMask]) -> np.ndarray:
    """Pairwise mask IoU via dense matrix products."""
    if not a or not b:
        return np.zeros((len(a), len(b)))
    size = (a[0].width, a[0].height)
    for m in list(a) + list(b):
        if (m.width, m.height) != size:
            raise DimensionMismatchError("all masks must share one size")
    da = np.stack([rle_decode(m).bits.ravel() for m in a]).astype(np.float64)
    db = np.stack([rle_decode(m).bits.ravel() for m in b]).astype(np.float64)
    inter = da @ db.T
    union = da.sum(1)[:, None] + db.sum(1)[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def _score(c) -> float:
    return float(c.objectness if hasattr(c, "objectness") else c.score)


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float = NMS_IOU_THRESHOLD) -> np.ndarray:
    """Greedy NMS; ties in score keep the lower index first. Returns kept indices in order."""
    if not 0 < iou_threshold <= 1:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        if rest.size == 0:
            break
        ious = iou_matrix(boxes[i : i + 1], boxes[rest])[0]
        order = rest[ious <= iou_threshold]
    return np.asarray(keep, dtype=int)


def nms(candidates: Sequence, iou_threshold: float = NMS_IOU_THRESHOLD) -> list:
    """Greedy non-maximum suppression over proposals or detections."""
    candidates = list(candidates)
    if not candidates:
        return []
    boxes = np.array([_as_array(c) for c in candidates])
    scores = np.array([_score(c) for c in candidates])
    return [candidates[i] for i in nms_indices(boxes, scores, iou_threshold)]


def select_proposals(
    proposals: Sequence[Proposal],
    pre_nms_top_k: int = PRE_NMS_TOP_K,
    iou_threshold: float = NMS_IOU_THRESHOLD,
    post_nms_cap: int | None = None,
) -> list[Proposal]:
    proposals = list(proposals)
    if not proposals:
        return []
    scores = np.array([p.objectness for p in proposals])
    top = np.argsort(-scores, kind="stable")[:pre_nms_top_k]
    boxes = np.array([_as_array(proposals[i]) for i in top])
    kept = top[nms_indices(boxes, scores[top], iou_threshold)]
    if post_nms_cap is not None:
        kept = kept[:post_nms_cap]
    return [proposals[i] for i in kept]


def _roi_cells(fm: FeatureMap, roi) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = (float(v) / fm.stride for v in _as_array(roi))
    if x1 <= 0 or y1 <= 0 or x0 >= fm.width or y0 >= fm.height or x1 < x0 or y1 < y0:
        raise EmptyWindowError(f"roi {tuple(_as_array(roi))} does not intersect the feature map")
    return x0, y0, x1, y1


def roi_pool(fm: FeatureMap, roi, out: tuple[int, int] = ROI_OUTPUT_SIZE) -> FeatureMap:
    """Quantized max pooling of a region into an ``out`` = (rows, cols) grid."""
    oh, ow = out
    x0, y0, x1, y1 = _roi_cells(fm, roi)
    c0, r0 = math.floor(x0), math.floor(y0)
    c1, r1 = max(math.floor(x1), c0 + 1), max(math.floor(y1), r0 + 1)
    rw, rh = c1 - c0, r1 - r0
    result = np.zeros((fm.channels, oh, ow))
    for i in range(oh):
        ys = max(r0 + (i * rh) // oh, 0)
        ye = min(r0 + -(-((i + 1) * rh) // oh), fm.height)
        for j in range(ow):
            xs = max(c0 + (j * rw) // ow, 0)
            xe = min(c0 + -(-((j + 1) * rw) // ow), fm.width)
            if ye > ys and xe > xs:
                result[:, i, j] = fm.values[:, ys:ye, xs:xe].max(axis=(1, 2))
    return FeatureMap(result, fm.stride)


def _bilinear(values: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample ``values`` (C, H, W) at continuous points; cell centres sit at +0.5.

    Points outside the map extent contribute 0; inside it, edge cells are
    replicated so a constant map samples as that constant.
    """
    _, h, w = values.shape
    inside = (u >= 0) & (u <= w) & (v >= 0) & (v <= h)
    x = np.clip(u - 0.5, 0, w - 1)
    y = np.clip(v - 0.5, 0, h - 1)
    xl = np.floor(x).astype(int)
    yl = np.floor(y).astype(int)
    xh = np.minimum(xl + 1, w - 1)
    yh = np.minimum(yl + 1, h - 1)
    fx, fy = x - xl, y - yl
    top = values[:, yl, xl] * (1 - fx) + values[:, yl, xh] * fx
    bot = values[:, yh, xl] * (1 - fx) + values[:, yh, xh] * fx
    return np.where(inside, top * (1 - fy) + bot * fy, 0.0)


def roi_align(
    fm: FeatureMap,
    roi,
    out: tuple[int, int] = ROI_OUTPUT_SIZE,
    samples_per_bin: tuple[int, int] = (2, 2),
) -> FeatureMap:
    """Bilinear RoI resampling with no coordinate rounding."""
    oh, ow = out
    sy, sx = samples_per_bin
    x0, y0, x1, y1 = (float(v) / fm.stride for v in _as_array(roi))
    if not (x1 > x0 and y1 > y0):
        raise EmptyWindowError(f"roi {tuple(_as_array(roi))} has zero area")
    bin_w, bin_h = (x1 - x0) / ow, (y1 - y0) / oh
    us = x0 + (np.arange(ow * sx) + 0.5) * (bin_w / sx)
    vs = y0 + (np.arange(oh * sy) + 0.5) * (bin_h / sy)
    vv, uu = np.meshgrid(vs, us, indexing="ij")
    samples = _bilinear(fm.values, uu, vv)
    pooled = samples.reshape(fm.channels, oh, sy, ow, sx).mean(axis=(2, 4))
    return FeatureMap(pooled, fm.stride)


def fpn_assign_level(
    roi, k0: int = 4, canonical: float = 224.0, k_min: int = 2, k_max: int = 5
) -> int:
    x0, y0, x1, y1 = _as_array(roi)
    area = (x1 - x0) * (y1 - y0)
    if area <= 0:
        raise ValueError("roi must have positive area")
    k = k0 + math.floor(math.log2(math.sqrt(area) / canonical))
    return int(min(max(k, k_min), k_max))
