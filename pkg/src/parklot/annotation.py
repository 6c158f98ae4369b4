"""LabelMe polygon ingestion, bounding boxes, and COCO-style run-length masks."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, LabelError, SchemaError
from .parcel_extract import BitMask, fill_rings

LABELS = ("parking_space", "vehicle")


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"inverted box {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class AnnotatedInstance:
    label: str
    polygon: tuple[tuple[float, float], ...]
    instance_id: int


@dataclass(frozen=True)
class LabelMeDocument:
    instances: list[AnnotatedInstance]
    width: int
    height: int
    image_path: str | None = None


def normalize_label(label: str) -> str:
    return "_".join(str(label).strip().casefold().split())


def parse_labelme(json_bytes: bytes | str) -> LabelMeDocument:
    """Read a LabelMe document; only polygon shapes are accepted."""
    try:
        doc = json.loads(json_bytes)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("LabelMe document must be a JSON object")
    for key in ("shapes", "imageWidth", "imageHeight"):
        if key not in doc:
            raise SchemaError(f"missing field {key!r}")
    width, height = doc["imageWidth"], doc["imageHeight"]
    if not (isinstance(width, int) and isinstance(height, int) and width > 0 and height > 0):
        raise SchemaError(f"bad image size {width!r}x{height!r}")

    instances = []
    for i, shape in enumerate(doc["shapes"]):
        if not isinstance(shape, dict) or "label" not in shape or "points" not in shape:
            raise SchemaError(f"shape {i}: needs 'label' and 'points'")
        kind = shape.get("shape_type") or "polygon"
        if kind != "polygon":
            raise SchemaError(f"shape {i}: shape_type {kind!r} not accepted, only 'polygon'")
        label = normalize_label(shape["label"])
        if label not in LABELS:
            raise LabelError(
                f"shape {i}: unknown label {shape['label']!r}; accepted: {', '.join(LABELS)}"
            )
        try:
            pts = np.asarray(shape["points"], dtype=float)
        except (TypeError, ValueError):
            raise SchemaError(f"shape {i}: points are not numeric pairs") from None
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise SchemaError(f"shape {i}: polygon needs at least 3 (x, y) points")
        clamped = np.clip(pts, 0, [width, height])
        if not np.array_equal(clamped, pts):
            warnings.warn(f"shape {i}: points outside the image were clamped", stacklevel=2)
        polygon = tuple((float(x), float(y)) for x, y in clamped)
        instances.append(AnnotatedInstance(label, polygon, i))
    return LabelMeDocument(instances, width, height, doc.get("imagePath"))


def polygon_to_bbox(polygon) -> BBox:
    pts = np.asarray(polygon, dtype=float)
    return BBox(float(pts[:, 0].min()), float(pts[:, 1].min()),
                float(pts[:, 0].max()), float(pts[:, 1].max()))


def polygon_to_mask(polygon, w: int, h: int) -> BitMask:
    """Pixel-centre rasterization of an image-space polygon."""
    pts = np.asarray(polygon, dtype=float)
    if len(pts) and not np.array_equal(pts[0], pts[-1]):
        pts = np.vstack([pts, pts[:1]])
    return BitMask(fill_rings([pts], 0, 0, w, h))


def mask_to_bbox(m: BitMask) -> BBox | None:
    """Pixel-extent box of the set pixels, or None for an empty mask."""
    rows = np.flatnonzero(m.bits.any(axis=1))
    cols = np.flatnonzero(m.bits.any(axis=0))
    if rows.size == 0:
        return None
    return BBox(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


@dataclass(frozen=True)
class RleMask:
    """Column-major run lengths, starting with a (possibly empty) run of zeros."""

    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ConsistencyError("RLE counts must be non-negative")
        if any(c == 0 for c in counts[1:]):
            raise ConsistencyError("only the first RLE count may be zero")
        object.__setattr__(self, "counts", counts)

    def to_json(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj) -> RleMask:
        try:
            h, w = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError):
            raise SchemaError("RLE must be {'size': [h, w], 'counts': [...]}") from None
        if isinstance(counts, str):
            raise SchemaError("compressed string RLE counts are not supported")
        r = cls(int(w), int(h), counts)
        if sum(r.counts) != r.width * r.height:
            raise ConsistencyError(f"RLE counts sum to {sum(r.counts)}, expected {r.width * r.height}")
        return r


def rle_encode(m: BitMask) -> RleMask:
    flat = m.bits.ravel(order="F")
    if flat.size == 0:
        return RleMask(m.width, m.height, (0,))
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask(m.width, m.height, tuple(runs))


def rle_decode(r: RleMask) -> BitMask:
    total = sum(r.counts)
    if total != r.width * r.height:
        raise ConsistencyError(f"RLE counts sum to {total}, expected {r.width}x{r.height}")
    values = np.arange(len(r.counts)) % 2 == 1
    flat = np.repeat(values, r.counts)
    return BitMask(flat.reshape((r.height, r.width), order="F"))


def mask_area(r: RleMask) -> int:
    return int(sum(r.counts[1::2]))


def instances_to_masks(doc: LabelMeDocument) -> list[tuple[AnnotatedInstance, RleMask]]:
    return [(inst, rle_encode(polygon_to_mask(inst.polygon, doc.width, doc.height)))
            for inst in doc.instances]


def bbox_of_rle(r: RleMask) -> BBox | None:
    return mask_to_bbox(rle_decode(r))

