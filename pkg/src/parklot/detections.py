"""The detections interchange format: one JSON object per line.

Each line looks like::

    {"image_id": "lot_03", "label": "vehicle", "score": 0.93,
     "bbox": [x_min, y_min, x_max, y_max], "rle": {"size": [h, w], "counts": [...]}}

``rle`` is optional. This is what stands in for the output of a trained
detector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Iterable

from .annotation import BBox, RleMask
from .errors import DetectionsFormatError, ParklotError


@dataclass(frozen=True)
class Detection:
    image_id: str
    label: str
    score: float
    bbox: BBox
    rle: RleMask | None = None

    def to_json(self) -> dict:
        obj = {
            "image_id": self.image_id,
            "label": self.label,
            "score": self.score,
            "bbox": self.bbox.as_list(),
        }
        if self.rle is not None:
            obj["rle"] = self.rle.to_json()
        return obj


def detection_from_json(obj, line: int | None = None) -> Detection:
    if not isinstance(obj, dict):
        raise DetectionsFormatError("record must be a JSON object", line)
    for key in ("image_id", "label", "score", "bbox"):
        if key not in obj:
            raise DetectionsFormatError(f"missing field {key!r}", line)
    score = obj["score"]
    if not isinstance(score, (int, float)) or isinstance(score, bool) or not math.isfinite(score):
        raise DetectionsFormatError(f"score must be a finite number, got {score!r}", line)
    box = obj["bbox"]
    if (
        not isinstance(box, list)
        or len(box) != 4
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in box)
    ):
        raise DetectionsFormatError("bbox must be [x_min, y_min, x_max, y_max]", line)
    try:
        bbox = BBox(*(float(v) for v in box))
        rle = RleMask.from_json(obj["rle"]) if obj.get("rle") is not None else None
    except (ParklotError, ValueError) as exc:
        raise DetectionsFormatError(str(exc), line) from None
    return Detection(str(obj["image_id"]), str(obj["label"]), float(score), bbox, rle)


def parse_detections(text: str) -> list[Detection]:
    """Parse JSON-lines text; blank lines are skipped, errors carry the line number."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DetectionsFormatError(f"invalid JSON ({exc.msg})", lineno) from None
        out.append(detection_from_json(obj, lineno))
    return out


def read_detections(path: str | PathLike) -> list[Detection]:
    return parse_detections(Path(path).read_text())


def format_detections(dets: Iterable[Detection]) -> str:
    return "".join(json.dumps(d.to_json(), separators=(", ", ": ")) + "\n" for d in dets)


def write_detections(dets: Iterable[Detection], path: str | PathLike) -> None:
    Path(path).write_text(format_detections(dets))
