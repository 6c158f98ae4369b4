"""On-disk instance-segmentation dataset.

Layout under a root directory::

    index.json              {"images": [{"name", "image", "masks", "width", "height", "instances"}]}
    images/<name>.png       RGB image
    masks/<name>.rle.json   {"image", "size": [h, w], "instances": [{"instance_id", "label", "bbox", "rle"}]}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .annotation import BBox, RleMask, instances_to_masks, mask_area, parse_labelme, polygon_to_bbox
from .evaluation import GroundTruth
from .raster_io import GeoRaster, read_png, write_png

log = logging.getLogger(__name__)

INDEX = "index.json"


@dataclass(frozen=True)
class Instance:
    instance_id: int
    label: str
    rle: RleMask
    bbox: BBox


@dataclass(eq=False)
class Sample:
    name: str
    image: np.ndarray
    instances: list[Instance] = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def save_dataset(samples: Iterable[Sample], root: str | PathLike) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        write_png(GeoRaster(np.ascontiguousarray(s.image, dtype=np.uint8)), root / "images" / f"{s.name}.png")
        masks = {
            "image": s.name,
            "size": [s.height, s.width],
            "instances": [
                {"instance_id": i.instance_id, "label": i.label,
                 "bbox": i.bbox.as_list(), "rle": i.rle.to_json()}
                for i in s.instances
            ],
        }
        (root / "masks" / f"{s.name}.rle.json").write_text(_dumps(masks))
        entries.append({
            "name": s.name,
            "image": f"images/{s.name}.png",
            "masks": f"masks/{s.name}.rle.json",
            "width": s.width,
            "height": s.height,
            "instances": len(s.instances),
        })
    (root / INDEX).write_text(json.dumps({"images": entries}, indent=1, sort_keys=True) + "\n")


def _read_instances(path: Path) -> list[Instance]:
    doc = json.loads(path.read_text())
    out = []
    for obj in doc["instances"]:
        out.append(Instance(int(obj["instance_id"]), obj["label"],
                            RleMask.from_json(obj["rle"]), BBox(*obj["bbox"])))
    return out


def read_index(root: str | PathLike) -> list[dict]:
    return json.loads((Path(root) / INDEX).read_text())["images"]


def load_dataset(root: str | PathLike) -> list[Sample]:
    root = Path(root)
    return [
        Sample(e["name"], read_png(root / e["image"]), _read_instances(root / e["masks"]))
        for e in read_index(root)
    ]


def load_ground_truth(root: str | PathLike) -> list[GroundTruth]:
    """Ground truth for evaluation; ``image_id`` is the sample name."""
    root = Path(root)
    gts = []
    for e in read_index(root):
        for inst in _read_instances(root / e["masks"]):
            gts.append(GroundTruth(e["name"], inst.label, inst.bbox, inst.rle))
    return gts


def labelme_to_dataset(json_paths: Sequence[str | PathLike], root: str | PathLike) -> list[Sample]:
    """Convert LabelMe files (plus the images they reference) into a dataset."""
    samples = []
    for path in json_paths:
        path = Path(path)
        doc = parse_labelme(path.read_bytes())
        image_file = path.parent / doc.image_path if doc.image_path else path.with_suffix(".png")
        if image_file.exists():
            image = read_png(image_file)
            if image.shape[:2] != (doc.height, doc.width):
                raise ValueError(
                    f"{image_file}: image is {image.shape[1]}x{image.shape[0]}, "
                    f"annotation says {doc.width}x{doc.height}"
                )
        else:
            log.warning("%s: image %s not found; using a black canvas", path, image_file)
            image = np.zeros((doc.height, doc.width, 3), dtype=np.uint8)
        instances = []
        for inst, rle in instances_to_masks(doc):
            if mask_area(rle) == 0:
                log.warning("%s: instance %d covers no pixel centre; skipped", path, inst.instance_id)
                continue
            instances.append(Instance(inst.instance_id, inst.label, rle, polygon_to_bbox(inst.polygon)))
        samples.append(Sample(path.stem, image, instances))
    save_dataset(samples, root)
    return samples

