"""Parking-space occupancy from vehicle and space instances."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from os import PathLike
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotation import BBox, RleMask, rle_decode
from .errors import DimensionMismatchError
from .raster_io import GeoRaster, write_png

GREEN = (0, 255, 0)
RED = (255, 0, 0)


@dataclass(frozen=True)
class SpaceStatus:
    space_id: int
    occupied: bool
    covering_vehicle_ids: list[int]
    coverage_fraction: float


@dataclass(frozen=True)
class OccupancyReport:
    spaces: list[SpaceStatus]

    @property
    def total_spaces(self) -> int:
        return len(self.spaces)

    @property
    def occupied_count(self) -> int:
        return sum(s.occupied for s in self.spaces)

    @property
    def utilization(self) -> float:
        return self.occupied_count / self.total_spaces if self.spaces else 0.0

    def to_json(self) -> dict:
        return {
            "total_spaces": self.total_spaces,
            "occupied_count": self.occupied_count,
            "utilization": self.utilization,
            "spaces": [asdict(s) for s in self.spaces],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["space_id", "occupied", "coverage"])
        for s in self.spaces:
            w.writerow([s.space_id, int(s.occupied), f"{s.coverage_fraction:.6f}"])
        return buf.getvalue()


def _assign(coverage: np.ndarray, threshold: float, space_ids, vehicle_ids) -> OccupancyReport:
    """``coverage[v, s]`` is the fraction of vehicle v lying in space s."""
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    n_veh, n_sp = coverage.shape
    assigned: dict[int, list[tuple[int, float]]] = {s: [] for s in range(n_sp)}
    for v in range(n_veh):
        if n_sp == 0:
            break
        s = int(np.argmax(coverage[v]))  # first maximum wins ties
        if coverage[v, s] > 0:
            assigned[s].append((v, float(coverage[v, s])))
    spaces = []
    for s in range(n_sp):
        covering = [vehicle_ids[v] for v, c in assigned[s] if c >= threshold]
        best = max((c for _, c in assigned[s]), default=0.0)
        spaces.append(SpaceStatus(space_ids[s], bool(covering), covering, best))
    return OccupancyReport(spaces)


def assess_occupancy(
    spaces: Sequence[RleMask],
    vehicles: Sequence[RleMask],
    threshold: float = 0.5,
    space_ids: Sequence[int] | None = None,
    vehicle_ids: Sequence[int] | None = None,
) -> OccupancyReport:
    """Occupancy from instance masks.

    Each vehicle goes to the space holding the largest share of its pixels;
    a space is occupied when one of its vehicles has at least ``threshold``
    of its area inside it.
    """
    all_masks = list(spaces) + list(vehicles)
    if all_masks:
        size = (all_masks[0].width, all_masks[0].height)
        for m in all_masks:
            if (m.width, m.height) != size:
                raise DimensionMismatchError("all space and vehicle masks must share one size")
    space_ids = list(range(len(spaces))) if space_ids is None else list(space_ids)
    vehicle_ids = list(range(len(vehicles))) if vehicle_ids is None else list(vehicle_ids)
    if not spaces or not vehicles:
        return _assign(np.zeros((len(vehicles), len(spaces))), threshold, space_ids, vehicle_ids)
    S = np.stack([rle_decode(m).bits.ravel() for m in spaces]).astype(np.float64)
    V = np.stack([rle_decode(m).bits.ravel() for m in vehicles]).astype(np.float64)
    inter = V @ S.T
    area = V.sum(axis=1)[:, None]
    coverage = np.where(area > 0, inter / np.maximum(area, 1), 0.0)
    return _assign(coverage, threshold, space_ids, vehicle_ids)


def occupancy_from_bboxes(
    spaces: Sequence[BBox],
    vehicles: Sequence[BBox],
    threshold: float = 0.5,
    space_ids: Sequence[int] | None = None,
    vehicle_ids: Sequence[int] | None = None,
) -> OccupancyReport:
    """Same assignment rule as :func:`assess_occupancy` using box areas."""
    space_ids = list(range(len(spaces))) if space_ids is None else list(space_ids)
    vehicle_ids = list(range(len(vehicles))) if vehicle_ids is None else list(vehicle_ids)
    coverage = np.zeros((len(vehicles), len(spaces)))
    for v, vb in enumerate(vehicles):
        if vb.area <= 0:
            continue
        for s, sb in enumerate(spaces):
            iw = min(vb.x_max, sb.x_max) - max(vb.x_min, sb.x_min)
            ih = min(vb.y_max, sb.y_max) - max(vb.y_min, sb.y_min)
            if iw > 0 and ih > 0:
                coverage[v, s] = iw * ih / vb.area
    return _assign(coverage, threshold, space_ids, vehicle_ids)


def overlay(
    report: OccupancyReport, spaces: Sequence[RleMask], base: np.ndarray | None = None
) -> np.ndarray:
    """Draw space outlines (green free, red occupied) onto an RGB image."""
    if not spaces and base is None:
        raise ValueError("need masks or a base image to size the overlay")
    h, w = (spaces[0].height, spaces[0].width) if spaces else base.shape[:2]
    img = np.zeros((h, w, 3), dtype=np.uint8) if base is None else np.array(base, dtype=np.uint8)
    for status, m in zip(report.spaces, spaces):
        bits = rle_decode(m).bits
        padded = np.pad(bits, 1)
        interior = (
            padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
        )
        img[bits & ~interior] = RED if status.occupied else GREEN
    return img


def write_occupancy(
    report: OccupancyReport, out_dir: str | PathLike, stem: str = "occupancy",
    spaces: Sequence[RleMask] | None = None, base: np.ndarray | None = None,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
    (out / f"{stem}.csv").write_text(report.to_csv())
    if spaces:
        write_png(GeoRaster(overlay(report, spaces, base)), out / f"{stem}_overlay.png")
