"""Parcel rasterization, per-parcel cropping and the batch extraction pipeline."""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyWindowError, IncompatibleCrsError, ParklotError
from .raster_io import GeoRaster, GeoTransform, mosaic, read_geotiff, read_window, world_to_pixel, write_png
from .vector_io import ParcelFeature, PolygonGeom, filter_features, read_shapefile

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BitMask:
    """Dense binary mask, ``bits[row, col]``."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {b.shape}")
        b = np.array(b, dtype=bool, copy=True)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @classmethod
    def zeros(cls, width: int, height: int) -> BitMask:
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        if not isinstance(other, BitMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and np.array_equal(self.bits, other.bits)


def fill_rings(rings_px: Sequence[np.ndarray], col0: int, row0: int, width: int, height: int) -> np.ndarray:
    """Even-odd scanline fill of pixel-space rings.

    Pixel (c, r) of the output is set when the point ``(col0 + c + 0.5,
    row0 + r + 0.5)`` lies inside. An edge is crossed by a scanline when the
    scanline y is in ``[min(y1, y2), max(y1, y2))`` and the centre is strictly
    left of the crossing.
    """
    out = np.zeros((height, width), dtype=bool)
    if not rings_px or width <= 0 or height <= 0:
        return out
    x1 = np.concatenate([r[:-1, 0] for r in rings_px])
    y1 = np.concatenate([r[:-1, 1] for r in rings_px])
    x2 = np.concatenate([r[1:, 0] for r in rings_px])
    y2 = np.concatenate([r[1:, 1] for r in rings_px])
    live = y1 != y2
    x1, y1, x2, y2 = x1[live], y1[live], x2[live], y2[live]
    if x1.size == 0:
        return out
    ylo, yhi = np.minimum(y1, y2), np.maximum(y1, y2)
    r_first = max(0, int(math.floor(ylo.min() - row0 - 0.5)))
    r_last = min(height - 1, int(math.ceil(yhi.max() - row0 - 0.5)))
    cx = col0 + np.arange(width) + 0.5
    for r in range(r_first, r_last + 1):
        y = row0 + r + 0.5
        hit = (y1 > y) != (y2 > y)
        if not hit.any():
            continue
        a, b, c, d = x1[hit], y1[hit], x2[hit], y2[hit]
        xs = np.sort((c - a) * (y - b) / (d - b) + a)
        right = xs.size - np.searchsorted(xs, cx, side="right")
        out[r] = (right & 1).astype(bool)
    return out


def rings_to_pixels(g: PolygonGeom, t: GeoTransform) -> list[np.ndarray]:
    rings = []
    for ring in g.rings:
        pts = np.asarray(ring, dtype=float)
        col, row = world_to_pixel(t, pts[:, 0], pts[:, 1])
        rings.append(np.column_stack([col, row]))
    return rings


def rasterize_polygon(g: PolygonGeom, t: GeoTransform, w: int, h: int) -> BitMask:
    """Mask of the pixels of a ``w`` x ``h`` grid whose centres fall inside ``g``."""
    return BitMask(fill_rings(rings_to_pixels(g, t), 0, 0, w, h))


def _crs_compatible(raster_crs: int, feature_crs: int) -> None:
    if raster_crs and feature_crs and raster_crs != feature_crs:
        raise IncompatibleCrsError(f"raster CRS {raster_crs} != parcel CRS {feature_crs}")
    if not raster_crs or not feature_crs:
        if raster_crs != feature_crs:
            warnings.warn("one side has unknown CRS (0); assuming they match", stacklevel=3)


def parcel_window(r: GeoRaster, g: PolygonGeom) -> tuple[int, int, int, int]:
    """Pixel window (col0, row0, w, h) of the polygon bbox, clipped to the raster."""
    minx, miny, maxx, maxy = g.bbox
    c_lo, r_lo = world_to_pixel(r.transform, minx, maxy)
    c_hi, r_hi = world_to_pixel(r.transform, maxx, miny)
    c0 = max(int(math.floor(c_lo)), 0)
    r0 = max(int(math.floor(r_lo)), 0)
    c1 = min(int(math.ceil(c_hi)), r.width)
    r1 = min(int(math.ceil(r_hi)), r.height)
    if c1 <= c0 or r1 <= r0:
        raise EmptyWindowError(f"parcel bbox {g.bbox} does not intersect raster extent {r.bounds}")
    return c0, r0, c1 - c0, r1 - r0


def crop_parcel(
    r: GeoRaster, f: ParcelFeature, background: Sequence[int] = (0, 0, 0)
) -> tuple[GeoRaster, BitMask]:
    """Crop the parcel's bbox window and blank everything outside the polygon."""
    _crs_compatible(r.transform.crs_code, f.crs_code)
    col0, row0, w, h = parcel_window(r, f.geometry)
    # fill in the full raster's pixel frame so the mask matches rasterize_polygon exactly
    bits = fill_rings(rings_to_pixels(f.geometry, r.transform), col0, row0, w, h)
    window = read_window(r, col0, row0, w, h)
    px = window.pixels.copy()
    px[~bits] = np.asarray(background, dtype=np.uint8)[: px.shape[2]]
    return GeoRaster(px, window.transform), BitMask(bits)


def extract_all(
    raster_paths: Sequence[str | PathLike],
    shapefile_paths: Sequence[str | PathLike],
    predicate,
    out_dir: str | PathLike,
    background: Sequence[int] = (0, 0, 0),
    crs_code: int | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Mosaic rasters, select parcels and write one PNG per parcel.

    Per-parcel failures are recorded in the manifest (``status`` other than
    ``"ok"``) instead of aborting. The manifest is also written to
    ``out_dir/manifest.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    raster = mosaic([read_geotiff(p) for p in raster_paths])
    if crs_code is None:
        crs_code = raster.transform.crs_code

    todo: list[tuple[int, Path, ParcelFeature]] = []
    for source, path in enumerate(shapefile_paths):
        feats = filter_features(read_shapefile(path, crs_code), predicate)
        for feat in feats:
            todo.append((source, Path(path), feat))

    def work(item):
        source, path, feat = item
        stem = Path(path).with_suffix("").name
        png = out_dir / f"{stem}_{feat.record_index:05d}.png"
        row = {
            "source": source,
            "record_index": feat.record_index,
            "window": None,
            "world_bbox": [float(v) for v in feat.geometry.bbox],
            "png_path": None,
            "status": "ok",
        }
        try:
            crop, _ = crop_parcel(raster, feat, background)
            col0, row0, w, h = parcel_window(raster, feat.geometry)
            write_png(crop, png)
            row["window"] = {"col0": col0, "row0": row0, "w": w, "h": h}
            row["png_path"] = png.name
        except (ParklotError, OSError) as exc:
            log.warning("parcel %s/%d failed: %s", stem, feat.record_index, exc)
            row["status"] = f"error: {exc}"
        return row

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        rows = list(pool.map(work, todo))
    rows.sort(key=lambda r: (r["source"], r["record_index"]))
    (out_dir / "manifest.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows
