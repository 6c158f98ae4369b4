"""GeoTIFF subset reader/writer, mosaicking, windowed reads and PNG export.

Only north-up rasters georeferenced by ModelPixelScale + ModelTiepoint are
supported. Pixel samples are 8-bit and are carried as a ``(rows, cols, bands)``
``uint8`` array, i.e. row-major and band-interleaved.
"""

from __future__ import annotations

import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import (
    AlignmentError,
    EmptyWindowError,
    FormatError,
    GeoreferencingError,
    IncompatibleGridError,
    UnsupportedFeatureError,
)

log = logging.getLogger(__name__)

# TIFF / GeoTIFF tag ids
IMAGE_WIDTH = 256
IMAGE_LENGTH = 257
BITS_PER_SAMPLE = 258
COMPRESSION = 259
PHOTOMETRIC = 262
STRIP_OFFSETS = 273
SAMPLES_PER_PIXEL = 277
ROWS_PER_STRIP = 278
STRIP_BYTE_COUNTS = 279
PLANAR_CONFIG = 284
PREDICTOR = 317
TILE_WIDTH = 322
TILE_LENGTH = 323
TILE_OFFSETS = 324
TILE_BYTE_COUNTS = 325
SAMPLE_FORMAT = 339
MODEL_PIXEL_SCALE = 33550
MODEL_TIEPOINT = 33922
GEO_KEY_DIRECTORY = 34735

GEO_TAG_NAMES = {MODEL_PIXEL_SCALE: "ModelPixelScale", MODEL_TIEPOINT: "ModelTiepoint"}

# GeoKeys
GT_MODEL_TYPE = 1024
GT_RASTER_TYPE = 1025
GEOGRAPHIC_TYPE = 2048
PROJECTED_CS_TYPE = 3072
RASTER_PIXEL_IS_POINT = 2
USER_DEFINED = 32767

COMPRESSION_NONE = 1
COMPRESSION_DEFLATE = (8, 32946)

# type id -> (struct code, size)
_TIFF_TYPES = {
    1: ("B", 1),
    2: ("c", 1),
    3: ("H", 2),
    4: ("I", 4),
    5: ("II", 8),
    6: ("b", 1),
    7: ("B", 1),
    8: ("h", 2),
    9: ("i", 4),
    10: ("ii", 8),
    11: ("f", 4),
    12: ("d", 8),
}


@dataclass(frozen=True)
class GeoTransform:
    """North-up affine mapping between pixel (col, row) and world (x, y)."""

    origin_x: float
    origin_y: float
    pixel_size_x: float
    pixel_size_y: float
    crs_code: int = 0

    def __post_init__(self):
        if not (self.pixel_size_x > 0 and self.pixel_size_y > 0):
            raise ValueError(
                f"pixel sizes must be positive, got ({self.pixel_size_x}, {self.pixel_size_y})"
            )
        if not all(math.isfinite(v) for v in (self.origin_x, self.origin_y)):
            raise ValueError("origin must be finite")

    def world_to_pixel(self, x, y):
        return world_to_pixel(self, x, y)

    def pixel_to_world(self, col, row):
        return pixel_to_world(self, col, row)

    def shifted(self, dcol: int, drow: int) -> GeoTransform:
        """Transform of a window whose top-left pixel is (dcol, drow) here."""
        x, y = pixel_to_world(self, dcol, drow)
        return GeoTransform(x, y, self.pixel_size_x, self.pixel_size_y, self.crs_code)


def world_to_pixel(t: GeoTransform, x, y):
    """Fractional (col, row) for world coordinates; works on scalars or arrays."""
    col = (x - t.origin_x) / t.pixel_size_x
    row = (t.origin_y - y) / t.pixel_size_y
    return col, row


def pixel_to_world(t: GeoTransform, col, row):
    x = t.origin_x + col * t.pixel_size_x
    y = t.origin_y - row * t.pixel_size_y
    return x, y


@dataclass(frozen=True, eq=False)
class GeoRaster:
    pixels: np.ndarray
    transform: GeoTransform = field(default_factory=lambda: GeoTransform(0.0, 0.0, 1.0, 1.0))

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3:
            raise ValueError(f"pixels must be (rows, cols, bands), got shape {px.shape}")
        if px.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1 or px.shape[2] < 1:
            raise ValueError(f"raster must be at least 1x1 with one band, got {px.shape}")
        px = np.ascontiguousarray(px)
        if px is self.pixels:
            px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def band_count(self) -> int:
        return self.pixels.shape[2]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """World extent as (min_x, min_y, max_x, max_y)."""
        x0, y0 = pixel_to_world(self.transform, 0, 0)
        x1, y1 = pixel_to_world(self.transform, self.width, self.height)
        return (x0, y1, x1, y0)

    def __eq__(self, other):
        if not isinstance(other, GeoRaster):
            return NotImplemented
        return self.transform == other.transform and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return (
            f"GeoRaster(width={self.width}, height={self.height}, "
            f"band_count={self.band_count}, transform={self.transform})"
        )


# ---------------------------------------------------------------------------
# TIFF reading
# ---------------------------------------------------------------------------


def _read_ifd(data: bytes, bo: str, offset: int) -> dict[int, tuple]:
    if offset + 2 > len(data):
        raise FormatError(f"IFD offset {offset} beyond end of file ({len(data)} bytes)")
    (n,) = struct.unpack_from(bo + "H", data, offset)
    if offset + 2 + 12 * n > len(data):
        raise FormatError("truncated IFD")
    tags = {}
    for i in range(n):
        tag, typ, count = struct.unpack_from(bo + "HHI", data, offset + 2 + 12 * i)
        if typ not in _TIFF_TYPES:
            # unknown types are legal in TIFF; skip them
            continue
        code, size = _TIFF_TYPES[typ]
        nbytes = size * count
        if nbytes <= 4:
            start = offset + 2 + 12 * i + 8
        else:
            (start,) = struct.unpack_from(bo + "I", data, offset + 2 + 12 * i + 8)
        if start + nbytes > len(data):
            raise FormatError(f"tag {tag} points past end of file")
        if typ == 2:
            tags[tag] = (data[start : start + nbytes].rstrip(b"\x00").decode("latin-1"),)
            continue
        values = struct.unpack_from(bo + code * count, data, start)
        if typ in (5, 10):
            values = tuple(values[k] / values[k + 1] if values[k + 1] else math.nan
                           for k in range(0, len(values), 2))
        tags[tag] = values
    return tags


def _decode_chunk(raw: bytes, compression: int) -> bytes:
    if compression == COMPRESSION_NONE:
        return raw
    if compression in COMPRESSION_DEFLATE:
        try:
            return zlib.decompress(raw)
        except zlib.error as exc:
            raise FormatError(f"corrupt Deflate stream: {exc}") from exc
    raise UnsupportedFeatureError(f"unsupported TIFF compression {compression}")


def _chunk_array(buf: bytes, rows: int, cols: int, spp: int, predictor: int) -> np.ndarray:
    need = rows * cols * spp
    if len(buf) < need:
        raise FormatError(f"chunk holds {len(buf)} bytes, expected {need}")
    arr = np.frombuffer(buf, dtype=np.uint8, count=need).reshape(rows, cols, spp)
    if predictor == 2:
        arr = np.cumsum(arr, axis=1, dtype=np.uint8)
    return arr


def _geokeys(tags: dict[int, tuple]) -> dict[int, int]:
    raw = tags.get(GEO_KEY_DIRECTORY)
    if not raw or len(raw) < 4:
        return {}
    n = raw[3]
    keys = {}
    for i in range(n):
        entry = raw[4 + 4 * i : 8 + 4 * i]
        if len(entry) < 4:
            raise FormatError("truncated GeoKeyDirectory")
        key, location, _count, value = entry
        if location == 0:
            keys[key] = value
    return keys


def parse_geotiff(data: bytes) -> GeoRaster:
    """Decode GeoTIFF bytes into a :class:`GeoRaster`.

    Accepts classic TIFF in either byte order, strips or tiles, 8 bits per
    sample, uncompressed or Deflate. Bands after the third are dropped.
    """
    data = bytes(data)
    if len(data) < 8:
        raise FormatError("file too short for a TIFF header")
    if data[:2] == b"II":
        bo = "<"
    elif data[:2] == b"MM":
        bo = ">"
    else:
        raise FormatError(f"bad TIFF byte-order mark {data[:2]!r}")
    (magic,) = struct.unpack_from(bo + "H", data, 2)
    if magic == 43:
        raise UnsupportedFeatureError("BigTIFF is not supported")
    if magic != 42:
        raise FormatError(f"bad TIFF magic number {magic}")
    (ifd_offset,) = struct.unpack_from(bo + "I", data, 4)
    tags = _read_ifd(data, bo, ifd_offset)

    try:
        width = tags[IMAGE_WIDTH][0]
        height = tags[IMAGE_LENGTH][0]
    except KeyError as exc:
        raise FormatError(f"missing required TIFF tag {exc.args[0]}") from None
    if width < 1 or height < 1:
        raise FormatError(f"invalid image size {width}x{height}")
    spp = tags.get(SAMPLES_PER_PIXEL, (1,))[0]
    bits = tags.get(BITS_PER_SAMPLE, (1,) * spp)
    if any(b != 8 for b in bits):
        raise UnsupportedFeatureError(f"only 8 bits/sample supported, got {bits}")
    if tags.get(SAMPLE_FORMAT, (1,))[0] != 1:
        raise UnsupportedFeatureError(f"unsupported SampleFormat {tags[SAMPLE_FORMAT][0]}")
    compression = tags.get(COMPRESSION, (1,))[0]
    if compression != COMPRESSION_NONE and compression not in COMPRESSION_DEFLATE:
        raise UnsupportedFeatureError(f"unsupported TIFF compression {compression}")
    predictor = tags.get(PREDICTOR, (1,))[0]
    if predictor not in (1, 2):
        raise UnsupportedFeatureError(f"unsupported predictor {predictor}")
    planar = tags.get(PLANAR_CONFIG, (1,))[0]
    planes = spp if planar == 2 else 1
    chunk_spp = 1 if planar == 2 else spp

    for tag in (MODEL_PIXEL_SCALE, MODEL_TIEPOINT):
        if tag not in tags:
            raise GeoreferencingError(f"missing GeoTIFF tag {tag} ({GEO_TAG_NAMES[tag]})")

    out = np.zeros((height, width, spp), dtype=np.uint8)
    if TILE_OFFSETS in tags:
        tw = tags[TILE_WIDTH][0]
        tl = tags[TILE_LENGTH][0]
        offsets, counts = tags[TILE_OFFSETS], tags.get(TILE_BYTE_COUNTS)
        across = -(-width // tw)
        down = -(-height // tl)
        per_plane = across * down
        if counts is None or len(offsets) < per_plane * planes or len(counts) < len(offsets):
            raise FormatError("tile offset/byte-count arrays inconsistent with image size")
        for p in range(planes):
            for t in range(per_plane):
                k = p * per_plane + t
                raw = data[offsets[k] : offsets[k] + counts[k]]
                tile = _chunk_array(_decode_chunk(raw, compression), tl, tw, chunk_spp, predictor)
                r0, c0 = (t // across) * tl, (t % across) * tw
                r1, c1 = min(r0 + tl, height), min(c0 + tw, width)
                bands = slice(p, p + 1) if planar == 2 else slice(None)
                out[r0:r1, c0:c1, bands] = tile[: r1 - r0, : c1 - c0]
    elif STRIP_OFFSETS in tags:
        rps = min(tags.get(ROWS_PER_STRIP, (height,))[0], height)
        offsets, counts = tags[STRIP_OFFSETS], tags.get(STRIP_BYTE_COUNTS)
        per_plane = -(-height // rps)
        if counts is None or len(offsets) < per_plane * planes or len(counts) < len(offsets):
            raise FormatError("strip offset/byte-count arrays inconsistent with image size")
        for p in range(planes):
            for s in range(per_plane):
                k = p * per_plane + s
                r0 = s * rps
                rows = min(rps, height - r0)
                raw = data[offsets[k] : offsets[k] + counts[k]]
                strip = _chunk_array(_decode_chunk(raw, compression), rows, width, chunk_spp, predictor)
                bands = slice(p, p + 1) if planar == 2 else slice(None)
                out[r0 : r0 + rows, :, bands] = strip
    else:
        raise FormatError("TIFF has neither strip nor tile offsets")

    scale = tags[MODEL_PIXEL_SCALE]
    tie = tags[MODEL_TIEPOINT]
    if len(scale) < 2 or len(tie) < 6:
        raise GeoreferencingError("ModelPixelScale/ModelTiepoint have too few values")
    sx, sy = float(scale[0]), float(scale[1])
    if not (sx > 0 and sy > 0):
        raise GeoreferencingError(f"non-positive pixel scale ({sx}, {sy})")
    i, j, _k, x, y, _z = (float(v) for v in tie[:6])
    keys = _geokeys(tags)
    if keys.get(GT_RASTER_TYPE) == RASTER_PIXEL_IS_POINT:
        # tiepoint refers to the pixel centre; move to the corner
        i -= 0.5
        j -= 0.5
    crs = keys.get(PROJECTED_CS_TYPE, 0)
    if crs in (0, USER_DEFINED):
        crs = keys.get(GEOGRAPHIC_TYPE, 0)
    if crs == USER_DEFINED:
        crs = 0
    transform = GeoTransform(x - i * sx, y + j * sy, sx, sy, int(crs))
    if spp > 3:
        log.debug("dropping %d extra band(s)", spp - 3)
    return GeoRaster(out[:, :, :3], transform)


def read_geotiff(path: str | PathLike) -> GeoRaster:
    return parse_geotiff(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# TIFF writing
# ---------------------------------------------------------------------------


def encode_geotiff(
    raster: GeoRaster,
    *,
    compression: str | None = None,
    byteorder: str = "<",
    rows_per_strip: int | None = None,
) -> bytes:
    """Serialize a raster as a strip-organized GeoTIFF.

    ``compression`` is ``None`` or ``"deflate"``; ``byteorder`` is ``"<"`` or ``">"``.
    """
    if byteorder not in ("<", ">"):
        raise ValueError("byteorder must be '<' or '>'")
    if compression not in (None, "deflate"):
        raise UnsupportedFeatureError(f"cannot write compression {compression!r}")
    h, w, spp = raster.pixels.shape
    if rows_per_strip is None:
        rows_per_strip = max(1, 8192 // (w * spp))
    rows_per_strip = min(rows_per_strip, h)
    strips = []
    for r0 in range(0, h, rows_per_strip):
        raw = raster.pixels[r0 : r0 + rows_per_strip].tobytes()
        strips.append(zlib.compress(raw, 6) if compression else raw)

    t = raster.transform
    geokeys = [1, 1, 0, 0]
    entries = [(GT_MODEL_TYPE, 0, 1, 1), (GT_RASTER_TYPE, 0, 1, 1)]
    if t.crs_code:
        entries.append((PROJECTED_CS_TYPE, 0, 1, int(t.crs_code)))
    geokeys[3] = len(entries)
    for e in entries:
        geokeys.extend(e)

    # (tag, type, values)
    ifd = [
        (IMAGE_WIDTH, 4, [w]),
        (IMAGE_LENGTH, 4, [h]),
        (BITS_PER_SAMPLE, 3, [8] * spp),
        (COMPRESSION, 3, [8 if compression else 1]),
        (PHOTOMETRIC, 3, [2 if spp >= 3 else 1]),
        (STRIP_OFFSETS, 4, [0] * len(strips)),
        (SAMPLES_PER_PIXEL, 3, [spp]),
        (ROWS_PER_STRIP, 4, [rows_per_strip]),
        (STRIP_BYTE_COUNTS, 4, [len(s) for s in strips]),
        (PLANAR_CONFIG, 3, [1]),
        (MODEL_PIXEL_SCALE, 12, [t.pixel_size_x, t.pixel_size_y, 0.0]),
        (MODEL_TIEPOINT, 12, [0.0, 0.0, 0.0, t.origin_x, t.origin_y, 0.0]),
        (GEO_KEY_DIRECTORY, 3, geokeys),
    ]
    bo = byteorder
    ifd_offset = 8
    ifd_size = 2 + 12 * len(ifd) + 4
    extra_offset = ifd_offset + ifd_size
    payloads = []
    for tag, typ, values in ifd:
        code, size = _TIFF_TYPES[typ]
        blob = struct.pack(bo + code * len(values), *values)
        payloads.append(blob)
    # lay out out-of-line values, then strips
    offsets = []
    cursor = extra_offset
    for blob in payloads:
        if len(blob) > 4:
            offsets.append(cursor)
            cursor += len(blob) + (len(blob) & 1)
        else:
            offsets.append(None)
    strip_offsets = []
    for s in strips:
        strip_offsets.append(cursor)
        cursor += len(s)
    k = [tag for tag, _, _ in ifd].index(STRIP_OFFSETS)
    payloads[k] = struct.pack(bo + "I" * len(strips), *strip_offsets)

    out = bytearray()
    out += (b"II" if bo == "<" else b"MM") + struct.pack(bo + "HI", 42, ifd_offset)
    out += struct.pack(bo + "H", len(ifd))
    for (tag, typ, values), blob, off in zip(ifd, payloads, offsets):
        out += struct.pack(bo + "HHI", tag, typ, len(values))
        out += blob.ljust(4, b"\x00") if off is None else struct.pack(bo + "I", off)
    out += struct.pack(bo + "I", 0)
    for blob, off in zip(payloads, offsets):
        if off is not None:
            out += blob + b"\x00" * (len(blob) & 1)
    for s in strips:
        out += s
    return bytes(out)


def write_geotiff(raster: GeoRaster, path: str | PathLike, **kwargs) -> None:
    Path(path).write_bytes(encode_geotiff(raster, **kwargs))


# ---------------------------------------------------------------------------
# Mosaic / windows / PNG
# ---------------------------------------------------------------------------


def _offset(value: float, size: float, what: str) -> int:
    steps = value / size
    n = round(steps)
    if abs(steps - n) > 1e-6:
        raise AlignmentError(f"{what} offset {steps:.9f} px is not integral")
    return int(n)


def mosaic(rasters: Sequence[GeoRaster]) -> GeoRaster:
    """Stitch rasters sharing one grid; later inputs overwrite earlier ones."""
    rasters = list(rasters)
    if not rasters:
        raise ValueError("mosaic needs at least one raster")
    ref = rasters[0].transform
    for i, r in enumerate(rasters):
        t = r.transform
        if r.band_count != 3:
            raise IncompatibleGridError(f"raster {i} has {r.band_count} bands, expected 3")
        if t.crs_code != ref.crs_code:
            raise IncompatibleGridError(
                f"raster {i} CRS {t.crs_code} differs from raster 0 CRS {ref.crs_code}"
            )
        if not (
            math.isclose(t.pixel_size_x, ref.pixel_size_x, rel_tol=1e-9)
            and math.isclose(t.pixel_size_y, ref.pixel_size_y, rel_tol=1e-9)
        ):
            raise IncompatibleGridError(
                f"raster {i} pixel size ({t.pixel_size_x}, {t.pixel_size_y}) differs from "
                f"({ref.pixel_size_x}, {ref.pixel_size_y})"
            )
    min_x = min(r.transform.origin_x for r in rasters)
    max_y = max(r.transform.origin_y for r in rasters)
    sx, sy = ref.pixel_size_x, ref.pixel_size_y
    placed = []
    for r in rasters:
        c0 = _offset(r.transform.origin_x - min_x, sx, "column")
        r0 = _offset(max_y - r.transform.origin_y, sy, "row")
        placed.append((c0, r0, r))
    width = max(c0 + r.width for c0, _, r in placed)
    height = max(r0 + r.height for _, r0, r in placed)
    canvas = np.zeros((height, width, 3), dtype=np.uint8)
    for c0, r0, r in placed:
        canvas[r0 : r0 + r.height, c0 : c0 + r.width] = r.pixels
    return GeoRaster(canvas, GeoTransform(min_x, max_y, sx, sy, ref.crs_code))


def read_window(r: GeoRaster, col0: int, row0: int, w: int, h: int) -> GeoRaster:
    """Clip the requested pixel window to the raster and return it."""
    c0, r0 = max(int(col0), 0), max(int(row0), 0)
    c1, r1 = min(int(col0) + int(w), r.width), min(int(row0) + int(h), r.height)
    if c1 <= c0 or r1 <= r0:
        raise EmptyWindowError(
            f"window (col0={col0}, row0={row0}, w={w}, h={h}) does not intersect "
            f"{r.width}x{r.height} raster"
        )
    return GeoRaster(r.pixels[r0:r1, c0:c1].copy(), r.transform.shifted(c0, r0))


def write_png(r: GeoRaster, path: str | PathLike) -> None:
    if r.band_count != 3:
        raise ValueError(f"PNG export needs exactly 3 bands, raster has {r.band_count}")
    Image.fromarray(np.ascontiguousarray(r.pixels)).save(path, format="PNG")


def read_png(path: str | PathLike) -> np.ndarray:
    """Decode a PNG to an ``(rows, cols, 3)`` uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
