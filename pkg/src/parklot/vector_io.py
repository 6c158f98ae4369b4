"""ESRI shapefile (.shp/.shx/.dbf) polygon reader and writer.

Only shape type 5 (Polygon) and null records are handled. The dBASE side
understands Character, Numeric and Float fields; anything else is kept as
stripped text.
"""

from __future__ import annotations

import datetime
import logging
import struct
import warnings
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import ConsistencyError, FieldError, FormatError, UnsupportedShapeError

log = logging.getLogger(__name__)

FILE_CODE = 9994
VERSION = 1000
NULL_SHAPE = 0
POLYGON = 5
HEADER_BYTES = 100

Point = tuple[float, float]
Ring = tuple[Point, ...]


@dataclass(frozen=True)
class DbfField:
    name: str
    type: str
    length: int
    decimals: int = 0


@dataclass(frozen=True)
class PolygonGeom:
    """Polygon as closed rings; ESRI order is clockwise outers, counter-clockwise holes."""

    rings: tuple[Ring, ...]

    def __post_init__(self):
        rings = tuple(tuple((float(x), float(y)) for x, y in ring) for ring in self.rings)
        for i, ring in enumerate(rings):
            if len(ring) < 4:
                raise ValueError(f"ring {i} has {len(ring)} points, need at least 4")
            if ring[0] != ring[-1]:
                raise ValueError(f"ring {i} is not closed")
        object.__setattr__(self, "rings", rings)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        pts = np.concatenate([np.asarray(r) for r in self.rings])
        return (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())


@dataclass(frozen=True)
class ParcelFeature:
    geometry: PolygonGeom
    attributes: Mapping[str, object]
    record_index: int
    fields: tuple[DbfField, ...] = field(default=(), compare=False, repr=False)
    crs_code: int = field(default=0, compare=False)


# ---------------------------------------------------------------------------
# ring helpers
# ---------------------------------------------------------------------------


def signed_ring_area(ring) -> float:
    """Shoelace area; positive for counter-clockwise rings (y up)."""
    pts = np.asarray(ring, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))


def _point_in_ring(px: float, py: float, ring) -> bool:
    inside = False
    n = len(ring)
    for i in range(n - 1):
        x1, y1 = ring[i]
        x2, y2 = ring[i + 1]
        if (y1 > py) != (y2 > py):
            if px < (x2 - x1) * (py - y1) / (y2 - y1) + x1:
                inside = not inside
    return inside


def ring_is_hole(rings, k: int) -> bool:
    """A ring is a hole when it sits inside an odd number of the other rings."""
    ring = rings[k]
    # probe with a vertex; degenerate (zero-area) rings count as outer
    depth = 0
    for j, other in enumerate(rings):
        if j == k:
            continue
        px, py = ring[0]
        if _point_in_ring(px, py, other):
            depth += 1
    return depth % 2 == 1


def _reorient(rings: tuple[Ring, ...], record: int) -> tuple[Ring, ...]:
    fixed = []
    for k, ring in enumerate(rings):
        area = signed_ring_area(ring)
        hole = ring_is_hole(rings, k)
        wants_cw = not hole
        if area != 0 and (area < 0) != wants_cw:
            warnings.warn(
                f"record {record}: ring {k} has wrong orientation for "
                f"{'a hole' if hole else 'an outer ring'}; reversed",
                stacklevel=3,
            )
            ring = ring[::-1]
        fixed.append(ring)
    return tuple(fixed)


def polygon_area(g: PolygonGeom) -> float:
    total = 0.0
    for k, ring in enumerate(g.rings):
        a = abs(signed_ring_area(ring))
        total += -a if ring_is_hole(g.rings, k) else a
    return abs(total)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _check_main_header(data: bytes, what: str) -> int:
    if len(data) < HEADER_BYTES:
        raise FormatError(f"{what}: file shorter than the 100-byte header")
    code = struct.unpack_from(">i", data, 0)[0]
    version, shape_type = struct.unpack_from("<ii", data, 28)
    if code != FILE_CODE:
        raise FormatError(f"{what}: bad file code {code}, expected {FILE_CODE}")
    if version != VERSION:
        raise FormatError(f"{what}: bad version {version}, expected {VERSION}")
    return shape_type


def _parse_polygon(content: bytes, record: int) -> PolygonGeom | None:
    (shape_type,) = struct.unpack_from("<i", content, 0)
    if shape_type == NULL_SHAPE:
        return None
    if shape_type != POLYGON:
        raise UnsupportedShapeError(f"record {record}: shape type {shape_type} is not Polygon (5)")
    if len(content) < 44:
        raise FormatError(f"record {record}: polygon content truncated")
    num_parts, num_points = struct.unpack_from("<ii", content, 36)
    need = 44 + 4 * num_parts + 16 * num_points
    if num_parts < 1 or num_points < 1 or len(content) < need:
        raise FormatError(f"record {record}: bad part/point counts ({num_parts}, {num_points})")
    parts = list(struct.unpack_from(f"<{num_parts}i", content, 44))
    pts = np.frombuffer(content, dtype="<f8", count=2 * num_points, offset=44 + 4 * num_parts)
    pts = pts.reshape(-1, 2)
    bounds = parts + [num_points]
    rings = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if not 0 <= a < b <= num_points:
            raise FormatError(f"record {record}: bad part index array {parts}")
        rings.append(tuple((float(x), float(y)) for x, y in pts[a:b]))
    try:
        rings = tuple(rings)
        geom = PolygonGeom(_reorient(rings, record))
    except ValueError as exc:
        raise FormatError(f"record {record}: {exc}") from None
    return geom


def _parse_dbf(data: bytes) -> tuple[tuple[DbfField, ...], list[dict | None]]:
    if len(data) < 32:
        raise FormatError("dbf: file shorter than its 32-byte header")
    num_records, header_len, record_len = struct.unpack_from("<IHH", data, 4)
    fields = []
    pos = 32
    while pos < header_len - 1 and data[pos] != 0x0D:
        if pos + 32 > len(data):
            raise FormatError("dbf: truncated field descriptor array")
        desc = data[pos : pos + 32]
        name = desc[:11].split(b"\x00", 1)[0].decode("ascii", "replace").strip()
        ftype = chr(desc[11])
        length, decimals = desc[16], desc[17]
        if ftype not in "CNF":
            warnings.warn(f"dbf field {name!r} has type {ftype!r}; read as text", stacklevel=3)
        fields.append(DbfField(name, ftype, length, decimals))
        pos += 32
    if 1 + sum(f.length for f in fields) != record_len:
        raise FormatError(
            f"dbf: record length {record_len} does not match field widths "
            f"({1 + sum(f.length for f in fields)})"
        )
    if header_len + num_records * record_len > len(data):
        raise FormatError("dbf: file truncated before last record")
    records: list[dict | None] = []
    for i in range(num_records):
        start = header_len + i * record_len
        rec = data[start : start + record_len]
        if rec[:1] == b"*":
            records.append(None)
            continue
        values = {}
        off = 1
        for f in fields:
            raw = rec[off : off + f.length]
            off += f.length
            values[f.name] = _decode_value(raw, f)
        records.append(values)
    return tuple(fields), records


def _decode_value(raw: bytes, f: DbfField):
    text = raw.decode("latin-1").strip(" \x00")
    if f.type in "NF":
        if not text or set(text) <= {"*", "."}:
            return None
        try:
            if f.decimals == 0 and "." not in text and "e" not in text.lower():
                return int(text)
            return float(text)
        except ValueError:
            return text
    return text


def parse_shapefile(shp: bytes, shx: bytes, dbf: bytes, crs_code: int = 0) -> list[ParcelFeature]:
    """Decode a polygon shapefile triple into features, skipping null shapes."""
    shape_type = _check_main_header(shp, ".shp")
    _check_main_header(shx, ".shx")
    if shape_type not in (NULL_SHAPE, POLYGON):
        raise UnsupportedShapeError(f"shape type {shape_type} is not supported (only Polygon, 5)")
    if (len(shx) - HEADER_BYTES) % 8:
        raise FormatError(".shx: index length is not a multiple of 8 bytes")
    n = (len(shx) - HEADER_BYTES) // 8
    fields, records = _parse_dbf(dbf)
    if len(records) != n:
        raise ConsistencyError(f".shp/.shx hold {n} records but .dbf holds {len(records)}")

    features = []
    for i in range(n):
        offset_words, length_words = struct.unpack_from(">ii", shx, HEADER_BYTES + 8 * i)
        start = offset_words * 2
        if start + 8 > len(shp):
            raise ConsistencyError(f"record {i}: .shx offset {start} beyond .shp end")
        number, content_words = struct.unpack_from(">ii", shp, start)
        if content_words != length_words:
            raise ConsistencyError(
                f"record {i}: .shx length {length_words} != .shp length {content_words}"
            )
        if number != i + 1:
            raise ConsistencyError(f"record {i}: record number {number}, expected {i + 1}")
        content = shp[start + 8 : start + 8 + 2 * content_words]
        if len(content) != 2 * content_words:
            raise FormatError(f"record {i}: .shp truncated")
        geom = _parse_polygon(content, i)
        if geom is None:
            continue
        attrs = records[i]
        if attrs is None:
            log.debug("record %d is marked deleted in .dbf; skipped", i)
            continue
        features.append(ParcelFeature(geom, attrs, i, fields, crs_code))
    return features


def _paths(base: str | PathLike | Sequence) -> tuple[Path, Path, Path]:
    if isinstance(base, (str, PathLike)):
        p = Path(base)
        if p.suffix.lower() in (".shp", ".shx", ".dbf"):
            p = p.with_suffix("")
        return p.with_suffix(".shp"), p.with_suffix(".shx"), p.with_suffix(".dbf")
    shp, shx, dbf = base
    return Path(shp), Path(shx), Path(dbf)


def read_shapefile(path, crs_code: int = 0) -> list[ParcelFeature]:
    shp, shx, dbf = _paths(path)
    return parse_shapefile(shp.read_bytes(), shx.read_bytes(), dbf.read_bytes(), crs_code)


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------

OPERATORS = ("=", "!=", "contains", "<", ">")


@dataclass(frozen=True)
class Predicate:
    """``field op value`` test against a feature's attributes."""

    field: str
    op: str
    value: object

    def __post_init__(self):
        op = {"≠": "!=", "<>": "!=", "==": "="}.get(self.op, self.op)
        if op not in OPERATORS:
            raise ValueError(f"unknown operator {self.op!r}; use one of {OPERATORS}")
        object.__setattr__(self, "op", op)

    @classmethod
    def parse(cls, text: str) -> Predicate:
        """Parse ``"APN = 002"``, ``"LANDUSE contains PARKING"``, ``"AREA > 500"``."""
        for op in (" contains ", "!=", "≠", "<>", "==", "=", "<", ">"):
            if op in text:
                name, value = text.split(op, 1)
                value = value.strip()
                if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
                    value = value[1:-1]
                return cls(name.strip(), op.strip(), value)
        raise ValueError(f"cannot parse predicate {text!r}")

    def __call__(self, attributes: Mapping[str, object]) -> bool:
        if self.field not in attributes:
            raise FieldError(
                f"unknown field {self.field!r}; available: {', '.join(attributes)}"
            )
        actual = attributes[self.field]
        if self.op in ("<", ">"):
            a, b = _as_number(actual), _as_number(self.value)
            if a is None or b is None:
                return False
            return a < b if self.op == "<" else a > b
        if self.op == "contains":
            return actual is not None and str(self.value) in str(actual)
        equal = _equal(actual, self.value)
        return equal if self.op == "=" else not equal


def _as_number(v) -> float | None:
    if isinstance(v, bool) or v is None:
        return None
    if isinstance(v, (int, float)):
        return float(v)
    try:
        return float(str(v).strip())
    except ValueError:
        return None


def _equal(actual, expected) -> bool:
    if isinstance(actual, (int, float)) and not isinstance(actual, bool):
        other = _as_number(expected)
        return other is not None and float(actual) == other
    if actual is None:
        return expected is None or str(expected) == ""
    return str(actual).strip() == str(expected).strip()


PredicateLike = Union[Predicate, str, Callable[[Mapping], bool], Iterable]


def _compile(predicate: PredicateLike) -> Callable[[Mapping], bool]:
    if predicate is None:
        return lambda attrs: True
    if isinstance(predicate, str):
        return Predicate.parse(predicate)
    if callable(predicate):
        return predicate
    parts = [_compile(p) for p in predicate]
    return lambda attrs: all(p(attrs) for p in parts)


def filter_features(features: Sequence[ParcelFeature], predicate: PredicateLike) -> list[ParcelFeature]:
    """Order-preserving subset; a sequence of predicates is AND-ed."""
    test = _compile(predicate)
    return [f for f in features if test(f.attributes)]


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------


def _infer_fields(features: Sequence[ParcelFeature]) -> tuple[DbfField, ...]:
    names: list[str] = []
    for f in features:
        for k in f.attributes:
            if k not in names:
                names.append(k)
    out = []
    for name in names:
        values = [f.attributes.get(name) for f in features]
        present = [v for v in values if v is not None]
        if present and all(isinstance(v, int) and not isinstance(v, bool) for v in present):
            width = max(len(str(v)) for v in present)
            out.append(DbfField(name, "N", min(max(width, 1), 18), 0))
        elif present and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in present):
            out.append(DbfField(name, "F", 19, 11))
        else:
            width = max([len(str(v).encode("latin-1", "replace")) for v in present] + [1])
            out.append(DbfField(name, "C", min(width, 254), 0))
    return tuple(out)


def _encode_value(v, f: DbfField) -> bytes:
    if v is None:
        return b" " * f.length
    if f.type in "NF" and isinstance(v, (int, float)) and not isinstance(v, bool):
        text = str(int(v)) if f.decimals == 0 and float(v).is_integer() else f"{float(v):.{f.decimals}f}"
        if len(text) > f.length:
            raise ValueError(f"value {v!r} does not fit field {f.name} ({f.length} chars)")
        return text.rjust(f.length).encode("latin-1")
    raw = str(v).encode("latin-1", "replace")
    if len(raw) > f.length:
        raise ValueError(f"value {v!r} does not fit field {f.name} ({f.length} chars)")
    return raw.ljust(f.length, b" ")


def _polygon_content(g: PolygonGeom) -> bytes:
    pts = [p for ring in g.rings for p in ring]
    parts, k = [], 0
    for ring in g.rings:
        parts.append(k)
        k += len(ring)
    xmin, ymin, xmax, ymax = g.bbox
    out = struct.pack("<i4d2i", POLYGON, xmin, ymin, xmax, ymax, len(parts), len(pts))
    out += struct.pack(f"<{len(parts)}i", *parts)
    out += np.asarray(pts, dtype="<f8").tobytes()
    return out


def record_size_words(g: PolygonGeom) -> int:
    """Size of one Polygon record in 16-bit words, including its 8-byte header."""
    n_parts = len(g.rings)
    n_points = sum(len(r) for r in g.rings)
    return (8 + 44 + 4 * n_parts + 16 * n_points) // 2


def _main_header(length_words: int, bbox) -> bytes:
    return (
        struct.pack(">7i", FILE_CODE, 0, 0, 0, 0, 0, length_words)
        + struct.pack("<2i", VERSION, POLYGON)
        + struct.pack("<8d", *bbox, 0.0, 0.0, 0.0, 0.0)
    )


def encode_shapefile(
    features: Sequence[ParcelFeature], fields: Sequence[DbfField] | None = None
) -> tuple[bytes, bytes, bytes]:
    """Return (.shp, .shx, .dbf) bytes for the given features."""
    features = list(features)
    if not features:
        raise ValueError("cannot write a shapefile with no features")
    if fields is None:
        fields = features[0].fields or _infer_fields(features)
    fields = tuple(fields)

    bboxes = np.array([f.geometry.bbox for f in features])
    bbox = (bboxes[:, 0].min(), bboxes[:, 1].min(), bboxes[:, 2].max(), bboxes[:, 3].max())
    records = bytearray()
    index = bytearray()
    offset_words = HEADER_BYTES // 2
    for i, feat in enumerate(features):
        content = _polygon_content(feat.geometry)
        words = len(content) // 2
        index += struct.pack(">2i", offset_words, words)
        records += struct.pack(">2i", i + 1, words) + content
        offset_words += 4 + words
    shp = _main_header(offset_words, bbox) + bytes(records)
    shx = _main_header(HEADER_BYTES // 2 + 4 * len(features), bbox) + bytes(index)

    record_len = 1 + sum(f.length for f in fields)
    header_len = 32 + 32 * len(fields) + 1
    stamp = datetime.date(2000, 1, 1)  # fixed so output is byte-reproducible
    dbf = bytearray(
        struct.pack(
            "<4BIHH20x", 0x03, stamp.year - 1900, stamp.month, stamp.day,
            len(features), header_len, record_len,
        )
    )
    for f in fields:
        name = f.name.encode("ascii")[:10].ljust(11, b"\x00")
        dbf += name + f.type.encode("ascii") + b"\x00" * 4 + bytes([f.length, f.decimals]) + b"\x00" * 14
    dbf += b"\x0d"
    for feat in features:
        dbf += b" "
        for f in fields:
            dbf += _encode_value(feat.attributes.get(f.name), f)
    dbf += b"\x1a"
    return shp, shx, bytes(dbf)


def write_subset_shapefile(features: Sequence[ParcelFeature], paths) -> None:
    """Write features to ``paths`` (a base path or an explicit (.shp, .shx, .dbf) triple)."""
    shp_b, shx_b, dbf_b = encode_shapefile(features)
    shp, shx, dbf = _paths(paths)
    shp.write_bytes(shp_b)
    shx.write_bytes(shx_b)
    dbf.write_bytes(dbf_b)
