"""Fixture builders that rely on third-party writers, never on parklot's own."""

from __future__ import annotations

import io

import numpy as np
import shapefile
import tifffile


def geotiff_bytes(
    pixels: np.ndarray,
    origin=(0.0, 0.0),
    scale=(1.0, 1.0),
    crs_code: int | None = 32610,
    **kwargs,
) -> bytes:
    """Encode a GeoTIFF with tifffile, adding pixel-scale, tiepoint and geokeys."""
    tags = [
        (33550, "d", 3, (float(scale[0]), float(scale[1]), 0.0), True),
        (33922, "d", 6, (0.0, 0.0, 0.0, float(origin[0]), float(origin[1]), 0.0), True),
    ]
    if crs_code is not None:
        # header (version 1, rev 1.0, 2 keys); GTRasterType = PixelIsArea; ProjectedCSType
        keys = (1, 1, 0, 2, 1025, 0, 1, 1, 3072, 0, 1, int(crs_code))
        tags.append((34735, "H", len(keys), keys, True))
    buf = io.BytesIO()
    photometric = "rgb" if pixels.ndim == 3 and pixels.shape[-1] >= 3 else "minisblack"
    tifffile.imwrite(buf, pixels, photometric=photometric, extratags=tags, metadata=None, **kwargs)
    return buf.getvalue()


def shapefile_bytes(records, fields=(("APN", "C", 10),)) -> tuple[bytes, bytes, bytes]:
    """Write polygons with pyshp. ``records`` is a list of (rings or None, values)."""
    shp, shx, dbf = io.BytesIO(), io.BytesIO(), io.BytesIO()
    w = shapefile.Writer(shp=shp, shx=shx, dbf=dbf, shapeType=shapefile.POLYGON)
    for f in fields:
        w.field(*f)
    for rings, values in records:
        if rings is None:
            w.null()
        else:
            w.poly([list(map(tuple, r)) for r in rings])
        w.record(*values)
    w.close()
    return shp.getvalue(), shx.getvalue(), dbf.getvalue()


def write_shapefile_fixture(base, records, fields=(("APN", "C", 10),)) -> None:
    shp, shx, dbf = shapefile_bytes(records, fields)
    base = str(base)
    for ext, data in ((".shp", shp), (".shx", shx), (".dbf", dbf)):
        with open(base + ext, "wb") as fh:
            fh.write(data)


def square(x0, y0, x1, y1):
    """Clockwise (ESRI outer ring) axis-aligned rectangle."""
    return [(x0, y0), (x0, y1), (x1, y1), (x1, y0), (x0, y0)]


def hole(x0, y0, x1, y1):
    """Counter-clockwise rectangle, the ESRI orientation for holes."""
    return list(reversed(square(x0, y0, x1, y1)))


# Five polygon fixtures exercising single rings, holes, multiple parts,
# non-rectangular outlines, numeric fields and null shapes.
SHAPEFILE_FIXTURES = {
    "unit_square": ([([square(0, 0, 1, 1)], ("001",))], (("APN", "C", 10),)),
    "three_parcels": (
        [
            ([square(0, 0, 10, 10)], ("001", 100.0, "RESIDENTIAL")),
            ([square(10, 0, 20, 10)], ("002", 100.0, "PARKING LOT")),
            ([square(20, 0, 30, 5)], ("003", 50.25, "RETAIL")),
        ],
        (("APN", "C", 10), ("AREA", "N", 12, 2), ("USE", "C", 20)),
    ),
    "with_hole": (
        [([square(0, 0, 10, 10), hole(2, 2, 4, 4)], ("H1", 7))],
        (("APN", "C", 10), ("LOTS", "N", 5, 0)),
    ),
    "multipart_and_null": (
        [
            ([square(0, 0, 1, 1), square(5, 5, 7, 8)], ("M1",)),
            (None, ("NULL",)),
            ([[(0, 0), (2, 6), (4, 0), (3, 0), (2, 3), (1, 0), (0, 0)]], ("M3",)),
        ],
        (("APN", "C", 10),),
    ),
    "georeferenced": (
        [
            ([square(500000.5, 4100000.25, 500120.75, 4100080.0)], ("G-1", -3.5)),
            ([square(500200.0, 4100000.0, 500260.0, 4100033.0)], ("G-2", 12.0)),
        ],
        (("APN", "C", 12), ("ELEV", "F", 10, 3)),
    ),
}


def random_polygon_fixtures(rng, n=60):
    """Pixel-space polygons on grids up to 32x32, many with vertices on pixel centres."""
    out = []
    for k in range(n):
        w, h = (int(v) for v in rng.integers(1, 33, 2))
        m = int(rng.integers(3, 9))
        if k % 3 == 0:  # vertices snapped to half-integers: exercises exact-centre ties
            pts = rng.integers(-2, 2 * max(w, h) + 2, (m, 2)) / 2.0
        elif k % 3 == 1:  # star polygon around a centre, never self-intersecting
            ang = np.sort(rng.uniform(0, 2 * np.pi, m))
            rad = rng.uniform(1, max(w, h) / 2 + 2, m)
            pts = np.column_stack([w / 2 + rad * np.cos(ang), h / 2 + rad * np.sin(ang)])
        else:  # arbitrary, possibly self-intersecting (even-odd still defined)
            pts = rng.uniform(-3, max(w, h) + 3, (m, 2))
        ring = [tuple(map(float, p)) for p in pts] + [tuple(map(float, pts[0]))]
        rings = [ring]
        if k % 5 == 0:
            c = rng.uniform(0, min(w, h), 2)
            r = rng.uniform(0.5, 4)
            rings.append([(c[0] - r, c[1] - r), (c[0] + r, c[1] - r), (c[0] + r, c[1] + r),
                          (c[0] - r, c[1] + r), (c[0] - r, c[1] - r)])
        out.append((rings, w, h))
    # hand-built cases
    out.append(([[(0, 0), (2, 0), (2, 2), (0, 2), (0, 0)]], 4, 4))
    out.append(([[(0, 0), (8, 0), (8, 3), (3, 3), (3, 8), (0, 8), (0, 0)]], 8, 8))
    out.append(([[(0, 0), (32, 0), (32, 32), (0, 32), (0, 0)],
                 [(8, 8), (24, 8), (24, 24), (8, 24), (8, 8)]], 32, 32))
    return out
