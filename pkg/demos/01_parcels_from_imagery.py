"""Cut parking parcels out of georeferenced imagery.

Two aerial tiles arrive as separate GeoTIFFs. We stitch them into one mosaic,
load a parcel shapefile, keep only the parcels zoned for parking and crop
each one to a PNG whose pixels outside the parcel are blacked out.

Run:  python demos/01_parcels_from_imagery.py [OUT_DIR]
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from parklot.parcel_extract import extract_all
from parklot.raster_io import GeoRaster, GeoTransform, mosaic, read_geotiff, write_geotiff
from parklot.vector_io import ParcelFeature, PolygonGeom, filter_features, read_shapefile, write_subset_shapefile

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="parklot_demo1_"))
out.mkdir(parents=True, exist_ok=True)

# Two 48x48 tiles, 0.5 m per pixel, sharing an edge at x = 24 m. The pixel
# values are a gentle gradient so the crops are easy to eyeball.
yy, xx = np.mgrid[0:48, 0:48]
tiles = []
for k, origin_x in enumerate((0.0, 24.0)):
    pixels = np.stack([xx * 5, yy * 5, np.full_like(xx, 80 + 60 * k)], -1).astype(np.uint8)
    tile = GeoRaster(pixels, GeoTransform(origin_x, 24.0, 0.5, 0.5, 32610))
    write_geotiff(tile, out / f"tile_{k}.tif")
    tiles.append(out / f"tile_{k}.tif")

stitched = mosaic([read_geotiff(p) for p in tiles])
write_geotiff(stitched, out / "mosaic.tif", compression="deflate")
print(f"mosaic: {stitched.width}x{stitched.height} px covering {stitched.bounds}")


def rect(x0, y0, x1, y1):
    # clockwise outer ring, closed
    return PolygonGeom([[(x0, y0), (x0, y1), (x1, y1), (x1, y0), (x0, y0)]])


parcels = [
    ParcelFeature(rect(2, 2, 14, 14), {"APN": "100", "USE": "PARKING"}, 0),
    ParcelFeature(rect(18, 6, 32, 20), {"APN": "101", "USE": "PARKING"}, 1),  # crosses the tile seam
    ParcelFeature(rect(36, 2, 46, 10), {"APN": "102", "USE": "RETAIL"}, 2),
]
write_subset_shapefile(parcels, out / "parcels")
features = read_shapefile(out / "parcels.shp")
parking = filter_features(features, "USE = PARKING")
print(f"{len(features)} parcels in the shapefile, {len(parking)} zoned for parking")

rows = extract_all([out / "mosaic.tif"], [out / "parcels.shp"], "USE = PARKING", out / "crops")
for row in rows:
    w = row["window"]
    print(f"  record {row['record_index']}: {w['w']}x{w['h']} px at col {w['col0']}, row {w['row0']}"
          f" -> {row['png_path']} ({row['status']})")
print(f"manifest: {out / 'crops' / 'manifest.json'}")
assert json.loads((out / "crops" / "manifest.json").read_text()) == rows
