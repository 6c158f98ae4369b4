import json
import math
import warnings

import numpy as np
import pytest

from builders import geotiff_bytes, random_polygon_fixtures, square, write_shapefile_fixture
from oracles import pixel_center_mask, point_in_rings
from parklot.errors import EmptyWindowError, IncompatibleCrsError
from parklot.parcel_extract import BitMask, crop_parcel, extract_all, rasterize_polygon
from parklot.raster_io import GeoRaster, GeoTransform, read_png
from parklot.vector_io import ParcelFeature, PolygonGeom

RNG = np.random.default_rng(7)


FIXTURES = random_polygon_fixtures(RNG)


def to_world(rings, t):
    """Pixel-space rings -> world rings for a north-up transform."""
    return [[(t.origin_x + x * t.pixel_size_x, t.origin_y - y * t.pixel_size_y) for x, y in r]
            for r in rings]


def geom(rings):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return PolygonGeom(rings)


class TestRasterize:
    def test_two_by_two_square(self):
        t = GeoTransform(0.0, 4.0, 1.0, 1.0)
        m = rasterize_polygon(geom(to_world([[(0, 0), (2, 0), (2, 2), (0, 2), (0, 0)]], t)), t, 4, 4)
        assert m.count() == 4
        assert m.bits[:2, :2].all()

    def test_outside(self):
        t = GeoTransform(0.0, 0.0, 1.0, 1.0)
        g = geom([square(100, 100, 110, 110)])
        assert rasterize_polygon(g, t, 8, 8).count() == 0

    def test_grid_sized(self):
        t = GeoTransform(10.0, 20.0, 0.5, 0.5)
        g = geom([square(10, 16, 14, 20)])
        assert rasterize_polygon(g, t, 8, 8).bits.all()

    @pytest.mark.parametrize("index", range(len(FIXTURES)))
    def test_matches_point_in_polygon_oracle(self, index):
        rings, w, h = FIXTURES[index]
        t = GeoTransform(0.0, 0.0, 1.0, 1.0)
        # y-down pixel rings map to world y = -row
        g = geom(to_world(rings, t))
        expected = pixel_center_mask(rings, w, h)
        np.testing.assert_array_equal(rasterize_polygon(g, t, w, h).bits, expected)

    def test_bitmask_is_read_only(self):
        m = BitMask(np.zeros((2, 2), bool))
        with pytest.raises(ValueError):
            m.bits[0, 0] = True


L_SHAPE = [(0, 0), (6, 0), (6, 2), (3, 2), (3, 7), (0, 7), (0, 0)]


class TestCrop:
    def make(self, crs=0):
        px = RNG.integers(1, 256, (8, 8, 3), dtype=np.uint8)
        return GeoRaster(px, GeoTransform(1000.0, 2000.0, 1.0, 1.0, crs))

    def test_full_extent(self):
        r = self.make()
        f = ParcelFeature(geom([square(1000, 1992, 1008, 2000)]), {}, 0)
        crop, mask = crop_parcel(r, f)
        assert crop == r
        assert mask.bits.all()

    def test_l_shape(self):
        r = self.make()
        shifted = [(x + 1, y + 1) for x, y in L_SHAPE]
        f = ParcelFeature(geom(to_world([shifted], r.transform)), {}, 0)
        crop, mask = crop_parcel(r, f, background=(9, 9, 9))
        assert (crop.width, crop.height) == (6, 7)  # bbox of the L
        assert (crop.transform.origin_x, crop.transform.origin_y) == (1001.0, 1999.0)
        for row in range(7):
            for col in range(6):
                inside = point_in_rings(col + 0.5, row + 0.5, [L_SHAPE])
                assert mask.bits[row, col] == inside
                expected = r.pixels[row + 1, col + 1] if inside else (9, 9, 9)
                assert tuple(crop.pixels[row, col]) == tuple(expected)

    def test_mask_equals_rasterize_restricted(self):
        r = self.make()
        for rings, w, h in FIXTURES[:20]:
            g = geom(to_world(rings, r.transform))
            full = rasterize_polygon(g, r.transform, r.width, r.height).bits
            try:
                crop, mask = crop_parcel(r, ParcelFeature(g, {}, 0))
            except EmptyWindowError:
                continue
            c0 = round(crop.transform.origin_x - r.transform.origin_x)
            r0 = round(r.transform.origin_y - crop.transform.origin_y)
            np.testing.assert_array_equal(mask.bits, full[r0:r0 + crop.height, c0:c0 + crop.width])

    def test_disjoint(self):
        with pytest.raises(EmptyWindowError):
            crop_parcel(self.make(), ParcelFeature(geom([square(0, 0, 1, 1)]), {}, 0))

    def test_crs_mismatch(self):
        f = ParcelFeature(geom([square(1000, 1992, 1008, 2000)]), {}, 0, crs_code=2)
        with pytest.raises(IncompatibleCrsError):
            crop_parcel(self.make(crs=1), f)

    def test_unknown_crs_warns(self):
        f = ParcelFeature(geom([square(1000, 1992, 1008, 2000)]), {}, 0, crs_code=0)
        with pytest.warns(UserWarning):
            crop_parcel(self.make(crs=1), f)


def write_two_rasters(tmp_path):
    """Two 6x8 rasters side by side at 0.5 world units per pixel."""
    a = RNG.integers(1, 256, (8, 6, 3), dtype=np.uint8)
    b = RNG.integers(1, 256, (8, 6, 3), dtype=np.uint8)
    pa, pb = tmp_path / "a.tif", tmp_path / "b.tif"
    pa.write_bytes(geotiff_bytes(a, origin=(100.0, 204.0), scale=(0.5, 0.5)))
    pb.write_bytes(geotiff_bytes(b, origin=(103.0, 204.0), scale=(0.5, 0.5)))
    return [pa, pb], a, b


PARCELS = [
    ([square(100.5, 201.0, 102.0, 203.5)], ("001", "PARKING")),
    ([[(101.0, 200.5), (105.5, 202.0), (105.5, 200.5), (101.0, 200.5)]], ("002", "PARKING")),
    ([square(104.0, 202.5, 106.0, 204.0)], ("003", "PARKING")),
    ([square(100.0, 200.0, 101.0, 201.0)], ("004", "HOUSE")),
]


class TestExtractAll:
    def test_two_rasters_three_parcels(self, tmp_path):
        paths, a, b = write_two_rasters(tmp_path)
        write_shapefile_fixture(tmp_path / "parcels", PARCELS, (("APN", "C", 10), ("USE", "C", 10)))
        rows = extract_all(paths, [tmp_path / "parcels.shp"], "USE = PARKING", tmp_path / "out")
        assert [r["record_index"] for r in rows] == [0, 1, 2]
        assert all(r["status"] == "ok" for r in rows)
        assert json.loads((tmp_path / "out" / "manifest.json").read_text()) == rows

        # independent crop: hand-placed mosaic, per-pixel world-space containment
        mos = np.zeros((8, 12, 3), np.uint8)
        mos[:, :6], mos[:, 6:] = a, b
        for row in rows:
            rings = PARCELS[row["record_index"]][0]
            xs = [p[0] for r in rings for p in r]
            ys = [p[1] for r in rings for p in r]
            c0, c1 = math.floor((min(xs) - 100) / 0.5), math.ceil((max(xs) - 100) / 0.5)
            r0, r1 = math.floor((204 - max(ys)) / 0.5), math.ceil((204 - min(ys)) / 0.5)
            assert row["window"] == {"col0": c0, "row0": r0, "w": c1 - c0, "h": r1 - r0}
            assert row["world_bbox"] == [min(xs), min(ys), max(xs), max(ys)]
            expected = np.zeros((r1 - r0, c1 - c0, 3), np.uint8)
            for rr in range(r0, r1):
                for cc in range(c0, c1):
                    x, y = 100 + (cc + 0.5) * 0.5, 204 - (rr + 0.5) * 0.5
                    if point_in_rings(x, y, rings):
                        expected[rr - r0, cc - c0] = mos[rr, cc]
            np.testing.assert_array_equal(read_png(tmp_path / "out" / row["png_path"]), expected)

    def test_single(self, tmp_path):
        paths, _, _ = write_two_rasters(tmp_path)
        write_shapefile_fixture(tmp_path / "p", PARCELS[:1], (("APN", "C", 10), ("USE", "C", 10)))
        rows = extract_all(paths[:1], [tmp_path / "p.shp"], None, tmp_path / "out")
        assert len(rows) == 1
        assert sorted(p.name for p in (tmp_path / "out").glob("*.png")) == ["p_00000.png"]

    def test_no_match(self, tmp_path):
        paths, _, _ = write_two_rasters(tmp_path)
        write_shapefile_fixture(tmp_path / "p", PARCELS, (("APN", "C", 10), ("USE", "C", 10)))
        assert extract_all(paths, [tmp_path / "p.shp"], "APN = none", tmp_path / "out") == []
        assert list((tmp_path / "out").glob("*.png")) == []

    def test_failure_recorded_not_raised(self, tmp_path):
        paths, _, _ = write_two_rasters(tmp_path)
        recs = PARCELS[:1] + [([square(0, 0, 1, 1)], ("far", "PARKING"))]
        write_shapefile_fixture(tmp_path / "p", recs, (("APN", "C", 10), ("USE", "C", 10)))
        rows = extract_all(paths, [tmp_path / "p.shp"], None, tmp_path / "out")
        assert rows[0]["status"] == "ok"
        assert rows[1]["status"].startswith("error")
        assert rows[1]["png_path"] is None

    def test_parallel_same_result(self, tmp_path):
        paths, _, _ = write_two_rasters(tmp_path)
        write_shapefile_fixture(tmp_path / "p", PARCELS, (("APN", "C", 10), ("USE", "C", 10)))
        one = extract_all(paths, [tmp_path / "p.shp"], None, tmp_path / "o1", jobs=1)
        four = extract_all(paths, [tmp_path / "p.shp"], None, tmp_path / "o4", jobs=4)
        assert one == four
        for row in one:
            assert (tmp_path / "o1" / row["png_path"]).read_bytes() == (tmp_path / "o4" / row["png_path"]).read_bytes()
