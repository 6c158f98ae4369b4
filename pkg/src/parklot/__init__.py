"""Parking-space and vehicle analysis on parcel-cropped aerial imagery.

The modules follow the pipeline order: ``raster_io`` and ``vector_io`` read
GeoTIFFs and shapefiles, ``parcel_extract`` crops parcels, ``annotation`` and
``dataset`` handle polygon labels and RLE masks, ``augment`` expands the
training set, ``detection_geom`` holds the detector's box geometry,
``evaluation`` computes COCO-style AP and ``occupancy`` turns masks into a
lot-level report.
"""

from .annotation import BBox, RleMask, mask_area, polygon_to_bbox, polygon_to_mask, rle_decode, rle_encode
from .detection_geom import (
    AnchorConfig,
    FeatureMap,
    Proposal,
    fpn_assign_level,
    generate_anchors,
    iou_box,
    iou_mask,
    nms,
    roi_align,
    roi_pool,
    select_proposals,
)
from .detections import Detection, read_detections, write_detections
from .evaluation import EvalConfig, EvalSummary, GroundTruth, evaluate
from .occupancy import OccupancyReport, assess_occupancy, occupancy_from_bboxes
from .parcel_extract import BitMask, crop_parcel, extract_all, rasterize_polygon
from .raster_io import GeoRaster, GeoTransform, mosaic, parse_geotiff, read_window, write_png
from .vector_io import ParcelFeature, PolygonGeom, Predicate, filter_features, parse_shapefile

__all__ = [
    "AnchorConfig",
    "assess_occupancy",
    "BBox",
    "BitMask",
    "crop_parcel",
    "Detection",
    "EvalConfig",
    "EvalSummary",
    "evaluate",
    "extract_all",
    "FeatureMap",
    "filter_features",
    "fpn_assign_level",
    "generate_anchors",
    "GeoRaster",
    "GeoTransform",
    "GroundTruth",
    "iou_box",
    "iou_mask",
    "mask_area",
    "mosaic",
    "nms",
    "occupancy_from_bboxes",
    "OccupancyReport",
    "ParcelFeature",
    "parse_geotiff",
    "parse_shapefile",
    "polygon_to_bbox",
    "polygon_to_mask",
    "PolygonGeom",
    "Predicate",
    "Proposal",
    "rasterize_polygon",
    "read_detections",
    "read_window",
    "rle_decode",
    "rle_encode",
    "RleMask",
    "roi_align",
    "roi_pool",
    "select_proposals",
    "write_detections",
    "write_png",
]

__version__ = "0.1.0"
