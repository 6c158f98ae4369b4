"""``parklot`` command line: one subcommand per pipeline stage.

Settings come from an optional YAML config file (top-level ``out``, ``seed``,
``jobs`` plus one section per subcommand); command-line flags win. Relative
paths inside the config resolve against the config file's directory.

Exit codes: 0 success, 1 partial failure (see manifest), 2 fatal input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import yaml

from . import augment as aug
from .dataset import labelme_to_dataset, load_dataset, load_ground_truth, read_index, save_dataset
from .detection_geom import AnchorConfig, generate_anchors, nms
from .detections import read_detections, write_detections
from .errors import ParklotError
from .evaluation import EvalConfig, evaluate, format_table, write_report
from .occupancy import assess_occupancy, occupancy_from_bboxes, overlay
from .parcel_extract import extract_all
from .raster_io import GeoRaster, mosaic, read_geotiff, read_png, write_geotiff, write_png

log = logging.getLogger("parklot")

EXIT_OK, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2
PATH_KEYS = {"rasters", "shapefiles", "labelme", "dataset", "detections", "output", "images"}


class InputError(Exception):
    """Bad or missing CLI/config input."""


def _load_config(path: str | None) -> tuple[dict, Path]:
    if not path:
        return {}, Path.cwd()
    p = Path(path)
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise InputError(f"cannot read config {p}: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"config {p} must be a mapping")
    return data, p.resolve().parent


def _resolve(value, base: Path):
    if isinstance(value, list):
        return [_resolve(v, base) for v in value]
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def _settings(args: argparse.Namespace) -> dict:
    """Merge config-file values with command-line flags (flags win)."""
    cfg, base = _load_config(getattr(args, "config", None))
    section = dict(cfg.get(args.command) or {})
    for key in list(section):
        if key in PATH_KEYS and section[key] is not None:
            section[key] = _resolve(section[key], base)
    merged = {"out": _resolve(cfg["out"], base) if "out" in cfg else None,
              "seed": cfg.get("seed", 0), "jobs": cfg.get("jobs", 1)}
    merged.update(section)
    for key, value in vars(args).items():
        if key in ("command", "config", "func") or value is None:
            continue
        merged[key] = value
    return merged


def _need(s: dict, key: str):
    if s.get(key) in (None, [], ""):
        raise InputError(f"missing required setting '{key}' (flag or config)")
    return s[key]


def _out_dir(s: dict) -> Path:
    out = Path(s.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_paths(paths) -> None:
    for p in paths:
        if not Path(p).exists():
            raise InputError(f"input not found: {p}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_stitch(s: dict) -> int:
    rasters = _need(s, "rasters")
    _check_paths(rasters)
    result = mosaic([read_geotiff(p) for p in rasters])
    target = Path(s["output"]) if s.get("output") else _out_dir(s) / "mosaic.tif"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_geotiff(result, target, compression="deflate")
    minx, miny, maxx, maxy = result.bounds
    log.info("stitched %d raster(s) -> %s: %dx%d px, extent [%g, %g, %g, %g], crs %d",
             len(rasters), target, result.width, result.height, minx, miny, maxx, maxy,
             result.transform.crs_code)
    return EXIT_OK


def cmd_extract(s: dict) -> int:
    rasters, shapefiles = _need(s, "rasters"), _need(s, "shapefiles")
    _check_paths(rasters)
    _check_paths(str(Path(p).with_suffix(".shp")) for p in shapefiles)
    rows = extract_all(rasters, shapefiles, s.get("where") or None, _out_dir(s),
                       background=tuple(s.get("background") or (0, 0, 0)),
                       jobs=int(s.get("jobs") or 1))
    failed = sum(r["status"] != "ok" for r in rows)
    log.info("extracted %d parcel(s), %d failed", len(rows) - failed, failed)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_annotations(s: dict) -> int:
    files = _need(s, "labelme")
    _check_paths(files)
    samples = labelme_to_dataset(files, _out_dir(s))
    log.info("wrote %d annotated image(s), %d instance(s)",
             len(samples), sum(len(x.instances) for x in samples))
    return EXIT_OK


def cmd_augment(s: dict) -> int:
    src = _need(s, "dataset")
    _check_paths([Path(src) / "index.json"])
    cfg = aug.AugmentConfig(
        rotation_range_deg=tuple(s.get("rotation_range") or (-50.0, 50.0)),
        vertical_flip=bool(s.get("vertical_flip", True)),
        per_image_outputs=int(s.get("per_image_outputs", 2)),
        seed=int(s.get("seed") or 0),
    )
    samples = aug.expand_dataset(load_dataset(src), cfg, jobs=int(s.get("jobs") or 1))
    save_dataset(samples, _out_dir(s))
    log.info("augmented dataset: %d image(s)", len(samples))
    return EXIT_OK


def cmd_anchors(s: dict) -> int:
    cfg = AnchorConfig(
        scales=tuple(s.get("scales") or AnchorConfig.scales),
        aspect_ratios=tuple(s.get("ratios") or AnchorConfig.aspect_ratios),
        stride=float(s.get("stride") or AnchorConfig.stride),
    )
    boxes = generate_anchors(cfg, int(s.get("fm_width") or 1), int(s.get("fm_height") or 1))
    lines = ["x_min,y_min,x_max,y_max"] + [",".join(f"{v:.4f}" for v in b) for b in boxes]
    sys.stdout.write("\n".join(lines) + "\n")
    log.info("%d anchor(s), %d per location", len(boxes), cfg.anchors_per_location)
    return EXIT_OK


def cmd_nms(s: dict) -> int:
    path = _need(s, "detections")
    _check_paths([path])
    dets = read_detections(path)
    groups = defaultdict(list)
    for d in dets:
        key = d.image_id if s.get("class_agnostic") else (d.image_id, d.label)
        groups[key].append(d)
    kept = []
    for key in sorted(groups, key=str):
        kept.extend(nms(groups[key], float(s.get("iou_threshold") or 0.5)))
    write_detections(kept, _out_dir(s) / "nms.jsonl")
    log.info("nms kept %d of %d detection(s)", len(kept), len(dets))
    return EXIT_OK


def cmd_evaluate(s: dict) -> int:
    root, det_path = _need(s, "dataset"), _need(s, "detections")
    _check_paths([Path(root) / "index.json", det_path])
    kinds = s.get("iou_kind") or ["box"]
    kinds = [kinds] if isinstance(kinds, str) else list(kinds)
    gt = load_ground_truth(root)
    dets = read_detections(det_path)
    summaries = {}
    for kind in kinds:
        cfg = EvalConfig(iou_kind=kind, max_dets_per_image=int(s.get("max_dets") or 100))
        summaries["bbox" if kind == "box" else "mask"] = evaluate(gt, dets, cfg)
    write_report(summaries, _out_dir(s))
    for line in format_table(summaries).splitlines():
        log.info("%s", line)
    return EXIT_OK


def cmd_occupancy(s: dict) -> int:
    path = _need(s, "detections")
    _check_paths([path])
    threshold = float(s.get("threshold") or 0.5)
    method = s.get("method") or "mask"
    min_score = float(s.get("min_score") or 0.0)
    space_label = s.get("space_label") or "parking_space"
    vehicle_label = s.get("vehicle_label") or "vehicle"
    dets = [d for d in read_detections(path) if d.score >= min_score]
    by_image = defaultdict(lambda: ([], []))
    for d in dets:
        if d.label == space_label:
            by_image[d.image_id][0].append(d)
        elif d.label == vehicle_label:
            by_image[d.image_id][1].append(d)
    images = {}
    if s.get("dataset"):
        images = {e["name"]: Path(s["dataset"]) / e["image"] for e in read_index(s["dataset"])}
    out = _out_dir(s)
    reports, csv_rows = {}, ["image_id,space_id,occupied,coverage"]
    for image_id in sorted(by_image):
        spaces, vehicles = by_image[image_id]
        if method == "mask":
            missing = [d for d in spaces + vehicles if d.rle is None]
            if missing:
                raise InputError(f"{image_id}: mask method needs 'rle' on every detection")
            report = assess_occupancy([d.rle for d in spaces], [d.rle for d in vehicles], threshold)
        elif method == "bbox":
            report = occupancy_from_bboxes([d.bbox for d in spaces], [d.bbox for d in vehicles], threshold)
        else:
            raise InputError(f"unknown occupancy method {method!r}")
        reports[image_id] = report.to_json()
        for row in report.to_csv().splitlines()[1:]:
            csv_rows.append(f"{image_id},{row}")
        if s.get("overlay") and method == "mask" and spaces:
            base = read_png(images[image_id]) if image_id in images else None
            odir = out / "overlays"
            odir.mkdir(exist_ok=True)
            write_png(GeoRaster(overlay(report, [d.rle for d in spaces], base)), odir / f"{image_id}.png")
        log.info("%s: %d/%d spaces occupied", image_id, report.occupied_count, report.total_spaces)
    (out / "occupancy.json").write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")
    (out / "occupancy.csv").write_text("\n".join(csv_rows) + "\n")
    return EXIT_OK


COMMANDS = {
    "stitch": cmd_stitch,
    "extract": cmd_extract,
    "annotations": cmd_annotations,
    "augment": cmd_augment,
    "anchors": cmd_anchors,
    "nms": cmd_nms,
    "evaluate": cmd_evaluate,
    "occupancy": cmd_occupancy,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker threads")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="parklot", parents=[common],
                                     description="Parking-lot imagery pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stitch", parents=[common], help="mosaic GeoTIFFs")
    p.add_argument("rasters", nargs="*", default=None)
    p.add_argument("--output", default=None, help="mosaic path (default OUT/mosaic.tif)")

    p = sub.add_parser("extract", parents=[common], help="crop selected parcels to PNG")
    p.add_argument("--rasters", nargs="+", default=None)
    p.add_argument("--shapefiles", nargs="+", default=None)
    p.add_argument("--where", action="append", default=None,
                   help="attribute predicate, e.g. 'USE = PARKING' (repeat to AND)")
    p.add_argument("--background", type=int, nargs=3, default=None)

    p = sub.add_parser("annotations", parents=[common], help="LabelMe JSON to RLE dataset")
    p.add_argument("labelme", nargs="*", default=None)

    p = sub.add_parser("augment", parents=[common], help="rotate/flip augmentation")
    p.add_argument("--dataset", default=None)
    p.add_argument("--per-image-outputs", dest="per_image_outputs", type=int, default=None)
    p.add_argument("--rotation-range", dest="rotation_range", type=float, nargs=2, default=None)
    p.add_argument("--no-flip", dest="vertical_flip", action="store_false", default=None)

    p = sub.add_parser("anchors", parents=[common], help="print anchors for a feature map")
    p.add_argument("--fm-width", dest="fm_width", type=int, default=None)
    p.add_argument("--fm-height", dest="fm_height", type=int, default=None)
    p.add_argument("--stride", type=float, default=None)
    p.add_argument("--scales", type=float, nargs="+", default=None)
    p.add_argument("--ratios", type=float, nargs="+", default=None)

    p = sub.add_parser("nms", parents=[common], help="NMS over a detections file")
    p.add_argument("--detections", default=None)
    p.add_argument("--iou-threshold", dest="iou_threshold", type=float, default=None)
    p.add_argument("--class-agnostic", dest="class_agnostic", action="store_true", default=None)

    p = sub.add_parser("evaluate", parents=[common], help="COCO-style AP report")
    p.add_argument("--dataset", default=None)
    p.add_argument("--detections", default=None)
    p.add_argument("--iou-kind", dest="iou_kind", choices=("box", "mask"), action="append", default=None)
    p.add_argument("--max-dets", dest="max_dets", type=int, default=None)

    p = sub.add_parser("occupancy", parents=[common], help="parking occupancy report")
    p.add_argument("--detections", default=None)
    p.add_argument("--dataset", default=None, help="dataset whose images back the overlays")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--method", choices=("mask", "bbox"), default=None)
    p.add_argument("--min-score", dest="min_score", type=float, default=None)
    p.add_argument("--overlay", action="store_true", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        settings = _settings(args)
        settings.pop("verbose", None)
        return COMMANDS[args.command](settings)
    except (InputError, ParklotError, OSError, ValueError, KeyError) as exc:
        log.error("%s: %s", args.command, exc)
        return EXIT_FATAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
