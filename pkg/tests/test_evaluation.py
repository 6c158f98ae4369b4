import contextlib
import io
import math

import numpy as np
import pytest

from eval_fixtures import PLANTED_DETS, PLANTED_GT, det, gt, perfect_detections
from oracles import brute_force_eval
from parklot.annotation import BBox
from parklot.detections import Detection, parse_detections, write_detections
from parklot.errors import DetectionsFormatError
from parklot.evaluation import (
    AREA_BUCKETS,
    IOU_THRESHOLDS,
    METRICS,
    EvalConfig,
    average_precision,
    evaluate,
    format_table,
    match_detections,
    precision_recall_curve,
    write_report,
)

RNG = np.random.default_rng(5)

# Frozen from the brute-force evaluator in oracles.py on the planted fixture.
PLANTED_BOX_OVERALL = {
    "ap": 0.4977475247524753, "ap50": 0.5556930693069307, "ap75": 0.5556930693069307,
    "ap_small": 0.7425742574257426, "ap_medium": 0.8417079207920792, "ap_large": 0.504950495049505,
}
PLANTED_MASK_OVERALL = {
    "ap": 0.4293935643564356, "ap50": 0.45804455445544556, "ap75": 0.45804455445544556,
    "ap_small": 0.5346534653465347, "ap_medium": 0.8417079207920792, "ap_large": 0.504950495049505,
}


class TestConfig:
    def test_defaults(self):
        cfg = EvalConfig()
        assert cfg.iou_thresholds == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
        assert len(IOU_THRESHOLDS) == 10
        assert AREA_BUCKETS["small"] == (0, 32**2)
        assert AREA_BUCKETS["medium"] == (1024, 9216)
        assert AREA_BUCKETS["large"][0] == 96**2
        assert cfg.max_dets_per_image == 100

    def test_bad_thresholds(self):
        with pytest.raises(ValueError):
            EvalConfig(iou_thresholds=(0.7, 0.5))
        with pytest.raises(ValueError):
            EvalConfig(iou_kind="polygon")


class TestMatching:
    def test_exact_all_matched(self):
        g = [gt("a", "vehicle", (0, 0, 10, 10)), gt("a", "vehicle", (20, 0, 30, 10))]
        m = match_detections(g, perfect_detections(g), 0.5)
        assert m.det_to_gt == [0, 1] and m.false_negatives == []

    def test_single_match_rule(self):
        g = [gt("a", "vehicle", (0, 0, 10, 10))]
        d = [det("a", "vehicle", 0.6, (0, 0, 10, 10)), det("a", "vehicle", 0.9, (1, 0, 11, 10))]
        m = match_detections(g, d, 0.5)
        assert m.true_positives == [1] and m.false_positives == [0]

    def test_three_gt_four_det(self):
        g = [gt("a", "vehicle", (0, 0, 10, 10)), gt("a", "vehicle", (5, 0, 15, 10)),
             gt("a", "vehicle", (40, 40, 50, 50))]
        d = [det("a", "vehicle", 0.9, (3, 0, 13, 10)),   # IoU .538 with g0, .538 with g1
             det("a", "vehicle", 0.8, (5, 0, 15, 10)),   # exact g1
             det("a", "vehicle", 0.7, (0, 0, 10, 10)),   # exact g0
             det("a", "vehicle", 0.6, (41, 41, 51, 51))]  # .68 with g2
        # explicit loop oracle: greedy by score, best unmatched IoU >= 0.5, first index on ties
        taken, expect = set(), []
        for k in sorted(range(4), key=lambda i: -d[i].score):
            best, pick = 0.5, -1
            for j in range(3):
                if j in taken:
                    continue
                b, a = d[k].bbox, g[j].bbox
                iw = max(0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
                ih = max(0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
                iou = iw * ih / (a.area + b.area - iw * ih)
                if iou >= best:
                    best, pick = iou, j
            if pick >= 0:
                taken.add(pick)
            expect.append((k, pick))
        m = match_detections(g, d, 0.5)
        assert [(k, m.det_to_gt[k]) for k, _ in expect] == expect
        assert m.det_to_gt == [1, -1, 0, 2]

    def test_labels_never_cross(self):
        g = [gt("a", "vehicle", (0, 0, 10, 10))]
        m = match_detections(g, [det("a", "parking_space", 1.0, (0, 0, 10, 10))], 0.5)
        assert m.det_to_gt == [-1]


class TestCurve:
    records = [(0.9, 0, True), (0.8, 1, False), (0.7, 2, True)]

    def test_hand_table(self):
        c = precision_recall_curve(self.records, 2)
        np.testing.assert_allclose(c.precision, [1.0, 2 / 3, 2 / 3])
        np.testing.assert_allclose(c.recall, [0.5, 0.5, 1.0])

    def test_all_points(self):
        assert average_precision(precision_recall_curve(self.records, 2), "all_points") == pytest.approx(
            (1.0 + 2 / 3) / 2, abs=1e-12)

    def test_101_point(self):
        # recall levels 0.00..0.50 (51 of them) see precision 1, levels 0.51..1.00 see 2/3
        expected = (51 * 1.0 + 50 * (2 / 3)) / 101
        assert average_precision(precision_recall_curve(self.records, 2)) == pytest.approx(expected, abs=1e-12)

    def test_perfect(self):
        c = precision_recall_curve([(1.0, 0, True)], 1)
        assert (c.precision.tolist(), c.recall.tolist()) == ([1.0], [1.0])
        assert average_precision(c) == 1.0

    def test_all_wrong(self):
        assert average_precision(precision_recall_curve([(0.9, 0, False)] * 3, 2)) == 0.0

    def test_undefined(self):
        assert precision_recall_curve(self.records, 0) is None
        assert average_precision(None) is None


class TestEvaluate:
    def test_perfect_detector(self):
        s = evaluate(PLANTED_GT, perfect_detections(PLANTED_GT))
        for cls, row in s.per_class.items():
            for m in METRICS:
                assert row[m] in (1.0, None)
        assert s.per_class["parking_space"]["ap_small"] is None
        assert all(v == 1.0 for v in s.overall.values())

    def test_empty_detections(self):
        s = evaluate(PLANTED_GT, [])
        assert s.overall == {"ap": 0.0, "ap50": 0.0, "ap75": 0.0, "ap_small": 0.0,
                             "ap_medium": 0.0, "ap_large": 0.0}

    @pytest.mark.parametrize("kind,frozen", [("box", PLANTED_BOX_OVERALL), ("mask", PLANTED_MASK_OVERALL)])
    def test_planted_matches_brute_force(self, kind, frozen):
        table, overall = brute_force_eval(PLANTED_GT, PLANTED_DETS, kind)
        s = evaluate(PLANTED_GT, PLANTED_DETS, EvalConfig(iou_kind=kind))
        assert overall == frozen
        assert s.overall == overall
        assert s.per_class == table

    def test_matches_pycocotools_on_planted(self):
        for kind in ("box", "mask"):
            ours = evaluate(PLANTED_GT, PLANTED_DETS, EvalConfig(iou_kind=kind)).overall
            ref = _pycocotools_stats(PLANTED_GT, PLANTED_DETS, kind)
            for m, v in zip(METRICS, ref):
                assert ours[m] == pytest.approx(v, abs=1e-12), (kind, m)

    def test_random_fixtures_match_brute_force(self):
        for _ in range(15):
            gts, dets = _random_fixture()
            for kind in ("box", "mask"):
                table, overall = brute_force_eval(gts, dets, kind)
                s = evaluate(gts, dets, EvalConfig(iou_kind=kind))
                assert s.overall == overall and s.per_class == table

    def test_bucket_boundaries_lower_inclusive(self):
        gts = [gt("a", "vehicle", (0, 0, 32, 32)), gt("a", "vehicle", (40, 0, 136, 96))]
        s = evaluate(gts, perfect_detections(gts[:1]))
        # the 1024-px box is medium (found), the 9216-px box is large (missed)
        row = s.per_class["vehicle"]
        assert row["ap_small"] is None
        assert (row["ap_medium"], row["ap_large"]) == (1.0, 0.0)

    def test_every_gt_in_one_bucket(self):
        for a in (1, 1023, 1024, 1025, 9215, 9216, 9217, 10**6):
            hits = [name for name in ("small", "medium", "large")
                    if AREA_BUCKETS[name][0] <= a < AREA_BUCKETS[name][1]]
            assert len(hits) == 1

    def test_max_dets_truncates(self):
        g = [gt("a", "vehicle", (0, 0, 10, 10))]
        fps = [det("a", "vehicle", 0.9, (100, 100, 110, 110))] * 3
        d = fps + [det("a", "vehicle", 0.1, (0, 0, 10, 10))]
        assert evaluate(g, d, EvalConfig(max_dets_per_image=3)).overall["ap50"] == 0.0
        assert evaluate(g, d, EvalConfig(max_dets_per_image=4)).overall["ap50"] > 0.0

    def test_from_file_and_line_errors(self, tmp_path):
        write_detections(PLANTED_DETS, tmp_path / "d.jsonl")
        s = evaluate(PLANTED_GT, tmp_path / "d.jsonl")
        assert s.overall == PLANTED_BOX_OVERALL
        with pytest.raises(DetectionsFormatError, match="line 2"):
            parse_detections('{"image_id": "a", "label": "vehicle", "score": 1, "bbox": [0,0,1,1]}\n{"bad": 1}\n')


class TestInvariants:
    def test_ap_ordering(self):
        for _ in range(40):
            gts, dets = _random_fixture()
            s = evaluate(gts, dets)
            for row in list(s.per_class.values()) + [s.overall]:
                if row["ap50"] is not None:
                    assert row["ap"] <= row["ap50"] + 1e-12
                    assert row["ap75"] <= row["ap50"] + 1e-12
                for v in row.values():
                    assert v is None or 0 <= v <= 1

    def test_adding_confident_tp_never_lowers_ap(self):
        from parklot.detection_geom import iou_box

        checked = 0
        for _ in range(60):
            gts, dets = _random_fixture()
            # a missed ground truth: no same-label detection on its image reaches IoU 0.5
            missed = [g for g in gts if all(
                d.image_id != g.image_id or d.label != g.label or iou_box(d.bbox, g.bbox) < 0.5
                for d in dets)]
            if not missed:
                continue
            g = missed[0]
            extra = Detection(g.image_id, g.label, 2.0, g.bbox, g.rle)
            before = evaluate(gts, dets).per_class[g.label]
            after = evaluate(gts, dets + [extra]).per_class[g.label]
            for m in METRICS:
                if before[m] is not None:
                    assert after[m] >= before[m] - 1e-12
            checked += 1
        assert checked > 10

    def test_lowest_duplicate_fp_never_raises_ap50(self):
        for _ in range(30):
            gts, dets = _random_fixture()
            if not dets:
                continue
            base = evaluate(gts, dets).overall["ap50"]
            if base is None:
                continue
            worst = min(dets, key=lambda d: d.score)
            dup = Detection(worst.image_id, worst.label, -1.0, worst.bbox, worst.rle)
            assert evaluate(gts, dets + [dup]).overall["ap50"] <= base + 1e-12

    def test_order_invariance(self):
        for _ in range(10):
            gts, dets = _random_fixture(score_levels=4)
            ref = evaluate(gts, dets)
            perm = RNG.permutation(len(gts))
            assert evaluate([gts[i] for i in perm], dets) == ref
            # any reordering that keeps equal-score detections in file order
            assert evaluate(gts, sorted(dets, key=lambda d: -d.score)) == ref
            assert evaluate(gts, sorted(dets, key=lambda d: d.score)) == ref


def _random_fixture(score_levels=None):
    gts, dets = [], []
    for k in range(int(RNG.integers(1, 5))):
        image = f"r{k}"
        for _ in range(int(RNG.integers(0, 6))):
            label = ("vehicle", "parking_space")[int(RNG.integers(0, 2))]
            x, y = (int(v) for v in RNG.integers(0, 150, 2))
            w, h = (int(v) for v in RNG.integers(4, 50, 2))
            box = (x, y, min(x + w, 200), min(y + h, 200))
            gts.append(gt(image, label, box))
            for _ in range(int(RNG.integers(0, 3))):
                jx, jy = (int(v) for v in RNG.integers(-6, 7, 2))
                b = (max(box[0] + jx, 0), max(box[1] + jy, 0), min(box[2] + jx, 200), min(box[3] + jy, 200))
                if b[2] <= b[0] or b[3] <= b[1]:
                    continue
                score = float(RNG.integers(0, score_levels)) / score_levels if score_levels else float(RNG.random())
                dets.append(det(image, label, score, b))
        for _ in range(int(RNG.integers(0, 3))):
            x, y = (int(v) for v in RNG.integers(0, 180, 2))
            label = ("vehicle", "parking_space")[int(RNG.integers(0, 2))]
            dets.append(det(image, label, float(RNG.random()), (x, y, x + 15, y + 12)))
    return gts, dets


def _pycocotools_stats(gts, dets, kind):
    from pycocotools import mask as mask_util
    from pycocotools.coco import COCO
    from pycocotools.cocoeval import COCOeval

    images = sorted({g.image_id for g in gts} | {d.image_id for d in dets})
    labels = sorted({g.label for g in gts} | {d.label for d in dets})
    img_id = {name: i + 1 for i, name in enumerate(images)}
    cat_id = {name: i + 1 for i, name in enumerate(labels)}

    def coco_box(b: BBox):
        return [b.x_min, b.y_min, b.width, b.height]

    def coco_rle(r):
        return mask_util.frPyObjects(r.to_json(), r.height, r.width)

    anns = []
    for i, g in enumerate(gts):
        area = float(sum(g.rle.counts[1::2])) if kind == "mask" else g.bbox.area
        anns.append({"id": i + 1, "image_id": img_id[g.image_id], "category_id": cat_id[g.label],
                     "bbox": coco_box(g.bbox), "area": area, "iscrowd": 0,
                     "segmentation": coco_rle(g.rle)})
    coco = COCO()
    coco.dataset = {"images": [{"id": v, "width": 200, "height": 200} for v in img_id.values()],
                    "categories": [{"id": v, "name": k} for k, v in cat_id.items()],
                    "annotations": anns}
    with contextlib.redirect_stdout(io.StringIO()):
        coco.createIndex()
        results = [{"image_id": img_id[d.image_id], "category_id": cat_id[d.label], "score": d.score,
                    "bbox": coco_box(d.bbox), "segmentation": coco_rle(d.rle)} for d in dets]
        if kind == "box":
            for r in results:
                del r["segmentation"]
        dt = coco.loadRes(results)
        ev = COCOeval(coco, dt, "bbox" if kind == "box" else "segm")
        ev.evaluate()
        ev.accumulate()
        ev.summarize()
    return [float(v) for v in ev.stats[:6]]


def test_table_and_report(tmp_path):
    s = evaluate(PLANTED_GT, PLANTED_DETS)
    table = format_table({"bbox": s})
    header, row = table.splitlines()
    assert header.split() == ["Attribute", "AP", "AP50", "AP75", "APs", "APm", "APl"]
    assert row.split()[0] == "bbox"
    assert [float(v) for v in row.split()[1:]] == [round(PLANTED_BOX_OVERALL[m], 4) for m in METRICS]
    write_report({"bbox": s}, tmp_path)
    assert (tmp_path / "eval.json").exists()
    assert "-" in (tmp_path / "eval.txt").read_text()  # undefined parking_space APs
    assert math.isclose(s.overall["ap"], PLANTED_BOX_OVERALL["ap"])
