"""The box arithmetic inside a two-stage detector, without the network.

Anchors tile the feature map; region proposals are ranked by objectness, the
top slice is thinned with non-maximum suppression; each surviving region is
resampled to a fixed grid. The last part shows why bilinear sampling
(RoIAlign) replaced the quantised max pool (RoIPool): nudge a box by a hair
across a cell boundary and RoIPool jumps while RoIAlign barely moves.

Run:  python demos/03_detector_geometry.py
"""

import numpy as np

from parklot.detection_geom import (
    AnchorConfig,
    FeatureMap,
    Proposal,
    fpn_assign_level,
    generate_anchors,
    roi_align,
    roi_pool,
    select_proposals,
)

cfg = AnchorConfig()
anchors = generate_anchors(cfg, fm_width=1, fm_height=1)
print(f"{cfg.anchors_per_location} anchors per location (scales {cfg.scales}, ratios {cfg.aspect_ratios}):")
for x0, y0, x1, y1 in anchors:
    print(f"  {x1 - x0:7.2f} x {y1 - y0:7.2f}")

# Noisy proposals around 40 true cars in a 1000x1000 image.
rng = np.random.default_rng(0)
cars = rng.uniform(50, 950, (40, 2))
proposals = []
for k in range(4000):
    cx, cy = cars[k % 40] + rng.normal(0, 4, 2)
    proposals.append(Proposal(cx, cy, 24 + rng.normal(0, 2), 48 + rng.normal(0, 3), float(rng.random())))
kept = select_proposals(proposals, pre_nms_top_k=1500, iou_threshold=0.5, post_nms_cap=500)
print(f"\n{len(proposals)} proposals -> top 1500 by objectness -> {len(kept)} after NMS")

for side in (32, 112, 224, 640):
    print(f"a {side}x{side} region is pooled from pyramid level P{fpn_assign_level([0, 0, side, side])}")

# A feature map whose value is the column index.
ramp = FeatureMap(np.tile(np.arange(8.0), (8, 1))[None], stride=1)
print("\nshift the box's left edge across the column 1/2 boundary by +-0.001:")
for name, op in (("RoIPool ", roi_pool), ("RoIAlign", roi_align)):
    a = op(ramp, [2.001, 1, 5.001, 5]).values
    b = op(ramp, [1.999, 1, 4.999, 5]).values
    print(f"  {name}: largest output change {np.abs(a - b).max():.4f}")
