# Score a degraded prediction against ground truth with the full metric
# suite: Dice/Dice2/AJI/AJI+/DQ/SQ/PQ plus per-class detection,
# classification, integrated and weighted scores.
import json

import numpy as np

from tilkit import instmetrics as im

rng = np.random.default_rng(7)

# Ground truth: disks with classes.
size = 48
labels = np.zeros((size, size), np.int32)
yy, xx = np.mgrid[:size, :size]
centers = [(8, 8), (24, 10), (40, 12), (12, 30), (30, 34), (42, 40)]
for i, (cx, cy) in enumerate(centers, start=1):
    labels[(xx - cx) ** 2 + (yy - cy) ** 2 <= 16] = i
gt = im.InstanceMap(
    labels=labels,
    classes={i: ("inflammatory" if i % 2 else "cancer") for i in range(1, 7)},
)

# Prediction: shift every instance, drop one, misclassify one, add a
# spurious blob.
pred_labels = np.zeros_like(labels)
for i, (cx, cy) in enumerate(centers[:-1], start=1):  # instance 6 missed
    pred_labels[(xx - cx - 1) ** 2 + (yy - cy) ** 2 <= 16] = i
pred_labels[(xx - 44) ** 2 + (yy - 4) ** 2 <= 4] = 7  # spurious
pred_classes = {i: gt.classes[i] for i in range(1, 6)}
pred_classes[3] = "cancer"  # misclassified
pred_classes[7] = "inflammatory"
pred = im.InstanceMap(labels=pred_labels, classes=pred_classes)

ledger = im.match_instances(gt, pred)
print(f"matched {len(ledger.pairs)} of {len(gt.ids())} GT instances;",
      f"{len(ledger.unmatched_pred)} spurious, {len(ledger.unmatched_gt)} missed")
for pair in ledger.pairs:
    print(f"  gt {pair.gt_id} ({pair.gt_class}) <-> pred {pair.pred_id}"
          f" ({pair.pred_class}), IoU {pair.iou:.3f}")

report = im.compute_report(gt, pred)
print(json.dumps(report.to_json(), indent=1))
assert report.pq == report.dq * report.sq
assert report.aji <= report.aji_plus
