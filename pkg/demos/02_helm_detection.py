# Run the rule-based detector on a synthetic fixture patch and render the
# surviving contours.
from pathlib import Path

import numpy as np

from tilkit import stainlab as sl
from tilkit.helm import HelmParams, build_stain_masks, helm_detect
from tilkit.raster import draw_contours, save_image
from tilkit.service import class_color

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

# Five nucleus-sized disks, one oversized disk (area filter) and one long
# bar (circularity filter).
size = 512
conc = np.zeros((size, size, 3))
yy, xx = np.mgrid[:size, :size]
shapes = [(60, 60, 9), (200, 80, 9), (340, 150, 9), (100, 300, 9), (420, 420, 9), (250, 400, 16)]
for cx, cy, r in shapes:
    conc[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r, 0] = 2.3
conc[(np.abs(xx - 300) <= 20) & (np.abs(yy - 250) <= 3), 0] = 2.3
patch = sl.hed_to_rgb(conc)

params = HelmParams()
mask1, mask2 = build_stain_masks(patch, params)
print(f"mask pixels after opening: elliptical={int(mask1.sum())}, square={int(mask2.sum())}")

detections = helm_detect(patch, params)
print(f"{len(detections)} detections (expected 5):")
for det in detections:
    print(
        f"  centroid=({det.centroid[0]:6.1f}, {det.centroid[1]:6.1f})"
        f"  area={det.area:5.0f}px^2  circularity={det.circularity:5.1f}"
    )

overlay = patch.copy()
draw_contours(overlay, [d.contour for d in detections], class_color("inflammatory"), 2)
save_image(overlay, out / "helm_overlay.png")
print("wrote", out / "helm_overlay.png")
