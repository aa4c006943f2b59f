"""Instance-map file formats.

Label rasters travel as 16-bit PNGs with a JSON sidecar mapping instance
id to class name; detector output (detections.json) can be rasterized into
the same structure.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .helm import Detection
from .instmetrics import InstanceMap
from .raster import rasterize_contour

__all__ = [
    "save_instance_map",
    "load_instance_map",
    "detections_to_instance_map",
]


def save_instance_map(imap: InstanceMap, png_path, sidecar_path=None) -> None:
    png_path = Path(png_path)
    if imap.labels.max(initial=0) > 0xFFFF:
        raise ValueError("instance ids exceed 16-bit range")
    Image.fromarray(imap.labels.astype(np.uint16)).save(png_path)
    sidecar = Path(sidecar_path) if sidecar_path else png_path.with_suffix(".json")
    sidecar.write_text(
        json.dumps({str(i): c for i, c in sorted(imap.classes.items())}, indent=0)
    )


def load_instance_map(png_path, sidecar_path=None) -> InstanceMap:
    png_path = Path(png_path)
    with Image.open(png_path) as im:
        labels = np.asarray(im).astype(np.int32)
    sidecar = Path(sidecar_path) if sidecar_path else png_path.with_suffix(".json")
    classes = {int(k): v for k, v in json.loads(sidecar.read_text()).items()}
    return InstanceMap(labels=labels, classes=classes)


def detections_to_instance_map(
    detections: list[Detection], width: int, height: int
) -> InstanceMap:
    """Rasterize detections into an instance map (later detections win
    overlapping pixels)."""
    labels = np.zeros((height, width), dtype=np.int32)
    classes = {}
    for idx, det in enumerate(detections, start=1):
        if det.pixels is not None:
            xs, ys = det.pixels[:, 0], det.pixels[:, 1]
            keep = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
            labels[ys[keep], xs[keep]] = idx
        else:
            labels[rasterize_contour(det.contour, width, height)] = idx
        classes[idx] = det.class_label
    present = set(np.unique(labels)) - {0}
    return InstanceMap(labels=labels, classes={i: classes[i] for i in present})
