"""Rule-based nucleus detector over deconvolved stain channels.

Pipeline: deconvolve to stain concentrations, rescale the H and E channels
to 0-255, threshold both into a raw mask, open it with an elliptical then a
square kernel (two masks, the second derived from the first), extract
candidate contours from each, filter by area and circularity, and merge the
two candidate sets by overlap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .raster import contour_perimeter, rasterize_contour, trace_boundary
from .stainlab import OD_MAX, rgb_to_hed

__all__ = [
    "ImageTooSmallError",
    "HelmParams",
    "Detection",
    "build_stain_masks",
    "find_candidates",
    "dedupe",
    "helm_detect",
    "detections_to_json",
    "detections_from_json",
]

INFLAMMATORY = "inflammatory"


class ImageTooSmallError(ValueError):
    """Image is smaller than a morphology kernel."""


@dataclass(frozen=True)
class HelmParams:
    """Detector thresholds and kernel sizes.

    Channel ranges apply to stain concentrations affinely rescaled from
    [0, OD_MAX] to [0, 255]; circularity is on a 0-100 scale.
    """

    h_range: tuple = (220.0, 255.0)
    e_range: tuple = (0.0, 50.0)
    area_range: tuple = (190.0, 600.0)
    min_circularity: float = 65.0
    ellipse_kernel_diameter: int = 5
    square_kernel_side: int = 3
    dedupe_iou: float = 0.5

    def __post_init__(self):
        if self.area_range[0] < 1:
            raise ValueError("area_range.low must be >= 1")
        if not 0 <= self.min_circularity <= 100:
            raise ValueError("min_circularity must be within [0, 100]")
        for k in (self.ellipse_kernel_diameter, self.square_kernel_side):
            if k < 1 or k % 2 == 0:
                raise ValueError("kernel sizes must be odd and >= 1")
        if not 0 <= self.dedupe_iou <= 1:
            raise ValueError("dedupe_iou must be within [0, 1]")

    @classmethod
    def from_json(cls, path) -> "HelmParams":
        with open(path) as fh:
            raw = json.load(fh)
        raw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        return cls(**raw)


@dataclass
class Detection:
    """One detected nucleus: traced contour plus shape statistics."""

    contour: np.ndarray  # (N, 2) of (x, y)
    centroid: tuple
    area: float
    circularity: float
    class_label: str = INFLAMMATORY
    # Component pixels as (N, 2) of (x, y); kept for exact overlap tests,
    # absent when a detection is deserialized.
    pixels: np.ndarray | None = field(default=None, repr=False)

    def pixel_set(self, width: int, height: int) -> set:
        if self.pixels is not None:
            return {(int(x), int(y)) for x, y in self.pixels}
        mask = rasterize_contour(self.contour, width, height)
        ys, xs = np.nonzero(mask)
        return set(zip(xs.tolist(), ys.tolist()))


def rescale_channel(channel: np.ndarray) -> np.ndarray:
    """Map stain concentrations from the fixed window [0, OD_MAX] to 0-255."""
    return np.clip(channel, 0.0, OD_MAX) / OD_MAX * 255.0


def elliptical_kernel(diameter: int) -> np.ndarray:
    r = (diameter - 1) / 2.0
    yy, xx = np.mgrid[:diameter, :diameter]
    return (xx - r) ** 2 + (yy - r) ** 2 <= r * r + 1e-9


def square_kernel(side: int) -> np.ndarray:
    return np.ones((side, side), dtype=bool)


def build_stain_masks(img: np.ndarray, params: HelmParams | None = None):
    """Threshold the rescaled H/E channels and open twice.

    Returns (mask1, mask2): mask1 after the elliptical opening, mask2 after
    additionally opening mask1 with the square kernel.
    """
    params = params or HelmParams()
    img = np.asarray(img)
    kmax = max(params.ellipse_kernel_diameter, params.square_kernel_side)
    if img.shape[0] < kmax or img.shape[1] < kmax:
        raise ImageTooSmallError(
            f"image {img.shape[1]}x{img.shape[0]} is smaller than kernel size {kmax}"
        )
    hed = rgb_to_hed(img)
    h = rescale_channel(hed[..., 0])
    e = rescale_channel(hed[..., 1])
    raw = (
        (h >= params.h_range[0])
        & (h <= params.h_range[1])
        & (e >= params.e_range[0])
        & (e <= params.e_range[1])
    )
    mask1 = ndimage.binary_opening(raw, structure=elliptical_kernel(params.ellipse_kernel_diameter))
    mask2 = ndimage.binary_opening(mask1, structure=square_kernel(params.square_kernel_side))
    return mask1, mask2


def find_candidates(mask: np.ndarray, params: HelmParams | None = None) -> list[Detection]:
    """Extract filtered detections from a binary mask.

    Components are 8-connected; only the outer boundary is traced (holes
    ignored); area is the component pixel count; circularity is
    100 * 4 * pi * area / perimeter^2.
    """
    params = params or HelmParams()
    mask = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    detections = []
    for idx in range(1, count + 1):
        component = labels == idx
        area = float(component.sum())
        if not params.area_range[0] <= area <= params.area_range[1]:
            continue
        contour = trace_boundary(component)
        perimeter = contour_perimeter(contour)
        if perimeter <= 0:
            continue
        circularity = 100.0 * 4.0 * math.pi * area / perimeter**2
        if circularity < params.min_circularity:
            continue
        ys, xs = np.nonzero(component)
        detections.append(
            Detection(
                contour=contour,
                centroid=(float(xs.mean()), float(ys.mean())),
                area=area,
                circularity=circularity,
                pixels=np.column_stack([xs, ys]),
            )
        )
    return detections


def _pairwise_iou(a: set, b: set) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def dedupe(
    a: list[Detection],
    b: list[Detection],
    iou_threshold: float,
    width: int | None = None,
    height: int | None = None,
) -> list[Detection]:
    """Merge two candidate lists, suppressing overlaps.

    Candidates are kept greedily by descending area (ties prefer the first
    list), dropping any candidate whose filled-contour IoU with an already
    kept one reaches ``iou_threshold``; the survivor set therefore contains
    no pair at or above the threshold.
    """
    if width is None or height is None:
        extent = [
            (int(np.max(d.contour[:, 0])) + 1, int(np.max(d.contour[:, 1])) + 1)
            for d in a + b
            if len(d.contour)
        ]
        width = max((w for w, _ in extent), default=1)
        height = max((h for _, h in extent), default=1)
    ranked = sorted(
        [(d, src) for src, dets in enumerate((a, b)) for d in dets],
        key=lambda item: (-item[0].area, item[1]),
    )
    kept: list[Detection] = []
    kept_pixels: list[set] = []
    for det, _src in ranked:
        pixels = det.pixel_set(width, height)
        if all(_pairwise_iou(pixels, other) < iou_threshold for other in kept_pixels):
            kept.append(det)
            kept_pixels.append(pixels)
    return kept


def helm_detect(img: np.ndarray, params: HelmParams | None = None) -> list[Detection]:
    """Run the full detector on an RGB patch."""
    params = params or HelmParams()
    img = np.asarray(img)
    mask1, mask2 = build_stain_masks(img, params)
    return dedupe(
        find_candidates(mask1, params),
        find_candidates(mask2, params),
        params.dedupe_iou,
        width=img.shape[1],
        height=img.shape[0],
    )


def detections_to_json(detections: list[Detection]) -> list[dict]:
    return [
        {
            "contour": np.asarray(d.contour).tolist(),
            "centroid": [d.centroid[0], d.centroid[1]],
            "area": d.area,
            "circularity": d.circularity,
            "class": d.class_label,
        }
        for d in detections
    ]


def detections_from_json(payload: list[dict]) -> list[Detection]:
    return [
        Detection(
            contour=np.asarray(item["contour"], dtype=np.float64),
            centroid=tuple(item["centroid"]),
            area=float(item["area"]),
            circularity=float(item["circularity"]),
            class_label=item["class"],
        )
        for item in payload
    ]
