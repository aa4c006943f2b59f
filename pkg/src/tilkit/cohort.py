"""Corpus plumbing: tissue detection, grid patch extraction, per-patient
TIL aggregation and cohort CSV round-tripping.

Slide ingest is deliberately plain: flat PNG/JPEG and (pyramidal) TIFF
read at full resolution. Patch selection is an automated grid over detected
tissue; it stands in for manual region selection and is configured by patch
side, tissue fraction and a per-slide patch cap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .survival import SurvivalRecord

__all__ = [
    "NoTissueError",
    "JoinMissError",
    "UnsupportedSourceError",
    "PatchSpec",
    "PatientQuant",
    "Slide",
    "open_slide",
    "saturation",
    "otsu_threshold",
    "tissue_mask",
    "extract_patches",
    "quantify_patient",
    "export_cohort",
    "load_cohort",
]

DEFAULT_PATCH_SIDE = 4019
DEFAULT_RESOLUTION = 0.2428  # micrometers per pixel
DEFAULT_MAX_PATCHES = 15

_SUPPORTED = {".png", ".jpg", ".jpeg", ".tif", ".tiff"}


class NoTissueError(ValueError):
    pass


class JoinMissError(ValueError):
    def __init__(self, missing: dict):
        self.missing = missing
        super().__init__(f"patient ids missing from joined tables: {missing}")


class UnsupportedSourceError(ValueError):
    pass


@dataclass(frozen=True)
class PatchSpec:
    slide_id: str
    origin: tuple  # (x, y) in level-0 pixels
    side: int = DEFAULT_PATCH_SIDE
    resolution: float = DEFAULT_RESOLUTION


@dataclass
class PatientQuant:
    patient_id: str
    counts: list[int] = field(default_factory=list)

    @property
    def median(self) -> float:
        if not self.counts:
            raise ValueError("no patches quantified")
        return float(np.median(self.counts))


class Slide:
    """Full-resolution raster with region reads and a thumbnail."""

    def __init__(self, image: np.ndarray, slide_id: str):
        self._image = np.asarray(image)
        self.slide_id = slide_id

    @property
    def width(self) -> int:
        return self._image.shape[1]

    @property
    def height(self) -> int:
        return self._image.shape[0]

    def read_region(self, x: int, y: int, w: int, h: int) -> np.ndarray:
        if x < 0 or y < 0 or x + w > self.width or y + h > self.height:
            raise ValueError("region outside slide bounds")
        return self._image[y : y + h, x : x + w]

    def thumbnail(self, max_dim: int = 512) -> np.ndarray:
        scale = max(self.width, self.height) / max_dim
        if scale <= 1:
            return self._image.copy()
        tw = max(1, round(self.width / scale))
        th = max(1, round(self.height / scale))
        return np.asarray(Image.fromarray(self._image).resize((tw, th), Image.BILINEAR))


def open_slide(path) -> Slide:
    path = Path(path)
    if path.suffix.lower() not in _SUPPORTED:
        raise UnsupportedSourceError(f"unsupported slide format: {path.suffix}")
    if path.suffix.lower() in {".tif", ".tiff"}:
        import tifffile

        image = tifffile.imread(path)
        if image.ndim == 2:
            image = np.stack([image] * 3, axis=-1)
        return Slide(image[..., :3].astype(np.uint8), path.stem)
    with Image.open(path) as im:
        return Slide(np.asarray(im.convert("RGB")), path.stem)


def saturation(img: np.ndarray) -> np.ndarray:
    """HSV saturation channel in [0, 1]; zero where the pixel is black."""
    rgb = np.asarray(img, dtype=np.float64)
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sat = np.where(mx > 0, (mx - mn) / np.where(mx > 0, mx, 1.0), 0.0)
    return sat


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float | None:
    """Otsu's between-class-variance threshold; None for constant input."""
    values = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return None
    hist, edges = np.histogram(values, bins=bins, range=(lo, hi))
    hist = hist.astype(np.float64)
    total = hist.sum()
    centers = (edges[:-1] + edges[1:]) / 2.0
    weight_bg = np.cumsum(hist)
    weight_fg = total - weight_bg
    mean_bg = np.cumsum(hist * centers) / np.where(weight_bg > 0, weight_bg, 1.0)
    cum_rev = np.cumsum((hist * centers)[::-1])[::-1]
    mean_fg = np.empty_like(mean_bg)
    mean_fg[:-1] = cum_rev[1:] / np.where(weight_fg[:-1] > 0, weight_fg[:-1], 1.0)
    mean_fg[-1] = 0.0
    valid = (weight_bg > 0) & (weight_fg > 0)
    variance = np.where(valid, weight_bg * weight_fg * (mean_bg - mean_fg) ** 2, -1.0)
    if variance.max() < 0:
        return None
    return float(edges[int(np.argmax(variance)) + 1])


def tissue_mask(thumbnail: np.ndarray, min_saturation: float = 0.05) -> np.ndarray:
    """Tissue detection on a thumbnail: saturation Otsu plus a 3x3 closing.

    When the saturation histogram is degenerate (uniform slide, no glass
    background to split against) the fixed ``min_saturation`` floor decides
    instead, so an all-stained thumbnail is all tissue and a blank one is
    empty.
    """
    thumbnail = np.asarray(thumbnail)
    if thumbnail.shape[0] < 64 or thumbnail.shape[1] < 64:
        raise ValueError("thumbnail must be at least 64x64")
    sat = saturation(thumbnail)
    threshold = otsu_threshold(sat)
    if threshold is None:
        threshold = min_saturation
    mask = sat > threshold
    return ndimage.binary_closing(mask, structure=np.ones((3, 3), dtype=bool))


def extract_patches(
    slide: Slide,
    side: int = DEFAULT_PATCH_SIDE,
    max_patches: int = DEFAULT_MAX_PATCHES,
    min_tissue_fraction: float = 0.5,
    resolution: float = DEFAULT_RESOLUTION,
) -> list[PatchSpec]:
    """Non-overlapping grid patches over tissue, row-major, capped.

    Patches must lie fully inside the slide (clipped candidates are
    rejected) and cover at least ``min_tissue_fraction`` tissue on the
    thumbnail mask.
    """
    if slide.width < side or slide.height < side:
        raise NoTissueError(
            f"slide {slide.width}x{slide.height} smaller than patch side {side}"
        )
    thumb = slide.thumbnail()
    mask = tissue_mask(thumb)
    sx = mask.shape[1] / slide.width
    sy = mask.shape[0] / slide.height
    specs = []
    for y0 in range(0, slide.height - side + 1, side):
        for x0 in range(0, slide.width - side + 1, side):
            tx0 = int(math.floor(x0 * sx))
            ty0 = int(math.floor(y0 * sy))
            tx1 = max(tx0 + 1, int(math.ceil((x0 + side) * sx)))
            ty1 = max(ty0 + 1, int(math.ceil((y0 + side) * sy)))
            window = mask[ty0:ty1, tx0:tx1]
            if window.size and window.mean() >= min_tissue_fraction:
                specs.append(
                    PatchSpec(
                        slide_id=slide.slide_id,
                        origin=(x0, y0),
                        side=side,
                        resolution=resolution,
                    )
                )
            if len(specs) >= max_patches:
                return specs
    if not specs:
        raise NoTissueError("no grid patch reaches the tissue fraction threshold")
    return specs


def quantify_patient(
    patient_id: str,
    patches: Sequence[tuple[PatchSpec, Sequence]],
    target_class: str = "inflammatory",
) -> PatientQuant:
    """Count target-class detections per patch; the patient score is the
    median count (mean of the middle two for an even patch count)."""
    if not patches:
        raise ValueError("at least one patch required")
    counts = [
        sum(1 for d in detections if d.class_label == target_class)
        for _spec, detections in patches
    ]
    return PatientQuant(patient_id=patient_id, counts=counts)


def export_cohort(
    scores: Mapping[str, Mapping[str, float]],
    records: Sequence[SurvivalRecord],
    path,
) -> None:
    """Join per-patient score columns to the survival table and write CSV.

    Columns: patient_id, time_months, event, then score columns in sorted
    order; rows sorted by patient id. Every patient must appear in the
    survival table and in every score column.
    """
    survival_ids = {r.patient_id for r in records}
    missing = {}
    for col, values in scores.items():
        only_scores = sorted(set(values) - survival_ids)
        only_survival = sorted(survival_ids - set(values))
        if only_scores or only_survival:
            missing[col] = {"scores_only": only_scores, "survival_only": only_survival}
    if not scores and survival_ids:
        missing["<no score columns>"] = {
            "scores_only": [],
            "survival_only": sorted(survival_ids),
        }
    if not survival_ids:
        missing["<empty survival table>"] = {
            "scores_only": sorted({p for v in scores.values() for p in v}),
            "survival_only": [],
        }
    if missing:
        raise JoinMissError(missing)
    columns = sorted(scores)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "time_months", "event", *columns])
        for r in sorted(records, key=lambda r: r.patient_id):
            writer.writerow(
                [r.patient_id, repr(r.time), int(r.event)]
                + [repr(float(scores[c][r.patient_id])) for c in columns]
            )


def load_cohort(path) -> tuple[list[SurvivalRecord], dict[str, dict[str, float]]]:
    """Read a cohort CSV back into survival records and score columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["patient_id", "time_months", "event"]:
            raise ValueError(f"unexpected cohort header: {header[:3]}")
        columns = header[3:]
        records = []
        scores: dict[str, dict[str, float]] = {c: {} for c in columns}
        for row in reader:
            pid, time_s, event_s, *rest = row
            records.append(
                SurvivalRecord(patient_id=pid, time=float(time_s), event=bool(int(event_s)))
            )
            for col, value in zip(columns, rest):
                scores[col][pid] = float(value)
    return records, scores
