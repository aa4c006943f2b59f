"""DeepZoom pyramid construction and region reads.

A pyramid is a folder hierarchy ``<name>_files/<level>/<col>_<row>.<fmt>``
plus an XML descriptor ``<name>.dzi``. Level L has dimensions
ceil(dim / 2^(max_level - L)); level 0 is always 1x1. Tiles are
``tile_size`` square plus ``overlap`` margins on interior edges; edge tiles
are clipped, never padded.
"""

from __future__ import annotations

import math
import os
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "OutOfBoundsError",
    "IoFailureError",
    "UnsupportedSourceError",
    "PyramidDescriptor",
    "write_dzi",
    "parse_dzi",
    "box_downsample",
    "build_pyramid",
    "Pyramid",
    "open_pyramid",
]

DZI_XMLNS = "http://schemas.microsoft.com/deepzoom/2008"
JPEG_QUALITY = 90


class OutOfBoundsError(ValueError):
    pass


class IoFailureError(OSError):
    pass


class UnsupportedSourceError(ValueError):
    pass


@dataclass(frozen=True)
class PyramidDescriptor:
    width: int
    height: int
    tile_size: int = 254
    overlap: int = 1
    fmt: str = "jpeg"

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("dimensions must be >= 1")
        if self.tile_size < 1 or self.overlap < 0:
            raise ValueError("tile_size must be >= 1 and overlap >= 0")
        if self.fmt not in ("jpeg", "png"):
            raise ValueError(f"format must be jpeg or png, got {self.fmt!r}")

    @property
    def max_level(self) -> int:
        return max(0, math.ceil(math.log2(max(self.width, self.height))))

    def level_dimensions(self, level: int) -> tuple[int, int]:
        if not 0 <= level <= self.max_level:
            raise OutOfBoundsError(f"level {level} outside [0, {self.max_level}]")
        scale = 2 ** (self.max_level - level)
        return (math.ceil(self.width / scale), math.ceil(self.height / scale))

    def tile_grid(self, level: int) -> tuple[int, int]:
        w, h = self.level_dimensions(level)
        return (math.ceil(w / self.tile_size), math.ceil(h / self.tile_size))

    def tile_box(self, level: int, col: int, row: int) -> tuple[int, int, int, int]:
        """Pixel box (x0, y0, x1, y1) of a tile file, margins included."""
        w, h = self.level_dimensions(level)
        cols, rows = self.tile_grid(level)
        if not (0 <= col < cols and 0 <= row < rows):
            raise OutOfBoundsError(f"tile {col}_{row} outside level {level} grid")
        x0 = col * self.tile_size - (self.overlap if col > 0 else 0)
        y0 = row * self.tile_size - (self.overlap if row > 0 else 0)
        x1 = min(w, (col + 1) * self.tile_size + self.overlap)
        y1 = min(h, (row + 1) * self.tile_size + self.overlap)
        return (x0, y0, x1, y1)


def write_dzi(desc: PyramidDescriptor) -> str:
    """Byte-stable DZI descriptor XML."""
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<Image TileSize="{desc.tile_size}" Overlap="{desc.overlap}" '
        f'Format="{desc.fmt}" xmlns="{DZI_XMLNS}">\n'
        f'  <Size Width="{desc.width}" Height="{desc.height}"/>\n'
        "</Image>\n"
    )


def parse_dzi(text: str) -> PyramidDescriptor:
    root = ET.fromstring(text)
    size = root.find(f"{{{DZI_XMLNS}}}Size")
    if size is None:  # tolerate descriptors without the namespace
        size = root.find("Size")
    return PyramidDescriptor(
        width=int(size.get("Width")),
        height=int(size.get("Height")),
        tile_size=int(root.get("TileSize")),
        overlap=int(root.get("Overlap")),
        fmt=root.get("Format"),
    )


def box_downsample(img: np.ndarray) -> np.ndarray:
    """2x2 box average with ceil-half output dims; edge cells average the
    source pixels that exist."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    oh, ow = (h + 1) // 2, (w + 1) // 2
    acc = np.zeros((oh, ow) + img.shape[2:], dtype=np.float64)
    count = np.zeros((oh, ow) + (1,) * (img.ndim - 2), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            sub = img[dy::2, dx::2]
            acc[: sub.shape[0], : sub.shape[1]] += sub
            count[: sub.shape[0], : sub.shape[1]] += 1
    return np.rint(acc / count).astype(np.uint8)


def _save_tile(tile: np.ndarray, path: Path, fmt: str) -> None:
    image = Image.fromarray(tile)
    try:
        if fmt == "jpeg":
            image.save(path, quality=JPEG_QUALITY)
        else:
            image.save(path)
    except OSError as exc:
        raise IoFailureError(f"failed to write {path}") from exc


def _load_source(source) -> np.ndarray:
    if isinstance(source, np.ndarray):
        if source.ndim != 3 or source.shape[2] != 3 or source.dtype != np.uint8:
            raise UnsupportedSourceError("array source must be uint8 (H, W, 3)")
        return source
    path = Path(source)
    suffix = path.suffix.lower()
    if suffix in {".tif", ".tiff"}:
        import tifffile

        img = tifffile.imread(path)
        if img.ndim == 2:
            img = np.stack([img] * 3, axis=-1)
        return img[..., :3].astype(np.uint8)
    if suffix in {".png", ".jpg", ".jpeg"}:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    raise UnsupportedSourceError(f"cannot ingest {suffix!r} sources")


def build_pyramid(
    source,
    out_dir,
    name: str | None = None,
    tile_size: int = 254,
    overlap: int = 1,
    fmt: str = "jpeg",
    workers: int | None = None,
) -> PyramidDescriptor:
    """Write the full tile hierarchy and descriptor for a source image.

    ``source`` is a uint8 RGB array or an image path. Tiles of one level
    are encoded in parallel; levels are derived by chained 2x2 box
    downsampling. Returns the descriptor (also written to <name>.dzi).
    """
    image = _load_source(source)
    if name is None:
        name = Path(source).stem if not isinstance(source, np.ndarray) else "slide"
    desc = PyramidDescriptor(
        width=image.shape[1],
        height=image.shape[0],
        tile_size=tile_size,
        overlap=overlap,
        fmt=fmt,
    )
    out_dir = Path(out_dir)
    files_dir = out_dir / f"{name}_files"
    workers = workers or os.cpu_count() or 1
    level_img = image
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for level in range(desc.max_level, -1, -1):
                level_dir = files_dir / str(level)
                level_dir.mkdir(parents=True, exist_ok=True)
                cols, rows = desc.tile_grid(level)
                jobs = []
                for row in range(rows):
                    for col in range(cols):
                        x0, y0, x1, y1 = desc.tile_box(level, col, row)
                        tile = level_img[y0:y1, x0:x1]
                        path = level_dir / f"{col}_{row}.{fmt}"
                        jobs.append(pool.submit(_save_tile, tile, path, fmt))
                for job in jobs:
                    job.result()
                if level > 0:
                    level_img = box_downsample(level_img)
        (out_dir / f"{name}.dzi").write_text(write_dzi(desc))
    except OSError as exc:
        raise IoFailureError(str(exc)) from exc
    return desc


class Pyramid:
    """Reader over an on-disk pyramid; safe for concurrent use."""

    def __init__(self, dzi_path):
        self.dzi_path = Path(dzi_path)
        self.descriptor = parse_dzi(self.dzi_path.read_text())
        self.files_dir = self.dzi_path.parent / f"{self.dzi_path.stem}_files"
        self.slide_id = self.dzi_path.stem

    def tile_path(self, level: int, col: int, row: int) -> Path:
        return self.files_dir / str(level) / f"{col}_{row}.{self.descriptor.fmt}"

    def read_tile(self, level: int, col: int, row: int) -> np.ndarray:
        self.descriptor.tile_box(level, col, row)  # bounds check
        path = self.tile_path(level, col, row)
        if not path.exists():
            raise IoFailureError(f"missing tile {path}")
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))

    def read_region(self, x: int, y: int, w: int, h: int, level: int) -> np.ndarray:
        """Exact crop at the requested level, stitched from tiles with
        their overlap margins trimmed."""
        lw, lh = self.descriptor.level_dimensions(level)
        if w < 1 or h < 1 or x < 0 or y < 0 or x + w > lw or y + h > lh:
            raise OutOfBoundsError(
                f"region ({x},{y},{w},{h}) outside level {level} ({lw}x{lh})"
            )
        ts = self.descriptor.tile_size
        out = np.zeros((h, w, 3), dtype=np.uint8)
        for col in range(x // ts, (x + w - 1) // ts + 1):
            for row in range(y // ts, (y + h - 1) // ts + 1):
                tile = self.read_tile(level, col, row)
                tx0, ty0, _, _ = self.descriptor.tile_box(level, col, row)
                # Interior span of this tile (overlap trimmed).
                ix0, iy0 = col * ts, row * ts
                ix1 = min(lw, (col + 1) * ts)
                iy1 = min(lh, (row + 1) * ts)
                cx0, cy0 = max(x, ix0), max(y, iy0)
                cx1, cy1 = min(x + w, ix1), min(y + h, iy1)
                if cx0 >= cx1 or cy0 >= cy1:
                    continue
                out[cy0 - y : cy1 - y, cx0 - x : cx1 - x] = tile[
                    cy0 - ty0 : cy1 - ty0, cx0 - tx0 : cx1 - tx0
                ]
        return out

    def read_level(self, level: int) -> np.ndarray:
        lw, lh = self.descriptor.level_dimensions(level)
        return self.read_region(0, 0, lw, lh, level)


def open_pyramid(dzi_path) -> Pyramid:
    return Pyramid(dzi_path)
