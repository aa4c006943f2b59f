"""Raster helpers shared across modules: PNG/JPEG I/O, boundary tracing,
polygon rasterization and contour drawing.

Images are numpy arrays: uint8 (H, W, 3) for RGB, (H, W, 4) for RGBA,
bool (H, W) for masks. Contours are (N, 2) arrays of (x, y) pixel centers.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

__all__ = [
    "load_rgb",
    "save_image",
    "encode_png",
    "decode_image",
    "trace_boundary",
    "contour_perimeter",
    "rasterize_contour",
    "draw_contours",
]


def load_rgb(path) -> np.ndarray:
    """Read an image file as an (H, W, 3) uint8 RGB array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(img: np.ndarray, path) -> None:
    """Write an RGB/RGBA/grayscale array to ``path`` (format from suffix)."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(img)).save(path)


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(img)).save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"))


# Moore neighborhood in clockwise order starting east, as (dx, dy).
_MOORE = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)]


def trace_boundary(mask: np.ndarray) -> np.ndarray:
    """Trace the outer boundary of the single connected component in ``mask``.

    Moore-neighbor tracing over pixel centers, clockwise, holes ignored.
    Returns an (N, 2) int array of (x, y) vertices; a lone pixel yields a
    single vertex, thin shapes revisit pixels on the way back.
    """
    mask = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    order = np.lexsort((xs, ys))
    start = (int(xs[order[0]]), int(ys[order[0]]))
    h, w = mask.shape

    def fg(p) -> bool:
        return 0 <= p[0] < w and 0 <= p[1] < h and mask[p[1], p[0]]

    def neighbor(p, d):
        return (p[0] + _MOORE[d][0], p[1] + _MOORE[d][1])

    def next_move(p, backtrack):
        for step in range(1, 9):
            d = (backtrack + step) % 8
            if fg(neighbor(p, d)):
                return d
        return None

    # The start pixel is topmost-leftmost, so we pretend to have entered it
    # moving east (backtrack points west). The trace closes when the
    # (pixel, outgoing direction) state recurs at the start.
    first = next_move(start, 4)
    if first is None:
        return np.asarray([start], dtype=np.int64)

    contour = [start]
    cur, backtrack = neighbor(start, first), (first + 4) % 8
    for _ in range(8 * h * w):
        d = next_move(cur, backtrack)
        if cur == start and d == first:
            break
        contour.append(cur)
        cur, backtrack = neighbor(cur, d), (d + 4) % 8
    return np.asarray(contour, dtype=np.int64)


def contour_perimeter(contour: np.ndarray) -> float:
    """Closed polygon length of a traced contour; diagonal steps count sqrt(2)."""
    pts = np.asarray(contour, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    closed = np.vstack([pts, pts[:1]])
    return float(np.sum(np.hypot(*np.diff(closed, axis=0).T)))


def rasterize_contour(contour: np.ndarray, width: int, height: int) -> np.ndarray:
    """Fill a closed contour of pixel-center vertices into a bool mask."""
    pts = np.asarray(contour)
    mask = Image.new("1", (width, height), 0)
    if len(pts) >= 3:
        ImageDraw.Draw(mask).polygon([tuple(p) for p in pts.tolist()], outline=1, fill=1)
    else:
        for x, y in pts.tolist():
            if 0 <= x < width and 0 <= y < height:
                mask.putpixel((int(x), int(y)), 1)
    return np.asarray(mask, dtype=bool)


def draw_contours(
    canvas: np.ndarray,
    contours,
    color: tuple,
    thickness: int = 2,
) -> np.ndarray:
    """Stroke closed contours onto an RGB(A) canvas in place and return it."""
    im = Image.fromarray(canvas)
    draw = ImageDraw.Draw(im)
    for contour in contours:
        pts = [tuple(p) for p in np.asarray(contour).tolist()]
        if len(pts) == 1:
            draw.point(pts[0], fill=color)
            continue
        draw.line(pts + pts[:1], fill=color, width=thickness, joint="curve")
    out = np.asarray(im)
    canvas[...] = out
    return canvas
