"""HTTP annotation service.

Serves slide listings, DeepZoom descriptors and tiles straight from an
on-disk pyramid store, and an ``/annotate`` endpoint that crops a region,
runs a registered model (the builtin rule-based detector or a remote
inference backend) and returns contours, per-class counts and optionally a
rendered overlay.

The app is a plain WSGI callable served by wsgiref's threading server; the
pyramid store and model registry are immutable after startup, so request
handling needs no locking beyond a worker semaphore bounding CPU-bound
inference.

Remote inference wire contract: the patch is POSTed as a PNG body; the
backend replies with one JSON header line ``{"height": H, "width": W,
"classes": [...]}`` (newline terminated) followed by H*W*C float32
little-endian values, row-major with the class axis fastest. Class 0 is
background. Per-pixel probabilities must sum to 1 within 1e-3.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from socketserver import ThreadingMixIn
from wsgiref.simple_server import WSGIServer, make_server

import numpy as np
from scipy import ndimage

from . import helm as helm_mod
from .helm import Detection, detections_to_json
from .pyramid import OutOfBoundsError, Pyramid
from .raster import contour_perimeter, draw_contours, encode_png, trace_boundary

__all__ = [
    "RemoteBackendError",
    "ModelEntry",
    "AnnotationResult",
    "ServiceConfig",
    "AnnotationService",
    "load_config",
    "remote_infer",
    "probability_map_to_detections",
    "contours_to_overlay",
    "class_color",
    "serve",
]

MAX_REGION_PIXELS = 4096 * 4096
REMOTE_TIMEOUT_S = 120.0

# 12-color palette; classes hash into it deterministically.
PALETTE = [
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 190),
    (0, 128, 128),
    (170, 110, 40),
]


class RemoteBackendError(RuntimeError):
    """Remote inference failed or returned a malformed payload."""


@dataclass(frozen=True)
class ModelEntry:
    name: str
    kind: str  # "builtin" | "remote"
    classes: tuple
    endpoint: str | None = None

    def __post_init__(self):
        if self.kind not in ("builtin", "remote"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError(f"remote model {self.name!r} needs an endpoint")


@dataclass
class AnnotationResult:
    detections: list[Detection]
    region: dict
    model: str
    elapsed_ms: float

    @property
    def counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for det in self.detections:
            counts[det.class_label] = counts.get(det.class_label, 0) + 1
        return counts

    def to_json(self) -> dict:
        return {
            "detections": detections_to_json(self.detections),
            "counts": self.counts,
            "region": self.region,
            "model": self.model,
            "elapsed_ms": self.elapsed_ms,
        }


@dataclass
class ServiceConfig:
    pyramid_root: str
    port: int = 8077
    models: list = field(default_factory=list)


def load_config(path) -> ServiceConfig:
    """Load the startup config; TILKIT_PORT and TILKIT_PYRAMID_ROOT
    environment variables override the file."""
    with open(path) as fh:
        raw = json.load(fh)
    models = [
        ModelEntry(
            name=m["name"],
            kind=m["kind"],
            classes=tuple(m.get("classes", ())),
            endpoint=m.get("endpoint"),
        )
        for m in raw.get("models", [])
    ]
    return ServiceConfig(
        pyramid_root=os.environ.get("TILKIT_PYRAMID_ROOT", raw["pyramid_root"]),
        port=int(os.environ.get("TILKIT_PORT", raw.get("port", 8077))),
        models=models,
    )


def class_color(name: str) -> tuple:
    digest = hashlib.sha1(name.encode("utf-8")).digest()
    return PALETTE[digest[0] % len(PALETTE)]


def probability_map_to_detections(probs: np.ndarray, classes) -> list[Detection]:
    """Argmax a dense (H, W, C) class probability map into detections.

    Class 0 is background; each 8-connected component of a non-background
    argmax class becomes one detection. Components too small for a traced
    polygon get their pixel-corner outline instead.
    """
    winners = np.argmax(probs, axis=-1)
    detections = []
    for ci in range(1, probs.shape[-1]):
        mask = winners == ci
        if not mask.any():
            continue
        labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
        for idx in range(1, count + 1):
            component = labels == idx
            ys, xs = np.nonzero(component)
            contour = trace_boundary(component)
            if len(contour) < 3:
                x, y = int(xs[0]), int(ys[0])
                contour = np.array(
                    [[x, y], [x + 1, y], [x + 1, y + 1], [x, y + 1]], dtype=np.int64
                )
            area = float(component.sum())
            perimeter = contour_perimeter(contour)
            detections.append(
                Detection(
                    contour=contour,
                    centroid=(float(xs.mean()), float(ys.mean())),
                    area=area,
                    circularity=min(
                        100.0, 100.0 * 4.0 * np.pi * area / perimeter**2
                    ),
                    class_label=classes[ci],
                    pixels=np.column_stack([xs, ys]),
                )
            )
    return detections


def _parse_tensor_response(body: bytes, entry: ModelEntry) -> np.ndarray:
    newline = body.find(b"\n")
    if newline < 0:
        raise RemoteBackendError("missing JSON header line")
    try:
        header = json.loads(body[:newline].decode("utf-8"))
        height, width = int(header["height"]), int(header["width"])
        classes = list(header["classes"])
    except (ValueError, KeyError) as exc:
        raise RemoteBackendError(f"malformed header: {exc}") from exc
    if tuple(classes) != tuple(entry.classes):
        raise RemoteBackendError(
            f"backend classes {classes} do not match registry entry {list(entry.classes)}"
        )
    tensor = np.frombuffer(body[newline + 1 :], dtype="<f4")
    expected = height * width * len(classes)
    if tensor.size != expected:
        raise RemoteBackendError(
            f"tensor has {tensor.size} values, expected {expected}"
        )
    probs = tensor.reshape(height, width, len(classes)).astype(np.float64)
    sums = probs.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > 1e-3:
        raise RemoteBackendError("per-pixel probabilities do not sum to 1")
    return probs


def remote_infer(
    entry: ModelEntry, patch: np.ndarray, timeout: float = REMOTE_TIMEOUT_S
) -> list[Detection]:
    """POST a patch to a remote backend and decode its probability map."""
    request = urllib.request.Request(
        entry.endpoint,
        data=encode_png(patch),
        headers={"Content-Type": "image/png"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request, timeout=timeout) as resp:
            body = resp.read()
    except (urllib.error.URLError, OSError, TimeoutError) as exc:
        raise RemoteBackendError(f"backend {entry.endpoint} failed: {exc}") from exc
    probs = _parse_tensor_response(body, entry)
    if probs.shape[:2] != patch.shape[:2]:
        raise RemoteBackendError(
            f"probability map {probs.shape[:2]} does not match patch {patch.shape[:2]}"
        )
    return probability_map_to_detections(probs, list(entry.classes))


def contours_to_overlay(result: AnnotationResult, width: int, height: int) -> np.ndarray:
    """Transparent RGBA canvas with 2-px class-colored contour strokes."""
    canvas = np.zeros((height, width, 4), dtype=np.uint8)
    by_class: dict[str, list] = {}
    for det in result.detections:
        by_class.setdefault(det.class_label, []).append(det.contour)
    for cls, contours in sorted(by_class.items()):
        draw_contours(canvas, contours, color=class_color(cls) + (255,), thickness=2)
    return canvas


class _HttpError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message


_STATUS_TEXT = {
    200: "200 OK",
    400: "400 Bad Request",
    404: "404 Not Found",
    405: "405 Method Not Allowed",
    413: "413 Payload Too Large",
    500: "500 Internal Server Error",
    502: "502 Bad Gateway",
}

_TILE_RE = re.compile(
    r"^/slides/(?P<slide>[^/]+)_files/(?P<level>\d+)/(?P<col>\d+)_(?P<row>\d+)\.(?P<fmt>jpeg|png)$"
)
_DZI_RE = re.compile(r"^/slides/(?P<slide>[^/]+)\.dzi$")


class AnnotationService:
    """WSGI application over an immutable pyramid store and model registry."""

    def __init__(self, config: ServiceConfig, workers: int | None = None):
        self.root = Path(config.pyramid_root)
        builtin = ModelEntry(name="helm", kind="builtin", classes=("inflammatory",))
        self.models: dict[str, ModelEntry] = {"helm": builtin}
        for entry in config.models:
            if entry.name in self.models:
                raise ValueError(f"duplicate model name {entry.name!r} in config")
            self.models[entry.name] = entry
        self._pyramids: dict[str, Pyramid] = {}
        for dzi in sorted(self.root.glob("*.dzi")):
            self._pyramids[dzi.stem] = Pyramid(dzi)
        self._inference_slots = threading.Semaphore(workers or os.cpu_count() or 2)

    # -- WSGI plumbing ----------------------------------------------------

    def __call__(self, environ, start_response):
        try:
            status, headers, body = self._dispatch(environ)
        except _HttpError as err:
            status = err.status
            body = json.dumps({"error": err.message}).encode("utf-8")
            headers = [("Content-Type", "application/json")]
        except Exception as exc:  # pragma: no cover - last-resort guard
            status = 500
            body = json.dumps({"error": f"internal error: {exc}"}).encode("utf-8")
            headers = [("Content-Type", "application/json")]
        headers = list(headers) + [("Content-Length", str(len(body)))]
        start_response(_STATUS_TEXT[status], headers)
        return [body]

    def _dispatch(self, environ):
        method = environ["REQUEST_METHOD"]
        path = environ.get("PATH_INFO", "/")
        if path == "/slides" and method == "GET":
            return self._list_slides()
        if path == "/models" and method == "GET":
            return self._list_models()
        dzi = _DZI_RE.match(path)
        if dzi and method == "GET":
            return self._get_dzi(dzi.group("slide"))
        tile = _TILE_RE.match(path)
        if tile and method == "GET":
            return self._get_tile(tile)
        if path == "/annotate" and method == "POST":
            return self._annotate(environ)
        if path in ("/slides", "/models", "/annotate") or dzi or tile:
            raise _HttpError(405, f"method {method} not allowed on {path}")
        raise _HttpError(404, f"unknown path {path}")

    @staticmethod
    def _json(payload) -> tuple[int, list, bytes]:
        return (
            200,
            [("Content-Type", "application/json")],
            json.dumps(payload).encode("utf-8"),
        )

    # -- endpoints ---------------------------------------------------------

    def _list_slides(self):
        out = [
            {
                "slide_id": slide_id,
                "width": p.descriptor.width,
                "height": p.descriptor.height,
            }
            for slide_id, p in sorted(self._pyramids.items())
        ]
        return self._json(out)

    def _list_models(self):
        out = [
            {"name": m.name, "kind": m.kind, "classes": list(m.classes)}
            for m in sorted(self.models.values(), key=lambda m: m.name)
        ]
        return self._json(out)

    def _pyramid(self, slide_id: str) -> Pyramid:
        if slide_id not in self._pyramids:
            raise _HttpError(404, f"unknown slide {slide_id!r}")
        return self._pyramids[slide_id]

    def _get_dzi(self, slide_id: str):
        pyramid = self._pyramid(slide_id)
        body = pyramid.dzi_path.read_bytes()
        return (200, [("Content-Type", "application/xml")], body)

    def _get_tile(self, match):
        pyramid = self._pyramid(match.group("slide"))
        if match.group("fmt") != pyramid.descriptor.fmt:
            raise _HttpError(404, "tile format mismatch")
        level = int(match.group("level"))
        col, row = int(match.group("col")), int(match.group("row"))
        try:
            pyramid.descriptor.tile_box(level, col, row)
        except OutOfBoundsError as exc:
            raise _HttpError(404, str(exc)) from exc
        path = pyramid.tile_path(level, col, row)
        if not path.exists():
            raise _HttpError(404, f"missing tile {col}_{row} at level {level}")
        body = path.read_bytes()
        headers = [
            ("Content-Type", f"image/{pyramid.descriptor.fmt}"),
            ("Cache-Control", "public, max-age=31536000, immutable"),
        ]
        return (200, headers, body)

    def _annotate(self, environ):
        try:
            length = int(environ.get("CONTENT_LENGTH") or 0)
            payload = json.loads(environ["wsgi.input"].read(length).decode("utf-8"))
            slide_id = payload["slide_id"]
            model_name = payload["model"]
            region = payload["region"]
            x, y = int(region["x"]), int(region["y"])
            w, h = int(region["w"]), int(region["h"])
            level = int(region["level"])
        except (KeyError, ValueError, TypeError) as exc:
            raise _HttpError(400, f"malformed annotate request: {exc}") from exc
        pyramid = self._pyramid(slide_id)
        if model_name not in self.models:
            raise _HttpError(404, f"unknown model {model_name!r}")
        if w * h > MAX_REGION_PIXELS:
            raise _HttpError(413, f"region exceeds {MAX_REGION_PIXELS} pixels")
        try:
            patch = pyramid.read_region(x, y, w, h, level)
        except OutOfBoundsError as exc:
            raise _HttpError(400, str(exc)) from exc

        entry = self.models[model_name]
        started = time.perf_counter()
        if entry.kind == "builtin":
            with self._inference_slots:
                detections = helm_mod.helm_detect(patch)
        else:
            try:
                detections = remote_infer(entry, patch)
            except RemoteBackendError as exc:
                raise _HttpError(502, str(exc)) from exc
        elapsed_ms = (time.perf_counter() - started) * 1000.0

        scale = 2 ** (pyramid.descriptor.max_level - level)
        mapped = [
            Detection(
                contour=(det.contour + np.array([x, y])) * scale,
                centroid=((det.centroid[0] + x) * scale, (det.centroid[1] + y) * scale),
                area=det.area,
                circularity=det.circularity,
                class_label=det.class_label,
                pixels=det.pixels,
            )
            for det in detections
        ]
        result = AnnotationResult(
            detections=mapped,
            region={"x": x, "y": y, "w": w, "h": h, "level": level},
            model=model_name,
            elapsed_ms=elapsed_ms,
        )
        query = environ.get("QUERY_STRING", "")
        if "overlay=1" in query.split("&"):
            local = AnnotationResult(
                detections=detections,
                region=result.region,
                model=model_name,
                elapsed_ms=elapsed_ms,
            )
            png = encode_png(contours_to_overlay(local, w, h))
            return (200, [("Content-Type", "image/png")], png)
        return self._json(result.to_json())


class ThreadingWSGIServer(ThreadingMixIn, WSGIServer):
    daemon_threads = True


def serve(config: ServiceConfig, host: str = "0.0.0.0"):
    """Run the service on the configured port (blocking)."""
    app = AnnotationService(config)
    with make_server(host, config.port, app, server_class=ThreadingWSGIServer) as httpd:
        httpd.serve_forever()
