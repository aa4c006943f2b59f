# Tile a synthetic slide into a DeepZoom pyramid, start the annotation
# service on an ephemeral port, and exercise its HTTP API end to end.
import json
import tempfile
import threading
import urllib.request
from pathlib import Path
from wsgiref.simple_server import make_server

import numpy as np

from tilkit import stainlab as sl
from tilkit.pyramid import build_pyramid
from tilkit.service import AnnotationService, ServiceConfig, ThreadingWSGIServer

# Slide: nucleus-like disks over an eosin background.
size = 512
conc = np.zeros((size, size, 3))
conc[..., 1] = 0.3
yy, xx = np.mgrid[:size, :size]
rng = np.random.default_rng(3)
for _ in range(12):
    cx, cy = rng.integers(20, size - 20, size=2)
    conc[(xx - cx) ** 2 + (yy - cy) ** 2 <= 81, 0] = 2.3
slide = sl.hed_to_rgb(conc)

# PNG tiles: lossless, so region crops feed the detector exactly the pixels
# that were tiled. JPEG (the viewing default) shifts saturated synthetic
# colors enough to move them across the stain thresholds.
root = Path(tempfile.mkdtemp(prefix="tilkit_demo_"))
desc = build_pyramid(slide, root, name="demo", fmt="png")
tiles = sorted((root / "demo_files").rglob("*.png"))
print(f"pyramid: levels 0..{desc.max_level}, {len(tiles)} tiles under {root}")

app = AnnotationService(ServiceConfig(pyramid_root=str(root)))
server = make_server("127.0.0.1", 0, app, server_class=ThreadingWSGIServer)
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://127.0.0.1:{server.server_port}"
print("service:", base)


def get(path):
    with urllib.request.urlopen(base + path, timeout=30) as resp:
        return resp.read()


print("GET /slides ->", json.loads(get("/slides")))
print("GET /models ->", json.loads(get("/models")))
print("GET /slides/demo.dzi ->", get("/slides/demo.dzi").decode().splitlines()[1])

request = urllib.request.Request(
    base + "/annotate",
    data=json.dumps(
        {
            "slide_id": "demo",
            "region": {"x": 0, "y": 0, "w": 512, "h": 512, "level": desc.max_level},
            "model": "helm",
        }
    ).encode(),
    headers={"Content-Type": "application/json"},
)
with urllib.request.urlopen(request, timeout=60) as resp:
    result = json.loads(resp.read())
print(
    f"POST /annotate -> counts={result['counts']} "
    f"({len(result['detections'])} contours, {result['elapsed_ms']:.0f} ms)"
)
server.shutdown()
