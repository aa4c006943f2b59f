"""Stub remote-inference backend for service tests.

Runs a tiny HTTP server on an ephemeral port; each instance answers every
POST with a canned probability tensor (or deliberately malformed bytes).
"""

from __future__ import annotations

import json
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np


def encode_tensor(probs: np.ndarray, classes) -> bytes:
    header = json.dumps(
        {"height": probs.shape[0], "width": probs.shape[1], "classes": list(classes)}
    ).encode("utf-8")
    return header + b"\n" + probs.astype("<f4").tobytes()


@contextmanager
def stub_backend(body_for_request):
    """Serve ``body_for_request(patch_bytes) -> bytes`` on 127.0.0.1:<port>."""

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            patch = self.rfile.read(length)
            body = body_for_request(patch)
            self.send_response(200)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}/"
    finally:
        server.shutdown()
        thread.join(timeout=5)
