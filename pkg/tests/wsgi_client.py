"""Minimal in-process WSGI test client."""

from __future__ import annotations

import io
import json


class Response:
    def __init__(self, status: str, headers: list, body: bytes):
        self.status_code = int(status.split()[0])
        self.headers = dict(headers)
        self.body = body

    def json(self):
        return json.loads(self.body.decode("utf-8"))


def request(app, method: str, path: str, body: bytes = b"", query: str = "") -> Response:
    environ = {
        "REQUEST_METHOD": method,
        "PATH_INFO": path,
        "QUERY_STRING": query,
        "CONTENT_LENGTH": str(len(body)),
        "wsgi.input": io.BytesIO(body),
        "wsgi.errors": io.StringIO(),
        "wsgi.url_scheme": "http",
        "SERVER_NAME": "test",
        "SERVER_PORT": "80",
    }
    captured = {}

    def start_response(status, headers):
        captured["status"] = status
        captured["headers"] = headers

    chunks = app(environ, start_response)
    return Response(captured["status"], captured["headers"], b"".join(chunks))


def get(app, path, query=""):
    return request(app, "GET", path, query=query)


def post_json(app, path, payload, query=""):
    return request(
        app, "POST", path, body=json.dumps(payload).encode("utf-8"), query=query
    )
