"""A throwaway HTTP server speaking the /api/generate wire format."""

from __future__ import annotations

import json
import threading
import time
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class FakeBackend:
    def __init__(self, reply=None, *, status: int = 200, delay: float = 0.0, native: bool = True, fail_first: int = 0):
        self.reply = reply or (lambda payload: "<repairs>\nDEL_EDGE | [ra] | -\n</repairs>")
        self.status = status
        self.delay = delay
        self.native = native
        self.fail_first = fail_first
        self.requests: list[dict] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()

    def handle(self, payload: dict) -> tuple[int, bytes]:
        with self._lock:
            self.requests.append(payload)
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            failing = len(self.requests) <= self.fail_first
        try:
            if self.delay:
                time.sleep(self.delay)
            if failing:
                return 503, b"busy"
            if self.status != 200:
                return self.status, b"nope"
            text = self.reply(payload)
            if isinstance(text, bytes):
                return 200, text
            body = {"model": payload.get("model"), "response": text, "done": True}
            if self.native:
                body.update({
                    "prompt_eval_count": len(payload.get("prompt", "").split()),
                    "prompt_eval_duration": 250_000_000,
                    "eval_count": len(text.split()),
                    "eval_duration": 1_500_000_000,
                })
            return 200, json.dumps(body).encode()
        finally:
            with self._lock:
                self.in_flight -= 1


@contextmanager
def serve(backend: FakeBackend):
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802
            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length) or b"{}")
            status, body = backend.handle(payload)
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}/api/generate"
    finally:
        server.shutdown()
        server.server_close()
