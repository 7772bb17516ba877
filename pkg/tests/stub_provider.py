"""Minimal canned embedding provider for client tests."""

import json
from http.server import BaseHTTPRequestHandler, HTTPServer
from threading import Thread


class StubProviderHandler(BaseHTTPRequestHandler):
    """Serves /info and /embed with deterministic synthetic vectors.

    The target token of sentence i gets two sub-word pieces whose mean is
    (i, layer), so client-side averaging is directly checkable.
    """

    info_payload = {
        "protocol_version": 1,
        "model_name": "stub",
        "dim": 2,
        "n_layers": 2,
        "max_tokens": 16,
    }
    fail_first = 0
    requests_seen = []

    def log_message(self, *args):
        pass

    def do_GET(self):
        self._reply(200, self.info_payload)

    def do_POST(self):
        cls = type(self)
        if cls.fail_first > 0:
            cls.fail_first -= 1
            self._reply(500, {"error": "transient"})
            return
        n = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(n))
        cls.requests_seen.append(body)
        layers = body["layers"]
        if layers == "all":
            layers = [0, 1, 2]
        results = []
        for i, _ in enumerate(body["sentences"]):
            results.append(
                {
                    "truncated": False,
                    "target_subwords": [
                        [
                            [float(i) - 1.0, float(l) + 1.0],
                            [float(i) + 1.0, float(l) - 1.0],
                        ]
                        for l in layers
                    ],
                }
            )
        self._reply(200, {"dim": 2, "layers": layers, "results": results})

    def _reply(self, status, payload):
        blob = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)


def start_stub_provider():
    """-> (base_url, shutdown callable). Resets class-level counters."""
    server = HTTPServer(("127.0.0.1", 0), StubProviderHandler)
    thread = Thread(target=server.serve_forever, daemon=True)
    thread.start()
    StubProviderHandler.fail_first = 0
    StubProviderHandler.requests_seen = []
    return f"http://127.0.0.1:{server.server_port}", server.shutdown
