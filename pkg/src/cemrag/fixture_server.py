"""Deterministic stand-in for the text-generation service.

Answers the generation wire contract with text that is a pure function of
the prompt, so end-to-end runs are reproducible byte for byte. Responses
echo the prompt's KEYWORDS bullets when present, which keeps closed-loop
demos readable. A configurable failure prefix supports retry testing.

Run standalone:

    python -m cemrag.fixture_server --port 8123 [--fail-first N]
"""

from __future__ import annotations

import argparse
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def parse_keyword_bullets(prompt: str) -> list[str]:
    """Bullet lines immediately following a KEYWORDS: line."""
    keywords = []
    in_block = False
    for line in prompt.splitlines():
        if line.strip() == "KEYWORDS:":
            in_block = True
            continue
        if in_block:
            if line.startswith("- "):
                keywords.append(line[2:])
            else:
                break
    return keywords


def default_responder(prompt: str) -> str:
    keywords = parse_keyword_bullets(prompt)
    if keywords:
        return "Findings include " + ", ".join(keywords) + "."
    return "No acute cardiopulmonary process."


class FixtureServer:
    """In-process HTTP fixture; use as a context manager.

    ``fail_first`` makes the first N requests answer HTTP 500 (to drive
    retry paths); every received request body is recorded for byte-level
    assertions.
    """

    def __init__(self, responder=default_responder, fail_first: int = 0, port: int = 0):
        self._responder = responder
        self._lock = threading.Lock()
        self.fail_remaining = fail_first
        self.received_bodies: list[bytes] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                with outer._lock:
                    outer.received_bodies.append(body)
                    fail = outer.fail_remaining > 0
                    if fail:
                        outer.fail_remaining -= 1
                if fail:
                    self.send_response(500)
                    self.end_headers()
                    self.wfile.write(b"transient failure")
                    return
                try:
                    prompt = json.loads(body)["prompt"]
                    text = outer._responder(prompt)
                    payload = json.dumps({"text": text}).encode("utf-8")
                    status = 200
                except Exception:
                    payload = json.dumps({"error": "bad request"}).encode("utf-8")
                    status = 400
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):  # keep test output quiet
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/generate"

    def start(self) -> "FixtureServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "FixtureServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="deterministic generation fixture")
    parser.add_argument("--port", type=int, default=8123)
    parser.add_argument("--fail-first", type=int, default=0)
    args = parser.parse_args(argv)
    server = FixtureServer(fail_first=args.fail_first, port=args.port)
    print(f"fixture server listening on {server.url}", flush=True)
    try:
        server.start()
        threading.Event().wait()
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
