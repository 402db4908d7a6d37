"""In-process web-archive stand-in for hermetic runs.

Serves a CDX-style index endpoint (`/cdx`) and a replay endpoint
(`/web/<timestamp>/<url>`) over captures loaded into memory. Supports
scripted failures (status codes, stalls, dropped connections) so retry
behavior can be exercised deterministically, and keeps a request log for
pacing assertions.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, unquote, urlsplit

CDX_HEADER = ["urlkey", "timestamp", "original", "mimetype", "statuscode", "digest", "length"]


def normalize_url(url: str) -> str:
    """Scheme-insensitive, host-case-insensitive form used for index matching."""
    u = url.strip()
    for scheme in ("https://", "http://"):
        if u.lower().startswith(scheme):
            u = u[len(scheme):]
            break
    if "/" in u:
        host, rest = u.split("/", 1)
        u = host.lower() + "/" + rest
    else:
        u = u.lower()
    return u.rstrip("/") if u.count("/") <= 1 and u.endswith("/") else u


@dataclass
class Capture:
    """One archived object: index row plus replay body."""

    url: str
    timestamp: str
    body: bytes
    status: int = 200
    mime: str = "text/html"
    digest: str = ""

    def __post_init__(self):
        if not self.digest:
            self.digest = hashlib.sha1(self.body).hexdigest()[:16].upper()

    @property
    def norm_url(self) -> str:
        return normalize_url(self.url)


@dataclass
class _FailureScript:
    """Pending scripted behaviors for requests whose path contains `needle`."""

    needle: str
    actions: list = field(default_factory=list)  # ("status", 503) | ("stall", sec) | ("drop",)


class MockArchive:
    """A threaded HTTP server exposing the archive surface the client needs."""

    def __init__(self):
        self.captures: list[Capture] = []
        self._bodies: dict[tuple[str, str], Capture] = {}
        self._scripts: list[_FailureScript] = []
        self.request_log: list[tuple[float, str]] = []
        self._lock = threading.Lock()
        self._server: Optional[ThreadingHTTPServer] = None
        self._thread: Optional[threading.Thread] = None
        self.cdx_header: list[str] = list(CDX_HEADER)

    # -- corpus management ---------------------------------------------------

    def add_capture(self, capture: Capture) -> None:
        with self._lock:
            self.captures.append(capture)
            self._bodies[(capture.norm_url, capture.timestamp)] = capture

    def add_captures(self, captures) -> None:
        with self._lock:
            for capture in captures:
                self.captures.append(capture)
                self._bodies[(capture.norm_url, capture.timestamp)] = capture

    def script_failures(self, needle: str, actions: list) -> None:
        """Queue behaviors consumed one per matching request, then normal service."""
        with self._lock:
            self._scripts.append(_FailureScript(needle, list(actions)))

    # -- lifecycle -------------------------------------------------------------

    def start(self, port: int = 0) -> int:
        handler = _make_handler(self)
        self._server = ThreadingHTTPServer(("127.0.0.1", port), handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self._server.server_port

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    @property
    def port(self) -> int:
        assert self._server is not None
        return self._server.server_port

    def cdx_url(self) -> str:
        return f"http://127.0.0.1:{self.port}/cdx"

    def replay_template(self) -> str:
        return f"http://127.0.0.1:{self.port}/web/{{timestamp}}/{{url}}"

    # -- request handling ------------------------------------------------------

    def _next_action(self, path: str):
        with self._lock:
            for script in self._scripts:
                if script.needle in path and script.actions:
                    return script.actions.pop(0)
        return None

    def _log(self, path: str) -> None:
        with self._lock:
            self.request_log.append((time.monotonic(), path))

    def handle_cdx(self, query: dict[str, list[str]]):
        target = query.get("url", [""])[0]
        match_type = query.get("matchType", ["exact"])[0]
        from_ts = query.get("from", ["1996"])[0].ljust(14, "0")
        limit = int(query.get("limit", ["100000"])[0])
        offset = int(query.get("resumeKey", ["0"])[0] or 0)
        want_resume = query.get("showResumeKey", ["false"])[0] == "true"

        norm_target = normalize_url(target)
        with self._lock:
            if match_type == "prefix":
                rows = [c for c in self.captures if c.norm_url.startswith(norm_target)]
            else:
                rows = [c for c in self.captures if c.norm_url == norm_target]
        rows = [c for c in rows if c.timestamp >= from_ts]
        rows.sort(key=lambda c: (c.timestamp, c.url))

        page = rows[offset:offset + limit]
        if not page:
            return json.dumps([])
        out: list[list] = [list(self.cdx_header)]
        for c in page:
            values = {
                "urlkey": c.norm_url,
                "timestamp": c.timestamp,
                "original": c.url,
                "mimetype": c.mime,
                "statuscode": str(c.status),
                "digest": c.digest,
                "length": str(len(c.body)),
            }
            out.append([values[name] for name in self.cdx_header])
        if want_resume and offset + limit < len(rows):
            out.append([])
            out.append([str(offset + limit)])
        return json.dumps(out)

    def lookup_body(self, timestamp: str, url: str) -> Optional[Capture]:
        with self._lock:
            return self._bodies.get((normalize_url(url), timestamp))


def _make_handler(archive: MockArchive):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # silence stderr chatter
            pass

        def do_GET(self):
            archive._log(self.path)
            action = archive._next_action(self.path)
            if action is not None:
                kind = action[0]
                if kind == "status":
                    self._respond(action[1], b"scripted failure")
                    return
                if kind == "stall":
                    time.sleep(action[1])
                    self._respond(200, b"late")
                    return
                if kind == "drop":
                    self.connection.close()
                    return
                if kind == "body":
                    self._respond(200, action[1])
                    return
            split = urlsplit(self.path)
            if split.path == "/cdx":
                body = archive.handle_cdx(parse_qs(split.query))
                self._respond(200, body.encode("utf-8"), "application/json")
                return
            if split.path.startswith("/web/"):
                rest = unquote(split.path[len("/web/"):])
                if split.query:
                    rest = rest + "?" + split.query
                if "/" not in rest:
                    self._respond(404, b"bad replay path")
                    return
                ts_part, url = rest.split("/", 1)
                ts = ts_part[:14] if len(ts_part) >= 14 and ts_part[:14].isdigit() else ts_part
                capture = archive.lookup_body(ts, url)
                if capture is None:
                    self._respond(404, b"snapshot not found")
                    return
                self._respond(200, capture.body, capture.mime)
                return
            self._respond(404, b"unknown endpoint")

        def _respond(self, status: int, body: bytes, content_type: str = "text/plain"):
            try:
                self.send_response(status)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
            except (BrokenPipeError, ConnectionResetError):  # client gave up
                pass

    return Handler
