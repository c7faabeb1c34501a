"""Loopback JSON endpoints for status, telemetry, overrides and list reloads.

Routes:
    GET    /status
    GET    /stats
    GET    /overrides
    PUT    /override/{site}
    DELETE /override/{site}
    POST   /list/reload
    GET    /sessions/{id}            (measurement harness)
    POST   /sessions/{id}/finalize   (measurement harness)
"""
from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import unquote, urlsplit

from .canonical import MalformedUrl, canonicalize_host
from .engine import Address, Engine
from .sessions import UnknownSession

log = logging.getLogger(__name__)


class ControlHandler(BaseHTTPRequestHandler):
    server_version = "trackguard-control"
    protocol_version = "HTTP/1.1"

    @property
    def engine(self) -> Engine:
        return self.server.engine

    def log_message(self, fmt, *args):
        log.debug("control: " + fmt, *args)

    def _send(self, status: int, payload=None):
        body = b"" if payload is None else json.dumps(payload).encode("utf-8")
        self.send_response(status)
        if payload is not None:
            self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _error(self, status: int, error: str, detail: str = ""):
        self._send(status, {"error": error, "detail": detail})

    def _route(self):
        path = urlsplit(self.path).path
        return [unquote(p) for p in path.strip("/").split("/")] if path.strip("/") else []

    def _drain_body(self):
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            self.rfile.read(length)

    def do_GET(self):
        parts = self._route()
        if parts == ["status"]:
            self._send(200, self.engine.status())
        elif parts == ["stats"]:
            self._send(200, self.engine.telemetry.snapshot_counters())
        elif parts == ["overrides"]:
            self._send(200, self.engine.overrides.sites())
        elif len(parts) == 2 and parts[0] == "sessions":
            try:
                self._send(200, self.engine.sessions.report(parts[1]))
            except UnknownSession:
                self._error(404, "UnknownSession", parts[1])
        else:
            self._error(404, "NotFound", self.path)

    def _site(self, parts) -> Optional[str]:
        if len(parts) != 2 or parts[0] != "override":
            self._error(404, "NotFound", self.path)
            return None
        try:
            return canonicalize_host(parts[1])
        except MalformedUrl as exc:
            self._error(400, "InvalidDomain", str(exc))
            return None

    def do_PUT(self):
        self._drain_body()
        site = self._site(self._route())
        if site is not None:
            self.engine.overrides.set(site)
            self._send(204)

    def do_DELETE(self):
        self._drain_body()
        site = self._site(self._route())
        if site is not None:
            self.engine.overrides.clear(site)
            self._send(204)

    def do_POST(self):
        self._drain_body()
        parts = self._route()
        if parts == ["list", "reload"]:
            updater = self.engine.updater
            if updater is None:
                self._error(503, "NoUpdater", "no update endpoint configured")
                return
            if updater.running:
                updater.trigger()
            else:
                threading.Thread(target=updater.cycle, daemon=True).start()
            self._send(202, {"accepted": True})
        elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "finalize":
            try:
                self._send(200, self.engine.sessions.finalize(parts[1]))
            except UnknownSession:
                self._error(404, "UnknownSession", parts[1])
        else:
            self._error(404, "NotFound", self.path)


class ControlServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, engine: Engine, address: Address = ("127.0.0.1", 8899)):
        super().__init__(address, ControlHandler)
        self.engine = engine
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> Address:
        return self.server_address[:2]

    def start(self) -> Address:
        self._thread = threading.Thread(target=self.serve_forever, args=(0.05,),
                                        name="control", daemon=True)
        self._thread.start()
        return self.address

    def stop(self):
        self.shutdown()
        self.server_close()
