"""HTTP/1.1 forward proxy that holds each request until it is classified.

Blocked requests are answered locally (no upstream socket is ever opened);
allowed ones are relayed byte-for-byte and charged to their page session.
CONNECT tunnels are classified on the host alone, since there is no TLS
interception.
"""
from __future__ import annotations

import asyncio
import logging
import socket
import threading
from http import HTTPStatus
from typing import List, Optional, Tuple
from urllib.parse import urlsplit

from .canonical import CanonicalUrl, MalformedUrl, canonicalize_host, parse_and_canonicalize
from .engine import Address, Engine
from .policy import Decision, Element, Kind, RequestMeta
from .sessions import PageSession

log = logging.getLogger(__name__)

MAX_HEAD = 64 * 1024
CHUNK = 64 * 1024

SESSION_HEADER = "x-tp-session"
KIND_HEADER = "x-tp-kind"
ELEMENT_HEADER = "x-tp-element"

HOP_BY_HOP = {
    "connection", "keep-alive", "proxy-connection", "proxy-authorization",
    "proxy-authenticate", "te", "trailer", "upgrade",
}

Headers = List[Tuple[str, str]]


def _nodelay(writer: asyncio.StreamWriter) -> None:
    # heads and bodies go out as separate writes; Nagle would hold the second
    sock = writer.get_extra_info("socket")
    if sock is not None and sock.family in (socket.AF_INET, socket.AF_INET6):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class BadRequest(Exception):
    pass


def parse_head(raw: bytes) -> Tuple[str, Headers]:
    lines = raw.decode("iso-8859-1").split("\r\n")
    start = lines[0]
    headers: Headers = []
    for line in lines[1:]:
        if not line:
            continue
        if line[0] in " \t" and headers:
            name, value = headers[-1]
            headers[-1] = (name, value + " " + line.strip())
            continue
        name, sep, value = line.partition(":")
        if not sep or not name.strip():
            raise BadRequest(f"malformed header line {line!r}")
        headers.append((name.strip(), value.strip()))
    return start, headers


def header(headers: Headers, name: str) -> Optional[str]:
    name = name.lower()
    for k, v in headers:
        if k.lower() == name:
            return v
    return None


def _connection_tokens(headers: Headers) -> set:
    tokens = set()
    for k, v in headers:
        if k.lower() == "connection":
            tokens.update(t.strip().lower() for t in v.split(","))
    return tokens


def strip_hop_by_hop(headers: Headers) -> Headers:
    drop = HOP_BY_HOP | _connection_tokens(headers)
    return [(k, v) for k, v in headers if k.lower() not in drop]


def render_head(start: str, headers: Headers) -> bytes:
    out = [start] + [f"{k}: {v}" for k, v in headers] + ["", ""]
    return "\r\n".join(out).encode("iso-8859-1")


def blocked_response(status: int, decision: Decision) -> bytes:
    reason = _reason(status)
    return render_head(f"HTTP/1.1 {status} {reason}", [
        ("X-Tracking-Protection", "blocked"),
        ("X-TP-Matched", decision.matched_expression or ""),
        ("Content-Length", "0"),
        ("Connection", "close"),
    ])


def error_response(status: int, marker: Optional[str] = None, message: str = "") -> bytes:
    body = message.encode("utf-8")
    headers = [("Content-Type", "text/plain; charset=utf-8"),
               ("Content-Length", str(len(body))), ("Connection", "close")]
    if marker:
        headers.insert(0, ("X-Tracking-Protection", marker))
    return render_head(f"HTTP/1.1 {status} {_reason(status)}", headers) + body


def _reason(status: int) -> str:
    try:
        return HTTPStatus(status).phrase
    except ValueError:
        return "Blocked"


class _Relay:
    """Copies one message body between streams, counting the bytes it moves.

    Bytes are charged to ``session`` before they are written, so a client that
    has read the whole response always finds it accounted for.
    """

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter,
                 session: Optional[PageSession] = None):
        self.reader = reader
        self.writer = writer
        self.session = session
        self.count = 0

    async def send(self, data: bytes):
        self.count += len(data)
        if self.session is not None:
            self.session.add_bytes(len(data))
        self.writer.write(data)
        await self.writer.drain()

    async def exactly(self, n: int):
        while n > 0:
            data = await self.reader.read(min(n, CHUNK))
            if not data:
                raise ConnectionError("peer closed mid-body")
            n -= len(data)
            await self.send(data)

    async def chunked(self):
        while True:
            line = await self.reader.readuntil(b"\r\n")
            await self.send(line)
            size = int(line.split(b";", 1)[0].strip() or b"0", 16)
            if size == 0:
                while True:
                    trailer = await self.reader.readuntil(b"\r\n")
                    await self.send(trailer)
                    if trailer == b"\r\n":
                        return
            await self.exactly(size + 2)

    async def until_eof(self):
        while True:
            data = await self.reader.read(CHUNK)
            if not data:
                return
            await self.send(data)

    async def body(self, headers: Headers, allow_eof: bool):
        te = (header(headers, "transfer-encoding") or "").lower()
        if "chunked" in te:
            await self.chunked()
            return
        length = header(headers, "content-length")
        if length is not None:
            try:
                n = int(length)
            except ValueError:
                raise BadRequest("bad Content-Length") from None
            await self.exactly(n)
        elif allow_eof:
            await self.until_eof()


async def _pipe(reader, writer, counter: Optional[PageSession] = None):
    try:
        while True:
            data = await reader.read(CHUNK)
            if not data:
                break
            if counter is not None:
                counter.add_bytes(len(data))
            writer.write(data)
            await writer.drain()
    except (ConnectionError, asyncio.CancelledError):
        pass
    finally:
        try:
            writer.close()
        except Exception:
            pass


class FilteringProxy:
    def __init__(self, engine: Engine):
        self.engine = engine
        self.cfg = engine.cfg
        self.server: Optional[asyncio.AbstractServer] = None

    # -- request attribution -------------------------------------------------

    def upstream_address(self, host: str, port: int) -> Address:
        resolve = self.cfg.resolve
        return resolve.get(f"{host}:{port}") or resolve.get(host) or (host.strip("[]"), port)

    def attribute(self, url: CanonicalUrl, headers: Headers,
                  default_kind: Optional[Kind] = None) -> Tuple[RequestMeta, Optional[PageSession]]:
        sid = header(headers, SESSION_HEADER)
        kind_h = (header(headers, KIND_HEADER) or "").strip().lower()
        referer = header(headers, "referer")
        element = Element.parse(header(headers, ELEMENT_HEADER))

        referer_host = None
        if referer:
            try:
                referer_host = parse_and_canonicalize(referer).host
            except MalformedUrl:
                pass

        if kind_h in (Kind.NAVIGATION.value, Kind.SUBRESOURCE.value):
            kind = Kind(kind_h)
        elif default_kind is not None:
            kind = default_kind
        else:
            kind = Kind.SUBRESOURCE if referer else Kind.NAVIGATION

        sessions = self.engine.sessions
        if sid:
            session = sessions.get_or_create(sid)
            if kind == Kind.NAVIGATION and session.first_party_host is None:
                session.first_party_host = url.host
        elif kind == Kind.NAVIGATION:
            session = sessions.start_implicit(url.host)
        else:
            session = sessions.implicit_for(referer_host) if referer_host else None

        first_party = None
        if kind == Kind.SUBRESOURCE:
            first_party = (session.first_party_host if session is not None else None) or referer_host
        return RequestMeta(url, kind, first_party, element), session

    # -- connection handling -------------------------------------------------

    async def handle_client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        _nodelay(writer)
        try:
            try:
                raw = await asyncio.wait_for(reader.readuntil(b"\r\n\r\n"), self.cfg.idle_timeout)
            except (asyncio.IncompleteReadError, asyncio.TimeoutError, ConnectionError):
                return
            except asyncio.LimitOverrunError:
                writer.write(error_response(431, message="request head too large"))
                return
            try:
                start, headers = parse_head(raw[:-4])
                method, target, version = start.split(" ", 2)
            except (BadRequest, ValueError):
                writer.write(error_response(400, message="malformed request"))
                return
            if method.upper() == "CONNECT":
                await self.handle_connect(target, headers, reader, writer)
            else:
                await self.handle_http(method, target, headers, reader, writer)
        except Exception:
            log.exception("proxy connection failed")
        finally:
            try:
                await writer.drain()
            except Exception:
                pass
            writer.close()

    async def handle_http(self, method, target, headers, reader, writer):
        if not target.lower().startswith(("http://", "https://")):
            writer.write(error_response(400, message="absolute-form request required"))
            return
        try:
            url = parse_and_canonicalize(target)
        except MalformedUrl as exc:
            writer.write(error_response(400, message=str(exc)))
            return
        if url.scheme != "http":
            writer.write(error_response(400, message="use CONNECT for https"))
            return

        meta, session = self.attribute(url, headers)
        decision, matched = self.engine.decide(meta)
        if decision.blocked:
            if session is not None:
                session.record_blocked((meta.element_hint or Element.OTHER).value)
            writer.write(blocked_response(self.cfg.block_status, decision))
            log.info("blocked %s (%s)", target, decision.matched_expression)
            return
        if session is not None:
            session.record_forwarded(url.host, matched)

        parts = urlsplit(target)
        port = parts.port or 80
        origin = parts.path or "/"
        if parts.query:
            origin += "?" + parts.query
        try:
            up_reader, up_writer = await asyncio.wait_for(
                asyncio.open_connection(*self.upstream_address(url.host, port), limit=MAX_HEAD),
                self.cfg.connect_timeout)
        except (OSError, asyncio.TimeoutError) as exc:
            writer.write(error_response(502, "upstream-error", str(exc)))
            return
        _nodelay(up_writer)

        try:
            out_headers = [(k, v) for k, v in strip_hop_by_hop(headers)
                           if not k.lower().startswith("x-tp-")]
            if header(out_headers, "host") is None:
                out_headers.insert(0, ("Host", parts.netloc.rpartition("@")[2]))
            out_headers.append(("Connection", "close"))
            up_writer.write(render_head(f"{method} {origin} HTTP/1.1", out_headers))
            await up_writer.drain()
            await _Relay(reader, up_writer).body(headers, allow_eof=False)

            try:
                raw = await asyncio.wait_for(up_reader.readuntil(b"\r\n\r\n"), self.cfg.idle_timeout)
            except (asyncio.IncompleteReadError, asyncio.LimitOverrunError, asyncio.TimeoutError):
                writer.write(error_response(502, "upstream-error", "bad upstream response"))
                return
            status_line, resp_headers = parse_head(raw[:-4])
            status = int(status_line.split(" ", 2)[1])
            head = render_head(status_line, strip_hop_by_hop(resp_headers) + [("Connection", "close")])
            relay = _Relay(up_reader, writer, session)
            await relay.send(head)
            if method.upper() != "HEAD" and status >= 200 and status not in (204, 304):
                await relay.body(resp_headers, allow_eof=True)
        except (ConnectionError, BadRequest, ValueError, asyncio.IncompleteReadError) as exc:
            log.warning("relay of %s failed: %s", target, exc)
        finally:
            up_writer.close()

    async def handle_connect(self, target, headers, reader, writer):
        host_s, _, port_s = target.rpartition(":")
        try:
            port = int(port_s)
            host = canonicalize_host(host_s)
        except (ValueError, MalformedUrl):
            writer.write(error_response(400, message="CONNECT target must be host:port"))
            return
        url = CanonicalUrl("https", host, None if port == 443 else port, "/")
        # tunnels are subresources unless the client says otherwise
        meta, session = self.attribute(url, headers, default_kind=Kind.SUBRESOURCE)
        decision, matched = self.engine.decide(meta)
        if decision.blocked:
            if session is not None:
                session.record_blocked((meta.element_hint or Element.OTHER).value)
            writer.write(blocked_response(self.cfg.block_status, decision))
            log.info("blocked CONNECT %s (%s)", target, decision.matched_expression)
            return
        if session is not None:
            session.record_forwarded(host, matched)
        try:
            up_reader, up_writer = await asyncio.wait_for(
                asyncio.open_connection(*self.upstream_address(host, port)),
                self.cfg.connect_timeout)
        except (OSError, asyncio.TimeoutError) as exc:
            writer.write(error_response(502, "upstream-error", str(exc)))
            return
        writer.write(b"HTTP/1.1 200 Connection Established\r\n\r\n")
        await writer.drain()
        await asyncio.gather(
            _pipe(reader, up_writer),
            _pipe(up_reader, writer, session),
        )

    # -- lifecycle -----------------------------------------------------------

    async def start(self, host: Optional[str] = None, port: Optional[int] = None) -> Address:
        host = host if host is not None else self.cfg.listen[0]
        port = port if port is not None else self.cfg.listen[1]
        self.server = await asyncio.start_server(self.handle_client, host, port, limit=MAX_HEAD)
        return self.server.sockets[0].getsockname()[:2]

    async def serve(self) -> None:
        if self.server is None:
            await self.start()
        async with self.server:
            await self.server.serve_forever()


async def serve(engine: Engine) -> None:
    """Run the proxy until cancelled."""
    proxy = FilteringProxy(engine)
    addr = await proxy.start()
    log.info("proxy listening on %s:%d", *addr)
    await proxy.serve()


class ProxyThread:
    """Runs a FilteringProxy on its own event loop in a daemon thread."""

    def __init__(self, engine: Engine, host: str = "127.0.0.1", port: int = 0):
        self.proxy = FilteringProxy(engine)
        self.host, self.port = host, port
        self.loop = asyncio.new_event_loop()
        self.address: Optional[Address] = None
        self._thread = threading.Thread(target=self._run, name="proxy", daemon=True)
        self._ready = threading.Event()

    def _run(self):
        asyncio.set_event_loop(self.loop)
        self.address = self.loop.run_until_complete(self.proxy.start(self.host, self.port))
        self._ready.set()
        try:
            self.loop.run_forever()
        finally:
            # let open tunnels and relays unwind before the loop goes away
            pending = asyncio.all_tasks(self.loop)
            for task in pending:
                task.cancel()
            self.loop.run_until_complete(asyncio.gather(*pending, return_exceptions=True))
            self.loop.close()

    def start(self) -> Address:
        self._thread.start()
        self._ready.wait(10)
        return self.address

    def stop(self):
        async def _close():
            if self.proxy.server is not None:
                self.proxy.server.close()
                await self.proxy.server.wait_closed()

        if self.loop.is_running():
            asyncio.run_coroutine_threadsafe(_close(), self.loop).result(5)
            self.loop.call_soon_threadsafe(self.loop.stop)
        self._thread.join(5)
