"""URL canonicalization and lookup-expression expansion.

Every URL that reaches the blocklist goes through :func:`parse_and_canonicalize`
first, then is expanded into the host-suffix / path-prefix strings that get
hashed and checked against the store.
"""
from __future__ import annotations

import ipaddress
import re
import socket
from dataclasses import dataclass
from typing import List, Optional, Union

DEFAULT_PORTS = {"http": 80, "https": 443}

MAX_HOST_SUFFIXES = 5
MAX_ROOT_PREFIXES = 4

_HEX = b"0123456789abcdefABCDEF"
_STRIP_CHARS = b"\t\r\n"
_HOST_RE = re.compile(r"^[a-z0-9_-]+(\.[a-z0-9_-]+)*$")
_NUMERIC_HOST_RE = re.compile(r"^(0x[0-9a-f]*|[0-9]+)(\.(0x[0-9a-f]*|[0-9]+)){0,3}$")


class MalformedUrl(ValueError):
    """Raised when a string cannot be turned into a classifiable URL."""


@dataclass(frozen=True)
class CanonicalUrl:
    scheme: str
    host: str
    port: Optional[int] = None
    path: str = "/"
    query: Optional[str] = None

    def render(self) -> str:
        netloc = self.host
        if self.port is not None:
            netloc = f"{netloc}:{self.port}"
        # '?' is legal inside a decoded path but would split on reparse
        url = f"{self.scheme}://{netloc}{self.path.replace('?', '%3F')}"
        if self.query is not None:
            url += "?" + self.query
        return url

    def __str__(self) -> str:
        return self.render()

    @property
    def is_ip(self) -> bool:
        return is_ip_literal(self.host)


def is_ip_literal(host: str) -> bool:
    if host.startswith("[") and host.endswith("]"):
        return True
    try:
        ipaddress.IPv4Address(host)
    except ValueError:
        return False
    return True


def _unquote_once(data: bytes) -> bytes:
    out = bytearray()
    i, n = 0, len(data)
    while i < n:
        c = data[i]
        if c == 0x25 and i + 2 < n and data[i + 1] in _HEX and data[i + 2] in _HEX:
            out.append(int(data[i + 1:i + 3], 16))
            i += 3
        else:
            out.append(c)
            i += 1
    return bytes(out)


def full_unquote(data: bytes) -> bytes:
    """Percent-decode until nothing changes."""
    while True:
        decoded = _unquote_once(data)
        if decoded == data:
            return data
        data = decoded


def quote_minimal(data: bytes) -> str:
    """Escape controls, space, non-ASCII, '#' and '%'; leave the rest literal."""
    parts = []
    for c in data:
        if c <= 0x20 or c >= 0x7F or c in (0x23, 0x25):
            parts.append("%%%02X" % c)
        else:
            parts.append(chr(c))
    return "".join(parts)


def remove_dot_segments(path: bytes) -> bytes:
    segments = path.split(b"/")
    out: List[bytes] = []
    for i, seg in enumerate(segments[1:], start=1):
        last = i == len(segments) - 1
        if seg == b".":
            if last:
                out.append(b"")
        elif seg == b"..":
            if out:
                out.pop()
            if last:
                out.append(b"")
        elif seg == b"" and not last:
            # runs of slashes collapse to one
            continue
        else:
            out.append(seg)
    return b"/" + b"/".join(out)


def _canonical_ipv4(host: str) -> Optional[str]:
    if not _NUMERIC_HOST_RE.match(host):
        return None
    try:
        return socket.inet_ntoa(socket.inet_aton(host))
    except OSError:
        return None


def canonicalize_host(raw: Union[str, bytes]) -> str:
    """Canonical form of a bare hostname; raises MalformedUrl if it isn't one."""
    if isinstance(raw, str):
        try:
            raw = raw.encode("ascii")
        except UnicodeEncodeError:
            raise MalformedUrl("non-ASCII host; use punycode") from None
    data = full_unquote(raw)
    try:
        host = data.decode("ascii").lower()
    except UnicodeDecodeError:
        raise MalformedUrl("non-ASCII host; use punycode") from None

    if host.startswith("[") and host.endswith("]"):
        try:
            return "[%s]" % ipaddress.IPv6Address(host[1:-1]).compressed
        except ValueError:
            raise MalformedUrl(f"bad IPv6 literal {host!r}") from None

    host = ".".join(label for label in host.split(".") if label)
    if not host:
        raise MalformedUrl("empty host")
    ip = _canonical_ipv4(host)
    if ip is not None:
        return ip
    if not _HOST_RE.match(host) or len(host) > 253:
        raise MalformedUrl(f"invalid host {host!r}")
    return host


def parse_and_canonicalize(raw: Union[str, bytes]) -> CanonicalUrl:
    """Parse an absolute http(s) URL into its canonical form.

    Tabs/CR/LF are dropped and the fragment removed. Host and path are
    percent-decoded to a fixpoint and then re-escaped with the minimal set, so
    that equivalent spellings of a URL hash identically.
    """
    if isinstance(raw, str):
        data = raw.encode("utf-8", "surrogatepass")
    elif isinstance(raw, (bytes, bytearray)):
        data = bytes(raw)
    else:
        raise MalformedUrl(f"expected str or bytes, got {type(raw).__name__}")
    data = bytes(c for c in data if c not in _STRIP_CHARS).strip(b" \x00\x0b\x0c")
    if not data:
        raise MalformedUrl("empty URL")

    data = data.split(b"#", 1)[0]
    scheme, sep, rest = data.partition(b"://")
    if not sep:
        raise MalformedUrl("missing scheme")
    try:
        scheme_s = scheme.decode("ascii").lower()
    except UnicodeDecodeError:
        raise MalformedUrl("bad scheme") from None
    if scheme_s not in DEFAULT_PORTS:
        raise MalformedUrl(f"unsupported scheme {scheme_s!r}")

    end = len(rest)
    for sep_char in (b"/", b"?"):
        idx = rest.find(sep_char)
        if idx != -1:
            end = min(end, idx)
    authority, remainder = rest[:end], rest[end:]

    authority = authority.rpartition(b"@")[2]
    host_part, port = _split_port(authority)
    host = canonicalize_host(host_part)
    if port == DEFAULT_PORTS[scheme_s]:
        port = None

    path_part, qsep, query_part = remainder.partition(b"?")
    path = remove_dot_segments(full_unquote(path_part or b"/"))
    if not path.startswith(b"/"):
        path = b"/" + path
    query = quote_minimal(full_unquote(query_part)) if qsep else None

    return CanonicalUrl(scheme_s, host, port, quote_minimal(path), query)


def _split_port(authority: bytes):
    if authority.startswith(b"["):
        close = authority.find(b"]")
        if close == -1:
            raise MalformedUrl("unterminated IPv6 literal")
        host, tail = authority[:close + 1], authority[close + 1:]
        if tail and not tail.startswith(b":"):
            raise MalformedUrl("garbage after IPv6 literal")
        port_s = tail[1:]
    else:
        host, _, port_s = authority.partition(b":")
    if not port_s:
        return host, None
    if not port_s.isdigit():
        raise MalformedUrl(f"invalid port {port_s!r}")
    port = int(port_s)
    if not 0 < port < 65536:
        raise MalformedUrl(f"port out of range: {port}")
    return host, port


def host_suffixes(host: str) -> List[str]:
    """Exact host, then suffixes built from its last five labels (two labels minimum)."""
    if is_ip_literal(host):
        return [host]
    labels = host.split(".")
    out = [host]
    tail = labels[-MAX_HOST_SUFFIXES:]
    for i in range(len(tail) - 1):
        candidate = ".".join(tail[i:])
        if candidate not in out:
            out.append(candidate)
    return out


def path_prefixes(path: str, query: Optional[str] = None) -> List[str]:
    """Exact path(+query), then up to four directory prefixes counted from the root."""
    out = []
    if query is not None:
        out.append(f"{path}?{query}")
    out.append(path)
    dirs = ["/"]
    parts = path.split("/")[1:-1]
    for i in range(1, min(len(parts), MAX_ROOT_PREFIXES - 1) + 1):
        dirs.append("/" + "/".join(parts[:i]) + "/")
    for d in reversed(dirs):
        if d not in out:
            out.append(d)
    return out


def lookup_expressions(u: CanonicalUrl) -> List[str]:
    """Every "<host-suffix><path-prefix>" string to check for ``u``, most specific first."""
    paths = path_prefixes(u.path, u.query)
    return [h + p for h in host_suffixes(u.host) for p in paths]


def host_expressions(host: str) -> List[str]:
    """Host-only expansion, used where the path is unknown (CONNECT tunnels)."""
    return [h + "/" for h in host_suffixes(host)]
