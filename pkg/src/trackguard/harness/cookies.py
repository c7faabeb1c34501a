"""Set-Cookie parsing down to the (name, domain, path) identity a cookie store keys on."""
from __future__ import annotations

import time
from email.utils import parsedate_to_datetime
from typing import Iterable, NamedTuple, Optional
from urllib.parse import urlsplit


class CookieKey(NamedTuple):
    name: str
    domain: str
    path: str


def default_path(request_path: str) -> str:
    if not request_path.startswith("/") or request_path.count("/") == 1:
        return "/"
    return request_path[: request_path.rindex("/")]


def parse_set_cookie(value: str, request_url: str, now: Optional[float] = None) -> Optional[CookieKey]:
    """Identity of the cookie set by one Set-Cookie header, or None if it is expired or unparseable."""
    pairs = [p.strip() for p in value.split(";")]
    name, sep, _ = pairs[0].partition("=")
    name = name.strip()
    if not sep or not name:
        return None

    parts = urlsplit(request_url)
    domain = (parts.hostname or "").lower()
    path = default_path(parts.path or "/")
    max_age = expires = None
    for attr in pairs[1:]:
        key, _, val = attr.partition("=")
        key, val = key.strip().lower(), val.strip()
        if key == "domain" and val:
            domain = val.lstrip(".").lower()
        elif key == "path" and val.startswith("/"):
            path = val
        elif key == "max-age":
            try:
                max_age = int(val)
            except ValueError:
                pass
        elif key == "expires":
            try:
                expires = parsedate_to_datetime(val).timestamp()
            except (TypeError, ValueError, IndexError):
                pass

    now = time.time() if now is None else now
    if max_age is not None:
        if max_age <= 0:
            return None
    elif expires is not None and expires <= now:
        return None
    return CookieKey(name, domain, path)


def cookie_keys(headers: Iterable[str], request_url: str) -> set:
    keys = set()
    for value in headers:
        key = parse_set_cookie(value, request_url)
        if key is not None:
            keys.add(key)
    return keys
