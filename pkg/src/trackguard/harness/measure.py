"""Fetch pages through the proxy with and without protection.

The fetcher is not a browser: it loads the page, pulls out the tag-level
subresources and fetches each of them once. Script-injected loads never
happen, so tracker counts are a lower bound. "Load time" ends when the last
subresource has completed or been refused.
"""
from __future__ import annotations

import http.client
import json
import logging
import threading
import time
import uuid
from collections import OrderedDict, deque
from typing import Iterable, List, Optional, Tuple
from urllib.parse import quote, urlsplit

from .cookies import cookie_keys
from .html import extract_subresources
from .report import FetchReport, SiteComparison, compare_reports

log = logging.getLogger(__name__)

Address = Tuple[str, int]

PER_HOST_PARALLELISM = 6


class SiteUnreachable(Exception):
    pass


class ControlClient:
    """Thin client for the proxy's control endpoints."""

    def __init__(self, address: Address, timeout: float = 10.0):
        self.address = address
        self.timeout = timeout

    def call(self, method: str, path: str):
        conn = http.client.HTTPConnection(*self.address, timeout=self.timeout)
        try:
            conn.request(method, path, headers={"Content-Length": "0"})
            resp = conn.getresponse()
            body = resp.read()
            if resp.status >= 400:
                raise RuntimeError(f"{method} {path}: HTTP {resp.status} {body[:200]!r}")
            return json.loads(body) if body else None
        finally:
            conn.close()

    def session(self, sid: str) -> dict:
        return self.call("GET", f"/sessions/{quote(sid, safe='')}")

    def finalize(self, sid: str) -> dict:
        return self.call("POST", f"/sessions/{quote(sid, safe='')}/finalize")

    def set_override(self, site: str) -> None:
        self.call("PUT", f"/override/{quote(site, safe='')}")

    def clear_override(self, site: str) -> None:
        self.call("DELETE", f"/override/{quote(site, safe='')}")


class _Result:
    __slots__ = ("url", "status", "cookies", "body", "error", "blocked")

    def __init__(self, url):
        self.url = url
        self.status = None
        self.cookies = set()
        self.body = b""
        self.error = None
        self.blocked = False


def _get(proxy: Address, url: str, headers: dict, timeout: float) -> _Result:
    res = _Result(url)
    conn = http.client.HTTPConnection(*proxy, timeout=timeout)
    try:
        conn.request("GET", url, headers=headers)
        resp = conn.getresponse()
        res.body = resp.read()
        res.status = resp.status
        res.blocked = resp.getheader("X-Tracking-Protection") == "blocked"
        if not res.blocked:
            res.cookies = cookie_keys(resp.headers.get_all("Set-Cookie") or (), url)
    except (OSError, http.client.HTTPException) as exc:
        res.error = str(exc) or type(exc).__name__
    finally:
        conn.close()
    return res


def _host_of(url: str) -> str:
    return (urlsplit(url).hostname or "").lower()


def fetch_all(proxy: Address, items: Iterable[Tuple[str, str]], base_headers: dict,
              per_host: int = PER_HOST_PARALLELISM, timeout: float = 30.0) -> List[_Result]:
    """Fetch ``(element, url)`` pairs, at most ``per_host`` in flight per host, FIFO per host."""
    queues: "OrderedDict[str, deque]" = OrderedDict()
    items = list(items)
    results: List[Optional[_Result]] = [None] * len(items)
    for i, (kind, url) in enumerate(items):
        queues.setdefault(_host_of(url), deque()).append((i, kind, url))

    def worker(q: deque):
        while True:
            try:
                i, kind, url = q.popleft()
            except IndexError:
                return
            headers = dict(base_headers, **{"X-TP-Kind": "subresource", "X-TP-Element": kind})
            results[i] = _get(proxy, url, headers, timeout)

    threads = []
    for q in queues.values():
        for _ in range(min(per_host, len(q))):
            t = threading.Thread(target=worker, args=(q,), daemon=True)
            t.start()
            threads.append(t)
    for t in threads:
        t.join()
    return [r for r in results if r is not None]


def fetch_page(site: str, protected: bool, proxy: Address, control: Address,
               per_host: int = PER_HOST_PARALLELISM, timeout: float = 30.0) -> FetchReport:
    """One visit to ``site`` through the proxy.

    Unprotected visits disable protection for the site through the override
    endpoint for the duration of the visit.
    """
    ctl = ControlClient(control, timeout)
    site_host = _host_of(site)
    if not protected:
        ctl.set_override(site_host)
    try:
        sid = uuid.uuid4().hex
        base = {
            "X-TP-Session": sid,
            "Cache-Control": "no-cache",
            "Pragma": "no-cache",
            "Referer": site,
        }
        t0 = time.perf_counter()
        nav = {k: v for k, v in base.items() if k != "Referer"}
        top = _get(proxy, site, dict(nav, **{"X-TP-Kind": "navigation"}), timeout)
        if top.error or top.status is None or top.status >= 400:
            try:
                ctl.finalize(sid)
            except RuntimeError:
                pass
            raise SiteUnreachable(f"{site}: {top.error or top.status}")
        subresources = [(k, u) for k, u in extract_subresources(
            top.body.decode("utf-8", "replace"), site) if u.startswith("http://")]
        results = fetch_all(proxy, subresources, base, per_host, timeout)
        load_ms = (time.perf_counter() - t0) * 1000.0
        report = ctl.finalize(sid)
    finally:
        if not protected:
            ctl.clear_override(site_host)

    cookies = set(top.cookies)
    failures = []
    for r in results:
        cookies |= r.cookies
        if r.error:
            failures.append((r.url, r.error))
    return FetchReport(
        site=site,
        protected=protected,
        load_time=load_ms,
        bytes=report["bytes_downloaded"],
        requests=report["request_count"],
        blocked=report["blocked_count"],
        blocked_by_type=report["blocked_by_type"],
        cookies=frozenset(cookies),
        contacted_hosts=frozenset(report["contacted_hosts"]),
        failures=failures,
    )


def compare(site: str, reps: int, proxy: Address, control: Address, **kwargs) -> SiteComparison:
    """``reps`` visits per mode, interleaved protected/unprotected, reduced to medians."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    runs = {True: [], False: []}
    errors = []
    for _ in range(reps):
        for protected in (True, False):
            try:
                runs[protected].append(fetch_page(site, protected, proxy, control, **kwargs))
            except SiteUnreachable as exc:
                errors.append(exc)
    if not runs[True] or not runs[False]:
        raise SiteUnreachable(f"{site}: every visit failed ({errors[-1] if errors else ''})")
    return compare_reports(site, runs[True], runs[False])
