"""Deterministic page corpus served from local listeners, one per hostname.

Each hostname in the corpus gets its own TCP listener that counts accepted
connections, so tests can assert that blocked trackers were never contacted.
The proxy reaches these listeners through its ``resolve`` map instead of DNS.

Corpus file format::

    {
      "blocklist": ["tracker0.example", ...],          # optional
      "sites": [
        {"host": "news0.example", "path": "/", "latency_ms": 40, "size": 4000,
         "set_cookies": ["sid=1"],
         "resources": [
            {"type": "script", "host": "tracker0.example", "path": "/t.js",
             "size": 9000, "set_cookies": ["uid=7"], "latency_ms": 180}
         ]}
      ]
    }
"""
from __future__ import annotations

import heapq
import json
import threading
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Dict, Iterable, List, Optional, Tuple

POLL_INTERVAL = 0.05

CONTENT_TYPES = {
    "html": "text/html; charset=utf-8",
    "script": "application/javascript",
    "img": "image/gif",
    "iframe": "text/html; charset=utf-8",
    "object": "application/octet-stream",
    "stylesheet": "text/css",
    "other": "application/octet-stream",
}


@dataclass(frozen=True)
class Resource:
    type: str
    host: str
    path: str
    size: int = 0
    set_cookies: Tuple[str, ...] = ()
    latency_ms: float = 0.0

    @property
    def url(self) -> str:
        return f"http://{self.host}{self.path}"

    @classmethod
    def from_json(cls, obj: dict) -> "Resource":
        return cls(obj.get("type", "other"), obj["host"].lower(), obj.get("path", "/"),
                   int(obj.get("size", 0)), tuple(obj.get("set_cookies", ())),
                   float(obj.get("latency_ms", 0)))


@dataclass(frozen=True)
class Site:
    host: str
    path: str = "/"
    latency_ms: float = 0.0
    size: int = 0
    set_cookies: Tuple[str, ...] = ()
    resources: Tuple[Resource, ...] = ()

    @property
    def url(self) -> str:
        return f"http://{self.host}{self.path}"

    def page(self) -> Resource:
        return Resource("html", self.host, self.path, self.size, self.set_cookies, self.latency_ms)

    @classmethod
    def from_json(cls, obj: dict) -> "Site":
        return cls(obj["host"].lower(), obj.get("path", "/"), float(obj.get("latency_ms", 0)),
                   int(obj.get("size", 0)), tuple(obj.get("set_cookies", ())),
                   tuple(Resource.from_json(r) for r in obj.get("resources", ())))

    def to_json(self) -> dict:
        return {
            "host": self.host, "path": self.path, "latency_ms": self.latency_ms,
            "size": self.size, "set_cookies": list(self.set_cookies),
            "resources": [
                {"type": r.type, "host": r.host, "path": r.path, "size": r.size,
                 "set_cookies": list(r.set_cookies), "latency_ms": r.latency_ms}
                for r in self.resources
            ],
        }


@dataclass
class Corpus:
    sites: List[Site]
    blocklist: List[str] = field(default_factory=list)

    @classmethod
    def from_json(cls, obj: dict) -> "Corpus":
        return cls([Site.from_json(s) for s in obj.get("sites", ())], list(obj.get("blocklist", ())))

    @classmethod
    def load(cls, path) -> "Corpus":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {"blocklist": list(self.blocklist), "sites": [s.to_json() for s in self.sites]}

    def hosts(self) -> List[str]:
        seen = []
        for s in self.sites:
            for h in [s.host] + [r.host for r in s.resources]:
                if h not in seen:
                    seen.append(h)
        return seen

    def routes(self) -> Dict[Tuple[str, str], Tuple[Resource, Optional[Site]]]:
        out = {}
        for s in self.sites:
            out[(s.host, s.path)] = (s.page(), s)
            for r in s.resources:
                out.setdefault((r.host, r.path), (r, None))
        return out


# -- rendering ----------------------------------------------------------------

_TAGS = {
    "script": '<script src="{url}"></script>',
    "img": '<img src="{url}">',
    "iframe": '<iframe src="{url}"></iframe>',
    "object": '<object data="{url}"></object>',
    "stylesheet": '<link rel="stylesheet" href="{url}">',
}


def render_page(site: Site) -> bytes:
    tags = "\n".join(_TAGS.get(r.type, _TAGS["img"]).format(url=r.url) for r in site.resources)
    html = f"<!doctype html>\n<html><head><title>{site.host}</title></head><body>\n{tags}\n"
    tail = "</body></html>\n"
    pad = site.size - len(html) - len(tail) - len("<!--  -->")
    if pad > 0:
        html += "<!-- " + "x" * pad + " -->"
    return (html + tail).encode("utf-8")


def render_body(resource: Resource, site: Optional[Site] = None) -> bytes:
    if site is not None:
        return render_page(site)
    return b"x" * resource.size


def render_head(resource: Resource, body_len: int, status: str = "200 OK") -> bytes:
    lines = [f"HTTP/1.1 {status}",
             f"Content-Type: {CONTENT_TYPES.get(resource.type, CONTENT_TYPES['other'])}",
             f"Content-Length: {body_len}",
             "Cache-Control: no-store"]
    lines += [f"Set-Cookie: {c}" for c in resource.set_cookies]
    lines += ["Connection: close", "", ""]
    return "\r\n".join(lines).encode("iso-8859-1")


def response_size(resource: Resource, site: Optional[Site] = None) -> int:
    body = render_body(resource, site)
    return len(render_head(resource, len(body))) + len(body)


# -- ground truth -------------------------------------------------------------

def suffix_listed(host: str, domains: Iterable[str]) -> bool:
    """Brute-force domain-list membership: exact host or any dot-boundary suffix."""
    return any(host == d or host.endswith("." + d) for d in domains)


def expected_blocked(site: Site, domains: Iterable[str]) -> List[Resource]:
    domains = list(domains)
    return [r for r in site.resources if suffix_listed(r.host, domains)]


def expected_bytes(site: Site, domains: Iterable[str] = ()) -> int:
    domains = list(domains)
    total = response_size(site.page(), site)
    return total + sum(response_size(r) for r in site.resources if not suffix_listed(r.host, domains))


def schedule_ms(latencies_by_host: Dict[str, List[float]], per_host: int = 6) -> float:
    """Finish time of FIFO per-host slot scheduling, each host with ``per_host`` slots."""
    finish = 0.0
    for lats in latencies_by_host.values():
        slots = [0.0] * min(per_host, len(lats))
        heapq.heapify(slots)
        for lat in lats:
            start = heapq.heappop(slots)
            heapq.heappush(slots, start + lat)
        finish = max(finish, max(slots, default=0.0))
    return finish


def expected_load_ms(site: Site, domains: Iterable[str] = (), per_host: int = 6) -> float:
    domains = list(domains)
    by_host = defaultdict(list)
    for r in site.resources:
        if not suffix_listed(r.host, domains):
            by_host[r.host].append(r.latency_ms)
    return site.latency_ms + schedule_ms(by_host, per_host)


def expected_hits(corpus: Corpus, domains: Iterable[str] = (), visits: int = 1) -> Counter:
    """Connections each host should see when every site is fetched ``visits`` times."""
    domains = list(domains)
    hits = Counter()
    for s in corpus.sites:
        hits[s.host] += visits
        for r in s.resources:
            if not suffix_listed(r.host, domains):
                hits[r.host] += visits
    return hits


def expected_cookies(corpus: Corpus, domains: Iterable[str] = ()) -> set:
    from .cookies import cookie_keys

    domains = list(domains)
    keys = set()
    for s in corpus.sites:
        keys |= cookie_keys(s.set_cookies, s.url)
        for r in s.resources:
            if not suffix_listed(r.host, domains):
                keys |= cookie_keys(r.set_cookies, r.url)
    return keys


# -- servers ------------------------------------------------------------------

class _FixtureHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        pass

    def do_GET(self):
        srv = self.server
        path = self.path
        if path.startswith("http://"):
            path = "/" + path.split("/", 3)[3] if path.count("/") >= 3 else "/"
        srv.requests.append(path)
        entry = srv.routes.get((srv.host, path.split("#")[0]))
        if entry is None:
            body = b"not found"
            res = Resource("other", srv.host, path)
            self.wfile.write(render_head(res, len(body), "404 Not Found") + body)
            return
        resource, site = entry
        if resource.latency_ms:
            time.sleep(resource.latency_ms / 1000.0)
        body = render_body(resource, site)
        self.wfile.write(render_head(resource, len(body)) + body)
        self.close_connection = True

    def do_HEAD(self):
        self.do_GET()


class HostServer(ThreadingHTTPServer):
    """Serves one hostname's routes and counts every accepted connection."""

    daemon_threads = True
    request_queue_size = 128

    def __init__(self, host: str, routes, address=("127.0.0.1", 0)):
        super().__init__(address, _FixtureHandler)
        self.host = host
        self.routes = routes
        self.connections = 0
        self.requests: List[str] = []
        self._count_lock = threading.Lock()

    def process_request(self, request, client_address):
        with self._count_lock:
            self.connections += 1
        super().process_request(request, client_address)


class FixtureServers:
    """All listeners for a corpus, plus the resolve map the proxy needs to reach them."""

    def __init__(self, corpus: Corpus, bind: str = "127.0.0.1", extra_hosts: Iterable[str] = ()):
        self.corpus = corpus
        routes = corpus.routes()
        self.servers: Dict[str, HostServer] = {}
        for host in list(corpus.hosts()) + [h for h in extra_hosts if h not in corpus.hosts()]:
            self.servers[host] = HostServer(host, routes, (bind, 0))
        self._threads: List[threading.Thread] = []

    @property
    def resolve(self) -> Dict[str, Tuple[str, int]]:
        return {h: s.server_address[:2] for h, s in self.servers.items()}

    def start(self) -> "FixtureServers":
        for host, srv in self.servers.items():
            t = threading.Thread(target=srv.serve_forever, args=(POLL_INTERVAL,),
                                 name=f"fixture-{host}", daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self) -> None:
        # shutdown() blocks for up to one poll interval, so stop all hosts at once
        stoppers = [threading.Thread(target=srv.shutdown) for srv in self.servers.values()]
        for t in stoppers:
            t.start()
        for t in stoppers:
            t.join()
        for srv in self.servers.values():
            srv.server_close()

    def connections(self) -> Counter:
        return Counter({h: s.connections for h, s in self.servers.items() if s.connections})

    def reset_counts(self) -> None:
        for srv in self.servers.values():
            with srv._count_lock:
                srv.connections = 0
                srv.requests.clear()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


# -- stock corpora -----------------------------------------------------------

def _res(kind, host, path, size, latency, cookies=()):
    return Resource(kind, host, path, size, tuple(cookies), latency)


def cookie_corpus() -> Corpus:
    """Five first parties with one cookie each; four trackers setting two cookies each."""
    trackers = [f"tracker{i}.example" for i in range(4)]
    sites = []
    for i in range(5):
        host = f"news{i}.example"
        resources = [_res("img", host, "/logo.gif", 500, 0)]
        # trackers are spread over the sites; every tracker appears at least once
        for j, t in enumerate(trackers):
            if (i + j) % 2 == 0 or i == 4:
                resources.append(_res("script", t, "/t.js", 800, 0, [f"{t.split('.')[0]}_id=1", f"{t.split('.')[0]}_seen=1"]))
        sites.append(Site(host, "/", 0, 1000, (f"session{i}=abc",), tuple(resources)))
    return Corpus(sites, trackers)


def element_mix_corpus() -> Corpus:
    """One page whose tracking elements mirror a script-heavy mix (19/3/1/1)."""
    mix = [("script", 19), ("img", 3), ("iframe", 1), ("object", 1)]
    resources = []
    n = 0
    for kind, count in mix:
        for _ in range(count):
            t = f"tracker{n % 5}.example"
            resources.append(_res(kind, t, f"/{kind}/{n}", 300, 0))
            n += 1
    resources += [_res("stylesheet", "static.news.example", "/site.css", 400, 0),
                  _res("img", "static.news.example", "/hero.gif", 2000, 0),
                  _res("script", "news.example", "/app.js", 1500, 0)]
    return Corpus([Site("news.example", "/", 0, 2000, (), tuple(resources))],
                  [f"tracker{i}.example" for i in range(5)])


def performance_corpus(scale: float = 1.0) -> Corpus:
    """Ten sites whose latency and size budgets put the median reductions near 44% / 40%.

    Each site's first-party content finishes at ``fp_ms`` after the page while
    its slowest tracker finishes later; the ratio sets the load-time
    reduction. Tracker byte totals are sized relative to first-party bytes to
    set the data reduction. Tracker counts echo a long-tailed per-site
    distribution. ``scale`` multiplies every latency; at 3 the proxy's own
    per-request cost stays well under the designed budgets.
    """
    # (tracker count, page latency, first-party max latency, tracker max latency,
    #  first-party bytes, tracker bytes)
    plan = [
        (0, 60, 120, 0, 30000, 0),
        (2, 60, 100, 200, 30000, 12000),
        (5, 60, 100, 230, 30000, 18000),
        (8, 60, 110, 250, 30000, 20000),
        (11, 60, 100, 225, 28000, 19000),
        (11, 60, 100, 222, 28000, 20000),
        (14, 60, 90, 280, 26000, 20000),
        (18, 60, 90, 300, 24000, 22000),
        (24, 60, 80, 320, 22000, 26000),
        (30, 60, 80, 340, 20000, 30000),
    ]
    trackers = [f"adnet{i}.example" for i in range(12)]
    sites = []
    for i, (n_trackers, page_ms, fp_ms, tr_ms, fp_bytes, tr_bytes) in enumerate(plan):
        host = f"site{i}.example"
        fp_hosts = [host, f"static.site{i}.example"]
        resources = []
        n_fp = 6
        for k in range(n_fp):
            lat = fp_ms * (0.5 + 0.5 * (k + 1) / n_fp)
            resources.append(_res("script" if k % 2 else "img", fp_hosts[k % 2], f"/fp{k}",
                                  fp_bytes // n_fp, lat * scale))
        for k in range(n_trackers):
            lat = tr_ms * (0.4 + 0.6 * (k + 1) / n_trackers)
            kind = "script" if k % 5 else "img"
            resources.append(_res(kind, trackers[(i + k) % len(trackers)], f"/s{i}/t{k}",
                                  tr_bytes // n_trackers, lat * scale))
        sites.append(Site(host, "/", page_ms * scale, 2000, (), tuple(resources)))
    return Corpus(sites, trackers)
