"""Blocklist ingestion (Disconnect JSON, plain text) and the periodic update client."""
from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Collection, FrozenSet, Iterable, Optional, Tuple

from .canonical import MalformedUrl, canonicalize_host
from .store import (
    InvalidExpression,
    InvalidUpdate,
    ListUpdate,
    PrefixStore,
    StoreHolder,
    VersionMismatch,
    apply_update,
    serialize,
)

log = logging.getLogger(__name__)

DEFAULT_EXCLUDED_CATEGORIES = ("Content",)
DEFAULT_INTERVAL = 45 * 60.0
MAX_BACKOFF_FACTOR = 8


class SchemaError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class InvalidDomain(ValueError):
    def __init__(self, line: int, text: str, reason: str = ""):
        super().__init__(f"line {line}: invalid domain {text!r}" + (f" ({reason})" if reason else ""))
        self.line = line
        self.text = text


@dataclass(frozen=True)
class DomainList:
    name: str
    source_format: str
    domains: FrozenSet[str] = frozenset()

    def __len__(self):
        return len(self.domains)


def parse_disconnect(
    text,
    include: Optional[Collection[str]] = None,
    exclude: Collection[str] = DEFAULT_EXCLUDED_CATEGORIES,
    name: str = "disconnect",
) -> DomainList:
    """Union of domains across the selected categories of a Disconnect services file.

    ``include`` restricts to the named categories; ``exclude`` is applied after it.
    String-valued entity keys (flags such as ``"dnt"``) are skipped.
    """
    try:
        doc = json.loads(text) if isinstance(text, (str, bytes)) else text
    except ValueError as exc:
        raise SchemaError("$", f"not JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("$", "expected an object")
    cats = doc.get("categories")
    if not isinstance(cats, dict):
        raise SchemaError("$.categories", "missing or not an object")

    domains = set()
    for cat, entries in cats.items():
        if include is not None and cat not in include:
            continue
        if cat in exclude:
            continue
        path = f"$.categories.{cat}"
        if not isinstance(entries, list):
            raise SchemaError(path, "expected a list of entities")
        for i, entry in enumerate(entries):
            epath = f"{path}[{i}]"
            if not isinstance(entry, dict):
                raise SchemaError(epath, "expected an object")
            for entity, sites in entry.items():
                spath = f"{epath}.{entity}"
                if not isinstance(sites, dict):
                    raise SchemaError(spath, "expected an object of homepage -> domains")
                for homepage, hosts in sites.items():
                    hpath = f"{spath}.{homepage}"
                    if isinstance(hosts, str):
                        continue
                    if not isinstance(hosts, list):
                        raise SchemaError(hpath, "expected a list of domains")
                    for j, host in enumerate(hosts):
                        if not isinstance(host, str):
                            raise SchemaError(f"{hpath}[{j}]", "domain must be a string")
                        try:
                            domains.add(canonicalize_host(host))
                        except MalformedUrl as exc:
                            raise SchemaError(f"{hpath}[{j}]", str(exc)) from None
    return DomainList(name, "disconnect_json", frozenset(domains))


def parse_plain(text, name: str = "plain") -> DomainList:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    domains = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        entry = line.strip()
        if not entry or entry.startswith("#"):
            continue
        try:
            domains.add(canonicalize_host(entry))
        except MalformedUrl as exc:
            raise InvalidDomain(lineno, entry, str(exc)) from None
    return DomainList(name, "plain_text", frozenset(domains))


def compile(domains: DomainList, version: int = 1) -> ListUpdate:
    """Full snapshot with one domain-scoped ``"<domain>/"`` expression per domain."""
    return ListUpdate(0, version, tuple(sorted(d + "/" for d in domains.domains)), ())


def write_snapshot(store: PrefixStore, path) -> None:
    data = serialize(store)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".snapshot-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class UpdateFailed(Exception):
    pass


@dataclass
class UpdaterState:
    endpoint: str
    current_version: int = 0
    interval: float = DEFAULT_INTERVAL
    last_success: Optional[float] = None
    consecutive_failures: int = 0
    last_error: Optional[str] = None

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("interval must be positive")

    def next_delay(self) -> float:
        if not self.consecutive_failures:
            return self.interval
        factor = min(2 ** (self.consecutive_failures - 1), MAX_BACKOFF_FACTOR)
        return self.interval * factor


def http_fetch(url: str, timeout: float = 30.0) -> Optional[dict]:
    """GET ``url``; None on 304, decoded JSON object on 200."""
    req = urllib.request.Request(url, headers={"Accept": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            if resp.status == 304:
                return None
            return json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        if exc.code == 304:
            return None
        raise UpdateFailed(f"HTTP {exc.code} from {url}") from None
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise UpdateFailed(f"{url}: {exc}") from None


def _with_version(endpoint: str, version: int) -> str:
    parts = urllib.parse.urlsplit(endpoint)
    query = urllib.parse.parse_qsl(parts.query, keep_blank_values=True)
    query = [(k, v) for k, v in query if k != "version"] + [("version", str(version))]
    return urllib.parse.urlunsplit(parts._replace(query=urllib.parse.urlencode(query)))


class Updater:
    """Polls the list endpoint and swaps fresh stores into ``holder``.

    A failed cycle leaves the previous store in place and stretches the delay
    before the next attempt (doubling from ``interval`` up to 8x).
    """

    def __init__(
        self,
        holder: StoreHolder,
        endpoint: str,
        interval: float = DEFAULT_INTERVAL,
        snapshot_path=None,
        fetch: Callable[[str], Optional[dict]] = http_fetch,
        clock: Callable[[], float] = time.time,
    ):
        self.holder = holder
        self.state = UpdaterState(endpoint, holder.current.version, interval)
        self.snapshot_path = snapshot_path
        self.fetch = fetch
        self.clock = clock
        self._wake = threading.Event()
        self._stop = threading.Event()
        self._cycle_lock = threading.Lock()
        self._thread: Optional[threading.Thread] = None

    def _request(self, version: int) -> Optional[ListUpdate]:
        payload = self.fetch(_with_version(self.state.endpoint, version))
        if payload is None:
            return None
        try:
            return ListUpdate.from_json(payload)
        except InvalidUpdate as exc:
            raise UpdateFailed(f"bad update payload: {exc}") from None

    def cycle(self) -> bool:
        """Run one update round; returns True if the live store changed."""
        with self._cycle_lock:
            store = self.holder.current
            try:
                upd = self._request(store.version)
                if upd is not None:
                    try:
                        store = apply_update(store, upd)
                    except VersionMismatch as exc:
                        log.info("version mismatch (%s); requesting full snapshot", exc)
                        upd = self._request(0)
                        if upd is None:
                            raise UpdateFailed("server answered 304 to a snapshot request") from None
                        store = apply_update(store, upd)
            except (UpdateFailed, VersionMismatch, InvalidExpression) as exc:
                self.state.consecutive_failures += 1
                self.state.last_error = str(exc)
                log.warning("list update failed (%d in a row): %s",
                            self.state.consecutive_failures, exc)
                return False

            changed = store is not self.holder.current
            if changed:
                self.holder.swap(store)
                if self.snapshot_path:
                    try:
                        write_snapshot(store, self.snapshot_path)
                    except OSError as exc:
                        log.warning("could not persist snapshot: %s", exc)
            self.state.current_version = store.version
            self.state.last_success = self.clock()
            self.state.consecutive_failures = 0
            self.state.last_error = None
            return changed

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def trigger(self) -> None:
        self._wake.set()

    def run(self) -> None:
        while not self._stop.is_set():
            self.cycle()
            self._wake.wait(self.state.next_delay())
            self._wake.clear()

    def start(self) -> "Updater":
        self._thread = threading.Thread(target=self.run, name="list-updater", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._wake.set()
        if self._thread is not None:
            self._thread.join(timeout=5)


def run_updater(state: UpdaterState, holder: StoreHolder, **kwargs) -> None:
    """Blocking update loop for ``holder``; never returns unless stopped."""
    updater = Updater(holder, state.endpoint, state.interval, **kwargs)
    updater.state = state
    updater.run()


class ListHistory:
    """Server-side view of a list's versions, answering client update requests.

    Clients at a known older version get a diff; anyone else gets a snapshot.
    """

    def __init__(self, expressions: Iterable[str] = ()):
        self.versions = {1: frozenset(expressions)}
        self.current = 1

    def publish(self, expressions: Iterable[str]) -> int:
        self.current += 1
        self.versions[self.current] = frozenset(expressions)
        return self.current

    def forget(self, version: int) -> None:
        self.versions.pop(version, None)

    def respond(self, client_version: int) -> Optional[ListUpdate]:
        if client_version == self.current:
            return None
        latest = self.versions[self.current]
        base = self.versions.get(client_version) if client_version else None
        if base is None or client_version > self.current:
            return ListUpdate(0, self.current, tuple(sorted(latest)), ())
        return ListUpdate(
            client_version,
            self.current,
            tuple(sorted(latest - base)),
            tuple(sorted(base - latest)),
        )


def expressions_for(domains: Iterable[str]) -> Tuple[str, ...]:
    return tuple(sorted(d + "/" for d in domains))
