"""Per-page request accounting shared by the proxy and the control API."""
from __future__ import annotations

import itertools
import threading
import time
import uuid
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Optional


class UnknownSession(KeyError):
    pass


@dataclass
class PageSession:
    id: str
    first_party_host: Optional[str] = None
    started: float = field(default_factory=time.time)
    request_count: int = 0
    blocked_count: int = 0
    matched_count: int = 0
    bytes_downloaded: int = 0
    blocked_by_type: Counter = field(default_factory=Counter)
    contacted_hosts: set = field(default_factory=set)
    finalized: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record_blocked(self, element: str) -> None:
        with self._lock:
            self.request_count += 1
            self.blocked_count += 1
            self.matched_count += 1
            self.blocked_by_type[element] += 1

    def record_forwarded(self, host: str, matched: bool = False) -> None:
        with self._lock:
            self.request_count += 1
            if matched:
                self.matched_count += 1
            self.contacted_hosts.add(host)

    def add_bytes(self, n: int) -> None:
        with self._lock:
            self.bytes_downloaded += n

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "id": self.id,
                "first_party_host": self.first_party_host,
                "started": self.started,
                "request_count": self.request_count,
                "blocked_count": self.blocked_count,
                "matched_count": self.matched_count,
                "bytes_downloaded": self.bytes_downloaded,
                "blocked_by_type": dict(self.blocked_by_type),
                "contacted_hosts": sorted(self.contacted_hosts),
                "finalized": self.finalized,
            }


class SessionRegistry:
    """Sessions keyed by client-supplied ``X-TP-Session`` ids.

    Clients that send no session header get implicit sessions: each navigation
    opens one, and later requests whose Referer host matches join it.
    """

    def __init__(self, on_finalize=None):
        self._sessions: Dict[str, PageSession] = {}
        self._implicit_by_host: Dict[str, str] = {}
        self._lock = threading.Lock()
        self._counter = itertools.count(1)
        self.on_finalize = on_finalize

    def get_or_create(self, sid: str) -> PageSession:
        with self._lock:
            s = self._sessions.get(sid)
            if s is None:
                s = self._sessions[sid] = PageSession(sid)
            return s

    def get(self, sid: str) -> PageSession:
        try:
            return self._sessions[sid]
        except KeyError:
            raise UnknownSession(sid) from None

    def start_implicit(self, host: str) -> PageSession:
        sid = f"auto-{next(self._counter)}-{uuid.uuid4().hex[:8]}"
        with self._lock:
            previous = self._implicit_by_host.get(host)
            s = self._sessions[sid] = PageSession(sid, first_party_host=host)
            self._implicit_by_host[host] = sid
        if previous is not None:
            self.finalize(previous)
        return s

    def implicit_for(self, host: str) -> Optional[PageSession]:
        sid = self._implicit_by_host.get(host)
        return self._sessions.get(sid) if sid else None

    def report(self, sid: str) -> dict:
        return self.get(sid).snapshot()

    def finalize(self, sid: str) -> dict:
        s = self.get(sid)
        with s._lock:
            first = not s.finalized
            s.finalized = True
        if first and self.on_finalize is not None:
            self.on_finalize(s)
        return s.snapshot()

    def __len__(self):
        return len(self._sessions)
