"""Allow/block decisions, per-site overrides and page-load telemetry."""
from __future__ import annotations

import enum
import json
import os
import threading
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Optional

from .canonical import CanonicalUrl
from .psl import PublicSuffixList, bundled
from .store import PrefixStore, lookup


class Kind(str, enum.Enum):
    NAVIGATION = "navigation"
    SUBRESOURCE = "subresource"


class Element(str, enum.Enum):
    SCRIPT = "script"
    IMG = "img"
    IFRAME = "iframe"
    OBJECT = "object"
    STYLESHEET = "stylesheet"
    OTHER = "other"

    @classmethod
    def parse(cls, value: Optional[str]) -> Optional["Element"]:
        if not value:
            return None
        try:
            return cls(value.strip().lower())
        except ValueError:
            return cls.OTHER


class Verdict(str, enum.Enum):
    ALLOW = "allow"
    BLOCK = "block"


class Reason(str, enum.Enum):
    NO_MATCH = "no_match"
    NAVIGATION_EXEMPT = "navigation_exempt"
    SITE_OVERRIDE = "site_override"
    FIRST_PARTY_EXEMPT = "first_party_exempt"
    BLOCKED = "blocked"


@dataclass(frozen=True)
class RequestMeta:
    url: CanonicalUrl
    kind: Kind = Kind.SUBRESOURCE
    first_party_host: Optional[str] = None
    element_hint: Optional[Element] = None

    def __post_init__(self):
        if self.kind == Kind.NAVIGATION and self.first_party_host is not None:
            raise ValueError("navigations have no first party")


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    reason: Reason
    matched_expression: Optional[str] = None

    @property
    def blocked(self) -> bool:
        return self.verdict == Verdict.BLOCK


@dataclass(frozen=True)
class PolicyConfig:
    third_party_only: bool = False


def registrable_domain(host: str, psl: Optional[PublicSuffixList] = None) -> str:
    return (psl or bundled()).registrable_domain(host)


@dataclass(frozen=True)
class OverrideSet:
    disabled_sites: FrozenSet[str] = frozenset()

    def __contains__(self, site: str) -> bool:
        return site in self.disabled_sites

    def covers(self, host: Optional[str], psl: Optional[PublicSuffixList] = None) -> bool:
        return host is not None and registrable_domain(host, psl) in self.disabled_sites


def set_override(overrides: OverrideSet, site: str, psl=None) -> OverrideSet:
    return OverrideSet(overrides.disabled_sites | {registrable_domain(site, psl)})


def clear_override(overrides: OverrideSet, site: str, psl=None) -> OverrideSet:
    return OverrideSet(overrides.disabled_sites - {registrable_domain(site, psl)})


_NAV_EXEMPT = Decision(Verdict.ALLOW, Reason.NAVIGATION_EXEMPT)
_OVERRIDDEN = Decision(Verdict.ALLOW, Reason.SITE_OVERRIDE)
_FIRST_PARTY = Decision(Verdict.ALLOW, Reason.FIRST_PARTY_EXEMPT)
_NO_MATCH = Decision(Verdict.ALLOW, Reason.NO_MATCH)


def classify(
    req: RequestMeta,
    store: PrefixStore,
    overrides: OverrideSet = OverrideSet(),
    cfg: PolicyConfig = PolicyConfig(),
    psl: Optional[PublicSuffixList] = None,
) -> Decision:
    """Rules apply in order: navigation, site override, first-party exemption, list match."""
    if req.kind == Kind.NAVIGATION:
        return _NAV_EXEMPT
    fp = req.first_party_host
    if fp is not None and overrides.covers(fp, psl):
        return _OVERRIDDEN
    if (cfg.third_party_only and fp is not None
            and registrable_domain(req.url.host, psl) == registrable_domain(fp, psl)):
        return _FIRST_PARTY
    match = lookup(store, req.url)
    if match.matched:
        return Decision(Verdict.BLOCK, Reason.BLOCKED, match.expression)
    return _NO_MATCH


class OverrideRegistry:
    """Live, thread-safe override set, optionally persisted as {"disabled_sites": [...]}."""

    def __init__(self, path=None, psl: Optional[PublicSuffixList] = None):
        self.path = path
        self.psl = psl
        self._lock = threading.Lock()
        self._set = OverrideSet()
        if path and os.path.exists(path):
            self._set = self._load(path)

    def _load(self, path) -> OverrideSet:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        sites = doc.get("disabled_sites", []) if isinstance(doc, dict) else []
        return OverrideSet(frozenset(registrable_domain(s, self.psl) for s in sites))

    def _save(self) -> None:
        if not self.path:
            return
        tmp = f"{self.path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump({"disabled_sites": sorted(self._set.disabled_sites)}, fh)
        os.replace(tmp, self.path)

    @property
    def current(self) -> OverrideSet:
        return self._set

    def set(self, site: str) -> OverrideSet:
        with self._lock:
            self._set = set_override(self._set, site, self.psl)
            self._save()
            return self._set

    def clear(self, site: str) -> OverrideSet:
        with self._lock:
            self._set = clear_override(self._set, site, self.psl)
            self._save()
            return self._set

    def sites(self) -> list:
        return sorted(self._set.disabled_sites)


@dataclass(frozen=True)
class TelemetryCounters:
    active: int = 0
    disabled: int = 0
    none: int = 0

    @property
    def total(self) -> int:
        return self.active + self.disabled + self.none

    def __add__(self, other: "TelemetryCounters") -> "TelemetryCounters":
        return TelemetryCounters(self.active + other.active,
                                 self.disabled + other.disabled,
                                 self.none + other.none)


def page_load_bucket(blocked_count: int, matched_count: int, overridden: bool) -> TelemetryCounters:
    if overridden and matched_count > 0:
        return TelemetryCounters(disabled=1)
    if not overridden and blocked_count > 0:
        return TelemetryCounters(active=1)
    return TelemetryCounters(none=1)


def record_page_load(session, overrides: OverrideSet, psl=None) -> TelemetryCounters:
    """Bucket a finished page session (active / disabled / none)."""
    overridden = overrides.covers(session.first_party_host, psl)
    return page_load_bucket(session.blocked_count, session.matched_count, overridden)


def _pct(part: int, whole: int) -> float:
    return 100.0 * part / whole if whole else 0.0


def counters_report(c: TelemetryCounters) -> dict:
    """Counts, per-bucket percentages, and the disable rate (disabled share of pages with trackers)."""
    with_trackers = c.active + c.disabled
    return {
        "active": c.active,
        "disabled": c.disabled,
        "none": c.none,
        "total": c.total,
        "active_pct": _pct(c.active, c.total),
        "disabled_pct": _pct(c.disabled, c.total),
        "none_pct": _pct(c.none, c.total),
        "disable_rate_pct": _pct(c.disabled, with_trackers) if with_trackers else None,
    }


class Telemetry:
    def __init__(self, counters: TelemetryCounters = TelemetryCounters()):
        self._lock = threading.Lock()
        self._counters = counters

    def add(self, delta: TelemetryCounters) -> TelemetryCounters:
        with self._lock:
            self._counters = self._counters + delta
            return self._counters

    def record(self, session, overrides: OverrideSet, psl=None) -> TelemetryCounters:
        delta = record_page_load(session, overrides, psl)
        self.add(delta)
        return delta

    @property
    def counters(self) -> TelemetryCounters:
        return self._counters

    def snapshot_counters(self) -> dict:
        return counters_report(self._counters)


def snapshot_counters(counters: TelemetryCounters) -> dict:
    return counters_report(counters)

