"""Versioned hash-prefix store over blocklist expressions.

Lookups go through two stages: a binary search over sorted 4-byte SHA-256
prefixes, then confirmation against the locally held full digest. A store is
immutable; updates return a new one, and :class:`StoreHolder` swaps it in.
"""
from __future__ import annotations

import bisect
import hashlib
import json
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from .canonical import CanonicalUrl, MalformedUrl, lookup_expressions, parse_and_canonicalize

PREFIX_LEN = 4
SNAPSHOT_FORMAT = "tp-snapshot"
SNAPSHOT_VERSION = 1


class InvalidExpression(ValueError):
    pass


class VersionMismatch(Exception):
    """The update's base version doesn't match the store; fetch a full snapshot."""

    def __init__(self, store_version: int, from_version: int):
        super().__init__(f"store is at v{store_version}, update is from v{from_version}")
        self.store_version = store_version
        self.from_version = from_version


class InvalidUpdate(ValueError):
    pass


class CorruptSnapshot(ValueError):
    pass


def full_hash(expression: str) -> bytes:
    return hashlib.sha256(expression.encode("utf-8")).digest()


def hash_prefix(expression: str) -> bytes:
    return full_hash(expression)[:PREFIX_LEN]


@dataclass(frozen=True)
class ListUpdate:
    from_version: int
    to_version: int
    add: Tuple[str, ...] = ()
    remove: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "add", tuple(self.add))
        object.__setattr__(self, "remove", tuple(self.remove))
        if self.from_version < 0 or self.to_version <= self.from_version:
            raise InvalidUpdate(f"bad version range {self.from_version}->{self.to_version}")
        if set(self.add) & set(self.remove):
            raise InvalidUpdate("add and remove overlap")

    @property
    def is_snapshot(self) -> bool:
        return self.from_version == 0

    def to_json(self) -> dict:
        return {
            "from_version": self.from_version,
            "to_version": self.to_version,
            "add": list(self.add),
            "remove": list(self.remove),
        }

    @classmethod
    def from_json(cls, obj) -> "ListUpdate":
        if not isinstance(obj, dict):
            raise InvalidUpdate("update must be a JSON object")
        try:
            from_v, to_v = obj["from_version"], obj["to_version"]
            add, remove = obj.get("add", []), obj.get("remove", [])
        except KeyError as exc:
            raise InvalidUpdate(f"missing field {exc.args[0]!r}") from None
        for name, v in (("from_version", from_v), ("to_version", to_v)):
            if not isinstance(v, int) or isinstance(v, bool):
                raise InvalidUpdate(f"{name} must be an integer")
        for name, seq in (("add", add), ("remove", remove)):
            if not isinstance(seq, list) or not all(isinstance(s, str) for s in seq):
                raise InvalidUpdate(f"{name} must be a list of strings")
        return cls(from_v, to_v, tuple(add), tuple(remove))


@dataclass(frozen=True)
class MatchResult:
    matched: bool
    expression: Optional[str] = None


MISS = MatchResult(False)


@dataclass(frozen=True)
class PrefixStore:
    version: int = 0
    prefixes: Tuple[bytes, ...] = ()
    full_hashes: Dict[bytes, str] = field(default_factory=dict)

    @property
    def expression_count(self) -> int:
        return len(self.full_hashes)

    @property
    def expressions(self) -> List[str]:
        return sorted(self.full_hashes.values())

    def has_prefix(self, prefix: bytes) -> bool:
        i = bisect.bisect_left(self.prefixes, prefix)
        return i < len(self.prefixes) and self.prefixes[i] == prefix

    def match_expressions(self, expressions: Iterable[str]) -> MatchResult:
        for expr in expressions:
            digest = full_hash(expr)
            if self.has_prefix(digest[:PREFIX_LEN]) and digest in self.full_hashes:
                return MatchResult(True, self.full_hashes[digest])
        return MISS

    def lookup(self, u: CanonicalUrl) -> MatchResult:
        return lookup(self, u)


def check_expression(expr: str) -> str:
    """Reject anything that isn't already in canonical "host/path" form."""
    if not isinstance(expr, str) or "/" not in expr or "://" in expr:
        raise InvalidExpression(f"not a host/path expression: {expr!r}")
    host = expr.split("/", 1)[0]
    if ":" in host and not host.startswith("["):
        raise InvalidExpression(f"expressions carry no port: {expr!r}")
    try:
        u = parse_and_canonicalize("http://" + expr)
    except MalformedUrl as exc:
        raise InvalidExpression(f"{expr!r}: {exc}") from None
    canonical = u.host + u.path + ("?" + u.query if u.query is not None else "")
    if canonical != expr:
        raise InvalidExpression(f"{expr!r} is not canonical (expected {canonical!r})")
    return expr


def _from_expressions(expressions: Iterable[str], version: int) -> PrefixStore:
    hashes = {}
    for expr in expressions:
        hashes[full_hash(check_expression(expr))] = expr
    prefixes = tuple(sorted({d[:PREFIX_LEN] for d in hashes}))
    return PrefixStore(version, prefixes, hashes)


def build(expressions: Iterable[str]) -> PrefixStore:
    return _from_expressions(expressions, 1)


def lookup(store: PrefixStore, u: CanonicalUrl) -> MatchResult:
    """First confirmed expression for ``u``, most specific first."""
    if not store.prefixes:
        return MISS
    return store.match_expressions(lookup_expressions(u))


def apply_update(store: PrefixStore, upd: ListUpdate) -> PrefixStore:
    if upd.is_snapshot:
        return _from_expressions(upd.add, upd.to_version)
    if upd.from_version != store.version:
        raise VersionMismatch(store.version, upd.from_version)
    current = set(store.full_hashes.values())
    current.difference_update(upd.remove)
    current.update(upd.add)
    return _from_expressions(current, upd.to_version)


def to_snapshot(store: PrefixStore) -> ListUpdate:
    return ListUpdate(0, max(store.version, 1), tuple(store.expressions), ())


def serialize(store: PrefixStore) -> bytes:
    doc = {"format": SNAPSHOT_FORMAT, "v": SNAPSHOT_VERSION}
    doc.update(to_snapshot(store).to_json())
    return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def deserialize(data: bytes) -> PrefixStore:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CorruptSnapshot(f"unreadable snapshot: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != SNAPSHOT_FORMAT:
        raise CorruptSnapshot("missing tp-snapshot header")
    if doc.get("v") != SNAPSHOT_VERSION:
        raise CorruptSnapshot(f"unsupported snapshot version {doc.get('v')!r}")
    try:
        upd = ListUpdate.from_json(doc)
    except InvalidUpdate as exc:
        raise CorruptSnapshot(str(exc)) from None
    if not upd.is_snapshot:
        raise CorruptSnapshot("snapshot must have from_version 0")
    try:
        return apply_update(PrefixStore(), upd)
    except InvalidExpression as exc:
        raise CorruptSnapshot(str(exc)) from None


class StoreHolder:
    """Owns the live store; readers take ``.current`` and never see a half-applied update."""

    def __init__(self, store: Optional[PrefixStore] = None):
        self._store = store if store is not None else PrefixStore()
        self._lock = threading.Lock()

    @property
    def current(self) -> PrefixStore:
        return self._store

    def swap(self, store: PrefixStore) -> None:
        with self._lock:
            self._store = store

    def apply(self, upd: ListUpdate) -> PrefixStore:
        with self._lock:
            self._store = apply_update(self._store, upd)
            return self._store
