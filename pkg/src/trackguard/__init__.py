"""Blocklist-based tracking protection: hash-prefix store, filtering proxy, measurement harness."""

from .canonical import (
    CanonicalUrl,
    MalformedUrl,
    host_suffixes,
    lookup_expressions,
    parse_and_canonicalize,
    path_prefixes,
)
from .store import ListUpdate, MatchResult, PrefixStore, apply_update, build, lookup

__version__ = "0.1.0"
