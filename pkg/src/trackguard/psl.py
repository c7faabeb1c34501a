"""Public Suffix List matching for registrable-domain (eTLD+1) computation.

The rules come from a snapshot bundled with the package; there is no live
fetch. Matching follows the publicsuffix.org algorithm: exception rules win,
otherwise the longest matching rule, with an implicit ``*`` default.
"""
from __future__ import annotations

import functools
from importlib import resources
from typing import Iterable, Optional

from .canonical import is_ip_literal


def _ascii_form(rule: str) -> str:
    """Punycode spelling of a rule, since hosts reach the matcher already encoded."""
    if rule.isascii():
        return rule
    try:
        return ".".join(
            label if label.isascii() else label.encode("idna").decode("ascii")
            for label in rule.split(".")
        )
    except UnicodeError:
        return rule


class PublicSuffixList:
    def __init__(self, lines: Iterable[str]):
        self.rules = set()
        self.wildcards = set()
        self.exceptions = set()
        for line in lines:
            rule = line.strip().split(None, 1)[0] if line.strip() else ""
            if not rule or rule.startswith("//"):
                continue
            rule = rule.lower()
            for form in {rule, _ascii_form(rule)}:
                if form.startswith("!"):
                    self.exceptions.add(form[1:])
                elif form.startswith("*."):
                    self.wildcards.add(form[2:])
                else:
                    self.rules.add(form)

    @classmethod
    def from_file(cls, path) -> "PublicSuffixList":
        with open(path, encoding="utf-8") as fh:
            return cls(fh)

    def public_suffix(self, host: str) -> str:
        labels = host.split(".")
        # scan from the longest candidate so the first hit is the longest rule
        for i in range(len(labels)):
            candidate = ".".join(labels[i:])
            if candidate in self.exceptions:
                return ".".join(labels[i + 1:])
            if candidate in self.rules:
                return candidate
            parent = ".".join(labels[i + 1:])
            if i + 1 < len(labels) and parent in self.wildcards:
                return candidate
        return labels[-1]

    def registrable_domain(self, host: str) -> str:
        """Public suffix plus one label; IP literals and bare suffixes come back unchanged."""
        if is_ip_literal(host):
            return host
        host = host.lower().strip(".")
        suffix = self.public_suffix(host)
        if host == suffix:
            return host
        head = host[: -len(suffix) - 1]
        return head.rsplit(".", 1)[-1] + "." + suffix

    def is_public_suffix(self, host: str) -> bool:
        return not is_ip_literal(host) and self.public_suffix(host) == host


@functools.lru_cache(maxsize=1)
def bundled() -> PublicSuffixList:
    text = resources.files("trackguard").joinpath("data/public_suffix_list.dat").read_text("utf-8")
    return PublicSuffixList(text.splitlines())


def registrable_domain(host: str, psl: Optional[PublicSuffixList] = None) -> str:
    return (psl or bundled()).registrable_domain(host)
