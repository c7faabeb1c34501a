"""Tag-level subresource extraction; no script execution, no CSS url() scanning."""
from __future__ import annotations

from html.parser import HTMLParser
from typing import List, Tuple
from urllib.parse import urljoin, urldefrag

# tag -> attribute holding the resource URL
_SOURCES = {
    "script": "src",
    "img": "src",
    "iframe": "src",
    "object": "data",
}


class _Collector(HTMLParser):
    def __init__(self, base: str):
        super().__init__(convert_charrefs=True)
        self.base = base
        self.found: List[Tuple[str, str]] = []
        self._seen = set()

    def _add(self, kind: str, ref: str):
        ref = ref.strip()
        if not ref:
            return
        url = urldefrag(urljoin(self.base, ref))[0]
        key = (kind, url)
        if key not in self._seen:
            self._seen.add(key)
            self.found.append(key)

    def handle_starttag(self, tag, attrs):
        attrs = {k.lower(): v for k, v in attrs if v is not None}
        if tag == "base" and attrs.get("href"):
            self.base = urljoin(self.base, attrs["href"])
        elif tag in _SOURCES and attrs.get(_SOURCES[tag]):
            self._add(tag, attrs[_SOURCES[tag]])
        elif tag == "link" and attrs.get("href"):
            rel = {r.lower() for r in attrs.get("rel", "").split()}
            if "stylesheet" in rel:
                self._add("stylesheet", attrs["href"])

    handle_startendtag = handle_starttag


def extract_subresources(html: str, base: str) -> List[Tuple[str, str]]:
    """``(element_hint, absolute URL)`` pairs in document order, duplicates dropped."""
    parser = _Collector(base)
    try:
        parser.feed(html)
        parser.close()
    except Exception:
        # best effort: keep whatever was collected before the parser gave up
        pass
    return parser.found
