import random
import urllib.parse
import posixpath

import pytest
from hypothesis import given, settings, strategies as st

from trackguard.canonical import (
    CanonicalUrl,
    full_unquote,
    quote_minimal,
    MalformedUrl,
    host_suffixes,
    lookup_expressions,
    parse_and_canonicalize,
    path_prefixes,
)

# Expected renderings follow the public Safe Browsing canonicalization vectors,
# except where this package deliberately rejects a host (escaped or non-ASCII
# host bytes) or keeps a non-default port in the rendered URL.
VECTORS = [
    ("http://example.com/", "http://example.com/"),
    ("HTTP://Example.COM:80/a/../b#frag", "http://example.com/b"),
    ("http://example.com/%2525", "http://example.com/%25"),
    ("http://host/%25%32%35", "http://host/%25"),
    ("http://host/%25%32%35%25%32%35", "http://host/%25%25"),
    ("http://host/%2525252525252525", "http://host/%25"),
    ("http://host/asdf%25%32%35asd", "http://host/asdf%25asd"),
    ("http://host/%%%25%32%35asd%%", "http://host/%25%25%25asd%25%25"),
    ("http://www.google.com/", "http://www.google.com/"),
    ("http://%31%36%38%2e%31%38%38%2e%39%39%2e%32%36/%2E%73%65%63%75%72%65/"
     "%77%77%77%2E%65%62%61%79%2E%63%6F%6D/",
     "http://168.188.99.26/.secure/www.ebay.com/"),
    ("http://195.127.0.11/uploads/%20%20%20%20/.verify/.eBaysecure=x/",
     "http://195.127.0.11/uploads/%20%20%20%20/.verify/.eBaysecure=x/"),
    ("http://3279880203/blah", "http://195.127.0.11/blah"),
    ("http://0x7f.1/", "http://127.0.0.1/"),
    ("http://www.google.com/blah/..", "http://www.google.com/"),
    ("http://www.google.com/foo\tbar\rbaz\n2", "http://www.google.com/foobarbaz2"),
    ("http://www.google.com/q?", "http://www.google.com/q?"),
    ("http://www.google.com/q?r?", "http://www.google.com/q?r?"),
    ("http://www.google.com/q?r?s", "http://www.google.com/q?r?s"),
    ("http://evil.com/foo#bar#baz", "http://evil.com/foo"),
    ("http://evil.com/foo;", "http://evil.com/foo;"),
    ("http://evil.com/foo?bar;", "http://evil.com/foo?bar;"),
    ("http://notrailingslash.com", "http://notrailingslash.com/"),
    ("http://www.gotaport.com:1234/", "http://www.gotaport.com:1234/"),
    ("  http://www.google.com/  ", "http://www.google.com/"),
    ("https://www.securesite.com/", "https://www.securesite.com/"),
    ("https://example.com:443/", "https://example.com/"),
    ("http://host.com/ab%23cd", "http://host.com/ab%23cd"),
    ("http://host.com//twoslashes?more//slashes", "http://host.com/twoslashes?more//slashes"),
    ("http://www.GOOgle.com/", "http://www.google.com/"),
    ("http://www.google.com.../", "http://www.google.com/"),
    ("http://a..b.com/", "http://a.b.com/"),
    ("http://.a.b.com./p/./q/../r", "http://a.b.com/p/r"),
    ("http://www.google.com/foo\x00bar", "http://www.google.com/foo%00bar"),
    ("http://example.com/a%3Fb", "http://example.com/a%3Fb"),
    ("http://user:pw@example.com/x", "http://example.com/x"),
    ("http://[::1]:8080/x", "http://[::1]:8080/x"),
]

MALFORMED = [
    "",
    "www.google.com/",
    "ftp://example.com/",
    "http:///x",
    "http://host%23.com/",
    "http://\x01\x80.com/",
    "http:// leadingspace.com/",
    "http://%20leadingspace.com/",
    "http://exämple.com/",
    "javascript:alert(1)",
]


@pytest.mark.parametrize("raw,expected", VECTORS)
def test_vectors(raw, expected):
    assert parse_and_canonicalize(raw).render() == expected


@pytest.mark.parametrize("raw,expected", VECTORS)
def test_vectors_idempotent(raw, expected):
    u = parse_and_canonicalize(raw)
    assert parse_and_canonicalize(u.render()) == u


@pytest.mark.parametrize("raw", MALFORMED)
def test_malformed(raw):
    with pytest.raises(MalformedUrl):
        parse_and_canonicalize(raw)


def test_vector_count():
    assert len(VECTORS) >= 30


def test_fields_of_examples():
    assert parse_and_canonicalize("http://example.com/") == CanonicalUrl("http", "example.com", None, "/", None)
    u = parse_and_canonicalize("HTTP://Example.COM:80/a/../b#frag")
    assert (u.scheme, u.host, u.port, u.path, u.query) == ("http", "example.com", None, "/b", None)
    assert parse_and_canonicalize("http://example.com/%2525").path == "/%25"


def test_dot_segments_cross_check_with_stdlib():
    # independent route: urllib split plus posixpath normalization
    raw = "HTTP://Example.COM:80/a/../b#frag"
    parts = urllib.parse.urlsplit(raw)
    assert parts.hostname == "example.com"
    assert posixpath.normpath(parts.path) == parse_and_canonicalize(raw).path


def test_bytes_input():
    assert parse_and_canonicalize(b"http://Example.com/x").render() == "http://example.com/x"


def test_host_suffixes_examples():
    assert host_suffixes("a.b.c.d.e.f.g") == ["a.b.c.d.e.f.g", "c.d.e.f.g", "d.e.f.g", "e.f.g", "f.g"]
    assert host_suffixes("example.com") == ["example.com"]
    assert host_suffixes("192.168.0.1") == ["192.168.0.1"]
    assert host_suffixes("[::1]") == ["[::1]"]
    assert host_suffixes("localhost") == ["localhost"]


def test_path_prefixes_examples():
    assert path_prefixes("/1.html", "q=1") == ["/1.html?q=1", "/1.html", "/"]
    assert path_prefixes("/", None) == ["/"]
    assert path_prefixes("/a/b/c.html", None) == ["/a/b/c.html", "/a/b/", "/a/", "/"]


def test_path_prefixes_cap():
    # only the first four root-based directories qualify, so six entries at most
    got = path_prefixes("/a/b/c/d/e/f/g.html", "x=1")
    assert got == ["/a/b/c/d/e/f/g.html?x=1", "/a/b/c/d/e/f/g.html", "/a/b/c/", "/a/b/", "/a/", "/"]


def test_lookup_expression_examples():
    assert lookup_expressions(parse_and_canonicalize("http://example.com/")) == ["example.com/"]
    exprs = lookup_expressions(parse_and_canonicalize("http://a.b.c.d.e.f.g/1.html?q=1"))
    assert len(exprs) == 15
    assert exprs[0] == "a.b.c.d.e.f.g/1.html?q=1"
    assert "tracker.example/" in lookup_expressions(parse_and_canonicalize("http://sub.tracker.example/p/x.js"))


def test_lookup_ignores_port_and_scheme():
    a = lookup_expressions(parse_and_canonicalize("https://t.example:8443/x"))
    b = lookup_expressions(parse_and_canonicalize("http://t.example/x"))
    assert a == b


def _check_expression_shape(u):
    exprs = lookup_expressions(u)
    assert 1 <= len(exprs) <= 30
    assert f"{u.host}/" in exprs
    assert len(set(exprs)) == len(exprs)
    full = u.path + ("?" + u.query if u.query is not None else "")
    for e in exprs:
        host, _, rest = e.partition("/")
        rest = "/" + rest
        assert host == u.host or u.host.endswith("." + host)
        assert rest == "/" or full.startswith(rest) or u.path.startswith(rest)


label = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789-", min_size=1, max_size=8)
segment = st.text(alphabet="abcdefgxyz0123456789._~-%/", min_size=0, max_size=10)


@st.composite
def urls(draw):
    host = ".".join(draw(st.lists(label, min_size=1, max_size=9)))
    path = "/" + "/".join(draw(st.lists(segment, max_size=8)))
    query = draw(st.one_of(st.none(), st.text(alphabet="abc=&%?/", max_size=10)))
    scheme = draw(st.sampled_from(["http", "https", "HTTP"]))
    port = draw(st.one_of(st.none(), st.integers(1, 65535)))
    url = f"{scheme}://{host}" + (f":{port}" if port else "") + path
    if query is not None:
        url += "?" + query
    return url


@settings(max_examples=500, deadline=None)
@given(urls())
def test_idempotence_property(raw):
    try:
        u = parse_and_canonicalize(raw)
    except MalformedUrl:
        return
    assert parse_and_canonicalize(u.render()) == u
    _check_expression_shape(u)


@settings(max_examples=500, deadline=None)
@given(urls())
def test_canonical_invariants(raw):
    try:
        u = parse_and_canonicalize(raw)
    except MalformedUrl:
        return
    assert u.host == u.host.lower()
    assert ".." not in u.host and not u.host.endswith(".")
    assert u.path.startswith("/")
    assert "/./" not in u.path and "/../" not in u.path
    # decode fixpoint: re-escaping the fully decoded path reproduces it
    assert quote_minimal(full_unquote(u.path.encode())) == u.path


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=80))
def test_arbitrary_bytes_never_crash(data):
    for raw in (data, b"http://" + data):
        try:
            parse_and_canonicalize(raw)
        except MalformedUrl:
            pass


def test_fuzz_random_bytes():
    rng = random.Random(1234)
    for _ in range(20_000):
        raw = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 40)))
        if rng.random() < 0.5:
            raw = b"http://" + raw
        try:
            u = parse_and_canonicalize(raw)
        except MalformedUrl:
            continue
        assert parse_and_canonicalize(u.render()) == u
