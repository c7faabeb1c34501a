import csv
import json
import pathlib
import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from trackguard.harness.cookies import CookieKey, cookie_keys, default_path, parse_set_cookie
from trackguard.harness.fixture import (
    Corpus,
    Resource,
    Site,
    cookie_corpus,
    element_mix_corpus,
    expected_blocked,
    expected_bytes,
    expected_cookies,
    expected_load_ms,
    performance_corpus,
    schedule_ms,
)
from trackguard.harness.html import extract_subresources
from trackguard.harness.measure import SiteUnreachable, compare, fetch_page
from trackguard.harness.report import (
    FetchReport,
    aggregate,
    cdf,
    compare_reports,
    count_cookies,
    reduction,
    write_report,
)

# -- html ----------------------------------------------------------------------


def test_extract_script():
    assert extract_subresources("<script src='/a.js'></script>", "http://s.example/") == [
        ("script", "http://s.example/a.js")]


def test_extract_mix():
    html = ("<script src='http://t.example/1.js'></script><img src='http://t.example/p.gif'>"
            "<script src='http://u.example/2.js'></script><iframe src='http://v.example/f'></iframe>")
    hints = Counter(k for k, _ in extract_subresources(html, "http://s.example/"))
    assert hints == {"script": 2, "img": 1, "iframe": 1}


def test_extract_protocol_relative():
    assert extract_subresources("<img src='//t.example/p.gif'>", "http://s.example/x/") == [
        ("img", "http://t.example/p.gif")]


def test_extract_all_kinds_in_order_and_dedup():
    html = """<html><head><link rel="stylesheet" href="s.css"><link rel="icon" href="i.ico">
    <base href="http://cdn.example/base/"></head><body>
    <object data="movie.swf"></object><IMG SRC="a.gif"><img src="a.gif"><script src="a.gif"></script>
    <img src="b.gif#frag"><img><script>inline()</script><img src="">
    <link rel="Alternate StyleSheet" href="alt.css">"""
    got = extract_subresources(html, "http://s.example/dir/page.html")
    assert got == [
        ("stylesheet", "http://s.example/dir/s.css"),
        ("object", "http://cdn.example/base/movie.swf"),
        ("img", "http://cdn.example/base/a.gif"),
        ("script", "http://cdn.example/base/a.gif"),
        ("img", "http://cdn.example/base/b.gif"),
        ("stylesheet", "http://cdn.example/base/alt.css"),
    ]


def test_extract_malformed_html():
    got = extract_subresources("<div><img src='x.gif'<script src=y.js></scr", "http://s.example/")
    assert isinstance(got, list)


# -- cookies ---------------------------------------------------------------------


def test_parse_set_cookie():
    assert parse_set_cookie("sid=1", "http://a.example/x/y") == CookieKey("sid", "a.example", "/x")
    assert parse_set_cookie("sid=1; Domain=.Example.com; Path=/p", "http://www.example.com/") == \
        CookieKey("sid", "example.com", "/p")
    assert parse_set_cookie("sid=1; Max-Age=0", "http://a.example/") is None
    assert parse_set_cookie("sid=1; Max-Age=-5", "http://a.example/") is None
    assert parse_set_cookie("sid=1; Expires=Thu, 01 Jan 1970 00:00:00 GMT", "http://a.example/") is None
    assert parse_set_cookie("sid=1; Max-Age=60; Expires=Thu, 01 Jan 1970 00:00:00 GMT",
                            "http://a.example/") is not None
    assert parse_set_cookie("sid=1; Expires=Fri, 01 Jan 2100 00:00:00 GMT", "http://a.example/") is not None
    assert parse_set_cookie("novalue", "http://a.example/") is None
    assert parse_set_cookie("=x", "http://a.example/") is None


def test_default_path():
    assert default_path("/") == "/"
    assert default_path("/a") == "/"
    assert default_path("/a/b") == "/a"
    assert default_path("") == "/"


def test_cookie_keys_dedupe():
    keys = cookie_keys(["a=1", "a=2", "b=1; Max-Age=0"], "http://x.example/")
    assert keys == {CookieKey("a", "x.example", "/")}


def rep(cookies=(), **kw):
    return FetchReport("http://s.example/", True, cookies=frozenset(cookies), **kw)


def test_count_cookies():
    assert count_cookies([rep(), rep()]) == 0
    c = CookieKey("a", "x.example", "/")
    assert count_cookies([rep([c]), rep([c]), rep([c])]) == 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sets(st.tuples(st.sampled_from("abc"), st.sampled_from(["x.example", "y.example"]),
                                  st.sampled_from(["/", "/p"])), max_size=6), max_size=6),
       st.randoms())
def test_cookie_union_order_independent(sets, rnd):
    reports = [rep(CookieKey(*t) for t in s) for s in sets]
    shuffled = reports[:]
    rnd.shuffle(shuffled)
    assert count_cookies(reports) == count_cookies(shuffled)


# -- report arithmetic ---------------------------------------------------------


def test_reduction():
    assert reduction(4.3, 2.8) == pytest.approx(0.3488, abs=1e-4)
    assert reduction(219, 98) == pytest.approx(0.5525, abs=1e-4)
    assert reduction(0, 0) is None
    assert reduction(-1, 0) is None


def test_cdf_examples():
    assert cdf([5]) == [(5, 1.0)]
    pts = cdf([11, 0, 150, 2])
    assert pts == [(0, 0.25), (2, 0.5), (11, 0.75), (150, 1.0)]
    assert cdf([None, 1]) == [(1, 1.0)]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_cdf_monotone(values):
    pts = cdf(values)
    xs = [x for x, _ in pts]
    ys = [y for _, y in pts]
    assert xs == sorted(xs) and ys == sorted(ys)
    assert ys[0] == pytest.approx(1 / len(values)) and ys[-1] == 1.0
    assert (xs[0], xs[-1]) == (min(values), max(values))


def fake(site, protected, load, nbytes, requests, blocked=0, cookies=()):
    return FetchReport(site, protected, load, nbytes, requests, blocked, {}, frozenset(cookies))


def test_compare_reports_medians():
    p = [fake("s", True, t, 100, 5, 2) for t in (10, 30, 20, 40)]
    u = [fake("s", False, t, 200, 8) for t in (50, 60, 70)]
    c = compare_reports("s", p, u)
    assert c.median_protected["load_time"] == 25
    assert c.median_unprotected["load_time"] == 60
    assert c.reductions["bytes"] == 0.5
    assert c.reductions["requests"] == pytest.approx(3 / 8)
    assert c.trackers_blocked == 2
    assert c.reps == 4


def comparison(site, blocked, load_red=0.5, byte_red=0.5):
    p = [fake(site, True, 100 * (1 - load_red), 100 * (1 - byte_red), 1, blocked)]
    u = [fake(site, False, 100, 100, 1)]
    return compare_reports(site, p, u)


def test_aggregate_tracker_cdf():
    report = aggregate([comparison(f"s{i}", b) for i, b in enumerate([0, 2, 11, 150])])
    assert report.medians["trackers_blocked"] == 6.5
    assert report.cdf_trackers[-1] == (150, 1.0)
    assert report.medians["sites_with_trackers"] == 0.75


def test_aggregate_single_site_step():
    report = aggregate([comparison("s", 3, 0.4, 0.3)])
    assert report.cdf_trackers == [(3, 1.0)]
    assert report.cdf_loadtime == [(pytest.approx(0.4), 1.0)]


def test_aggregate_case_study_scaled():
    # 98 vs 219 requests and 2.8 vs 4.3 MB, bytes scaled by 0.001
    p = [fake("case", True, 3500, 2800, 98)]
    u = [fake("case", False, 6300, 4300, 219)]
    report = aggregate([compare_reports("case", p, u)])
    assert round(100 * report.medians["bytes_reduction"], 1) == 34.9
    assert round(100 * report.medians["requests_reduction"], 1) == 55.3
    assert round(100 * report.medians["load_time_reduction"], 1) == 44.4


def test_aggregate_requires_input():
    with pytest.raises(ValueError):
        aggregate([])


def test_write_report(tmp_path):
    report = aggregate([comparison(f"s{i}", b) for i, b in enumerate([0, 2, 11, 150])])
    write_report(report, tmp_path / "out")
    out = tmp_path / "out"
    rows = list(csv.DictReader(open(out / "sites.csv")))
    assert len(rows) == 4 and "bytes_reduction" in rows[0] and "median_load_time_protected" in rows[0]
    cdf_rows = list(csv.reader(open(out / "cdf_trackers.csv")))
    assert cdf_rows[0] == ["value", "cumulative_fraction"]
    assert cdf_rows[-1] == ["150", "1.0"]
    for name in ("cdf_loadtime.csv", "cdf_bytes.csv"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["sites"] == 4
    assert summary["medians"]["trackers_blocked"] == 6.5


# -- fixture oracles ----------------------------------------------------------


def test_schedule_ms():
    assert schedule_ms({"a": [10] * 6}) == 10
    assert schedule_ms({"a": [10] * 7}) == 20
    assert schedule_ms({"a": [5, 30], "b": [12]}) == 30
    assert schedule_ms({}) == 0


def test_cookie_corpus_design():
    c = cookie_corpus()
    assert len(expected_cookies(c)) == 13
    assert len(expected_cookies(c, c.blocklist)) == 5


def test_corpus_json_roundtrip(tmp_path):
    c = element_mix_corpus()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(c.to_json()))
    assert Corpus.load(path) == c


# -- end-to-end fetches -------------------------------------------------------


def twenty_corpus():
    """20 subresources, 8 of them on listed hosts."""
    res = []
    for k in range(12):
        res.append(Resource("img", "cdn.news.example", f"/c{k}.gif", 300 + k))
    for k in range(8):
        res.append(Resource("script", f"t{k % 3}.tracker.example", f"/t{k}.js", 700))
    return Corpus([Site("news.example", "/", 0, 1000, ("sid=1",), tuple(res)),
                   Site("empty.example", "/", 0, 100)], ["tracker.example"])


def test_fetch_page_protected_and_unprotected(make_stack):
    s = make_stack(twenty_corpus())
    site = s.corpus.sites[0]
    p = fetch_page(site.url, True, s.proxy, s.control)
    assert (p.requests, p.blocked) == (21, 8)
    assert p.blocked_by_type == {"script": 8}
    assert p.bytes == expected_bytes(site, s.domains)
    assert sum(n for h, n in s.fixtures.connections().items() if "tracker" in h) == 0
    assert p.failures == []
    u = fetch_page(site.url, False, s.proxy, s.control)
    assert (u.requests, u.blocked) == (21, 0)
    assert u.bytes == expected_bytes(site) > p.bytes
    assert len(expected_blocked(site, s.domains)) == 8
    # the temporary override is gone again
    assert s.engine.overrides.sites() == []
    counters = s.engine.telemetry.counters
    assert (counters.active, counters.disabled) == (1, 1)


def test_fetch_empty_page(make_stack):
    s = make_stack(twenty_corpus())
    for protected in (True, False):
        r = fetch_page("http://empty.example/", protected, s.proxy, s.control)
        assert (r.requests, r.blocked) == (1, 0)


def test_fetch_unreachable(make_stack):
    s = make_stack(twenty_corpus())
    with pytest.raises(SiteUnreachable):
        fetch_page("http://news.example/missing", True, s.proxy, s.control)
    with pytest.raises(SiteUnreachable):
        compare("http://news.example/missing", 2, s.proxy, s.control)


def test_compare_deterministic(make_stack):
    s = make_stack(twenty_corpus())
    site = s.corpus.sites[0]
    c = compare(site.url, 3, s.proxy, s.control)
    assert c.reps == 3
    assert c.median_protected["bytes"] == expected_bytes(site, s.domains)
    assert c.median_unprotected["bytes"] == expected_bytes(site)
    assert c.median_protected["requests"] == c.median_unprotected["requests"] == 21
    assert c.trackers_blocked == 8
    assert c.reductions["bytes"] == pytest.approx(1 - expected_bytes(site, s.domains) / expected_bytes(site))
    single = compare(site.url, 1, s.proxy, s.control)
    assert single.median_protected["bytes"] == c.median_protected["bytes"]
    with pytest.raises(ValueError):
        compare(site.url, 0, s.proxy, s.control)


def test_interleaving_order(make_stack, monkeypatch):
    import trackguard.harness.measure as m
    order = []
    monkeypatch.setattr(m, "fetch_page", lambda site, protected, *a, **k: order.append(protected) or
                        fake(site, protected, 1, 1, 1))
    m.compare("http://x/", 3, None, None)
    assert order == [True, False, True, False, True, False]


def test_load_time_tracks_latency(make_stack):
    res = (Resource("img", "slow.tracker.example", "/x.gif", 10, (), 300),
           Resource("img", "cdn.news.example", "/y.gif", 10, (), 50))
    corpus = Corpus([Site("news.example", "/", 0, 100, (), res)], ["tracker.example"])
    s = make_stack(corpus)
    site = corpus.sites[0]
    p = fetch_page(site.url, True, s.proxy, s.control)
    u = fetch_page(site.url, False, s.proxy, s.control)
    assert expected_load_ms(site, s.domains) == 50
    assert expected_load_ms(site) == 300
    assert 50 <= p.load_time < 250
    assert u.load_time >= 300


def test_shipped_fixtures_match_generator():
    root = pathlib.Path(__file__).resolve().parent.parent / "fixtures"
    corpus = performance_corpus(3)
    assert Corpus.load(root / "corpus.json").to_json() == corpus.to_json()
    listed = [ln for ln in (root / "blocklist.txt").read_text().splitlines() if not ln.startswith("#")]
    assert listed == list(corpus.blocklist)
    assert (root / "sites.txt").read_text().split() == [s.url for s in corpus.sites]
