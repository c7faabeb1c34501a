import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

import pytest

from trackguard.control import ControlServer
from trackguard.engine import Engine, ProxyConfig
from trackguard.harness.fixture import FixtureServers
from trackguard.lists import ListHistory, expressions_for
from trackguard.proxy import ProxyThread
from trackguard.store import ListUpdate, build


class ListServer(ThreadingHTTPServer):
    """Serves a ListHistory the way an update endpoint would.

    ``mode`` switches misbehaviour: "down" answers 500, "bogus_diff" sends a
    diff from a version the client cannot hold (forcing a snapshot retry).
    """

    daemon_threads = True

    def __init__(self, history: ListHistory):
        super().__init__(("127.0.0.1", 0), _ListHandler)
        self.history = history
        self.mode = "ok"
        self.requests = []

    @property
    def url(self):
        return "http://%s:%d/list" % self.server_address[:2]


class _ListHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_GET(self):
        version = int(parse_qs(urlsplit(self.path).query).get("version", ["0"])[0])
        self.server.requests.append(version)
        if self.server.mode == "down":
            self.send_error(500)
            return
        h = self.server.history
        if self.server.mode == "bogus_diff" and version:
            upd = ListUpdate(version + 1000, h.current + 1000, (), ())
        else:
            upd = h.respond(version)
        if upd is None:
            self.send_response(304)
            self.end_headers()
            return
        body = json.dumps(upd.to_json()).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


@pytest.fixture
def list_server():
    server = ListServer(ListHistory(["a.example/"]))
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    yield server
    server.shutdown()
    server.server_close()


class Stack:
    """Fixture servers, engine, proxy and control API wired together."""

    def __init__(self, corpus, domains=None, tmp_path=None, **cfg):
        self.corpus = corpus
        self.domains = corpus.blocklist if domains is None else domains
        self.fixtures = FixtureServers(corpus).start()
        if tmp_path is not None:
            cfg.setdefault("overrides_path", str(tmp_path / "overrides.json"))
        self.engine = Engine(ProxyConfig(resolve=self.fixtures.resolve, control=None, **cfg),
                             store=build(expressions_for(self.domains)))
        self.proxy_thread = ProxyThread(self.engine)
        self.proxy = self.proxy_thread.start()
        self.control_server = ControlServer(self.engine, ("127.0.0.1", 0))
        self.control = self.control_server.start()

    def close(self):
        self.control_server.stop()
        self.proxy_thread.stop()
        self.fixtures.stop()
        self.engine.stop_background()


@pytest.fixture
def make_stack(tmp_path):
    stacks = []

    def factory(corpus, domains=None, **cfg):
        s = Stack(corpus, domains, tmp_path, **cfg)
        stacks.append(s)
        return s

    yield factory
    for s in stacks:
        s.close()


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Attach a one-line measurement to the acceptance summary for this test."""
    def note(text):
        request.node.user_properties.append(("criterion_detail", text))
    return note


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    detail = "; ".join(v for k, v in report.user_properties if k == "criterion_detail")
    _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome, detail, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail, duration in _ACCEPTANCE:
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{mark}  {name}  ({duration:.1f}s)  {detail}")
