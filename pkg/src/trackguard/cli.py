"""trackguard command line."""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import re
import sys
import time

from .canonical import MalformedUrl, parse_and_canonicalize
from .lists import DEFAULT_EXCLUDED_CATEGORIES, compile as compile_list, parse_disconnect, parse_plain
from .store import PrefixStore, apply_update, deserialize, lookup, serialize

log = logging.getLogger("trackguard")

_DURATION = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([smhd]?)\s*$")
_UNITS = {"": 1, "s": 1, "m": 60, "h": 3600, "d": 86400}


def parse_duration(text: str) -> float:
    m = _DURATION.match(text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad duration {text!r} (try 45m, 30s, 1h)")
    value = float(m.group(1)) * _UNITS[m.group(2)]
    if value <= 0:
        raise argparse.ArgumentTypeError("duration must be positive")
    return value


def parse_address(text: str):
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return (host or "127.0.0.1", int(port))


def parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def parse_resolve(text: str):
    host, sep, addr = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError("expected HOST=ADDR:PORT")
    return host.lower(), parse_address(addr)


def cmd_compile(args) -> int:
    with open(args.input, "rb") as fh:
        raw = fh.read()
    if args.format == "disconnect":
        domains = parse_disconnect(raw, include=args.include_category or None,
                                   exclude=args.exclude_category or ())
    else:
        domains = parse_plain(raw)
    store = apply_update(PrefixStore(), compile_list(domains, args.version))
    data = serialize(store)
    if args.out == "-":
        sys.stdout.buffer.write(data)
    else:
        with open(args.out, "wb") as fh:
            fh.write(data)
        print(f"{store.expression_count} expressions -> {args.out} (v{store.version})", file=sys.stderr)
    return 0


def cmd_check(args) -> int:
    with open(args.snapshot, "rb") as fh:
        store = deserialize(fh.read())
    status = 0
    for raw in args.urls:
        try:
            u = parse_and_canonicalize(raw)
        except MalformedUrl as exc:
            print(f"{raw}\tmalformed: {exc}")
            status = 2
            continue
        m = lookup(store, u)
        print(f"{u}\t{'block ' + m.expression if m.matched else 'allow'}")
    return status


def cmd_proxy(args) -> int:
    from .control import ControlServer
    from .engine import Engine, ProxyConfig, StartupError
    from .proxy import serve

    cfg = ProxyConfig(
        listen=args.listen,
        third_party_only=args.third_party_only,
        block_status=args.block_status,
        snapshot_path=args.snapshot,
        overrides_path=args.overrides,
        update_url=args.update_url,
        update_interval=args.update_interval,
        control=args.control,
        resolve=dict(args.resolve or ()),
    )
    try:
        engine = Engine(cfg)
    except StartupError as exc:
        print(f"trackguard: {exc}", file=sys.stderr)
        return 1
    control = None
    try:
        if cfg.control:
            control = ControlServer(engine, cfg.control)
            control.start()
            log.info("control API on %s:%d", *control.address)
        engine.start_background()
        asyncio.run(serve(engine))
    except OSError as exc:
        print(f"trackguard: cannot listen: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        pass
    finally:
        engine.stop_background()
        if control is not None:
            control.stop()
    return 0


def cmd_measure(args) -> int:
    from .harness.measure import SiteUnreachable, compare
    from .harness.report import aggregate, format_summary, write_report

    with open(args.sites, encoding="utf-8") as fh:
        sites = [line.strip() for line in fh if line.strip() and not line.startswith("#")]
    comparisons = []

    def one(site):
        try:
            return compare(site, args.reps, args.proxy, args.control, timeout=args.timeout)
        except SiteUnreachable as exc:
            log.warning("skipping %s", exc)
            return None

    if args.live and args.site_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(args.site_workers) as pool:
            comparisons = [c for c in pool.map(one, sites) if c is not None]
    else:
        for site in sites:
            c = one(site)
            if c is not None:
                comparisons.append(c)
    if not comparisons:
        print("trackguard: no site could be measured", file=sys.stderr)
        return 1
    report = aggregate(comparisons)
    write_report(report, args.out)
    print(format_summary(report))
    return 0


def cmd_fixture(args) -> int:
    from .harness.fixture import Corpus, FixtureServers

    corpus = Corpus.load(args.spec)
    # a port in --listen is accepted but unused: every host gets its own listener
    bind = args.bind.rsplit(":", 1)[0] if args.bind.count(":") == 1 else args.bind
    servers = FixtureServers(corpus, bind=bind).start()
    resolve = {h: f"{a}:{p}" for h, (a, p) in servers.resolve.items()}
    text = json.dumps(resolve, indent=2, sort_keys=True)
    if args.resolve_out:
        with open(args.resolve_out, "w") as fh:
            fh.write(text)
    print(text)
    print("proxy flags: " + " ".join(f"--resolve {h}={v}" for h, v in sorted(resolve.items())),
          file=sys.stderr)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        servers.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trackguard", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="compile a domain list into a snapshot")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--format", choices=("disconnect", "plain"), default="disconnect")
    c.add_argument("--include-category", action="append")
    c.add_argument("--exclude-category", action="append",
                   help=f"repeatable; default {', '.join(DEFAULT_EXCLUDED_CATEGORIES)}")
    c.add_argument("--version", type=int, default=1)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compile)

    k = sub.add_parser("check", help="look URLs up in a snapshot")
    k.add_argument("--snapshot", required=True)
    k.add_argument("urls", nargs="+")
    k.set_defaults(func=cmd_check)

    x = sub.add_parser("proxy", help="run the filtering proxy")
    x.add_argument("--listen", type=parse_address, default=("127.0.0.1", 8888))
    x.add_argument("--snapshot")
    x.add_argument("--overrides", help="override file (default: next to the snapshot)")
    x.add_argument("--update-url")
    x.add_argument("--update-interval", type=parse_duration, default=45 * 60.0)
    x.add_argument("--third-party-only", type=parse_bool, nargs="?", const=True, default=False)
    x.add_argument("--block-status", type=int, default=403)
    x.add_argument("--control", type=parse_address, default=("127.0.0.1", 8899))
    x.add_argument("--resolve", type=parse_resolve, action="append",
                   help="HOST=ADDR:PORT upstream override, repeatable")
    x.set_defaults(func=cmd_proxy)

    m = sub.add_parser("measure", help="protected vs unprotected page loads")
    m.add_argument("--sites", required=True)
    m.add_argument("--reps", type=int, default=10)
    m.add_argument("--proxy", type=parse_address, default=("127.0.0.1", 8888))
    m.add_argument("--control", type=parse_address, default=("127.0.0.1", 8899))
    m.add_argument("--out", default="report")
    m.add_argument("--timeout", type=float, default=30.0)
    m.add_argument("--live", action="store_true", help="real sites; allows --site-workers")
    m.add_argument("--site-workers", type=int, default=1)
    m.set_defaults(func=cmd_measure)

    f = sub.add_parser("fixture", help="serve a deterministic fixture corpus")
    f.add_argument("--listen", dest="bind", default="127.0.0.1",
                   help="bind address; each host gets its own ephemeral port")
    f.add_argument("--spec", required=True)
    f.add_argument("--resolve-out")
    f.set_defaults(func=cmd_fixture)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "compile" and args.exclude_category is None:
        args.exclude_category = list(DEFAULT_EXCLUDED_CATEGORIES)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.command == "proxy" and args.verbose == 0:
        logging.getLogger().setLevel(logging.INFO)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
