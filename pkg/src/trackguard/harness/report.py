"""Per-site medians, reductions, CDFs and the corpus report files."""
from __future__ import annotations

import csv
import json
import os
import statistics
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

METRICS = ("load_time", "bytes", "requests", "cookies")


@dataclass
class FetchReport:
    site: str
    protected: bool
    load_time: float = 0.0
    bytes: int = 0
    requests: int = 0
    blocked: int = 0
    blocked_by_type: Dict[str, int] = field(default_factory=dict)
    cookies: frozenset = frozenset()
    contacted_hosts: frozenset = frozenset()
    failures: List[Tuple[str, str]] = field(default_factory=list)

    def metric(self, name: str) -> float:
        if name == "cookies":
            return len(self.cookies)
        return getattr(self, name)


def reduction(unprotected: float, protected: float) -> Optional[float]:
    """Fractional saving ``(u - p) / u``; undefined when there was nothing to save."""
    if not unprotected or unprotected <= 0:
        return None
    return (unprotected - protected) / unprotected


def count_cookies(reports: Sequence[FetchReport]) -> int:
    """Size of the cookie store after a pass: distinct (name, domain, path) triples."""
    jar = set()
    for r in reports:
        jar |= r.cookies
    return len(jar)


@dataclass
class SiteComparison:
    site: str
    reps: int
    median_protected: Dict[str, float]
    median_unprotected: Dict[str, float]
    trackers_blocked: float
    reductions: Dict[str, Optional[float]]
    cookies_protected: frozenset = frozenset()
    cookies_unprotected: frozenset = frozenset()

    def row(self) -> dict:
        out = {"site": self.site, "reps": self.reps, "trackers_blocked": self.trackers_blocked}
        for m in METRICS:
            out[f"median_{m}_protected"] = self.median_protected[m]
            out[f"median_{m}_unprotected"] = self.median_unprotected[m]
        for m in METRICS:
            out[f"{m}_reduction"] = self.reductions[m]
        return out


def compare_reports(site: str, protected: Sequence[FetchReport],
                    unprotected: Sequence[FetchReport]) -> SiteComparison:
    if not protected or not unprotected:
        raise ValueError("need at least one report per mode")
    med_p = {m: statistics.median(r.metric(m) for r in protected) for m in METRICS}
    med_u = {m: statistics.median(r.metric(m) for r in unprotected) for m in METRICS}
    jar_p = frozenset().union(*(r.cookies for r in protected))
    jar_u = frozenset().union(*(r.cookies for r in unprotected))
    return SiteComparison(
        site=site,
        reps=max(len(protected), len(unprotected)),
        median_protected=med_p,
        median_unprotected=med_u,
        trackers_blocked=statistics.median(r.blocked for r in protected),
        reductions={m: reduction(med_u[m], med_p[m]) for m in METRICS},
        cookies_protected=jar_p,
        cookies_unprotected=jar_u,
    )


def cdf(values) -> List[Tuple[float, float]]:
    """Sorted values paired with their cumulative fraction (i/n, last point at 1)."""
    xs = sorted(v for v in values if v is not None)
    n = len(xs)
    return [(x, (i + 1) / n) for i, x in enumerate(xs)]


@dataclass
class CorpusReport:
    rows: List[dict]
    cdf_trackers: List[Tuple[float, float]]
    cdf_loadtime: List[Tuple[float, float]]
    cdf_bytes: List[Tuple[float, float]]
    medians: Dict[str, Optional[float]]
    cookies: Dict[str, Optional[float]]

    def summary(self) -> dict:
        return {"sites": len(self.rows), "medians": self.medians, "cookies": self.cookies}


def _median(values) -> Optional[float]:
    xs = [v for v in values if v is not None]
    return statistics.median(xs) if xs else None


def aggregate(comparisons: Sequence[SiteComparison]) -> CorpusReport:
    if not comparisons:
        raise ValueError("aggregate needs at least one site")
    trackers = [c.trackers_blocked for c in comparisons]
    load = [c.reductions["load_time"] for c in comparisons]
    data = [c.reductions["bytes"] for c in comparisons]
    jar_p = frozenset().union(*(c.cookies_protected for c in comparisons))
    jar_u = frozenset().union(*(c.cookies_unprotected for c in comparisons))
    return CorpusReport(
        rows=[c.row() for c in comparisons],
        cdf_trackers=cdf(trackers),
        cdf_loadtime=cdf(load),
        cdf_bytes=cdf(data),
        medians={
            "trackers_blocked": _median(trackers),
            "load_time_reduction": _median(load),
            "bytes_reduction": _median(data),
            "requests_reduction": _median(c.reductions["requests"] for c in comparisons),
            "sites_with_trackers": sum(1 for t in trackers if t >= 1) / len(trackers),
        },
        cookies={
            "unprotected": len(jar_u),
            "protected": len(jar_p),
            "reduction": reduction(len(jar_u), len(jar_p)),
        },
    )


def _write_cdf(path, points):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "cumulative_fraction"])
        w.writerows(points)


def write_report(report: CorpusReport, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    if report.rows:
        with open(os.path.join(outdir, "sites.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(report.rows[0]))
            w.writeheader()
            w.writerows(report.rows)
    _write_cdf(os.path.join(outdir, "cdf_trackers.csv"), report.cdf_trackers)
    _write_cdf(os.path.join(outdir, "cdf_loadtime.csv"), report.cdf_loadtime)
    _write_cdf(os.path.join(outdir, "cdf_bytes.csv"), report.cdf_bytes)
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)


def format_summary(report: CorpusReport) -> str:
    m, c = report.medians, report.cookies

    def pct(v):
        return "n/a" if v is None else f"{100 * v:.1f}%"

    return "\n".join([
        f"sites: {len(report.rows)}",
        f"median trackers blocked per site: {m['trackers_blocked']}",
        f"median load-time reduction: {pct(m['load_time_reduction'])}",
        f"median data reduction: {pct(m['bytes_reduction'])}",
        f"cookies: {c['unprotected']} unprotected, {c['protected']} protected "
        f"({pct(c['reduction'])} fewer)",
    ])
