"""Coverage, precision/recall, contingency tables and McNemar's test."""
from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, NamedTuple

from .trace import EventsFile, SiteKey, Trace, atomic_write, unwrap_timestamps

log = logging.getLogger(__name__)


class SetOutsideUniverse(ValueError):
    pass


class DegenerateTable(ValueError):
    pass


# -- coverage -----------------------------------------------------------------

@dataclass(frozen=True)
class CoverageSeries:
    points: tuple[tuple[int, int, int], ...]  # (action index, logical millis, unique covered)
    universe: int

    def __post_init__(self):
        prev = 0
        for _, _, n in self.points:
            if n < prev or n > self.universe:
                raise ValueError(f"invalid coverage point {n} (prev {prev}, universe {self.universe})")
            prev = n

    @property
    def final(self) -> int:
        return self.points[-1][2] if self.points else 0


def covered_sites(trace: Trace | Iterable, events: EventsFile, diagnostics: list | None = None) -> set[SiteKey]:
    universe = set(events.sites)
    touched = {e.site for e in trace}
    unknown = touched - universe
    for site in sorted(unknown):
        msg = f"UnknownSite: {site.cls}${site.method}:{site.id}:{site.keyword} is not in the events file"
        log.debug(msg)
        if diagnostics is not None:
            diagnostics.append(msg)
    return touched & universe


def coverage(trace: Trace, events: EventsFile, diagnostics: list | None = None) -> tuple[CoverageSeries, int]:
    """Per-entry cumulative coverage of declared sites, each counted once."""
    universe = set(events.sites)
    stamps = [e.timestamp for e in trace]
    millis = unwrap_timestamps(stamps)
    seen: set[SiteKey] = set()
    points = []
    for i, (e, t) in enumerate(zip(trace, millis)):
        if e.site in universe:
            seen.add(e.site)
        points.append((i + 1, t if t is not None else 0, len(seen)))
    covered_sites(trace, events, diagnostics)
    return CoverageSeries(tuple(points), len(universe)), len(seen)


def write_series(series: CoverageSeries, path: str | os.PathLike) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["action", "logical_ms", "covered", "universe"])
    for a, t, n in series.points:
        w.writerow([a, t, n, series.universe])
    atomic_write(path, buf.getvalue())


def read_series(path: str | os.PathLike) -> CoverageSeries:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    universe = int(rows[0]["universe"]) if rows else 0
    return CoverageSeries(tuple((int(r["action"]), int(r["logical_ms"]), int(r["covered"])) for r in rows),
                          universe)


# -- precision / recall -------------------------------------------------------

class TruthKey(NamedTuple):
    apk: str
    kind: str  # HP for the three heavy-process kinds
    cls: str
    method: str


@dataclass(frozen=True)
class GroundTruth:
    labels: dict  # TruthKey -> bool (True = smell)

    @property
    def smells(self) -> set[TruthKey]:
        return {k for k, v in self.labels.items() if v}


def read_ground_truth(path: str | os.PathLike) -> GroundTruth:
    """CSV ``apk,kind,class,method,label`` with label ``smell`` or ``notSmell``."""
    labels = {}
    with open(path, newline="", encoding="utf-8") as f:
        for lineno, row in enumerate(csv.reader(f), 1):
            if not row or row == ["apk", "kind", "class", "method", "label"]:
                continue
            if len(row) != 5 or row[4] not in ("smell", "notSmell"):
                raise ValueError(f"{path}:{lineno}: expected apk,kind,class,method,smell|notSmell")
            key = TruthKey(row[0], family(row[1]), row[2], row[3])
            if key in labels:
                raise ValueError(f"{path}:{lineno}: duplicate key {key}")
            labels[key] = row[4] == "smell"
    return GroundTruth(labels)


def family(kind: str) -> str:
    return "HP" if kind in ("HAS", "HSS", "HBR", "HP") else kind


def detected_keys(results) -> set[TruthKey]:
    """Keys of detected instances, ids dropped (method granularity)."""
    return {TruthKey(i.apk, i.kind.family, i.file, i.method) for insts in results.values() for i in insts}


def precision_recall(detected: set, truth: GroundTruth) -> tuple[float | None, float | None]:
    """``None`` stands for N/A (empty denominator)."""
    relevant = truth.smells
    tp = len(detected & relevant)
    precision = tp / len(detected) if detected else None
    recall = tp / len(relevant) if relevant else None
    return precision, recall


def recall_percent(tp: int, total: int) -> int:
    """Recall as a whole percentage, truncated the way the recall table prints it."""
    return (100 * tp) // total


def format_recall(tp: int, total: int) -> str:
    return f"{tp} / {total} ({recall_percent(tp, total)}%)"


# -- contingency / McNemar ----------------------------------------------------

class ContingencyTable(NamedTuple):
    a: int  # covered by both
    b: int  # only by A
    c: int  # only by B
    d: int  # by neither


def contingency(covered_a: set, covered_b: set, universe: set) -> ContingencyTable:
    outside = (covered_a | covered_b) - universe
    if outside:
        raise SetOutsideUniverse(f"{len(outside)} covered elements are not in the universe")
    a = len(covered_a & covered_b)
    b = len(covered_a - covered_b)
    c = len(covered_b - covered_a)
    return ContingencyTable(a, b, c, len(universe) - a - b - c)


def chi2_sf_1df(x: float) -> float:
    """Upper tail of the chi-square distribution with one degree of freedom."""
    return math.erfc(math.sqrt(x / 2.0))


def mcnemar(table: ContingencyTable, mode: str = "plain") -> tuple[float, float]:
    b, c = table.b, table.c
    n = b + c
    if n == 0:
        raise DegenerateTable("McNemar's test needs at least one discordant pair")
    if mode == "plain":
        stat = (b - c) ** 2 / n
        return stat, chi2_sf_1df(stat)
    if mode == "continuity":
        stat = max(abs(b - c) - 1, 0) ** 2 / n
        return stat, chi2_sf_1df(stat)
    if mode == "exact":
        k = min(b, c)
        tail = Fraction(sum(math.comb(n, i) for i in range(k + 1)), 2 ** n)
        return float(b), float(min(Fraction(1), 2 * tail))
    raise ValueError(f"unknown mode {mode!r}")


# -- reports ------------------------------------------------------------------

KIND_ROWS = ("DW", "HP", "IOD", "NLMR", "HMU")


def report_eval(sessions: dict, truths: dict, out_dir: str | os.PathLike) -> str:
    """Write ``summary.txt``, ``recall.csv`` and one ``coverage_<app>.csv`` per session.

    ``sessions`` maps an app name to ``(SessionResult, detections)``; ``truths`` maps
    an app name to its ``GroundTruth``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = {k: [0, 0] for k in KIND_ROWS}  # kind -> [tp, relevant]
    detected_all: set = set()
    lines = ["app,actions,covered,universe"]
    for name in sorted(sessions):
        result, detections = sessions[name]
        write_series(result.coverage, out / f"coverage_{name}.csv")
        lines.append(f"{name},{len(result.actions)},{result.coverage.final},{result.coverage.universe}")
        keys = detected_keys(detections)
        detected_all |= keys
        truth = truths.get(name)
        if truth is None:
            continue
        for key in truth.smells:
            counts[key.kind][1] += 1
            counts[key.kind][0] += key in keys

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "tp", "relevant", "recall_percent"])
    summary = ["coverage", *lines, "", "recall"]
    for kind in KIND_ROWS:
        tp, rel = counts[kind]
        if rel:
            w.writerow([kind, tp, rel, recall_percent(tp, rel)])
            summary.append(f"{kind:5s} {format_recall(tp, rel)}")
        else:
            w.writerow([kind, tp, rel, ""])
            summary.append(f"{kind:5s} n/a")
    atomic_write(out / "recall.csv", buf.getvalue())
    text = "\n".join(summary) + "\n"
    atomic_write(out / "summary.txt", text)
    return text
