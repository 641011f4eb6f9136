"""Keyed runtime monitors for the seven behavioural smells.

Each monitor is a small finite-state machine per key (structure id, wakelock id,
view id, task id, activity name). Events of one key never influence another key.
Instances are reported once per (anchor site, key) and ordered by the position
of their anchor entry in the trace.
"""
from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from .trace import AppId, EventsFile, LogEntry, Trace, atomic_write

log = logging.getLogger(__name__)


class SmellKind(str, enum.Enum):
    DW = "DW"
    IOD = "IOD"
    HAS = "HAS"
    HSS = "HSS"
    HBR = "HBR"
    NLMR = "NLMR"
    HMU = "HMU"

    @property
    def family(self) -> str:
        """Table-level grouping: the three heavy-process kinds report as HP."""
        return "HP" if self in HEAVY_KINDS else self.value


HEAVY_KINDS = (SmellKind.HAS, SmellKind.HSS, SmellKind.HBR)

PAYLOAD_FIELDS = {
    SmellKind.HMU: ("structureType", "maxSize"),
    SmellKind.DW: ("wakelockId",),
    SmellKind.IOD: ("viewId", "trigger"),
    SmellKind.HAS: ("taskId", "durationMillis"),
    SmellKind.HSS: ("taskId", "durationMillis"),
    SmellKind.HBR: ("taskId", "durationMillis"),
    SmellKind.NLMR: ("activityName", "cause"),
}

SMALL_MAP_TYPES = ("HashMap",)
LARGE_MAP_TYPES = ("ArrayMap", "SimpleArrayMap")


class InconsistentTrace(Exception):
    pass


@dataclass(frozen=True)
class MonitorConfig:
    hmu_small_max: int = 100
    hmu_large_min: int = 101
    heavy_millis: dict = field(default_factory=lambda: {"HAS": 200, "HSS": 200, "HBR": 200})
    iod_frame_budget_millis: int = 16
    nlmr_min_release_fraction: float = 0.05

    def __post_init__(self):
        if self.hmu_large_min <= self.hmu_small_max:
            raise ValueError("hmu_large_min must exceed hmu_small_max")
        if min(self.hmu_small_max, self.iod_frame_budget_millis) <= 0:
            raise ValueError("thresholds must be positive")
        heavy = {SmellKind(k).value: int(v) for k, v in self.heavy_millis.items()}
        for k in HEAVY_KINDS:
            heavy.setdefault(k.value, 200)
        if any(v <= 0 for v in heavy.values()) or set(heavy) - {k.value for k in HEAVY_KINDS}:
            raise ValueError(f"bad heavy_millis {self.heavy_millis!r}")
        object.__setattr__(self, "heavy_millis", heavy)
        if not 0 <= self.nlmr_min_release_fraction <= 1:
            raise ValueError("nlmr_min_release_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class SmellInstance:
    kind: SmellKind
    apk: str
    package: str
    file: str
    method: str
    payload: tuple[str, ...]
    witnesses: tuple[LogEntry, ...]

    def get(self, name: str) -> str:
        return self.payload[PAYLOAD_FIELDS[self.kind].index(name)]

    def header(self) -> str:
        return ",".join([self.apk, self.package, self.file, self.method, *self.payload])

    def lines(self) -> list[str]:
        return [self.header(), *(witness_line(w) for w in self.witnesses)]


def witness_line(e: LogEntry) -> str:
    return f"{e.timestamp or ''},{e.location},{e.id},{e.keyword}"


def _instance(kind, source: AppId, anchor: LogEntry, payload, witnesses) -> SmellInstance:
    loc = anchor.location
    return SmellInstance(kind, source.apk, source.package or loc.package, loc.qualified_class,
                         loc.method, tuple(str(p) for p in payload), tuple(witnesses))


class _Collector:
    """Deduplicates per (anchor site, key) and keeps anchor order."""

    def __init__(self):
        self._found: dict[tuple, tuple[int, SmellInstance]] = {}

    def add(self, anchor_index: int, anchor: LogEntry, key, inst: SmellInstance):
        dedup = (inst.kind, str(anchor.location), anchor.id, key)
        prev = self._found.get(dedup)
        if prev is None or anchor_index < prev[0]:
            self._found[dedup] = (anchor_index, inst)

    def result(self) -> list[SmellInstance]:
        return [inst for _, inst in sorted(self._found.values(), key=lambda p: p[0])]


def _diag(diagnostics, msg):
    log.debug(msg)
    if diagnostics is not None:
        diagnostics.append(msg)


# -- HMU ----------------------------------------------------------------------

def detect_hmu(entries: Iterable[LogEntry], cfg: MonitorConfig = MonitorConfig(),
               source: AppId = AppId(), diagnostics: list | None = None) -> list[SmellInstance]:
    structures: dict[str, list] = {}  # id -> [anchor_index, anchor, size, max]
    for i, e in enumerate(entries):
        if e.kind.smell != "HMU":
            continue
        sid = e.values[0]
        size = int(e.values[1])
        st = structures.get(sid)
        if e.keyword == "hmuimpl":
            if st is None:
                structures[sid] = [i, e, size, size]
            else:
                st[2] = size
                st[3] = max(st[3], size)
            continue
        if st is None:
            _diag(diagnostics, f"entry {i}: {e.keyword} on structure {sid} before hmuimpl")
            st = structures[sid] = [i, e, 0, 0]
        if e.keyword == "hmuadd":
            st[2] += 1
        elif e.keyword == "hmuaddall":
            st[2] += size
        elif e.keyword == "hmuremove":
            st[2] = max(0, st[2] - 1)
        else:
            st[2] = 0
        st[3] = max(st[3], st[2])

    out = _Collector()
    for sid, (i, anchor, _, max_size) in structures.items():
        stype = anchor.values[2]
        small = stype in SMALL_MAP_TYPES and max_size <= cfg.hmu_small_max
        large = stype in LARGE_MAP_TYPES and max_size >= cfg.hmu_large_min
        if small or large:
            out.add(i, anchor, sid, _instance(SmellKind.HMU, source, anchor, (stype, max_size), [anchor]))
    return out.result()


# -- DW -----------------------------------------------------------------------

def detect_dw(entries: Iterable[LogEntry], source: AppId = AppId(),
              diagnostics: list | None = None) -> list[SmellInstance]:
    held: dict[str, tuple[int, LogEntry]] = {}
    for i, e in enumerate(entries):
        if e.keyword == "wlacquire":
            held.setdefault(e.values[0], (i, e))
        elif e.keyword == "wlrelease":
            if held.pop(e.values[0], None) is None:
                _diag(diagnostics, f"entry {i}: release of wakelock {e.values[0]} that is not held")
    out = _Collector()
    for wid, (i, anchor) in held.items():
        out.add(i, anchor, wid, _instance(SmellKind.DW, source, anchor, (wid,), [anchor]))
    return out.result()


# -- IOD ----------------------------------------------------------------------

def detect_iod(entries: Iterable[LogEntry], cfg: MonitorConfig = MonitorConfig(),
               source: AppId = AppId(), diagnostics: list | None = None) -> list[SmellInstance]:
    open_: dict[str, list] = {}  # view id -> [start_index, start, reported]
    out = _Collector()
    for i, e in enumerate(entries):
        if e.kind.smell != "IOD":
            continue
        vid = e.values[0]
        bracket = open_.get(vid)
        if e.keyword == "odstart":
            if bracket is not None:
                _diag(diagnostics, f"entry {i}: onDraw of view {vid} restarted before it ended")
            open_[vid] = [i, e, False]
        elif bracket is None:
            _diag(diagnostics, f"entry {i}: {e.keyword} of view {vid} outside onDraw")
        else:
            si, start, reported = bracket
            trigger = None
            if e.keyword == "odalloc":
                trigger = "alloc"
            else:
                del open_[vid]
                if e.int_value("millis") - start.int_value("millis") > cfg.iod_frame_budget_millis:
                    trigger = "duration"
            if trigger and not reported:
                bracket[2] = True
                out.add(si, start, vid, _instance(SmellKind.IOD, source, start, (vid, trigger), [start, e]))
    for vid in open_:
        _diag(diagnostics, f"onDraw of view {vid} never ended")
    return out.result()


# -- HAS / HSS / HBR ----------------------------------------------------------

def detect_heavy(entries: Iterable[LogEntry], cfg: MonitorConfig = MonitorConfig(),
                 source: AppId = AppId(), diagnostics: list | None = None) -> dict[SmellKind, list[SmellInstance]]:
    open_: dict[tuple[SmellKind, str], tuple[int, LogEntry]] = {}
    outs = {k: _Collector() for k in HEAVY_KINDS}
    for i, e in enumerate(entries):
        if e.kind.smell not in outs:
            continue
        kind = SmellKind(e.kind.smell)
        key = (kind, e.values[0])
        if e.keyword.endswith("start"):
            if key in open_:
                _diag(diagnostics, f"entry {i}: {kind.value} task {key[1]} restarted before it ended")
            open_[key] = (i, e)
            continue
        started = open_.pop(key, None)
        if started is None:
            _diag(diagnostics, f"entry {i}: {e.keyword} of task {key[1]} without a start")
            continue
        si, start = started
        duration = e.int_value("millis") - start.int_value("millis")
        if duration > cfg.heavy_millis[kind.value]:
            outs[kind].add(si, start, key[1],
                           _instance(kind, source, start, (key[1], duration), [start, e]))
    for kind, task in open_:
        _diag(diagnostics, f"{kind.value} task {task} never ended; duration unknown")
    return {k: c.result() for k, c in outs.items()}


# -- NLMR ---------------------------------------------------------------------

def activity_class(name: str) -> str:
    return name if name.endswith(".java") else f"{name}.java"


def detect_nlmr(entries: Iterable[LogEntry], events: EventsFile, cfg: MonitorConfig = MonitorConfig(),
                source: AppId = AppId(), diagnostics: list | None = None) -> list[SmellInstance]:
    frac = Fraction(str(cfg.nlmr_min_release_fraction))
    resolvers = {d.cls for d in events if d.keyword == "olmstart"}
    started: set[str] = set()
    open_: dict[str, tuple[int, LogEntry]] = {}
    out = _Collector()
    for i, e in enumerate(entries):
        if e.kind.smell != "NLMR":
            continue
        name = e.values[0]
        if e.keyword == "actstart":
            if name not in started:
                started.add(name)
                if activity_class(name) not in resolvers:
                    out.add(i, e, (name, "missing"),
                            _instance(SmellKind.NLMR, source, e, (name, "missing"), [e]))
            continue
        if activity_class(name) not in resolvers:
            _diag(diagnostics, f"entry {i}: {e.keyword} for activity {name} with no declared resolver")
        if e.keyword == "olmstart":
            if name in open_:
                _diag(diagnostics, f"entry {i}: low-memory callback of {name} restarted")
            open_[name] = (i, e)
            continue
        begun = open_.pop(name, None)
        if begun is None:
            _diag(diagnostics, f"entry {i}: olmend for {name} without olmstart")
            continue
        si, start = begun
        before, after = start.int_value("heapBytes"), e.int_value("heapBytes")
        if after * frac.denominator > before * (frac.denominator - frac.numerator):
            out.add(si, start, (name, "ineffective"),
                    _instance(SmellKind.NLMR, source, start, (name, "ineffective"), [start, e]))
    for name in open_:
        _diag(diagnostics, f"low-memory callback of {name} never ended")
    return out.result()


# -- all monitors -------------------------------------------------------------

def detect(trace: Trace, events: EventsFile, cfg: MonitorConfig = MonitorConfig(),
           diagnostics: list | None = None) -> dict[SmellKind, list[SmellInstance]]:
    """Run every monitor over ``trace``; kinds without instances are omitted."""
    entries = trace.entries
    src = trace.source
    found = {
        SmellKind.DW: detect_dw(entries, src, diagnostics),
        SmellKind.IOD: detect_iod(entries, cfg, src, diagnostics),
        **detect_heavy(entries, cfg, src, diagnostics),
        SmellKind.NLMR: detect_nlmr(entries, events, cfg, src, diagnostics),
        SmellKind.HMU: detect_hmu(entries, cfg, src, diagnostics),
    }
    return {k: v for k, v in found.items() if v}


def write_reports(results: dict[SmellKind, list[SmellInstance]], out_dir: str | os.PathLike) -> list[Path]:
    """One ``<KIND>.txt`` per smell kind, created even when empty."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind in SmellKind:
        lines = [line for inst in results.get(kind, []) for line in inst.lines()]
        path = out / f"{kind.value}.txt"
        atomic_write(path, "".join(l + "\n" for l in lines))
        paths.append(path)
    return paths


def read_reports(report_dir: str | os.PathLike) -> dict[SmellKind, list[tuple[list[str], list[list[str]]]]]:
    """Parse report files back into (header fields, witness fields) blocks."""
    found = {}
    for kind in SmellKind:
        path = Path(report_dir) / f"{kind.value}.txt"
        if not path.exists():
            continue
        blocks: list[tuple[list[str], list[list[str]]]] = []
        for line in path.read_text(encoding="utf-8").splitlines():
            fields = line.split(",")
            if len(fields) == 4 + len(PAYLOAD_FIELDS[kind]):
                blocks.append((fields, []))
            elif len(fields) == 4 and blocks:
                blocks[-1][1].append(fields)
            else:
                raise InconsistentTrace(f"{path}: unexpected report line {line!r}")
        found[kind] = blocks
    return found
