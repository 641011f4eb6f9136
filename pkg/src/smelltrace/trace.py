"""Log-entry and events-file formats.

A trace line looks like::

    [HH:MM:SS.mmm,]package.Class.java$method:id:keyword:value:value...

and an events-file line like::

    package.Class.java,method,line,keyword
"""
from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

log = logging.getLogger(__name__)

INT = "int"
TOKEN = "token"


class MalformedLine(ValueError):
    """The line is not a code-smell log entry."""


class ArityMismatch(ValueError):
    pass


class MalformedDecl(ValueError):
    pass


class DuplicateDecl(ValueError):
    pass


@dataclass(frozen=True)
class EventKind:
    keyword: str
    smell: str
    fields: tuple[str, ...]
    types: tuple[str, ...]

    @property
    def arity(self) -> int:
        return len(self.fields)


def _kinds(smell, keywords, fields, types):
    return {k: EventKind(k, smell, tuple(fields), tuple(types)) for k in keywords}


EVENT_KINDS: dict[str, EventKind] = {
    **_kinds("HMU", ["hmuimpl", "hmuadd", "hmuaddall", "hmuremove", "hmuclear"],
             ["structureId", "size", "structureType"], [TOKEN, INT, TOKEN]),
    **_kinds("DW", ["wlacquire", "wlrelease"], ["wakelockId"], [TOKEN]),
    **_kinds("IOD", ["odstart", "odend"], ["viewId", "millis"], [TOKEN, INT]),
    **_kinds("IOD", ["odalloc"], ["viewId", "bytes"], [TOKEN, INT]),
    **_kinds("HAS", ["hasstart", "hasend"], ["taskId", "millis"], [TOKEN, INT]),
    **_kinds("HSS", ["hssstart", "hssend"], ["taskId", "millis"], [TOKEN, INT]),
    **_kinds("HBR", ["hbrstart", "hbrend"], ["taskId", "millis"], [TOKEN, INT]),
    **_kinds("NLMR", ["actstart"], ["activityName"], [TOKEN]),
    **_kinds("NLMR", ["olmstart", "olmend"], ["activityName", "heapBytes"], [TOKEN, INT]),
}

_INT_RE = re.compile(r"0|[1-9][0-9]*")
_TOKEN_RE = re.compile(r"[^\s:,]+")
_TS_RE = re.compile(r"([0-2][0-9]):([0-5][0-9]):([0-5][0-9])\.([0-9]{3}),")

DAY_MILLIS = 24 * 3600 * 1000


def event_kind(keyword: str) -> EventKind:
    try:
        return EVENT_KINDS[keyword]
    except KeyError:
        raise MalformedLine(f"unknown keyword {keyword!r}") from None


# -- locations ----------------------------------------------------------------

@dataclass(frozen=True)
class Location:
    package: str
    cls: str  # e.g. "TimePeriodPreference$TimePeriod.java"
    method: str

    @property
    def qualified_class(self) -> str:
        return f"{self.package}.{self.cls}" if self.package else self.cls

    def __str__(self) -> str:
        return f"{self.qualified_class}${self.method}"

    @classmethod
    def parse(cls, text: str) -> "Location":
        qualified, sep, method = text.partition(".java$")
        if not sep or not qualified or not _TOKEN_RE.fullmatch(method):
            raise MalformedLine(f"bad location {text!r}")
        qualified += ".java"
        if ":" in qualified or "," in qualified or any(c.isspace() for c in qualified):
            raise MalformedLine(f"bad location {text!r}")
        return cls.from_class(qualified, method)

    @classmethod
    def from_class(cls, qualified: str, method: str) -> "Location":
        """Split ``pkg.sub.Outer$Inner.java`` into package and class parts."""
        stem = qualified[: -len(".java")] if qualified.endswith(".java") else qualified
        head = stem.split("$", 1)[0]
        package, _, _ = head.rpartition(".")
        simple = qualified[len(package) + 1:] if package else qualified
        return cls(package, simple, method)


# -- log entries --------------------------------------------------------------

def format_timestamp(millis: int) -> str:
    millis %= DAY_MILLIS
    s, ms = divmod(millis, 1000)
    m, s = divmod(s, 60)
    h, m = divmod(m, 60)
    return f"{h:02d}:{m:02d}:{s:02d}.{ms:03d}"


def timestamp_millis(ts: str) -> int:
    m = _TS_RE.fullmatch(ts + ",")
    if not m or int(m.group(1)) > 23:
        raise ValueError(f"bad timestamp {ts!r}")
    h, mi, s, ms = (int(g) for g in m.groups())
    return ((h * 60 + mi) * 60 + s) * 1000 + ms


def unwrap_timestamps(stamps: Iterable[str | None]) -> list[int | None]:
    """Time-of-day stamps to monotone millis; a backward jump over 12h is a day rollover."""
    out: list[int | None] = []
    offset = 0
    prev = None
    for ts in stamps:
        if ts is None:
            out.append(None)
            continue
        t = timestamp_millis(ts)
        if prev is not None and prev - t > DAY_MILLIS // 2:
            offset += DAY_MILLIS
        prev = t
        out.append(t + offset)
    return out


@dataclass(frozen=True)
class LogEntry:
    location: Location
    id: int
    keyword: str
    values: tuple[str, ...]
    timestamp: str | None = None

    @property
    def kind(self) -> EventKind:
        return EVENT_KINDS[self.keyword]

    def value(self, name: str) -> str:
        return self.values[self.kind.fields.index(name)]

    def int_value(self, name: str) -> int:
        return int(self.value(name))

    @property
    def site(self) -> "SiteKey":
        return SiteKey(self.location.qualified_class, self.location.method, self.keyword, self.id)

    def body(self) -> str:
        return ":".join([str(self.location), str(self.id), self.keyword, *self.values])

    def __str__(self) -> str:
        return serialize_log_entry(self)


def _check_values(keyword: str, values: tuple[str, ...], exc: type[Exception]) -> EventKind:
    kind = EVENT_KINDS.get(keyword)
    if kind is None:
        raise exc(f"unknown keyword {keyword!r}")
    if len(values) != kind.arity:
        raise exc(f"{keyword} takes {kind.arity} values, got {len(values)}")
    for v, t in zip(values, kind.types):
        pattern = _INT_RE if t == INT else _TOKEN_RE
        if not isinstance(v, str) or not pattern.fullmatch(v):
            raise exc(f"bad {t} value {v!r} for {keyword}")
    return kind


def parse_log_entry(line: str) -> LogEntry:
    line = line.rstrip("\r\n")
    if not line:
        raise MalformedLine("empty line")
    timestamp = None
    m = _TS_RE.match(line)
    if m:
        if int(m.group(1)) > 23:
            raise MalformedLine(f"bad timestamp in {line!r}")
        timestamp = line[: m.end() - 1]
        line = line[m.end():]
    parts = line.split(":")
    if len(parts) < 3:
        raise MalformedLine(f"too few fields: {line!r}")
    loc_text, id_text, keyword, *values = parts
    if not _INT_RE.fullmatch(id_text):
        raise MalformedLine(f"bad id {id_text!r}")
    _check_values(keyword, tuple(values), MalformedLine)
    return LogEntry(Location.parse(loc_text), int(id_text), keyword, tuple(values), timestamp)


def serialize_log_entry(e: LogEntry) -> str:
    _check_values(e.keyword, e.values, ArityMismatch)
    body = e.body()
    return f"{e.timestamp},{body}" if e.timestamp is not None else body


# -- traces -------------------------------------------------------------------

class AppId(NamedTuple):
    apk: str = ""
    package: str = ""


@dataclass(frozen=True)
class Trace:
    entries: tuple[LogEntry, ...] = ()
    source: AppId = AppId()
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[LogEntry]:
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def read_trace(stream: Iterable[str], filter: bool = True, source: AppId = AppId()) -> Trace:
    """Parse a line stream. With ``filter`` on, foreign lines are counted and skipped."""
    entries = []
    dropped = 0
    for line in stream:
        try:
            entries.append(parse_log_entry(line))
        except MalformedLine:
            if not filter:
                raise
            if line.strip():
                log.debug("dropping non-trace line %r", line)
            dropped += 1
    return Trace(tuple(entries), source, dropped)


def load_trace(path: str | os.PathLike, source: AppId = AppId()) -> Trace:
    with open(path, encoding="utf-8") as f:
        return read_trace(f, source=source)


def write_trace(trace: Iterable[LogEntry], path: str | os.PathLike) -> None:
    atomic_write(path, "".join(serialize_log_entry(e) + "\n" for e in trace))


# -- events file --------------------------------------------------------------

class SiteKey(NamedTuple):
    """Coverage identity of an instrumented site: the id is the ordinal among
    sites sharing (class, method, keyword)."""
    cls: str
    method: str
    keyword: str
    id: int


@dataclass(frozen=True)
class EventDecl:
    cls: str
    method: str
    line: int
    keyword: str

    def __str__(self) -> str:
        return f"{self.cls},{self.method},{self.line},{self.keyword}"


@dataclass(frozen=True)
class EventsFile:
    decls: tuple[EventDecl, ...] = ()
    _sites: tuple[SiteKey, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        seen = set()
        counts: dict[tuple[str, str, str], int] = {}
        sites = []
        for d in self.decls:
            if d in seen:
                raise DuplicateDecl(f"duplicate declaration {d}")
            seen.add(d)
            group = (d.cls, d.method, d.keyword)
            n = counts.get(group, 0)
            counts[group] = n + 1
            sites.append(SiteKey(d.cls, d.method, d.keyword, n))
        object.__setattr__(self, "_sites", tuple(sites))

    def __len__(self) -> int:
        return len(self.decls)

    def __iter__(self) -> Iterator[EventDecl]:
        return iter(self.decls)

    @property
    def sites(self) -> tuple[SiteKey, ...]:
        return self._sites

    def site_of(self, decl: EventDecl) -> SiteKey:
        return self._sites[self.decls.index(decl)]

    def declares(self, cls: str, keyword: str) -> bool:
        return any(d.cls == cls and d.keyword == keyword for d in self.decls)


def parse_decl(line: str) -> EventDecl:
    parts = line.rstrip("\r\n").split(",")
    if len(parts) != 4:
        raise MalformedDecl(f"expected 4 columns: {line!r}")
    cls, method, line_no, keyword = parts
    if not cls or not _TOKEN_RE.fullmatch(method) or not _INT_RE.fullmatch(line_no):
        raise MalformedDecl(f"bad declaration {line!r}")
    if keyword not in EVENT_KINDS:
        raise MalformedDecl(f"unknown keyword {keyword!r}")
    return EventDecl(cls, method, int(line_no), keyword)


def read_events(lines: Iterable[str]) -> EventsFile:
    return EventsFile(tuple(parse_decl(l) for l in lines if l.strip()))


def read_events_file(path: str | os.PathLike) -> EventsFile:
    with open(path, encoding="utf-8") as f:
        return read_events(f)


def write_events_file(events: EventsFile, path: str | os.PathLike) -> None:
    atomic_write(path, "".join(f"{d}\n" for d in events))


def atomic_write(path: str | os.PathLike, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)
