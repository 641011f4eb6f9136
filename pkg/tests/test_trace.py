import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smelltrace.trace import (EVENT_KINDS, INT, ArityMismatch, DuplicateDecl, EventDecl, EventsFile, Location,
                              LogEntry, MalformedDecl, MalformedLine, format_timestamp, parse_decl,
                              parse_log_entry, read_events, read_events_file, read_trace, serialize_log_entry,
                              timestamp_millis, unwrap_timestamps, write_events_file)

ADD_LINE = "package.TimePeriodPreference$TimePeriod.java$fromString:0:hmuadd:206399898:1:HashMap"

HASHMAP_TRACE = """\
package.TimePeriodPreference.java$<clinit>:0:hmuimpl:206399898:0:HashMap
package.TimePeriodPreference.java$fromString:0:hmuadd:206399898:1:HashMap
package.TimePeriodPreference.java$fromString:0:hmuadd:206399898:2:HashMap
package.TimePeriodPreference.java$fromString:0:hmuadd:206399898:3:HashMap
package.TimePeriodPreference.java$fromString:0:hmuadd:206399898:4:HashMap
"""


def test_add_line_fields():
    e = parse_log_entry(ADD_LINE)
    assert e.location == Location("package", "TimePeriodPreference$TimePeriod.java", "fromString")
    assert (e.id, e.keyword, e.values) == (0, "hmuadd", ("206399898", "1", "HashMap"))
    assert e.timestamp is None


def test_add_line_round_trip_is_byte_identical():
    assert serialize_log_entry(parse_log_entry(ADD_LINE)) == ADD_LINE


def test_clinit_and_zero_size():
    e = parse_log_entry("a.B.java$<clinit>:0:hmuimpl:7:0:HashMap")
    assert e.location.method == "<clinit>"
    assert e.int_value("size") == 0


def test_timestamp_prefix():
    line = "07:52:02.035," + ADD_LINE
    e = parse_log_entry(line)
    assert e.timestamp == "07:52:02.035"
    assert serialize_log_entry(e) == line


@pytest.mark.parametrize("line", [
    "I/ActivityManager( 123): Start proc com.example",
    "",
    "a.B.java$m:x:hmuadd:1:1:HashMap",         # id not an integer
    "a.B.java$m:0:hmunew:1:1:HashMap",         # unknown keyword
    "a.B.java$m:0:hmuadd:1:1",                 # too few values
    "a.B.java$m:0:wlacquire:1:2",              # too many values
    "a.B.java$m:0:hmuadd:1:01:HashMap",        # non-canonical integer
    "a.B$m:0:wlacquire:1",                     # no .java segment
    "25:00:00.000,a.B.java$m:0:wlacquire:1",   # hour out of range
])
def test_malformed_lines(line):
    with pytest.raises(MalformedLine):
        parse_log_entry(line)


def test_serialize_checks_arity():
    e = LogEntry(Location("a", "B.java", "m"), 0, "wlacquire", ("1", "2"))
    with pytest.raises(ArityMismatch):
        serialize_log_entry(e)


def test_every_keyword_has_one_smell_and_arity():
    hmu = {k for k, v in EVENT_KINDS.items() if v.smell == "HMU"}
    assert hmu == {"hmuimpl", "hmuadd", "hmuaddall", "hmuremove", "hmuclear"}
    assert all(EVENT_KINDS[k].arity == 3 for k in hmu)
    assert {v.smell for v in EVENT_KINDS.values()} == {"HMU", "DW", "IOD", "HAS", "HSS", "HBR", "NLMR"}


def test_hashmap_trace():
    trace = read_trace(io.StringIO(HASHMAP_TRACE))
    assert len(trace) == 5
    assert [e.keyword for e in trace] == ["hmuimpl"] + ["hmuadd"] * 4


def test_empty_stream():
    trace = read_trace(io.StringIO(""))
    assert len(trace) == 0 and trace.dropped == 0


def test_interleaved_junk_is_dropped_in_order():
    good = HASHMAP_TRACE.splitlines()
    junk = ["D/dalvikvm: GC_CONCURRENT freed 2K", "", "random text", "x:y:z", "12:00:00.000,hello"]
    mixed = [line for pair in zip(junk, good) for line in pair]
    trace = read_trace(mixed)
    assert [serialize_log_entry(e) for e in trace] == good
    assert trace.dropped == 5


def test_unfiltered_reader_raises():
    with pytest.raises(MalformedLine):
        read_trace(["junk"], filter=False)


def test_timestamps():
    assert format_timestamp(((7 * 60 + 52) * 60 + 2) * 1000 + 35) == "07:52:02.035"
    assert timestamp_millis("07:52:02.035") == 28322035
    day = 24 * 3600 * 1000
    assert unwrap_timestamps(["23:59:59.900", None, "00:00:00.100"]) == [day - 100, None, day + 100]


# -- events file ---------------------------------------------------------------

def test_decl_from_header_fields():
    d = parse_decl("package.TimePeriodPreference$TimePeriod.java,<clinit>,0,hmuimpl")
    assert d == EventDecl("package.TimePeriodPreference$TimePeriod.java", "<clinit>", 0, "hmuimpl")


def test_events_file_round_trip(tmp_path):
    ev = EventsFile((EventDecl("a.B.java", "m", 3, "hmuadd"), EventDecl("a.B.java", "m", 9, "hmuadd"),
                     EventDecl("a.C.java", "<init>", 0, "wlacquire")))
    path = tmp_path / "events.csv"
    write_events_file(ev, path)
    assert read_events_file(path) == ev
    assert path.read_text() == "a.B.java,m,3,hmuadd\na.B.java,m,9,hmuadd\na.C.java,<init>,0,wlacquire\n"


def test_site_ids_are_ordinals_within_method_and_keyword():
    ev = read_events(["a.B.java,m,3,hmuadd", "a.B.java,m,5,hmuimpl", "a.B.java,m,9,hmuadd"])
    assert [s.id for s in ev.sites] == [0, 0, 1]


def test_empty_events_file(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text("")
    assert len(read_events_file(path)) == 0


def test_duplicate_decl():
    with pytest.raises(DuplicateDecl):
        read_events(["a.B.java,m,3,hmuadd", "a.B.java,m,3,hmuadd"])


@pytest.mark.parametrize("line", ["a.B.java,m,3", "a.B.java,m,x,hmuadd", "a.B.java,m,3,nothing", ",m,3,hmuadd"])
def test_malformed_decl(line):
    with pytest.raises(MalformedDecl):
        parse_decl(line)


# -- grammar round trip ----------------------------------------------------------

ident = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True)
simple_class = st.from_regex(r"[A-Z][A-Za-z0-9_]{0,6}(\$[A-Za-z0-9_]{1,5}){0,2}", fullmatch=True)
token = st.from_regex(r"[A-Za-z0-9_.\-$<>]{1,8}", fullmatch=True)
method = st.one_of(ident, st.sampled_from(["<init>", "<clinit>", "lambda$run$0", "access$000"]))
canonical_int = st.integers(0, 10**12).map(str)


@st.composite
def entries(draw):
    pkg = ".".join(draw(st.lists(ident, min_size=0, max_size=3)))
    loc = Location(pkg, draw(simple_class) + ".java", draw(method))
    kw = draw(st.sampled_from(sorted(EVENT_KINDS)))
    values = tuple(draw(canonical_int if t == INT else token) for t in EVENT_KINDS[kw].types)
    ts = draw(st.none() | st.integers(0, 24 * 3600 * 1000 - 1).map(format_timestamp))
    return LogEntry(loc, draw(st.integers(0, 50)), kw, values, ts)


@settings(max_examples=1000)
@given(entries())
def test_entry_round_trip(e):
    line = serialize_log_entry(e)
    assert parse_log_entry(line) == e
    assert serialize_log_entry(parse_log_entry(line)) == line


@given(st.lists(entries(), max_size=10), st.lists(st.text(alphabet="ab :,.$", max_size=12), max_size=10))
def test_filtering_keeps_valid_lines_in_order(good, junk):
    lines = [serialize_log_entry(e) for e in good]
    mixed = []
    for i in range(max(len(lines), len(junk))):
        if i < len(junk):
            mixed.append(junk[i])
        if i < len(lines):
            mixed.append(lines[i])
    assert list(read_trace(mixed)) == good
