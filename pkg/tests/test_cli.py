import json
import subprocess
import sys

import pytest

from smelltrace.cli import main
from smelltrace.hybrid import read_phases
from smelltrace.monitors import SmellKind, read_reports
from smelltrace.trace import read_events_file

HASHMAP_TRACE = """\
07:52:02.035,package.TimePeriodPreference.java$<clinit>:0:hmuimpl:206399898:0:HashMap
07:52:02.036,package.TimePeriodPreference.java$fromString:0:hmuadd:206399898:1:HashMap
07:52:02.037,package.TimePeriodPreference.java$fromString:0:hmuadd:206399898:2:HashMap
07:52:02.038,package.TimePeriodPreference.java$fromString:0:hmuadd:206399898:3:HashMap
07:52:02.039,package.TimePeriodPreference.java$fromString:0:hmuadd:206399898:4:HashMap
"""
EVENTS = "package.TimePeriodPreference.java,<clinit>,12,hmuimpl\npackage.TimePeriodPreference.java,fromString,30,hmuadd\n"


def hashmap_files(tmp_path, name="package"):
    trace = tmp_path / f"{name}.log"
    trace.write_text(HASHMAP_TRACE)
    events = tmp_path / "events.csv"
    events.write_text(EVENTS)
    return trace, events


def simulate(out, *extra):
    return main(["simulate", "--out", str(out), *extra])


# -- detect -------------------------------------------------------------------------

def test_detect_hashmap_trace(tmp_path, capsys):
    trace, events = hashmap_files(tmp_path)
    assert main(["detect", "--trace", str(trace), "--events", str(events), "--out", str(tmp_path / "o"),
                 "--package", "package"]) == 0
    report = (tmp_path / "o" / "reports" / "HMU.txt").read_text()
    assert report == ("package.apk,package,package.TimePeriodPreference.java,<clinit>,HashMap,4\n"
                      "07:52:02.035,package.TimePeriodPreference.java$<clinit>,0,hmuimpl\n")
    assert "HMU=1" in capsys.readouterr().out


def test_detect_missing_events(tmp_path, capsys):
    trace = tmp_path / "t.log"
    trace.write_text(HASHMAP_TRACE)
    assert main(["detect", "--trace", str(trace), "--out", str(tmp_path / "o")]) == 2
    assert "events file not found" in capsys.readouterr().err


def test_detect_missing_trace(tmp_path):
    assert main(["detect", "--trace", str(tmp_path / "nope.log"), "--out", str(tmp_path / "o")]) == 2


def test_detect_directory_of_traces(tmp_path):
    src = tmp_path / "traces"
    src.mkdir()
    for name in ("a", "b", "c"):
        hashmap_files(src, name)
    assert main(["detect", "--trace", str(src), "--out", str(tmp_path / "o")]) == 0
    for name in ("a", "b", "c"):
        blocks = read_reports(tmp_path / "o" / name / "reports")
        (header, _), = blocks[SmellKind.HMU]
        assert header[0] == f"{name}.apk"


def test_detect_records_dropped_lines(tmp_path):
    trace, events = hashmap_files(tmp_path)
    trace.write_text("I/ActivityManager: noise\n" + HASHMAP_TRACE)
    assert main(["detect", "--trace", str(trace), "--events", str(events), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "detect.diag").read_text() == "dropped 1 non-trace lines\n"


def test_detect_bad_config(tmp_path):
    trace, events = hashmap_files(tmp_path)
    cfg = tmp_path / "c.json"
    cfg.write_text('{"monitor": {"nope": 1}}')
    assert main(["detect", "--trace", str(trace), "--events", str(events), "--out", str(tmp_path / "o"),
                 "--config", str(cfg)]) == 2


# -- simulate -------------------------------------------------------------------------

def test_simulate_random_is_deterministic(tmp_path):
    for d in ("r1", "r2"):
        assert simulate(tmp_path / d, "--app", "login_home", "--agent", "random", "--seed", "7") == 0
    for f in ("trace.log", "events.csv", "coverage.csv", "actions.csv", "run.json"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()
    meta = json.loads((tmp_path / "r1" / "run.json").read_text())
    assert meta["actions"] == 100 and meta["agent"] == "random" and meta["error"] is None


def test_simulated_events_file_matches_model(tmp_path):
    from smelltrace.appsim import load_app
    simulate(tmp_path / "r", "--app", "piano", "--max-actions", "5")
    assert read_events_file(tmp_path / "r" / "events.csv") == load_app("piano").events


def test_simulate_llm_oracle_reaches_home(tmp_path):
    assert simulate(tmp_path / "r", "--app", "login_home", "--agent", "llm", "--oracle", "login_home",
                    "--max-actions", "10") == 0
    assert "HomeActivity.java" in (tmp_path / "r" / "trace.log").read_text()


def test_simulate_hybrid_writes_phases(tmp_path):
    assert simulate(tmp_path / "r", "--app", "twenty_clicks", "--agent", "hybrid", "--oracle", "twenty_clicks",
                    "--blocked-window", "30actions", "--llm-burst", "5", "--max-actions", "200") == 0
    phases = read_phases(tmp_path / "r" / "phases.csv")
    assert phases[0].phase == "random"
    llm = [p for p in phases if p.phase == "llm"]
    assert llm and all(p.logical_ms == p.action * 1000 for p in phases)


def test_simulate_several_apps(tmp_path):
    assert simulate(tmp_path / "r", "--app", "piano", "--app", "hmu_cache", "--jobs", "2",
                    "--max-actions", "20") == 0
    assert (tmp_path / "r" / "piano" / "trace.log").exists() and (tmp_path / "r" / "hmu_cache" / "trace.log").exists()


def test_simulate_bad_inputs(tmp_path):
    assert simulate(tmp_path / "r", "--app", "no_such_app") == 2
    assert simulate(tmp_path / "r", "--app", "piano", "--blocked-window", "5min") == 2
    assert simulate(tmp_path / "r", "--app", "piano", "--llm-burst", "0") == 2


@pytest.mark.parametrize("agent", ["llm", "hybrid"])
def test_backend_unreachable_exits_3(tmp_path, agent, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"backend": {"max_retries": 1, "timeout": 2},
                               "hybrid": {"blocked_window": 1}}))
    code = simulate(tmp_path / "r", "--app", "login_home", "--agent", agent, "--config", str(cfg),
                    "--backend-url", "http://127.0.0.1:9/v1", "--max-actions", "10")
    assert code == 3
    assert "BackendUnreachable" in capsys.readouterr().err
    assert (tmp_path / "r" / "trace.log").exists()


# -- eval ------------------------------------------------------------------------------

def test_eval_coverage_empty_trace(tmp_path, capsys):
    simulate(tmp_path / "r", "--app", "piano", "--max-actions", "0")
    assert main(["eval", "coverage", "--run", str(tmp_path / "r")]) == 0
    universe = len(read_events_file(tmp_path / "r" / "events.csv"))
    assert capsys.readouterr().out.strip().endswith(f": 0/{universe}")


def test_eval_pr_perfect(tmp_path, capsys):
    simulate(tmp_path / "r", "--app", "hmu_cache", "--max-actions", "60", "--seed", "1")
    main(["detect", "--trace", str(tmp_path / "r"), "--out", str(tmp_path / "d")])
    rows = ["apk,kind,class,method,label"]
    for kind, blocks in read_reports(tmp_path / "d" / "reports").items():
        rows += sorted({f"{h[0]},{kind.value},{h[2]},{h[3]},smell" for h, _ in blocks})
    assert len(rows) > 1
    truth = tmp_path / "truth.csv"
    truth.write_text("\n".join(rows) + "\n")
    capsys.readouterr()
    assert main(["eval", "pr", "--reports", str(tmp_path / "d" / "reports"), "--truth", str(truth)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1] == "all   precision=1.000 recall=1.000"
    assert any(line.endswith("precision=n/a recall=n/a") for line in out)


def _synthetic_run(path, covered, universe):
    path.mkdir()
    path.joinpath("events.csv").write_text("".join(f"p.C{i}.java,m,1,wlacquire\n" for i in range(universe)))
    path.joinpath("trace.log").write_text("".join(f"p.C{i}.java$m:0:wlacquire:w\n" for i in sorted(covered)))


def test_eval_mcnemar_published_cells(tmp_path, capsys):
    u = 559 + 309 + 213 + 3356
    both, only_a, only_b = range(559), range(559, 868), range(868, 1081)
    _synthetic_run(tmp_path / "llm", [*both, *only_a], u)
    _synthetic_run(tmp_path / "monkey", [*both, *only_b], u)
    assert main(["eval", "mcnemar", "--a", str(tmp_path / "llm"), "--b", str(tmp_path / "monkey")]) == 0
    cells, stat = capsys.readouterr().out.splitlines()
    assert cells == "a=559 b=309 c=213 d=3356"
    p = float(stat.split("p=")[1].split()[0])
    assert abs(p - 0.000026) <= 1e-6


def test_eval_mcnemar_errors(tmp_path):
    _synthetic_run(tmp_path / "x", range(3), 10)
    _synthetic_run(tmp_path / "y", range(3), 10)
    _synthetic_run(tmp_path / "z", range(3), 11)
    assert main(["eval", "mcnemar", "--a", str(tmp_path / "x"), "--b", str(tmp_path / "y")]) == 2
    assert main(["eval", "mcnemar", "--a", str(tmp_path / "x"), "--b", str(tmp_path / "z")]) == 2


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "smelltrace", "simulate", "--app", "piano", "--max-actions", "3",
                        "--out", str(tmp_path / "r")], capture_output=True, text=True)
    assert r.returncode == 0 and "piano: 3 actions" in r.stdout
