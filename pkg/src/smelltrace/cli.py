"""Command-line entry point: ``detect``, ``simulate`` and ``eval``.

Exit codes: 0 success, 2 bad input (IO, format, config), 3 LLM backend unreachable.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import evaluation as ev
from .agents import LlmAgent, RandomAgent
from .appsim import AppModel, Budget, SchemaError, load_app, run_session
from .backends import HttpBackend, load_script
from .config import AGENTS, ConfigError, RunConfig, load_config
from .hybrid import parse_window, run_hybrid_session, write_phases
from .monitors import SmellKind, detect, read_reports, write_reports
from .trace import AppId, atomic_write, load_trace, read_events_file, write_events_file, write_trace

log = logging.getLogger("smelltrace")

EXIT_OK, EXIT_INPUT, EXIT_BACKEND = 0, 2, 3


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_INPUT


# -- detect -------------------------------------------------------------------

def _source_for(trace_path: Path, apk: str | None, package: str | None) -> AppId:
    meta = trace_path.parent / "run.json"
    if meta.exists() and trace_path.name == "trace.log":
        doc = json.loads(meta.read_text(encoding="utf-8"))
        return AppId(apk or doc.get("apk", ""), package or doc.get("package", ""))
    return AppId(apk or trace_path.stem + ".apk", package or "")


def _detect_one(trace_path: Path, events_path: Path, cfg: RunConfig, out: Path, args) -> dict:
    events = read_events_file(events_path)
    trace = load_trace(trace_path, _source_for(trace_path, args.apk, args.package))
    diagnostics: list[str] = []
    results = detect(trace, events, cfg.monitor, diagnostics)
    write_reports(results, out / "reports")
    diag = [f"dropped {trace.dropped} non-trace lines"] if trace.dropped else []
    atomic_write(out / "detect.diag", "".join(d + "\n" for d in diag + diagnostics))
    return {k: len(results.get(k, [])) for k in SmellKind}


def cmd_detect(args) -> int:
    cfg = _config(args)
    target = Path(args.trace)
    out = Path(args.out)
    if not target.exists():
        return _fail(f"no such trace file or directory: {target}")
    if target.is_dir() and (target / "trace.log").exists():
        jobs = [(target / "trace.log", out)]
    elif target.is_dir():
        jobs = [(p, out / p.stem) for p in sorted(target.iterdir()) if p.suffix == ".log" and p.is_file()]
        if not jobs:
            return _fail(f"no .log traces in {target}")
    else:
        jobs = [(target, out)]
    for trace_path, dest in jobs:
        events = Path(args.events) if args.events else trace_path.parent / "events.csv"
        if not events.exists():
            return _fail(f"events file not found: {events}")
        try:
            counts = _detect_one(trace_path, events, cfg, dest, args)
        except (OSError, ValueError) as exc:
            return _fail(f"{trace_path}: {exc}")
        summary = " ".join(f"{k.value}={n}" for k, n in counts.items())
        print(f"{trace_path}: {summary} -> {dest / 'reports'}")
    return EXIT_OK


# -- simulate -----------------------------------------------------------------

def _backend(cfg: RunConfig):
    if cfg.backend.oracle:
        return load_script(cfg.backend.oracle)
    b = cfg.backend
    return HttpBackend(b.base_url, b.model, b.timeout, b.max_retries)


def simulate_app(app: AppModel, cfg: RunConfig, out: Path):
    """Run one session and write its run directory. Returns the ``SessionResult``."""
    budget = Budget(cfg.max_actions, cfg.max_logical_ms)
    if cfg.agent == "random":
        result = run_session(app, RandomAgent(cfg.seed), budget, cfg.seed, cfg.tick_ms)
    elif cfg.agent == "llm":
        result = run_session(app, LlmAgent(_backend(cfg), app, cfg.llm), budget, cfg.seed, cfg.tick_ms)
    else:
        result = run_hybrid_session(app, RandomAgent(cfg.seed), LlmAgent(_backend(cfg), app, cfg.llm),
                                    cfg.hybrid, budget, cfg.seed, cfg.tick_ms)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(result.trace, out / "trace.log")
    write_events_file(app.events, out / "events.csv")
    ev.write_series(result.coverage, out / "coverage.csv")
    if cfg.agent == "hybrid":
        write_phases(result.phases, out / "phases.csv")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["action", "logical_ms", "agent", "command", "outcome", "new_sites"])
    for r in result.actions:
        w.writerow([r.index, r.clock, r.agent, str(r.action), r.outcome.value, r.new_sites])
    atomic_write(out / "actions.csv", buf.getvalue())
    meta = {"app": app.name, "apk": app.app_id.apk, "package": app.app_id.package, "agent": cfg.agent,
            "seed": cfg.seed, "actions": len(result.actions), "covered": result.coverage.final,
            "universe": result.coverage.universe, "error": result.error}
    atomic_write(out / "run.json", json.dumps(meta, indent=2) + "\n")
    return result


def cmd_simulate(args) -> int:
    overrides = {"agent": args.agent, "seed": args.seed, "max_actions": args.max_actions,
                 "max_logical_ms": args.max_logical_ms, "tick_ms": args.tick_ms,
                 "backend.oracle": args.oracle, "backend.base_url": args.backend_url, "backend.model": args.model,
                 "hybrid.llm_burst": args.llm_burst}
    if args.blocked_window is not None:
        try:
            n, unit = parse_window(args.blocked_window)
        except ValueError as exc:
            return _fail(str(exc))
        overrides["hybrid.blocked_window"], overrides["hybrid.window_unit"] = n, unit
    try:
        cfg = _config(args, overrides)
        apps = [load_app(a) for a in args.app]
    except (ConfigError, SchemaError, OSError, ValueError) as exc:
        return _fail(str(exc))
    if len({a.name for a in apps}) != len(apps):
        return _fail("each --app must be a different model")
    out = Path(args.out)
    dests = [out] if len(apps) == 1 else [out / a.name for a in apps]
    try:
        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            results = list(pool.map(lambda ad: simulate_app(ad[0], cfg, ad[1]), zip(apps, dests)))
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    status = EXIT_OK
    for app, dest, r in zip(apps, dests, results):
        print(f"{app.name}: {len(r.actions)} actions, {r.coverage.final}/{r.coverage.universe} sites -> {dest}")
        if r.error:
            print(f"{app.name}: {r.error}", file=sys.stderr)
            if r.error.startswith("BackendUnreachable"):
                status = EXIT_BACKEND
    return status


# -- eval ---------------------------------------------------------------------

def _run_coverage(run: Path):
    events = read_events_file(run / "events.csv")
    trace = load_trace(run / "trace.log")
    diagnostics: list[str] = []
    series, _ = ev.coverage(trace, events, diagnostics)
    for d in diagnostics:
        print(f"{run}: {d}", file=sys.stderr)
    return events, trace, series


def cmd_eval_coverage(args) -> int:
    try:
        for run in map(Path, args.run):
            _, _, series = _run_coverage(run)
            if args.out:
                ev.write_series(series, Path(args.out) / f"coverage_{run.name}.csv")
            print(f"{run}: {series.final}/{series.universe}")
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    return EXIT_OK


def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.3f}"


def cmd_eval_pr(args) -> int:
    try:
        truth = ev.read_ground_truth(args.truth)
        detected = set()
        for d in args.reports:
            for kind, blocks in read_reports(d).items():
                detected |= {ev.TruthKey(h[0], kind.family, h[2], h[3]) for h, _ in blocks}
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    for kind in ev.KIND_ROWS:
        sub = ev.GroundTruth({k: v for k, v in truth.labels.items() if k.kind == kind})
        p, r = ev.precision_recall({k for k in detected if k.kind == kind}, sub)
        print(f"{kind:5s} precision={_fmt(p)} recall={_fmt(r)}")
    p, r = ev.precision_recall(detected, truth)
    print(f"all   precision={_fmt(p)} recall={_fmt(r)}")
    return EXIT_OK


def cmd_eval_mcnemar(args) -> int:
    try:
        ev_a, trace_a, _ = _run_coverage(Path(args.a))
        ev_b, trace_b, _ = _run_coverage(Path(args.b))
        if set(ev_a.sites) != set(ev_b.sites):
            return _fail("the two runs declare different event universes")
        universe = set(ev_a.sites)
        table = ev.contingency(ev.covered_sites(trace_a, ev_a), ev.covered_sites(trace_b, ev_b), universe)
        stat, p = ev.mcnemar(table, args.mode)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    print(f"a={table.a} b={table.b} c={table.c} d={table.d}")
    print(f"mode={args.mode} statistic={stat:.4f} p={p:.6f} ({p:.4e})")
    return EXIT_OK


# -- wiring -------------------------------------------------------------------

def _config(args, overrides: dict | None = None) -> RunConfig:
    return load_config(getattr(args, "config", None), overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smelltrace", description="Detect Android code smells in execution traces.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log more (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="run the smell monitors over traces")
    d.add_argument("--trace", required=True, help="trace file, run directory, or directory of .log traces")
    d.add_argument("--events", help="events file (default: events.csv next to each trace)")
    d.add_argument("--out", required=True)
    d.add_argument("--config")
    d.add_argument("--apk", help="apk name for report headers")
    d.add_argument("--package", help="package name for report headers")
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("simulate", help="explore a simulated app and record its trace")
    s.add_argument("--app", required=True, action="append", help="model file or bundled name (repeatable)")
    s.add_argument("--agent", choices=AGENTS)
    s.add_argument("--seed", type=int)
    s.add_argument("--max-actions", type=int)
    s.add_argument("--max-logical-ms", type=int)
    s.add_argument("--tick-ms", type=int)
    s.add_argument("--oracle", help="scripted backend file or bundled script name")
    s.add_argument("--backend-url")
    s.add_argument("--model")
    s.add_argument("--blocked-window", help="e.g. 300actions or 300000ms")
    s.add_argument("--llm-burst", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("eval", help="coverage, precision/recall and McNemar's test")
    esub = e.add_subparsers(dest="mode_command", required=True)
    c = esub.add_parser("coverage")
    c.add_argument("--run", required=True, action="append")
    c.add_argument("--out", help="also write coverage_<run>.csv here")
    c.set_defaults(func=cmd_eval_coverage)
    p = esub.add_parser("pr")
    p.add_argument("--reports", required=True, action="append", help="a reports/ directory (repeatable)")
    p.add_argument("--truth", required=True)
    p.set_defaults(func=cmd_eval_pr)
    m = esub.add_parser("mcnemar")
    m.add_argument("--a", required=True, help="run directory of tool A")
    m.add_argument("--b", required=True, help="run directory of tool B")
    m.add_argument("--mode", choices=("plain", "continuity", "exact"), default="plain")
    m.set_defaults(func=cmd_eval_mcnemar)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
