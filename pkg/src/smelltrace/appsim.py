"""Deterministic simulated apps.

An app model is a GUI state machine whose transitions emit the same log entries an
instrumented APK would. Models are JSON documents; see ``docs/app_model.md``.
"""
from __future__ import annotations

import enum
import json
import logging
import os
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Protocol

from .trace import (EVENT_KINDS, AppId, ArityMismatch, EventDecl, EventsFile, Location, LogEntry,
                    Trace, _check_values, format_timestamp)

log = logging.getLogger(__name__)

ACTION_KINDS = ("click", "longclick", "settext", "scroll", "back", "endtask")
DEFAULT_TICK_MILLIS = 1000


class SchemaError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


# -- model --------------------------------------------------------------------

@dataclass(frozen=True)
class AgentAction:
    kind: str
    widget_id: str | None = None
    params: str | None = None

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action {self.kind!r}")
        if self.kind == "settext" and self.params is None:
            raise ValueError("settext needs a text parameter")
        if self.kind in ("back", "endtask") and (self.widget_id or self.params):
            raise ValueError(f"{self.kind} takes no arguments")
        if self.kind not in ("back", "endtask") and not self.widget_id:
            raise ValueError(f"{self.kind} needs a widget")

    def __str__(self) -> str:
        if self.kind in ("back", "endtask"):
            return f"{self.kind}()"
        if self.params is not None:
            return f"{self.kind}({self.widget_id}, {json.dumps(self.params)})"
        return f"{self.kind}({self.widget_id})"


@dataclass(frozen=True)
class Guard:
    kind: str  # always | text_equals | text_matches | counter_at_least
    subject: str = ""
    operand: Any = None

    def holds(self, texts: dict, counters: dict, activity: str) -> bool:
        if self.kind == "always":
            return True
        if self.kind == "counter_at_least":
            return counters.get(self.subject, 0) >= self.operand
        text = texts.get((activity, self.subject), "")
        if self.kind == "text_equals":
            return text == self.operand
        return re.fullmatch(self.operand, text) is not None


@dataclass(frozen=True)
class Site:
    name: str
    decl: EventDecl
    id: int

    @property
    def location(self) -> Location:
        return Location.from_class(self.decl.cls, self.decl.method)


@dataclass(frozen=True)
class Emission:
    site: str
    values: tuple[str, ...]
    once: bool = False


@dataclass(frozen=True)
class Widget:
    id: str
    text: str = ""
    widget_class: str = "android.widget.View"
    clickable: bool = False
    editable: bool = False
    scrollable: bool = False
    long_clickable: bool = False
    counter: str | None = None

    def enabled(self) -> tuple[str, ...]:
        kinds = []
        if self.clickable:
            kinds.append("click")
        if self.long_clickable:
            kinds.append("longclick")
        if self.editable:
            kinds.append("settext")
        if self.scrollable:
            kinds.append("scroll")
        return tuple(kinds)


@dataclass(frozen=True)
class Transition:
    widget: str
    action: str
    guards: tuple[Guard, ...] = ()
    target: str | None = None
    emissions: tuple[Emission, ...] = ()
    increments: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True)
class Activity:
    name: str
    widgets: tuple[Widget, ...] = ()
    on_enter: tuple[Emission, ...] = ()
    transitions: tuple[Transition, ...] = ()

    def widget(self, wid: str) -> Widget | None:
        for w in self.widgets:
            if w.id == wid:
                return w
        return None


@dataclass(frozen=True)
class AppModel:
    name: str
    package: str
    activities: tuple[Activity, ...]
    initial_activity: str
    sites: tuple[Site, ...] = ()
    persona: str = ""
    streak_counters: frozenset[str] = frozenset()
    apk: str = ""

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {a.name: a for a in self.activities})
        object.__setattr__(self, "_sites", {s.name: s for s in self.sites})
        object.__setattr__(self, "_events", EventsFile(tuple(s.decl for s in self.sites)))

    def activity(self, name: str) -> Activity:
        return self._by_name[name]

    def site(self, name: str) -> Site:
        return self._sites[name]

    @property
    def app_id(self) -> AppId:
        return AppId(self.apk or f"{self.package}.apk", self.package)

    @property
    def events(self) -> EventsFile:
        return self._events


# -- loading ------------------------------------------------------------------

_PLACEHOLDER = re.compile(r"\{(t(?:\+\d+)?|counter:[^{}]+)\}")


def _expect(cond, path, msg):
    if not cond:
        raise SchemaError(path, msg)


def _parse_guard(raw, path) -> Guard:
    _expect(isinstance(raw, dict) and len(raw) == 1, path, "a guard is a one-key object")
    (kind, arg), = raw.items()
    if kind == "always":
        return Guard("always")
    _expect(kind in ("text_equals", "text_matches", "counter_at_least"), path, f"unknown guard {kind!r}")
    _expect(isinstance(arg, list) and len(arg) == 2, path, f"{kind} takes [subject, operand]")
    subject, operand = arg
    if kind == "counter_at_least":
        _expect(isinstance(operand, int) and operand >= 0, path, "counter bound must be a non-negative integer")
    else:
        _expect(isinstance(operand, str), path, "text operand must be a string")
        if kind == "text_matches":
            try:
                re.compile(operand)
            except re.error as exc:
                raise SchemaError(path, f"bad pattern: {exc}") from None
    return Guard(kind, subject, operand)


def _parse_emissions(raw, path, sites) -> tuple[Emission, ...]:
    _expect(isinstance(raw, list), path, "emissions must be a list")
    out = []
    for i, em in enumerate(raw):
        p = f"{path}[{i}]"
        _expect(isinstance(em, dict) and em.get("site") in sites, p, f"unknown site {em.get('site') if isinstance(em, dict) else em!r}")
        values = em.get("values", [])
        kind = EVENT_KINDS[sites[em["site"]].decl.keyword]
        _expect(isinstance(values, list) and len(values) == kind.arity, p,
                f"{kind.keyword} takes {kind.arity} values")
        for v in values:
            _expect(isinstance(v, (str, int)) and not re.search(r"[\s:,]", _PLACEHOLDER.sub("0", str(v))),
                    p, f"value {v!r} may not contain ':', ',' or whitespace")
        out.append(Emission(em["site"], tuple(str(v) for v in values), bool(em.get("once", False))))
    return tuple(out)


def _expand_widgets(raw, path) -> list[dict]:
    out = []
    for i, w in enumerate(raw):
        _expect(isinstance(w, dict) and "id" in w, f"{path}[{i}]", "widget needs an id")
        n = w.get("repeat")
        if n is None:
            out.append(w)
            continue
        _expect(isinstance(n, int) and n > 0, f"{path}[{i}].repeat", "repeat must be a positive integer")
        for k in range(n):
            out.append({key: (val.replace("{i}", str(k)) if isinstance(val, str) else val)
                        for key, val in w.items() if key != "repeat"})
    return out


def parse_app(doc: dict) -> AppModel:
    _expect(isinstance(doc, dict), "$", "app model must be an object")
    known = {"name", "package", "apk", "initial_activity", "persona", "counters", "sites", "activities"}
    extra = set(doc) - known
    _expect(not extra, "$", f"unknown keys {sorted(extra)}")
    for key in ("name", "package", "initial_activity", "activities"):
        _expect(key in doc, f"$.{key}", "missing")

    counters = doc.get("counters", {})
    _expect(isinstance(counters, dict), "$.counters", "must be an object")
    streaks = frozenset(n for n, c in counters.items() if isinstance(c, dict) and c.get("streak"))

    decls: dict[str, EventDecl] = {}
    for name, s in doc.get("sites", {}).items():
        p = f"$.sites.{name}"
        _expect(isinstance(s, dict) and {"class", "method", "event"} <= set(s), p, "site needs class, method, event")
        _expect(s["event"] in EVENT_KINDS, p, f"unknown event {s['event']!r}")
        _expect(str(s["class"]).endswith(".java"), p, "class must end in .java")
        decls[name] = EventDecl(s["class"], s["method"], int(s.get("line", 0)), s["event"])
    try:
        events = EventsFile(tuple(decls.values()))
    except ValueError as exc:
        raise SchemaError("$.sites", str(exc)) from None
    sites = {name: Site(name, d, sid.id) for (name, d), sid in zip(decls.items(), events.sites)}

    raw_acts = doc["activities"]
    _expect(isinstance(raw_acts, list) and raw_acts, "$.activities", "need at least one activity")
    names = [a.get("name") if isinstance(a, dict) else None for a in raw_acts]
    _expect(len(set(names)) == len(names), "$.activities", "activity names must be unique")
    _expect(doc["initial_activity"] in names, "$.initial_activity", f"unknown activity {doc['initial_activity']!r}")

    activities = []
    for ai, a in enumerate(raw_acts):
        ap = f"$.activities[{ai}]"
        _expect(isinstance(a.get("name"), str), f"{ap}.name", "missing")
        widgets = []
        seen = set()
        for wi, w in enumerate(_expand_widgets(a.get("widgets", []), f"{ap}.widgets")):
            wp = f"{ap}.widgets[{wi}]"
            _expect(w["id"] not in seen, wp, f"duplicate widget id {w['id']!r}")
            seen.add(w["id"])
            counter = w.get("counter")
            _expect(counter is None or counter in counters, wp, f"undeclared counter {counter!r}")
            widgets.append(Widget(w["id"], w.get("text", ""), w.get("class", "android.widget.View"),
                                  bool(w.get("clickable")), bool(w.get("editable")),
                                  bool(w.get("scrollable")), bool(w.get("long_clickable")), counter))
        transitions = []
        for ti, t in enumerate(a.get("transitions", [])):
            tp = f"{ap}.transitions[{ti}]"
            _expect(t.get("widget") in seen, tp, f"unknown widget {t.get('widget')!r}")
            _expect(t.get("action") in ACTION_KINDS[:4], tp, f"bad action {t.get('action')!r}")
            target = t.get("target")
            _expect(target is None or target in names, f"{tp}.target", f"unknown activity {target!r}")
            guards = tuple(_parse_guard(g, f"{tp}.guards[{gi}]") for gi, g in enumerate(t.get("guards", [])))
            for g in guards:
                if g.kind == "counter_at_least":
                    _expect(g.subject in counters, tp, f"undeclared counter {g.subject!r}")
                elif g.kind != "always":
                    _expect(g.subject in seen, tp, f"guard on unknown widget {g.subject!r}")
            inc = t.get("increments", {})
            _expect(all(c in counters for c in inc), tp, "increment of undeclared counter")
            transitions.append(Transition(t["widget"], t["action"], guards, target,
                                          _parse_emissions(t.get("emissions", []), f"{tp}.emissions", sites),
                                          tuple(sorted(inc.items()))))
        activities.append(Activity(a["name"], tuple(widgets),
                                   _parse_emissions(a.get("on_enter", []), f"{ap}.on_enter", sites),
                                   tuple(transitions)))
    return AppModel(doc["name"], doc["package"], tuple(activities), doc["initial_activity"],
                    tuple(sites.values()), doc.get("persona", ""), streaks, doc.get("apk", ""))


def bundled_apps() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("smelltrace.apps").iterdir() if p.name.endswith(".json"))


def load_app(path: str | os.PathLike) -> AppModel:
    """Load a model file, or a bundled model by name (e.g. ``"twenty_clicks"``)."""
    p = Path(path)
    if not p.exists() and str(path) in bundled_apps():
        text = resources.files("smelltrace.apps").joinpath(f"{path}.json").read_text(encoding="utf-8")
    else:
        text = p.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    return parse_app(doc)


# -- state and stepping -------------------------------------------------------

class Outcome(str, enum.Enum):
    OK = "ok"
    MOVED = "moved"
    NO_EFFECT = "no_effect"
    UNKNOWN_WIDGET = "unknown_widget"
    APP_EXIT = "app_exit"


@dataclass(frozen=True)
class GuiState:
    app: AppModel = field(repr=False, compare=False)
    stack: tuple[str, ...]
    texts: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    visits: dict = field(default_factory=dict)
    activity_visits: dict = field(default_factory=dict)
    fired_once: frozenset = frozenset()
    actions: int = 0
    clock: int = 0
    tick: int = DEFAULT_TICK_MILLIS

    @property
    def activity(self) -> str:
        return self.stack[-1]

    @property
    def visited(self) -> set[str]:
        return set(self.activity_visits)

    def text(self, wid: str) -> str:
        w = self.app.activity(self.activity).widget(wid)
        return self.texts.get((self.activity, wid), w.text if w else "")


@dataclass(frozen=True)
class StepResult:
    state: GuiState
    entries: tuple[LogEntry, ...]
    outcome: Outcome
    message: str = ""


def _values(em: Emission, state: GuiState) -> tuple[str, ...]:
    def sub(m):
        token = m.group(1)
        if token.startswith("counter:"):
            return str(state.counters.get(token[8:], 0))
        return str(state.clock + int(token[2:] or 0))
    return tuple(_PLACEHOLDER.sub(sub, v) for v in em.values)


def _emit(emissions, state: GuiState, out: list[LogEntry]) -> GuiState:
    fired = state.fired_once
    ts = format_timestamp(state.clock)
    for em in emissions:
        if em.once:
            if em.site in fired:
                continue
            fired = fired | {em.site}
        site = state.app.site(em.site)
        values = _values(em, state)
        try:
            _check_values(site.decl.keyword, values, ArityMismatch)
        except ArityMismatch as exc:
            raise SchemaError(f"site {em.site}", str(exc)) from None
        out.append(LogEntry(site.location, site.id, site.decl.keyword, values, ts))
    return state if fired is state.fired_once else replace(state, fired_once=fired)


def _enter(state: GuiState, name: str, out: list[LogEntry]) -> GuiState:
    visits = dict(state.activity_visits)
    visits[name] = visits.get(name, 0) + 1
    state = replace(state, activity_visits=visits)
    return _emit(state.app.activity(name).on_enter, state, out)


def launch(app: AppModel, tick: int = DEFAULT_TICK_MILLIS) -> tuple[GuiState, tuple[LogEntry, ...]]:
    """Start the app: initial activity entered, its entry emissions fired."""
    out: list[LogEntry] = []
    state = _enter(GuiState(app, (app.initial_activity,), tick=tick), app.initial_activity, out)
    return state, tuple(out)


def check_action(state: GuiState, action: AgentAction) -> tuple[Outcome, str] | None:
    """Return an error outcome if ``action`` cannot apply to the current screen."""
    if action.kind in ("back", "endtask"):
        return None
    w = state.app.activity(state.activity).widget(action.widget_id)
    if w is None:
        return Outcome.UNKNOWN_WIDGET, f"no widget {action.widget_id!r} on {state.activity}"
    if action.kind not in w.enabled():
        return Outcome.NO_EFFECT, f"widget {w.id!r} does not support {action.kind}"
    return None


def step(state: GuiState, action: AgentAction) -> StepResult:
    if action.kind == "endtask":
        raise ValueError("endtask is handled by the agent, not the app")
    app = state.app
    out: list[LogEntry] = []
    counters = state.counters
    bumped: set[str] = set()
    moved = False
    outcome, message = Outcome.NO_EFFECT, ""
    nxt = state

    if action.kind == "back":
        if len(state.stack) > 1:
            nxt = replace(state, stack=state.stack[:-1])
            outcome = Outcome.MOVED
        else:
            nxt = _enter(replace(state, stack=(app.initial_activity,)), app.initial_activity, out)
            outcome, message = Outcome.APP_EXIT, "left the app; relaunched"
    else:
        err = check_action(state, action)
        if err is not None:
            outcome, message = err
        else:
            act = app.activity(state.activity)
            w = act.widget(action.widget_id)
            key = (act.name, w.id)
            visits = dict(state.visits)
            visits[key] = visits.get(key, 0) + 1
            texts = state.texts
            changed = False
            if action.kind == "settext":
                texts = dict(texts)
                texts[key] = action.params
                changed = True
            if w.counter and action.kind == "click":
                counters = dict(counters)
                counters[w.counter] = counters.get(w.counter, 0) + 1
                bumped.add(w.counter)
                changed = True
            nxt = replace(state, visits=visits, texts=texts, counters=counters)
            for t in act.transitions:
                if t.widget != w.id or t.action != action.kind:
                    continue
                if not all(g.holds(texts, counters, act.name) for g in t.guards):
                    continue
                if t.increments:
                    counters = dict(counters)
                    for c, n in t.increments:
                        counters[c] = counters.get(c, 0) + n
                        bumped.add(c)
                    nxt = replace(nxt, counters=counters)
                nxt = _emit(t.emissions, nxt, out)
                if t.target is not None and t.target != act.name:
                    nxt = _enter(replace(nxt, stack=nxt.stack + (t.target,)), t.target, out)
                    moved = True
                changed = True
                break
            if changed:
                outcome = Outcome.MOVED if moved else Outcome.OK

    changes = {"actions": state.actions + 1, "clock": state.clock + state.tick}
    stale = [c for c in app.streak_counters if nxt.counters.get(c) and c not in bumped]
    if stale:
        changes["counters"] = {**nxt.counters, **{c: 0 for c in stale}}
    return StepResult(replace(nxt, **changes), tuple(out), outcome, message)


# -- rendering ----------------------------------------------------------------

def render_state(state: GuiState) -> str:
    """One header line, then one line per widget."""
    act = state.app.activity(state.activity)
    lines = [f"activity {act.name} (visits {state.activity_visits.get(act.name, 0)}, "
             f"{len(act.widgets)} widgets)"]
    for w in act.widgets:
        flags = " ".join(k for k, on in (("clickable", w.clickable), ("longclickable", w.long_clickable),
                                         ("editable", w.editable), ("scrollable", w.scrollable)) if on)
        text = state.texts.get((act.name, w.id), w.text)
        lines.append(f"- id={w.id} class={w.widget_class} text={json.dumps(text)} "
                     f"[{flags}] visits={state.visits.get((act.name, w.id), 0)}")
    return "\n".join(lines)


def truncate_lines(text: str, budget: int) -> str:
    """Longest prefix of whole lines that fits in ``budget`` characters."""
    if len(text) <= budget:
        return text
    cut = text.rfind("\n", 0, budget + 1)
    return text[:cut] if cut > 0 else ""


def diff_states(prev: GuiState, new: GuiState) -> str:
    if prev.activity != new.activity:
        return f"screen changed from {prev.activity} to {new.activity}"
    changes = []
    act = new.app.activity(new.activity)
    for w in act.widgets:
        key = (act.name, w.id)
        if prev.texts.get(key, w.text) != new.texts.get(key, w.text):
            changes.append(f"text of {w.id} is now {json.dumps(new.texts.get(key, w.text))}")
    if changes:
        return "; ".join(changes)
    return "no visible change"


# -- sessions -----------------------------------------------------------------

@dataclass(frozen=True)
class Budget:
    max_actions: int = 100
    max_logical_millis: int | None = None

    def __post_init__(self):
        if self.max_actions < 0 or (self.max_logical_millis is not None and self.max_logical_millis < 0):
            raise ValueError("budget must be non-negative")


class Agent(Protocol):
    name: str

    def next_action(self, session: "Session") -> AgentAction | None: ...

    def after_step(self, session: "Session", prev: GuiState, result: StepResult) -> None: ...


class AgentFailure(Exception):
    pass


@dataclass
class ActionRecord:
    index: int
    clock: int
    agent: str
    action: AgentAction
    outcome: Outcome
    new_sites: int


class Session:
    """Mutable run state shared between the loop and the agents."""

    def __init__(self, app: AppModel, seed: int = 0, tick: int = DEFAULT_TICK_MILLIS):
        self.app = app
        self.seed = seed
        self.tick = tick
        self.events = app.events
        self.universe = set(self.events.sites)
        self.entries: list[LogEntry] = []
        self.covered: set = set()
        self.actions: list[ActionRecord] = []
        self.points: list[tuple[int, int, int]] = []
        self.state: GuiState | None = None
        self.error: str | None = None
        self._pending = 0

    def _record(self, entries) -> int:
        before = len(self.covered)
        for e in entries:
            site = e.site
            if site in self.universe:
                self.covered.add(site)
            else:
                log.warning("emitted entry %s is not declared", e)
        self.entries.extend(entries)
        return len(self.covered) - before

    def start(self) -> int:
        self.state, entries = launch(self.app, self.tick)
        return self._record(entries)

    def apply(self, action: AgentAction, agent_name: str) -> tuple[StepResult, int]:
        self.ensure_started()
        prev = self.state
        result = step(prev, action)
        self.state = result.state
        new = self._record(result.entries) + self._pending
        self._pending = 0
        self.actions.append(ActionRecord(prev.actions, prev.clock, agent_name, action, result.outcome, new))
        self.points.append((result.state.actions, result.state.clock, len(self.covered)))
        return result, new

    def ensure_started(self) -> GuiState:
        if self.state is None:
            self._pending = self.start()
        return self.state

    def trace(self) -> Trace:
        return Trace(tuple(self.entries), self.app.app_id)

    def within(self, budget: Budget) -> bool:
        n = len(self.actions)
        clock = n * self.tick
        return n < budget.max_actions and (budget.max_logical_millis is None or clock < budget.max_logical_millis)


@dataclass
class SessionResult:
    trace: Trace
    coverage: Any  # evaluation.CoverageSeries
    actions: list[ActionRecord]
    error: str | None = None
    phases: list = field(default_factory=list)


def _finish(session: Session, phases=None) -> SessionResult:
    from .evaluation import CoverageSeries
    series = CoverageSeries(tuple(session.points), len(session.universe))
    return SessionResult(session.trace(), series, session.actions, session.error, phases or [])


def run_session(app: AppModel, agent: Agent, budget: Budget = Budget(), seed: int = 0,
                tick: int = DEFAULT_TICK_MILLIS) -> SessionResult:
    """Perceive, act, step until the budget runs out or the agent stops."""
    session = Session(app, seed, tick)
    if hasattr(agent, "reset"):
        agent.reset(seed)
    while session.within(budget):
        session.ensure_started()
        try:
            action = agent.next_action(session)
        except AgentFailure as exc:
            session.error = f"{type(exc).__name__}: {exc}"
            log.warning("session aborted: %s", session.error)
            break
        if action is None:
            break
        prev = session.state
        result, _ = session.apply(action, agent.name)
        try:
            agent.after_step(session, prev, result)
        except AgentFailure as exc:
            session.error = f"{type(exc).__name__}: {exc}"
            log.warning("session aborted: %s", session.error)
            break
    return _finish(session)
