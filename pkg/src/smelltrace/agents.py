"""Trace generators: a seeded random agent and a planner/actor/observer/reflector LLM agent."""
from __future__ import annotations

import json
import logging
import random
import re
from collections import deque
from dataclasses import dataclass, field

from .appsim import (AgentAction, AgentFailure, AppModel, Budget, GuiState, Outcome, Session, StepResult,
                     check_action, diff_states, render_state, run_session, truncate_lines)
from .backends import LlmBackend
from .trace import EVENT_KINDS, EventsFile

log = logging.getLogger(__name__)

# Strings a monkey might type. None of them is a credential of a bundled app.
SETTEXT_POOL = ("abc", "12345", "hello", "test", "qwerty", "a", "0", "lorem_ipsum", "x@y", "password",
                "!!!", "-1", "zzzz", "3.14", "foo bar", "N/A")

TEMPERATURE = 0.6
ACT_SYSTEM = "You operate an Android app to accomplish a task."


# -- random agent -------------------------------------------------------------

def enabled_actions(state: GuiState, allow_back: bool = True) -> list[tuple[str, str | None]]:
    act = state.app.activity(state.activity)
    pairs: list[tuple[str, str | None]] = [(w.id, k) for w in act.widgets for k in w.enabled()]
    if allow_back:
        pairs.append((None, "back"))
    return pairs


def _pick(pairs, rng: random.Random) -> AgentAction:
    wid, kind = pairs[rng.randrange(len(pairs))]
    if kind == "settext":
        return AgentAction(kind, wid, SETTEXT_POOL[rng.randrange(len(SETTEXT_POOL))])
    return AgentAction(kind, wid)


def random_agent_next(state: GuiState, rng: random.Random, allow_back: bool = True) -> AgentAction | None:
    """Uniform over enabled (widget, action) pairs plus back."""
    pairs = enabled_actions(state, allow_back)
    return _pick(pairs, rng) if pairs else None


class RandomAgent:
    name = "random"

    def __init__(self, seed: int = 0, allow_back: bool = True):
        self.allow_back = allow_back
        self.rng = random.Random(seed)
        self._options: dict[tuple[str, str], list] = {}

    def reset(self, seed: int) -> None:
        self.rng = random.Random(seed)

    def next_action(self, session: Session) -> AgentAction | None:
        state = session.state
        key = (state.app.name, state.activity)
        pairs = self._options.get(key)
        if pairs is None:
            pairs = self._options[key] = enabled_actions(state, self.allow_back)
        return _pick(pairs, self.rng) if pairs else None

    def after_step(self, session, prev, result) -> None:
        pass


# -- LLM agent: memory and knowledge -----------------------------------------

class PlannerError(AgentFailure):
    pass


class ActorError(AgentFailure):
    pass


@dataclass
class TaskRecord:
    description: str
    result: str | None = None  # "success" | "failure", set by reflection
    summary: str = ""


_WORD = re.compile(r"[a-z0-9]+")


def _words(text: str) -> set[str]:
    return set(_WORD.findall(text.lower()))


class AgentMemory:
    """Recent tasks (bounded) and reflection knowledge ranked against the task at hand."""

    def __init__(self, task_capacity: int = 20, top_k: int = 5, knowledge_capacity: int = 200):
        self.recent_tasks: deque[TaskRecord] = deque(maxlen=task_capacity)
        self.top_k = top_k
        self.knowledge: deque[tuple[int, str]] = deque(maxlen=knowledge_capacity)
        self._seq = 0

    def remember(self, record: TaskRecord) -> None:
        self.recent_tasks.append(record)
        self._seq += 1
        self.knowledge.append((self._seq, f"{record.description} -> {record.result}: {record.summary}"))

    def retrieve(self, query: str) -> list[str]:
        """Keyword overlap with ``query``, recent snippets weighted up."""
        q = _words(query)
        scored = [(len(q & _words(text)) + seq / (self._seq + 1), seq, text) for seq, text in self.knowledge]
        scored.sort(key=lambda s: (-s[0], -s[1]))
        return [text for _, _, text in scored[: self.top_k]]


@dataclass(frozen=True)
class SmellKnowledge:
    triples: tuple[tuple[str, str, str], ...]
    total: int

    @classmethod
    def from_events(cls, events: EventsFile) -> "SmellKnowledge":
        seen = {}
        for d in events:
            seen.setdefault((EVENT_KINDS[d.keyword].smell, d.cls, d.method), None)
        return cls(tuple(seen), len(events))

    def render(self) -> str:
        return "(Type of code smell, class, method): [" + ", ".join(
            f"({k}, {c}, {m})" for k, c, m in self.triples) + "]"


@dataclass(frozen=True)
class ObservationRecord:
    """Counters quoted in one observe prompt plus the trace length they refer to."""
    new: int
    cumulative: int
    total: int
    trace_length: int


# -- response grammar ---------------------------------------------------------

_ACTION_RE = re.compile(
    r"^\W*(click|longclick|settext|scroll|back|endtask)\s*\(\s*([A-Za-z0-9_.\-]*)\s*(?:,\s*(.*?))?\s*\)\W*$")


class InvalidAction(ValueError):
    pass


def parse_action(text: str) -> tuple[str, str | None, str | None]:
    """Parse the last non-empty line as ``kind(widget[, "param"])``."""
    lines = [l.strip() for l in text.strip().splitlines() if l.strip()]
    if not lines:
        raise InvalidAction("empty response; end with an action such as click(widget_id)")
    m = _ACTION_RE.match(lines[-1].strip("`"))
    if not m:
        raise InvalidAction(f"could not read an action from {lines[-1]!r}")
    kind, wid, param = m.group(1), m.group(2) or None, m.group(3)
    if param is not None:
        param = param.strip()
        if param.startswith('"'):
            try:
                param = json.loads(param)
            except json.JSONDecodeError:
                param = param.strip('"')
    return kind, wid, param


def parse_task(text: str) -> str | None:
    for line in text.splitlines():
        m = re.match(r"\s*\**TASK\**\s*:\s*(.+)", line, re.IGNORECASE)
        if m and m.group(1).strip():
            return m.group(1).strip()
    return None


def parse_reflection(text: str) -> tuple[str, str]:
    m = re.search(r"\b(SUCCESS|FAILURE)\b\s*[:\-]?\s*(.*)", text, re.IGNORECASE | re.DOTALL)
    if not m:
        log.warning("unparseable reflection, recording failure: %r", text)
        return "failure", text.strip()
    return m.group(1).lower(), m.group(2).strip()


# -- LLM agent ----------------------------------------------------------------

@dataclass
class LlmConfig:
    task_action_cap: int = 15
    context_budget: int = 8000     # characters of rendered GUI
    prompt_budget: int = 12000     # characters of a whole act prompt
    max_attempts: int = 3
    temperature: float = TEMPERATURE
    max_empty_tasks: int = 3

    def __post_init__(self):
        if min(self.task_action_cap, self.context_budget, self.prompt_budget, self.max_attempts) <= 0:
            raise ValueError("LLM agent limits must be positive")


class LlmAgent:
    name = "llm"

    def __init__(self, backend: LlmBackend, app: AppModel, config: LlmConfig = LlmConfig()):
        self.backend = backend
        self.app = app
        self.cfg = config
        self.memory = AgentMemory()
        self.knowledge = SmellKnowledge.from_events(app.events)
        self.task: TaskRecord | None = None
        self.history: list[str] = []
        self.task_actions = 0
        self.iterations = 0
        self.pending_error: str | None = None
        self.last_feedback: str | None = None
        self.last_cumulative = 0
        self.observations: list[ObservationRecord] = []
        self.tasks: list[TaskRecord] = []

    # prompts
    def _ask(self, kind: str, system: str, user: str) -> str:
        messages = [{"role": "system", "content": system}, {"role": "user", "content": user}]
        return self.backend.complete(kind, messages, self.cfg.temperature)

    @property
    def persona_name(self) -> str:
        words = self.app.persona.split()
        return words[0] if words else "The user"

    def plan_prompt(self, state: GuiState) -> str:
        recent = list(self.memory.recent_tasks)
        history = "\n".join(f"- [{t.result}] {t.description}: {t.summary}" for t in recent) or "- none yet"
        query = " ".join(t.description for t in recent[-3:]) + " " + state.activity
        snippets = "\n".join(f"- {s}" for s in self.memory.retrieve(query)) or "- none yet"
        acts = []
        for a in self.app.activities:
            n = state.activity_visits.get(a.name, 0)
            acts.append(f"- {a.name}: " + (f"visited {n} times" if n else "not visited"))
        return "\n".join([
            f"Persona: {self.app.persona}" if self.app.persona else "Persona: none",
            f"{self.persona_name}'s ultimate goal is to trigger code smell-related events as much as possible.",
            f"Code smell-related events in this app {self.knowledge.render()}",
            f"Recent tasks ({len(recent)}):", history,
            "Relevant knowledge:", snippets,
            f"Activities ({len(state.activity_visits)} of {len(self.app.activities)} visited):", *acts,
            f"Current screen: {state.activity}",
            "Propose the next task. Reply with one line: TASK: <description>",
        ])

    def act_prompt(self, state: GuiState) -> str:
        head = [f"Task: {self.task.description}"]
        tail = []
        if self.last_feedback:
            tail.append(f"Feedback: {self.last_feedback}")
        if self.pending_error:
            tail.append(f"Error: {self.pending_error}")
        tail.append("Choose the next action. End with one line: click(id), longclick(id), "
                    "settext(id, \"text\"), scroll(id), back() or endtask().")
        fixed = sum(len(s) + 1 for s in head + tail) + len("Screen:\n") + len("History:\n") + len(ACT_SYSTEM)
        room = self.cfg.prompt_budget - fixed
        gui = truncate_lines(render_state(state), max(0, min(self.cfg.context_budget, room)))
        room -= len(gui)
        kept: list[str] = []
        for line in reversed(self.history):
            if len(line) + 1 > room:
                break
            kept.append(line)
            room -= len(line) + 1
        return "\n".join(head + ["Screen:", gui, "History:", *reversed(kept)] + tail)

    # loop pieces
    def plan_task(self, state: GuiState) -> TaskRecord:
        system = "You plan GUI testing tasks for an Android app."
        prompt = self.plan_prompt(state)
        for attempt in range(2):
            reply = self._ask("plan", system, prompt)
            desc = parse_task(reply)
            if desc:
                return TaskRecord(desc)
            prompt += "\nYour previous reply had no 'TASK:' line. Answer with exactly one line: TASK: <description>"
        raise PlannerError(f"no task in planner reply {reply!r}")

    def feedback(self, state: GuiState) -> None:
        system = "You review the progress of a GUI testing task."
        user = "\n".join([f"Task: {self.task.description}", "History:", *self.history[-30:],
                          "Screen:", truncate_lines(render_state(state), self.cfg.context_budget),
                          "Give brief advice for the next step; avoid leaving the app or repeating actions."])
        reply = self._ask("feedback", system, user)
        self.last_feedback = reply.strip()
        self.history.append(f"feedback: {self.last_feedback}")

    def act(self, state: GuiState) -> AgentAction:
        if self.iterations and self.iterations % 3 == 0:
            self.feedback(state)
        self.iterations += 1
        system = ACT_SYSTEM
        for _ in range(self.cfg.max_attempts):
            prompt = self.act_prompt(state)
            reply = self._ask("act", system, prompt)
            self.history.append(f"actor: {reply.strip()}")
            try:
                kind, wid, param = parse_action(reply)
                if kind == "settext" and param is None:
                    param = self._ask_param(system, prompt, reply, wid)
                try:
                    action = AgentAction(kind, wid, param)
                except ValueError as exc:
                    raise InvalidAction(str(exc)) from None
                err = check_action(state, action)
                if err is not None:
                    raise InvalidAction(err[1])
            except InvalidAction as exc:
                self.pending_error = str(exc)
                self.history.append(f"error: {exc}")
                continue
            self.pending_error = None
            return action
        raise ActorError(f"{self.cfg.max_attempts} invalid actions in a row; last error: {self.pending_error}")

    def _ask_param(self, system: str, prompt: str, reply: str, wid: str | None) -> str:
        messages = [{"role": "system", "content": system}, {"role": "user", "content": prompt},
                    {"role": "assistant", "content": reply},
                    {"role": "user", "content": f"What text should be typed into {wid}? Reply with the text only."}]
        text = self.backend.complete("param", messages, self.cfg.temperature).strip()
        self.history.append(f"param: {text}")
        if len(text) >= 2 and text[0] == text[-1] == '"':
            text = text[1:-1]
        return text

    def observe(self, session: Session, prev: GuiState, result: StepResult, action: AgentAction) -> str:
        cumulative = len(session.covered)
        new = cumulative - self.last_cumulative
        total = len(session.universe)
        self.last_cumulative = cumulative
        self.observations.append(ObservationRecord(new, cumulative, total, len(session.entries)))
        system = "You compare GUI states before and after an action."
        user = "\n".join([
            f"Task: {self.task.description}",
            f"Action: {action}",
            f"Outcome: {result.outcome.value}" + (f" ({result.message})" if result.message else ""),
            f"Change: {diff_states(prev, result.state)}",
            f"Code smell-related events: (i) {new} since the last observation, "
            f"(ii) {cumulative} triggered in total, (iii) {total} present in the app.",
            "Did the action help the task? Answer briefly.",
        ])
        reply = self._ask("observe", system, user)
        self.history.append(f"action: {action} -> {result.outcome.value}")
        self.history.append(f"observer: {reply}")
        if result.outcome in (Outcome.NO_EFFECT, Outcome.UNKNOWN_WIDGET, Outcome.APP_EXIT):
            self.pending_error = result.message or f"{action} had no effect"
        return reply

    def reflect(self, state: GuiState) -> TaskRecord:
        system = "You review a finished GUI testing task."
        user = "\n".join([f"Task: {self.task.description}", "History:", *self.history[-40:],
                          "Final screen:", truncate_lines(render_state(state), self.cfg.context_budget),
                          "Reply SUCCESS: <summary> or FAILURE: <summary>."])
        reply = self._ask("reflect", system, user)
        result, summary = parse_reflection(reply)
        record = self.task
        record.result, record.summary = result, summary
        self.memory.remember(record)
        self.tasks.append(record)
        self.task, self.history = None, []
        self.task_actions = self.iterations = 0
        self.pending_error = self.last_feedback = None
        return record

    # session hooks
    def next_action(self, session: Session) -> AgentAction | None:
        for _ in range(self.cfg.max_empty_tasks):
            if self.task is None:
                self.task = self.plan_task(session.state)
            action = self.act(session.state)
            if action.kind != "endtask":
                return action
            self.reflect(session.state)
        log.info("agent produced %d empty tasks in a row; stopping", self.cfg.max_empty_tasks)
        return None

    def after_step(self, session: Session, prev: GuiState, result: StepResult) -> None:
        self.task_actions += 1
        self.observe(session, prev, result, session.actions[-1].action)
        if self.task_actions >= self.cfg.task_action_cap:
            self.reflect(result.state)


def llm_agent_loop(app: AppModel, backend: LlmBackend, budget: Budget = Budget(), seed: int = 0,
                   config: LlmConfig = LlmConfig()):
    agent = LlmAgent(backend, app, config)
    return run_session(app, agent, budget, seed), agent
