"""Random exploration with short LLM bursts whenever coverage stalls."""
from __future__ import annotations

import csv
import io
import logging
import os
import re
from dataclasses import dataclass

from .appsim import (DEFAULT_TICK_MILLIS, AgentFailure, AppModel, Budget, Session, SessionResult, _finish)
from .trace import atomic_write

log = logging.getLogger(__name__)

RANDOM = "random"
LLM = "llm"


@dataclass(frozen=True)
class HybridConfig:
    blocked_window: int = 300
    window_unit: str = "actions"  # or "ms" (logical milliseconds)
    llm_burst: int = 5

    def __post_init__(self):
        if self.blocked_window <= 0:
            raise ValueError("blocked_window must be positive")
        if self.llm_burst <= 0:
            raise ValueError("llm_burst must be positive")
        if self.window_unit not in ("actions", "ms"):
            raise ValueError(f"unknown window unit {self.window_unit!r}")


def parse_window(text: str) -> tuple[int, str]:
    """``"300actions"``, ``"300"`` or ``"300000ms"``."""
    m = re.fullmatch(r"\s*(\d+)\s*(actions?|ms)?\s*", text)
    if not m:
        raise ValueError(f"bad blocked window {text!r}")
    unit = "ms" if m.group(2) == "ms" else "actions"
    return int(m.group(1)), unit


@dataclass(frozen=True)
class SchedulerState:
    phase: str = RANDOM
    last_new_at: int | None = 0  # None: restart the window at the next call
    burst_remaining: int = 0     # LLM steps still owed after the current one


def hybrid_next(state: SchedulerState, coverage_delta: int, now: int,
                cfg: HybridConfig = HybridConfig()) -> tuple[str, SchedulerState]:
    """Pick the agent for the next step.

    ``coverage_delta`` is the number of sites first covered by the previous step and
    ``now`` the current time in the window's unit.
    """
    if coverage_delta < 0:
        raise ValueError("coverage delta cannot be negative")
    last = now if coverage_delta > 0 or state.last_new_at is None else state.last_new_at
    if state.phase == LLM:
        owed = state.burst_remaining
    elif now - last >= cfg.blocked_window:
        owed = cfg.llm_burst
    else:
        return RANDOM, SchedulerState(RANDOM, last, 0)
    owed -= 1
    if owed == 0:
        return LLM, SchedulerState(RANDOM, None, 0)
    return LLM, SchedulerState(LLM, last, owed)


@dataclass(frozen=True)
class PhaseSwitch:
    action: int
    logical_ms: int
    phase: str


def run_hybrid_session(app: AppModel, random_agent, llm_agent, cfg: HybridConfig = HybridConfig(),
                       budget: Budget = Budget(), seed: int = 0, tick: int = DEFAULT_TICK_MILLIS) -> SessionResult:
    session = Session(app, seed, tick)
    if hasattr(random_agent, "reset"):
        random_agent.reset(seed)
    sched = SchedulerState()
    delta = 0
    phases: list[PhaseSwitch] = []
    while session.within(budget):
        session.ensure_started()
        index = len(session.actions)
        now = index if cfg.window_unit == "actions" else index * tick
        selector, sched = hybrid_next(sched, delta, now, cfg)
        agent, action = None, None
        if selector == LLM:
            try:
                action = llm_agent.next_action(session)
            except AgentFailure as exc:
                log.warning("LLM burst failed at action %d, back to random: %s", index, exc)
                session.error = session.error or f"{type(exc).__name__}: {exc}"
            if action is None:
                sched = SchedulerState(RANDOM, None, 0)
            else:
                agent = llm_agent
        if agent is None:
            agent = random_agent
            action = random_agent.next_action(session)
            if action is None:
                break
        if not phases or phases[-1].phase != agent.name:
            phases.append(PhaseSwitch(index, index * tick, agent.name))
        prev = session.state
        result, delta = session.apply(action, agent.name)
        try:
            agent.after_step(session, prev, result)
        except AgentFailure as exc:
            log.warning("LLM burst failed after action %d, back to random: %s", index, exc)
            session.error = session.error or f"{type(exc).__name__}: {exc}"
            sched = SchedulerState(RANDOM, None, 0)
    return _finish(session, phases)


def write_phases(phases: list[PhaseSwitch], path: str | os.PathLike) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["action", "logical_ms", "phase"])
    for p in phases:
        w.writerow([p.action, p.logical_ms, p.phase])
    atomic_write(path, buf.getvalue())


def read_phases(path: str | os.PathLike) -> list[PhaseSwitch]:
    with open(path, newline="", encoding="utf-8") as f:
        return [PhaseSwitch(int(r["action"]), int(r["logical_ms"]), r["phase"]) for r in csv.DictReader(f)]
