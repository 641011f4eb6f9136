"""Synthetic app models and exhaustive search over simulated apps."""
from __future__ import annotations

from smelltrace.agents import SETTEXT_POOL, enabled_actions
from smelltrace.appsim import AgentAction, launch, parse_app, step


def chain_app(stall_after: int, name: str = "chain"):
    """Action k (0-based) enters activity k+1 and emits a fresh site, up to action ``stall_after``.

    The last activity only offers a no-op button, so every later action covers nothing new.
    The launch emission is credited to action 0 by the session.
    """
    n = stall_after + 2
    pkg = "org.toy.chain"
    sites = {f"s{k}": {"class": f"{pkg}.A{k}.java", "method": "onCreate", "line": 10, "event": "actstart"}
             for k in range(n)}
    acts = []
    for k in range(n):
        act = {"name": f"A{k}", "widgets": [{"id": "tap", "text": "Tap", "clickable": True}],
               "on_enter": [{"site": f"s{k}", "values": [f"{pkg}.A{k}"]}]}
        if k + 1 < n:
            act["transitions"] = [{"widget": "tap", "action": "click", "target": f"A{k + 1}"}]
        acts.append(act)
    return parse_app({"name": name, "package": pkg, "initial_activity": "A0", "sites": sites,
                      "activities": acts, "persona": "Kim taps whatever is on screen."})


def _state_key(state):
    return (state.stack, tuple(sorted(state.counters.items())), tuple(sorted(state.texts.items())),
            state.fired_once)


def max_next_clicks_without(app, target: str, widget: str = "next", limit: int = 19) -> int:
    """Breadth-first search over every action sequence using at most ``limit`` clicks on ``widget``.

    Equal GUI states are merged. Fails if any explored state has ``target`` on its stack;
    otherwise returns the largest click count explored.
    """
    click = AgentAction("click", widget)
    start, _ = launch(app)
    frontier = {(_state_key(start), 0): start}
    seen = set(frontier)
    while frontier:
        nxt = {}
        for (_, used), state in frontier.items():
            for wid, kind in enabled_actions(state):
                for p in (SETTEXT_POOL if kind == "settext" else [None]):
                    action = AgentAction(kind, wid, p)
                    n = used + (action == click)
                    if n > limit:
                        continue
                    after = step(state, action).state
                    assert target not in after.stack, f"{target} reached with {n} clicks"
                    k = (_state_key(after), n)
                    if k not in seen:
                        seen.add(k)
                        nxt[k] = after
        frontier = nxt
    return max(n for _, n in seen)
