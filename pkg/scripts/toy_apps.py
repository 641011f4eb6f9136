"""Random agent versus scripted LLM agent on the two toy apps.

    python3 scripts/toy_apps.py --sessions 10000
"""
import argparse
import time

from smelltrace.agents import RandomAgent, llm_agent_loop
from smelltrace.appsim import Budget, load_app, run_session
from smelltrace.backends import load_script
from smelltrace.trace import timestamp_millis

TOYS = {"twenty_clicks": ("SecondActivity", 25), "login_home": ("HomeActivity", 10)}
TICK = 1000


def first_action_reaching(result, cls):
    """1-based index of the action whose step first emitted from ``cls``, or None.

    Entries are stamped with the logical clock before the step, so clock / tick is the action index.
    """
    for e in result.trace:
        if cls in e.location.cls:
            return timestamp_millis(e.timestamp) // TICK + 1
    return None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sessions", type=int, default=1000)
    ap.add_argument("--actions", type=int, default=100)
    args = ap.parse_args()

    for name, (target, llm_budget) in TOYS.items():
        app = load_app(name)
        t0 = time.perf_counter()
        agent = RandomAgent()
        hits = sum(first_action_reaching(run_session(app, agent, Budget(args.actions), seed), target) is not None
                   for seed in range(args.sessions))
        elapsed = time.perf_counter() - t0
        result, _ = llm_agent_loop(app, load_script(name), Budget(llm_budget))
        print(f"{name}: random reached {target} in {hits}/{args.sessions} sessions "
              f"of {args.actions} actions ({elapsed:.1f}s)")
        print(f"{name}: scripted LLM reached {target} at action {first_action_reaching(result, target)} "
              f"(coverage {result.coverage.final}/{result.coverage.universe})")


if __name__ == "__main__":
    main()
