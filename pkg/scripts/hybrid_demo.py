"""Hybrid runs on twenty_clicks with a few burst lengths, plus the phase log of each.

    python3 scripts/hybrid_demo.py --window 50 --actions 600 --bursts 5 20
"""
import argparse

from smelltrace.agents import LlmAgent, RandomAgent
from smelltrace.appsim import Budget, load_app
from smelltrace.backends import load_script
from smelltrace.hybrid import HybridConfig, run_hybrid_session


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--app", default="twenty_clicks")
    ap.add_argument("--window", type=int, default=50, help="blocked window in actions")
    ap.add_argument("--actions", type=int, default=600)
    ap.add_argument("--bursts", type=int, nargs="+", default=[5, 20])
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    app = load_app(args.app)
    for burst in args.bursts:
        cfg = HybridConfig(args.window, "actions", burst)
        r = run_hybrid_session(app, RandomAgent(), LlmAgent(load_script(args.app), app), cfg,
                               Budget(args.actions), args.seed)
        llm = sum(a.agent == "llm" for a in r.actions)
        activities = sorted({e.location.cls for e in r.trace if e.keyword == "actstart"})
        print(f"burst={burst}: coverage {r.coverage.final}/{r.coverage.universe}, {llm} LLM actions, "
              f"activities {', '.join(activities)}")
        print("  phases: " + " ".join(f"{p.action}:{p.phase}" for p in r.phases))


if __name__ == "__main__":
    main()
