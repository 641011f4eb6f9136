"""Recall rows and McNemar tests recomputed from the published counts.

    python3 scripts/published_stats.py
"""
from smelltrace.evaluation import ContingencyTable, format_recall, mcnemar

RECALL = {  # kind: (hybrid tp, 100% LLM tp, relevant)
    "DW": (1, 2, 8),
    "HP": (8, 8, 13),
    "IOD": (2, 3, 7),
    "NLMR": (1033, 1033, 1057),
    "HMU": (154, 155, 210),
}
TABLES = {  # configuration versus the random baseline: a, b, c, d
    "100% LLM": ContingencyTable(559, 309, 213, 3356),
    "Hybrid": ContingencyTable(578, 224, 194, 3441),
}


def main():
    print(f"{'kind':5s} {'Hybrid':>20s} {'100% LLM':>20s}")
    for kind, (hyb, llm, rel) in RECALL.items():
        print(f"{kind:5s} {format_recall(hyb, rel):>20s} {format_recall(llm, rel):>20s}")
    print()
    for name, table in TABLES.items():
        print(f"{name}: a={table.a} b={table.b} c={table.c} d={table.d}")
        for mode in ("plain", "continuity", "exact"):
            stat, p = mcnemar(table, mode)
            print(f"  {mode:10s} statistic={stat:9.4f} p={p:.6f}")


if __name__ == "__main__":
    main()
