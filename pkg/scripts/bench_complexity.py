"""Candidate-application counts of greedy vs rollback search on synthetic task sets, with a plot.

    python3 scripts/bench_complexity.py out/bench --n 2..6 --trials 50
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from qrestore.agent import bench_complexity  # noqa: E402


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", type=Path)
    p.add_argument("--n", default="2..6")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--tools-per-task", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    lo, hi = (int(x) for x in args.n.split(".."))
    ns = list(range(lo, hi + 1))
    rows = bench_complexity(ns, args.trials, args.tools_per_task, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "bench.json").write_text(json.dumps({"rows": rows}, indent=1, sort_keys=True) + "\n")

    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(ns, [r["greedy_mean"] for r in rows], "o-", label="greedy")
    ax.plot(ns, [r["rollback_mean"] for r in rows], "s-", label="rollback (budget n)")
    ax.plot(ns, [r["triangular"] for r in rows], "k:", label="m·n(n+1)/2")
    ax.set_xlabel("tasks n")
    ax.set_ylabel("candidate applications")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(args.out / "bench.png", dpi=150)
    for r in rows:
        print(f"n={r['n']}  greedy {r['greedy_mean']:.1f}  rollback {r['rollback_mean']:.1f}  law {r['triangular']}")


if __name__ == "__main__":
    main()
