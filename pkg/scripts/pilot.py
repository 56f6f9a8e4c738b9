"""Pilot run: matched tool gains and a strategy comparison on a corpus from make_corpus.py.

    python3 scripts/pilot.py out/ --pairs 50 --strategies greedy,random:0,reverse,rollback:2
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from qrestore.calibration import Calibration, QualityContext
from qrestore.corpus import pristine_crops
from qrestore.degrade import Manifest
from qrestore.evaluate import compare_strategies, matched_cases, matched_gains
from qrestore.restore.tools import default_registry


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", type=Path)
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--strategies", default="greedy,random:0,reverse,rollback:2")
    p.add_argument("--skip-gains", action="store_true")
    p.add_argument("--skip-compare", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)
    ctx = QualityContext(Calibration.load(args.out / "calibration.json"))
    registry = default_registry()

    if not args.skip_gains:
        images = [img for _, img in pristine_crops(args.pairs, seed=11)]
        gains = {}
        for case in matched_cases(registry):
            t = time.perf_counter()
            g = matched_gains(images, case.make_step, case.spec, ctx.probe, seed=3, spec_for_step=case.spec_for_step)
            gains[case.name] = {"mean": float(np.mean(g)), "min": float(np.min(g)), "floor": case.floor,
                                "strict": case.strict}
            print(f"{case.name:36s} {np.mean(g):+6.2f} dB (min {np.min(g):+6.2f})  "
                  f"{(time.perf_counter() - t) / len(images):.2f}s/img")
        (args.out / "pilot_gains.json").write_text(json.dumps(gains, indent=1, sort_keys=True) + "\n")

    if not args.skip_compare:
        manifest = Manifest.read(args.out / "degraded" / "manifest.jsonl")
        report = compare_strategies(manifest, args.strategies.split(","), registry, ctx, jobs=args.jobs)
        report.save(args.out / "pilot_compare.json")
        print(report.to_text())
        print(json.dumps(report.summary["win_rates"], indent=1))


if __name__ == "__main__":
    main()
