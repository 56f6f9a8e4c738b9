"""Write a pristine crop corpus, a calibration file and a degraded manifest.

    python3 scripts/make_corpus.py out/ --pristine 100 --sources 20 --variants 10
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from qrestore.calibration import calibrate
from qrestore.corpus import build_corpus, corpus_digest
from qrestore.degrade import generate_dataset
from qrestore.imagecore import load_image


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", type=Path)
    p.add_argument("--pristine", type=int, default=100, help="calibration corpus size")
    p.add_argument("--sources", type=int, default=20, help="held-out source images")
    p.add_argument("--variants", type=int, default=10, help="degraded variants per source")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    # calibration crops and held-out sources come from different seeds
    cal_paths = build_corpus(args.out / "pristine", args.pristine, seed=args.seed + 100)
    cal = calibrate([load_image(q) for q in cal_paths], seed=args.seed)
    cal.save(args.out / "calibration.json")
    src_paths = build_corpus(args.out / "sources", args.sources, seed=args.seed + 7)
    manifest = generate_dataset(args.out / "sources", args.out / "degraded", args.variants, args.seed)
    print(json.dumps({
        "calibration": str(args.out / "calibration.json"),
        "pristine_digest": corpus_digest(cal_paths),
        "source_digest": corpus_digest(src_paths),
        "manifest": str(args.out / "degraded" / "manifest.jsonl"),
        "rows": len(manifest.rows),
    }, indent=1))


if __name__ == "__main__":
    main()
