"""Command-line entry point: ``qrestore <command> ...`` or ``python3 -m qrestore``.

Fatal errors exit with status 2 and a JSON object on stderr; partial row
failures are reported in the output's warnings block and exit 0.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import time
from pathlib import Path

from .agent import (CachedEnvironment, ImageEnvironment, Strategy, bench_complexity,
                    restore_end_to_end, run_strategy)
from .calibration import Calibration, CalibrationMissing, QualityContext, calibrate, resolve_calibration
from .config import Config
from .degrade import Manifest, generate_dataset, list_images
from .evaluate import (PerceivedTasks, compare_strategies, evaluate_restorations, label_tasks, perception_report)
from .imagecore import load_image, save_image
from .iqa.calibrate import MIN_CORPUS
from .iqa.nss import CorpusTooSmall
from .perceive.detectors import InternalPerceiver
from .perceive.external import ExternalPerceiver
from .restore.tools import TaskLabel, default_registry, tasks_from_vector

logger = logging.getLogger("qrestore")


class UsageError(ValueError):
    pass


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _config(args) -> Config:
    base = Config.load(args.config) if args.config else Config()
    return base.override(seed=args.seed, calibration=args.calibration, quality_mode=args.quality_mode,
                         epsilon=args.epsilon, strategy=args.strategy, jobs=args.jobs,
                         perceiver_endpoint=args.perceiver_endpoint)


def _context(cfg: Config) -> QualityContext:
    return QualityContext(resolve_calibration(cfg.calibration), cfg.quality_mode)


def _registry(cfg: Config):
    reg = default_registry()
    return reg.with_overrides(cfg.registry_overrides) if cfg.registry_overrides else reg


def _perceiver(cfg: Config, calibration: Calibration | None):
    thresholds = calibration.thresholds if calibration is not None else None
    if cfg.perceiver_endpoint:
        return ExternalPerceiver(cfg.perceiver_endpoint, thresholds, cfg.perceiver_timeout)
    return InternalPerceiver(thresholds)


# -- commands -------------------------------------------------------------------

def cmd_calibrate(args, cfg: Config) -> dict:
    src = Path(args.pristine_dir)
    if not src.is_dir():
        raise FileNotFoundError(f"pristine directory not found: {src}")
    paths = list_images(src)
    if len(paths) < MIN_CORPUS:
        raise CorpusTooSmall(f"need at least {MIN_CORPUS} pristine images, found {len(paths)} in {src}")
    cal = calibrate([load_image(p) for p in paths], cfg.seed)
    cal.save(args.out)
    Calibration.load(args.out)
    return {"calibration": str(args.out), "corpus_digest": cal.corpus_digest, "images": len(paths)}


def cmd_degrade(args, cfg: Config) -> dict:
    manifest = generate_dataset(args.src_dir, args.out_dir, args.n or cfg.variants_per_source, cfg.seed)
    return {"manifest": str(Path(args.out_dir) / "manifest.jsonl"), "rows": len(manifest.rows)}


def _inputs(args) -> list[tuple[str, Path, object]]:
    """(id, path, manifest row or None) for --image or --manifest."""
    if bool(args.image) == bool(args.manifest):
        raise UsageError("give exactly one of --image or --manifest")
    if args.image:
        p = Path(args.image)
        if not p.is_file():
            raise FileNotFoundError(f"image not found: {p}")
        return [(p.stem, p, None)]
    manifest = Manifest.read(args.manifest)
    return [(row.id, manifest.degraded_path(row), row) for row in manifest.rows]


def cmd_perceive(args, cfg: Config) -> dict:
    try:
        cal = resolve_calibration(cfg.calibration)
    except CalibrationMissing:
        logger.warning("no calibration; using the shipped detector thresholds")
        cal = None
    perceiver = _perceiver(cfg, cal)
    lines, warnings = [], []
    for rid, path, _ in _inputs(args):
        try:
            vector, report = perceiver(load_image(path), path)
            lines.append({"id": rid, "vector": [int(b) for b in vector], "report": report.to_json()})
        except Exception as e:  # noqa: BLE001 - recorded per row
            warnings.append({"id": rid, "error": f"{type(e).__name__}: {e}"})
    Path(args.out).write_text("".join(json.dumps(x, sort_keys=True) + "\n" for x in lines))
    return {"out": str(args.out), "images": len(lines), "warnings": warnings}


def _parse_tasks(text: str | None):
    if text is None:
        return None
    return [TaskLabel(t) for t in text.split(",") if t.strip()]


def cmd_restore(args, cfg: Config) -> dict:
    ctx = _context(cfg)
    registry = _registry(cfg)
    strategy = Strategy.parse(cfg.strategy)
    perceiver = _perceiver(cfg, ctx.calibration)
    explicit = _parse_tasks(args.tasks)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written, warnings, meta = [], [], {}
    for rid, path, row in _inputs(args):
        try:
            img = load_image(path)
            env = CachedEnvironment(ImageEnvironment(ctx))
            if explicit is None and strategy.kind == "greedy" and (row is None or cfg.task_source == "perceived"):
                trace = restore_end_to_end(img, env, registry, perceiver, cfg.epsilon)
            else:
                if explicit is not None:
                    tasks = explicit
                elif row is not None and cfg.task_source == "label":
                    tasks = tasks_from_vector(row.label)
                else:
                    tasks = tasks_from_vector(perceiver(img, path)[0])
                trace = run_strategy(img, strategy, tasks, registry, env,
                                     recipe=None if row is None else row.recipe, epsilon=cfg.epsilon)
            if row is not None:
                trace.extra["recipe_id"] = row.id
            target = out_dir / f"{rid}.png"
            if not trace.steps and path.suffix.lower() == ".png":
                shutil.copyfile(path, target)
            else:
                save_image(trace.final, target)
            _write_json(out_dir / f"{rid}.trace.json", trace.to_json(with_metadata=False))
            meta[rid] = {"wall_time": trace.wall_time}
            written.append(rid)
        except Exception as e:  # noqa: BLE001
            if isinstance(e, CalibrationMissing):
                raise
            warnings.append({"id": rid, "error": f"{type(e).__name__}: {e}"})
    _write_json(out_dir / "run_metadata.json", meta)
    return {"out": str(out_dir), "restored": len(written), "warnings": warnings}


def cmd_evaluate(args, cfg: Config) -> dict:
    report = evaluate_restorations(Manifest.read(args.manifest), args.restored)
    report.save(args.out)
    return {"out": str(args.out), "summary": report.summary["strategies"]["restored"],
            "warnings": [r["id"] for r in report.rows if "error" in r]}


def cmd_compare(args, cfg: Config) -> dict:
    ctx = _context(cfg)
    strategies = [Strategy.parse(s) for s in (args.strategies.split(",") if args.strategies else cfg.strategies)]
    source = label_tasks if cfg.task_source == "label" else PerceivedTasks(_perceiver(cfg, ctx.calibration))
    report = compare_strategies(Manifest.read(args.manifest), strategies, _registry(cfg), ctx, source,
                                cfg.epsilon, cfg.jobs)
    report.save(args.out)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    sys.stderr.write(report.to_text())
    return {"out": str(args.out), "summary": report.summary["strategies"],
            "warnings": [r["id"] for r in report.rows if "error" in r]}


def cmd_perception_report(args, cfg: Config) -> dict:
    try:
        cal = resolve_calibration(cfg.calibration)
    except CalibrationMissing:
        cal = None
    report = perception_report(Manifest.read(args.manifest), _perceiver(cfg, cal))
    report.save(args.out)
    sys.stderr.write(report.to_text())
    return {"out": str(args.out), "macc": report.summary["macc"], "dacc": report.summary["dacc"]}


def _parse_range(text: str) -> list[int]:
    lo, sep, hi = text.partition("..")
    if not sep:
        return [int(x) for x in text.split(",")]
    return list(range(int(lo), int(hi) + 1))


def cmd_bench_complexity(args, cfg: Config) -> dict:
    rows = bench_complexity(_parse_range(args.n_range), trials=args.trials, tools_per_task=args.tools_per_task,
                            seed=cfg.seed)
    _write_json(Path(args.out), {"rows": rows})
    return {"out": str(args.out), "greedy": [r["greedy_mean"] for r in rows],
            "rollback": [r["rollback_mean"] for r in rows], "triangular": [r["triangular"] for r in rows]}


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--calibration", help="calibration JSON (else $QRESTORE_CALIBRATION)")
    common.add_argument("--quality-mode", choices=["Normalized", "RawEq1"])
    common.add_argument("--epsilon", type=float)
    common.add_argument("--strategy", help="greedy | rollback:N | random:SEED | reverse | fixed:T1,T2")
    common.add_argument("--jobs", type=int)
    common.add_argument("--perceiver-endpoint", help="cmd:<command> | tcp:host:port | unix:/path")
    common.add_argument("--log-level", default="WARNING")

    p = argparse.ArgumentParser(prog="qrestore", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("calibrate", parents=[common], help="fit metrics and detector thresholds")
    s.add_argument("pristine_dir")
    s.add_argument("out")
    s.set_defaults(fn=cmd_calibrate)

    s = sub.add_parser("degrade", parents=[common], help="generate a degraded dataset and manifest")
    s.add_argument("src_dir")
    s.add_argument("out_dir")
    s.add_argument("--n", type=int, help="variants per source image")
    s.set_defaults(fn=cmd_degrade)

    s = sub.add_parser("perceive", parents=[common], help="perception vectors as JSON lines")
    s.add_argument("--image")
    s.add_argument("--manifest")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_perceive)

    s = sub.add_parser("restore", parents=[common], help="restore images and write traces")
    s.add_argument("--image")
    s.add_argument("--manifest")
    s.add_argument("--tasks", help="comma-separated task labels; empty string for none")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_restore)

    s = sub.add_parser("evaluate", parents=[common], help="score restored images against originals")
    s.add_argument("manifest")
    s.add_argument("restored")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("compare", parents=[common], help="compare restoration strategies")
    s.add_argument("manifest")
    s.add_argument("--strategies", help="comma-separated, e.g. greedy,random:0,reverse,rollback:2")
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("perception-report", parents=[common], help="MACC and per-type DACC over a manifest")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_perception_report)

    s = sub.add_parser("bench-complexity", parents=[common], help="eval counts of greedy vs rollback")
    s.add_argument("--n-range", default="2..6")
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--tools-per-task", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_bench_complexity)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    start = time.perf_counter()
    try:
        cfg = _config(args)
        result = args.fn(args, cfg)
    except Exception as e:  # noqa: BLE001 - every fatal error becomes exit 2 + JSON
        logger.debug("fatal", exc_info=True)
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e), "command": args.command},
                                    sort_keys=True) + "\n")
        return 2
    result["command"] = args.command
    logger.info("%s finished in %.1fs", args.command, time.perf_counter() - start)
    _emit(result)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
