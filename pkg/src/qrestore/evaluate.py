"""Full-reference metrics, strategy comparison and perception reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .agent import CachedEnvironment, ImageEnvironment, Strategy, run_strategy
from .calibration import QualityContext
from .degrade import LABEL_NAMES, DegradationStep, Manifest, ManifestRow, apply_step, recipe_rng
from .imagecore import ImageTooSmall, load_image, to_luma
from .perceive.detectors import InternalPerceiver
from .perceive.metrics import EmptyClass, dacc, macc, precision
from .restore.tools import ToolRegistry, ToolSpec, apply_tool, tasks_from_vector

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class DimMismatch(ValueError):
    pass


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"{a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak 1.0, MSE over every sample; identical images give the cap."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _ssim_window() -> np.ndarray:
    g = cv2.getGaussianKernel(SSIM_WINDOW, SSIM_SIGMA, cv2.CV_64F)
    return g @ g.T


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Luma SSIM with an 11x11 Gaussian window (sigma 1.5), L = 1, averaged over fully covered pixels."""
    a, b = _check_pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ImageTooSmall(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")
    x = to_luma(a).astype(np.float64) if a.ndim == 3 else a
    y = to_luma(b).astype(np.float64) if b.ndim == 3 else b
    w = _ssim_window()
    r = SSIM_WINDOW // 2

    def filt(p):
        return cv2.filter2D(p, cv2.CV_64F, w, borderType=cv2.BORDER_REFLECT_101)[r:-r, r:-r]

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class PairScore:
    psnr_db: float
    ssim: float

    @classmethod
    def of(cls, restored: np.ndarray, reference: np.ndarray) -> "PairScore":
        return cls(psnr(restored, reference), ssim(restored, reference))

    def to_json(self) -> dict:
        return {"psnr": self.psnr_db, "ssim": self.ssim}


@dataclass
class Report:
    """Per-row records plus a summary that is a pure function of them."""

    kind: str
    rows: list
    summary: dict
    metadata: dict = field(default_factory=dict)

    def to_json(self, with_metadata: bool = True) -> dict:
        out = {"kind": self.kind, "summary": self.summary, "rows": self.rows}
        if with_metadata:
            out["metadata"] = self.metadata
        return out

    def dumps(self, with_metadata: bool = False) -> str:
        return json.dumps(self.to_json(with_metadata), sort_keys=True, indent=1)

    def save(self, path) -> None:
        """The report itself is deterministic; run-time metadata goes to ``<path>.meta.json``."""
        path = Path(path)
        path.write_text(self.dumps() + "\n")
        path.with_name(path.name + ".meta.json").write_text(json.dumps(self.metadata, sort_keys=True) + "\n")

    def table(self) -> list[list]:
        """Header row plus one row per strategy (comparison) or the DACC/MACC row (perception)."""
        s = self.summary
        if self.kind == "perception":
            head = list(LABEL_NAMES) + ["MACC"]
            return [head, [s["dacc"][k] for k in LABEL_NAMES] + [s["macc"]]]
        head = ["strategy", "PSNR", "SSIM", "LPIPS", "DISTS", "eval_count", "n", "failures"]
        rows = [head]
        for name, st in s["strategies"].items():
            rows.append([name, st["mean_psnr"], st["mean_ssim"], None, None, st["mean_eval_count"], st["n"],
                         st["failures"]])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row in self.table():
            writer.writerow(["" if v is None else (f"{v:.4f}" if isinstance(v, float) else v) for v in row])
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [["-" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v)) for v in row]
                 for row in self.table()]
        widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells) + "\n"


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


# -- matched tool gains -------------------------------------------------------

def matched_gains(images: list, make_step, spec: ToolSpec, probe=None, seed: int = 0,
                  spec_for_step=None) -> list[float]:
    """PSNR(tool(degraded)) - PSNR(degraded) per image, one fresh degradation each.

    ``make_step(rng) -> DegradationStep``; ``spec_for_step(step) -> ToolSpec``
    overrides ``spec`` when the tool is told the true degradation parameters.
    """
    gains = []
    for i, img in enumerate(images):
        rng = recipe_rng(seed, "matched", i)
        step: DegradationStep = make_step(rng)
        degraded = apply_step(img, step, rng)
        tool = spec if spec_for_step is None else spec_for_step(step)
        restored = apply_tool(degraded, tool, probe)
        gains.append(psnr(restored, img) - psnr(degraded, img))
    return gains


@dataclass(frozen=True)
class MatchedCase:
    """One (degradation, matched tool) pair of the paired gain measurement; ``floor`` in dB."""

    name: str
    make_step: object
    spec: ToolSpec
    floor: float = 0.0
    strict: bool = True
    spec_for_step: object = None


def matched_cases(registry: ToolRegistry) -> list[MatchedCase]:
    """Every registered tool against the degradation it targets.

    Fixed-parameter cases carry a frozen floor; the rest only need a positive
    mean gain. Motion blur is measured twice: with the true kernel handed to the
    tool and blind.
    """
    from .degrade import NOISE_SIGMAS, DegradationKind as K, sample_step
    from .restore.tools import TaskLabel as T

    def noise(level):
        return lambda rng: DegradationStep(K.NOISE, {"sigma": NOISE_SIGMAS[level]}, level)

    def sampled(kind):
        return lambda rng: sample_step(kind, rng)

    fixed = {
        (T.DN_M, "nlm"): 3.0, (T.DH, "dark_channel"): 2.0, (T.LE, "adaptive_gamma"): 4.0, (T.DJ, "deblock"): 0.5,
    }
    makers = {
        T.DN_L: noise("low"), T.DN_M: noise("mid"), T.DN_H: noise("high"),
        T.DJ: lambda rng: DegradationStep(K.JPEG, {"quality": 10}),
        T.DR: sampled(K.RAIN), T.DH: sampled(K.HAZE), T.MDB: sampled(K.MOTION_BLUR),
        T.DDB: sampled(K.DEFOCUS_BLUR),
        T.LE: lambda rng: DegradationStep(K.LOW_LIGHT, {"gamma": 2.5, "gain": 0.6}),
        T.SR: sampled(K.LOW_RES),
    }
    cases = []
    for task in T:
        for spec in registry.for_task(task):
            floor = fixed.get((task, spec.tool_id))
            name = f"{task.value}/{spec.tool_id}"
            if task is T.MDB:
                known = lambda st, s=spec: ToolSpec(s.task, s.tool_id, {**s.params, "length": st.params["length"],
                                                                         "angle": st.params["angle"]})
                cases.append(MatchedCase(name + "/known-kernel", makers[task], spec, 3.0, False, known))
                name += "/blind"
            cases.append(MatchedCase(name, makers[task], spec, 0.0 if floor is None else floor, floor is None))
    return cases


# -- strategy comparison -----------------------------------------------------

def label_tasks(row: ManifestRow, img: np.ndarray) -> list:
    """Ground-truth tasks from the row label."""
    return tasks_from_vector(row.label)


@dataclass
class PerceivedTasks:
    perceiver: object

    def __call__(self, row: ManifestRow, img: np.ndarray) -> list:
        vector, _ = self.perceiver(img)
        return tasks_from_vector(vector)


def _compare_row(args) -> dict:
    row, manifest_root, strategies, registry, ctx, task_source, epsilon = args
    manifest = Manifest([], manifest_root)
    record = {"id": row.id, "strategies": {}}
    try:
        reference = load_image(manifest.source_path(row))
        degraded = load_image(manifest.degraded_path(row))
        record["input"] = PairScore.of(degraded, reference).to_json()
        tasks = task_source(row, degraded)
        record["tasks"] = [t.value for t in tasks]
    except Exception as e:  # noqa: BLE001 - row failures are recorded, never fatal
        logger.warning("row %s failed to load: %s", row.id, e)
        record["error"] = f"{type(e).__name__}: {e}"
        return record
    env = CachedEnvironment(ImageEnvironment(ctx))
    for strategy in strategies:
        try:
            trace = run_strategy(degraded, strategy, tasks, registry, env, recipe=row.recipe, epsilon=epsilon)
            score = PairScore.of(trace.final, reference)
            record["strategies"][strategy.name] = {
                **score.to_json(),
                "eval_count": trace.eval_count,
                "stages": len(trace.steps),
                "order": [t.value for t in trace.order],
                "termination": trace.termination.value,
                "final_quality": trace.final_quality,
            }
        except Exception as e:  # noqa: BLE001
            logger.warning("row %s strategy %s failed: %s", row.id, strategy.name, e)
            record["strategies"][strategy.name] = {"error": f"{type(e).__name__}: {e}"}
    return record


def _map_rows(fn, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def summarize_comparison(rows: list, names: list, reference: str | None = None) -> dict:
    """Means, eval counts and paired win-rates recomputed from the per-row records alone."""
    reference = reference or ("greedy" if "greedy" in names else names[0])
    strategies = {}
    for name in names:
        ok = [r["strategies"][name] for r in rows if "error" not in r.get("strategies", {}).get(name, {"error": 1})]
        strategies[name] = {
            "n": len(ok),
            "failures": len(rows) - len(ok),
            "mean_psnr": _mean(o["psnr"] for o in ok),
            "mean_ssim": _mean(o["ssim"] for o in ok),
            "mean_eval_count": _mean(o["eval_count"] for o in ok),
            "mean_stages": _mean(o["stages"] for o in ok),
            "lpips": None,
            "dists": None,
        }
    win_rates = {}
    for name in names:
        if name == reference:
            continue
        pairs = [(r["strategies"][reference], r["strategies"][name]) for r in rows
                 if "error" not in r.get("strategies", {}).get(reference, {"error": 1})
                 and "error" not in r["strategies"].get(name, {"error": 1})]
        win_rates[name] = {
            "pairs": len(pairs),
            "psnr_win_rate": _mean(float(a["psnr"] >= b["psnr"]) for a, b in pairs),
            "mean_psnr_gap": _mean(a["psnr"] - b["psnr"] for a, b in pairs),
        }
    inputs = [r["input"] for r in rows if "input" in r]
    return {
        "reference": reference,
        "strategies": strategies,
        "win_rates": win_rates,
        "input": {"mean_psnr": _mean(i["psnr"] for i in inputs), "mean_ssim": _mean(i["ssim"] for i in inputs)},
        "rows": len(rows),
        "failed_rows": sum(1 for r in rows if "error" in r),
        "psnr_cap": PSNR_CAP,
    }


def compare_strategies(manifest: Manifest, strategies: list, registry: ToolRegistry, ctx: QualityContext,
                       task_source=label_tasks, epsilon: float = 1e-4, jobs: int = 1) -> Report:
    """Run every strategy on every manifest row and score the results against the originals."""
    if not manifest.rows:
        raise ValueError("manifest is empty")
    strategies = [Strategy.parse(s) if isinstance(s, str) else s for s in strategies]
    start = time.perf_counter()
    args = [(row, manifest.root, strategies, registry, ctx, task_source, epsilon) for row in manifest.rows]
    rows = _map_rows(_compare_row, args, jobs)
    names = [s.name for s in strategies]
    return Report("comparison", rows, summarize_comparison(rows, names),
                  {"runtime_s": time.perf_counter() - start, "jobs": jobs})


# -- perception ----------------------------------------------------------------

def summarize_perception(rows: list) -> dict:
    ok = [r for r in rows if "error" not in r]
    preds = [r["pred"] for r in ok]
    labels = [r["label"] for r in ok]
    out = {"n": len(ok), "failures": len(rows) - len(ok), "macc": None, "dacc": {}, "precision": {}, "support": {},
           "all_zero_macc": None}
    if not ok:
        out["dacc"] = {k: None for k in LABEL_NAMES}
        return out
    out["macc"] = macc(preds, labels)
    out["all_zero_macc"] = macc([[0] * len(LABEL_NAMES)] * len(ok), labels)
    for i, name in enumerate(LABEL_NAMES):
        try:
            out["dacc"][name] = dacc(preds, labels, i)
        except EmptyClass:
            out["dacc"][name] = None
        out["precision"][name] = precision(preds, labels, i)
        out["support"][name] = int(sum(lab[i] for lab in labels))
    return out


def _perceive_row(args) -> dict:
    row, manifest_root, perceiver = args
    path = Manifest([], manifest_root).degraded_path(row)
    record = {"id": row.id, "label": [int(b) for b in row.label]}
    try:
        vector, _ = perceiver(load_image(path), path)
        record["pred"] = [int(b) for b in vector]
    except Exception as e:  # noqa: BLE001
        logger.warning("perception failed for %s: %s", row.id, e)
        record["error"] = f"{type(e).__name__}: {e}"
    return record


def perception_report(manifest: Manifest, perceiver=None, jobs: int = 1) -> Report:
    """MACC and the per-type DACC table over the manifest's degraded images."""
    if not manifest.rows:
        raise ValueError("manifest is empty")
    perceiver = perceiver or InternalPerceiver()
    start = time.perf_counter()
    rows = _map_rows(_perceive_row, [(r, manifest.root, perceiver) for r in manifest.rows], jobs)
    return Report("perception", rows, summarize_perception(rows), {"runtime_s": time.perf_counter() - start})


def perception_report_from_arrays(preds, labels, ids=None) -> Report:
    """Same report for predictions already in memory."""
    ids = ids or [str(i) for i in range(len(preds))]
    rows = [{"id": i, "label": [int(b) for b in y], "pred": [int(b) for b in p]} for i, p, y in zip(ids, preds, labels)]
    return Report("perception", rows, summarize_perception(rows))


# -- restored outputs ------------------------------------------------------------

def evaluate_restorations(manifest: Manifest, restored_dir) -> Report:
    """Score ``<restored_dir>/<row id>.png`` against each row's original, with the degraded input as baseline."""
    restored_dir = Path(restored_dir)
    rows = []
    for row in manifest.rows:
        record = {"id": row.id}
        try:
            reference = load_image(manifest.source_path(row))
            record["input"] = PairScore.of(load_image(manifest.degraded_path(row)), reference).to_json()
            record["strategies"] = {"restored": {**PairScore.of(load_image(restored_dir / f"{row.id}.png"),
                                                                reference).to_json()}}
            trace_path = restored_dir / f"{row.id}.trace.json"
            if trace_path.is_file():
                trace = json.loads(trace_path.read_text())
                record["strategies"]["restored"].update(eval_count=trace["eval_count"], stages=len(trace["steps"]))
            else:
                record["strategies"]["restored"].update(eval_count=0, stages=0)
        except Exception as e:  # noqa: BLE001
            logger.warning("row %s not evaluated: %s", row.id, e)
            record["error"] = f"{type(e).__name__}: {e}"
            record["strategies"] = {"restored": {"error": record["error"]}}
        rows.append(record)
    return Report("comparison", rows, summarize_comparison(rows, ["restored"]))
