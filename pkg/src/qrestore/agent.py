"""Quality-driven restoration scheduling: greedy selection, rollback search, fixed baselines and an oracle.

The scheduler only needs an environment that can apply a tool to a state and
score a state, so the same code drives real images and the synthetic
complexity bench.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Protocol

import numpy as np

from .calibration import CalibrationMissing, QualityContext
from .degrade import DegradationKind, Recipe
from .iqa.quality import MetricVector
from .restore.tools import TaskLabel, ToolRegistry, ToolSpec, apply_tool, tasks_from_vector

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-4
STAGE_CAP = 10


class Termination(str, Enum):
    ALL_TASKS_DONE = "AllTasksDone"
    NO_IMPROVEMENT = "NoImprovement"
    STAGE_CAP = "StageCap"


class MissingRecipe(ValueError):
    pass


class TooManyTasks(ValueError):
    pass


class Environment(Protocol):
    def apply(self, state: Any, spec: ToolSpec) -> Any: ...

    def score(self, state: Any) -> tuple[float, MetricVector | None]: ...


@dataclass
class ImageEnvironment:
    """Real images scored by the calibrated quality context; tools probe with the same context."""

    ctx: QualityContext

    def __post_init__(self):
        if self.ctx is None or self.ctx.calibration is None:
            raise CalibrationMissing("a calibrated quality context is required")

    def apply(self, state: np.ndarray, spec: ToolSpec) -> np.ndarray:
        return apply_tool(state, spec, self.ctx.probe)

    def score(self, state: np.ndarray) -> tuple[float, MetricVector]:
        v = self.ctx.measure(state)
        return self.ctx.score(v), v


def _image_key(img: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(img)
    return hashlib.blake2b(arr.tobytes(), digest_size=16, person=str(arr.shape).encode()[:16]).digest()


@dataclass
class CachedEnvironment:
    """Memoises tool outputs and scores by image content.

    Every tool and metric is deterministic, so strategies run on the same image
    can share work without changing any result. Strategy eval counts are
    unaffected: they count candidate applications, not cache misses.
    """

    env: Environment
    _applied: dict = field(default_factory=dict, repr=False)
    _scored: dict = field(default_factory=dict, repr=False)

    def apply(self, state, spec: ToolSpec):
        key = (_image_key(state), json.dumps(spec.to_json(), sort_keys=True))
        if key not in self._applied:
            self._applied[key] = self.env.apply(state, spec)
        return self._applied[key]

    def score(self, state):
        key = _image_key(state)
        if key not in self._scored:
            self._scored[key] = self.env.score(state)
        return self._scored[key]


@dataclass(frozen=True)
class AcceptedStep:
    stage: int
    spec: ToolSpec
    quality_before: float
    quality_after: float
    metrics_after: MetricVector | None = None

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "spec": self.spec.to_json(),
            "quality_before": self.quality_before,
            "quality_after": self.quality_after,
            "metrics_after": None if self.metrics_after is None else self.metrics_after.to_json(),
        }


@dataclass
class RestorationTrace:
    strategy: str
    tasks: tuple
    steps: list
    termination: Termination
    eval_count: int
    initial_quality: float
    final_quality: float
    initial_metrics: MetricVector | None = None
    rollbacks: int = 0
    wall_time: float = 0.0
    final: Any = field(default=None, repr=False)
    extra: dict = field(default_factory=dict)

    @property
    def order(self) -> list:
        return [s.spec.task for s in self.steps]

    def to_json(self, with_metadata: bool = True) -> dict:
        """Deterministic content; the wall time lives in a separate metadata block."""
        out = {
            "strategy": self.strategy,
            "tasks": [t.value for t in self.tasks],
            "steps": [s.to_json() for s in self.steps],
            "termination": self.termination.value,
            "eval_count": self.eval_count,
            "rollbacks": self.rollbacks,
            "initial_quality": self.initial_quality,
            "final_quality": self.final_quality,
            "initial_metrics": None if self.initial_metrics is None else self.initial_metrics.to_json(),
            **{k: v for k, v in sorted(self.extra.items())},
        }
        if with_metadata:
            out["metadata"] = {"wall_time": self.wall_time}
        return out


def _sorted_tasks(tasks) -> list:
    return sorted({TaskLabel(t) for t in tasks}, key=lambda t: t.value)


def _candidates(remaining: list, registry: ToolRegistry) -> list:
    """Every (remaining task x registered tool), in tie-break order: task name, then tool id."""
    specs = [s for t in remaining for s in registry.for_task(t)]
    return sorted(specs, key=ToolSpec.sort_key)


@dataclass
class _Candidate:
    spec: ToolSpec
    quality: float
    metrics: Any
    state: Any


def _evaluate_stage(env: Environment, state, remaining: list, registry: ToolRegistry) -> list:
    """Apply and score every candidate; returned best-first (stable, so ties keep tie-break order)."""
    out = []
    for spec in _candidates(remaining, registry):
        new_state = env.apply(state, spec)
        q, m = env.score(new_state)
        out.append(_Candidate(spec, q, m, new_state))
    order = sorted(range(len(out)), key=lambda i: -out[i].quality)
    return [out[i] for i in order]


def greedy_restore(img, tasks, registry: ToolRegistry, env: Environment,
                   epsilon: float = DEFAULT_EPSILON, stage_cap: int = STAGE_CAP) -> RestorationTrace:
    """At each stage apply every remaining candidate and keep the best if it beats the current quality by epsilon."""
    start = time.perf_counter()
    remaining = _sorted_tasks(tasks)
    task_tuple = tuple(remaining)
    q0, m0 = env.score(img)
    current, best = img, q0
    steps: list[AcceptedStep] = []
    evals = 0
    termination = Termination.ALL_TASKS_DONE
    while remaining:
        if len(steps) >= stage_cap:
            termination = Termination.STAGE_CAP
            break
        cands = _evaluate_stage(env, current, remaining, registry)
        evals += len(cands)
        top = cands[0]
        if not top.quality > best + epsilon:
            termination = Termination.NO_IMPROVEMENT
            break
        steps.append(AcceptedStep(len(steps) + 1, top.spec, best, top.quality, top.metrics))
        current, best = top.state, top.quality
        remaining.remove(top.spec.task)
    return RestorationTrace("greedy", task_tuple, steps, termination, evals, q0, best, m0,
                            wall_time=time.perf_counter() - start, final=current)


def rollback_restore(img, tasks, registry: ToolRegistry, env: Environment, max_rollbacks: int,
                     epsilon: float = DEFAULT_EPSILON, stage_cap: int = STAGE_CAP) -> RestorationTrace:
    """Greedy descent plus bounded backtracking.

    The first descent is exactly the greedy run. Whenever a path ends (all tasks
    done or no improving candidate) and undo budget remains, the most recent
    step is undone (one rollback per undone step) and the next-best improving
    candidate at that stage is taken instead; candidates already scored are
    reused, so only new descents cost evaluations. The best final state seen is
    returned; ties keep the earliest.
    """
    start = time.perf_counter()
    task_tuple = tuple(_sorted_tasks(tasks))
    q0, m0 = env.score(img)
    evals = 0
    rollbacks = 0
    # frames: (stage candidates still untried, state before the stage, quality before, remaining tasks)
    path: list[AcceptedStep] = []
    frames: list[dict] = []
    state, quality, remaining = img, q0, list(task_tuple)
    best = None

    def record(termination):
        nonlocal best
        if best is None or quality > best[0]:
            best = (quality, list(path), state, termination)

    while True:
        # greedy descent from the current node
        termination = Termination.ALL_TASKS_DONE
        while remaining:
            if len(path) >= stage_cap:
                termination = Termination.STAGE_CAP
                break
            cands = _evaluate_stage(env, state, remaining, registry)
            evals += len(cands)
            improving = [c for c in cands if c.quality > quality + epsilon]
            if not improving:
                termination = Termination.NO_IMPROVEMENT
                break
            top = improving[0]
            frames.append({"alternatives": improving[1:], "state": state, "quality": quality,
                           "remaining": list(remaining)})
            path.append(AcceptedStep(len(path) + 1, top.spec, quality, top.quality, top.metrics))
            state, quality = top.state, top.quality
            remaining.remove(top.spec.task)
        record(termination)
        # backtrack to the deepest stage with an untried improving alternative
        resumed = False
        while frames and rollbacks < max_rollbacks:
            frame = frames[-1]
            path.pop()
            rollbacks += 1
            if frame["alternatives"]:
                alt = frame["alternatives"].pop(0)
                state, quality = alt.state, alt.quality
                remaining = [t for t in frame["remaining"] if t is not alt.spec.task]
                path.append(AcceptedStep(len(path) + 1, alt.spec, frame["quality"], alt.quality, alt.metrics))
                resumed = True
                break
            frames.pop()
            state, quality, remaining = frame["state"], frame["quality"], list(frame["remaining"])
        if not resumed:
            break
    final_quality, steps, final_state, termination = best
    return RestorationTrace(f"rollback:{max_rollbacks}", task_tuple, steps, termination, evals, q0,
                            final_quality, m0, rollbacks=rollbacks, wall_time=time.perf_counter() - start,
                            final=final_state)


def sequential_restore(img, order, registry: ToolRegistry, env: Environment, name: str) -> RestorationTrace:
    """Apply the first registered tool of each task in ``order`` unconditionally, scoring every stage."""
    start = time.perf_counter()
    order = [TaskLabel(t) for t in order]
    q0, m0 = env.score(img)
    state, q = img, q0
    steps = []
    for i, task in enumerate(order, start=1):
        spec = registry.for_task(task)[0]
        state = env.apply(state, spec)
        q_new, m = env.score(state)
        steps.append(AcceptedStep(i, spec, q, q_new, m))
        q = q_new
    return RestorationTrace(name, tuple(_sorted_tasks(order)), steps, Termination.ALL_TASKS_DONE, len(order), q0, q,
                            m0, wall_time=time.perf_counter() - start, final=state)


# -- strategies ---------------------------------------------------------------

_KIND_TASK = {
    DegradationKind.JPEG: TaskLabel.DJ,
    DegradationKind.RAIN: TaskLabel.DR,
    DegradationKind.HAZE: TaskLabel.DH,
    DegradationKind.MOTION_BLUR: TaskLabel.MDB,
    DegradationKind.DEFOCUS_BLUR: TaskLabel.DDB,
    DegradationKind.LOW_LIGHT: TaskLabel.LE,
    DegradationKind.LOW_RES: TaskLabel.SR,
}
_NOISE_TASK = {"low": TaskLabel.DN_L, "mid": TaskLabel.DN_M, "high": TaskLabel.DN_H}


def recipe_tasks(recipe: Recipe) -> list:
    """Matched restoration task of every step, in degradation order."""
    return [_NOISE_TASK[s.severity] if s.kind is DegradationKind.NOISE else _KIND_TASK[s.kind] for s in recipe.steps]


@dataclass(frozen=True)
class Strategy:
    kind: str
    max_rollbacks: int = 0
    seed: int = 0
    order: tuple = ()

    @property
    def name(self) -> str:
        if self.kind == "rollback":
            return f"rollback:{self.max_rollbacks}"
        if self.kind == "random":
            return f"random:{self.seed}"
        if self.kind == "fixed":
            return "fixed:" + ",".join(t.value for t in self.order)
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        """``greedy``, ``rollback:N``, ``random:SEED``, ``reverse`` or ``fixed:DN_M,DH``."""
        head, _, arg = text.strip().partition(":")
        head = head.lower()
        if head == "greedy":
            return cls("greedy")
        if head == "rollback":
            return cls("rollback", max_rollbacks=int(arg or 1))
        if head == "random":
            return cls("random", seed=int(arg or 0))
        if head == "reverse":
            return cls("reverse")
        if head == "fixed":
            return cls("fixed", order=tuple(TaskLabel(t) for t in arg.split(",") if t))
        raise ValueError(f"unknown strategy {text!r}")


def run_strategy(img, strategy: Strategy, tasks, registry: ToolRegistry, env: Environment,
                 recipe: Recipe | None = None, epsilon: float = DEFAULT_EPSILON) -> RestorationTrace:
    tasks = _sorted_tasks(tasks)
    if strategy.kind == "greedy":
        return greedy_restore(img, tasks, registry, env, epsilon)
    if strategy.kind == "rollback":
        return rollback_restore(img, tasks, registry, env, strategy.max_rollbacks, epsilon)
    if strategy.kind == "random":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([strategy.seed, len(tasks)])))
        order = [tasks[i] for i in rng.permutation(len(tasks))]
        return sequential_restore(img, order, registry, env, strategy.name)
    if strategy.kind == "reverse":
        if recipe is None:
            raise MissingRecipe("reverse-order restoration needs the degradation recipe")
        return sequential_restore(img, list(reversed(recipe_tasks(recipe))), registry, env, "reverse")
    if strategy.kind == "fixed":
        return sequential_restore(img, list(strategy.order), registry, env, strategy.name)
    raise ValueError(f"unknown strategy kind {strategy.kind!r}")


def restore_end_to_end(img, env: ImageEnvironment, registry: ToolRegistry, perceiver,
                       epsilon: float = DEFAULT_EPSILON) -> RestorationTrace:
    """Perceive, map the perception bits to tasks, then restore greedily."""
    vector, report = perceiver(img)
    trace = greedy_restore(img, tasks_from_vector(vector), registry, env, epsilon)
    trace.extra["perception"] = [int(b) for b in vector]
    if report is not None and hasattr(report, "to_json"):
        trace.extra["perception_report"] = report.to_json()
    return trace


def exhaustive_best_order(img, tasks, registry: ToolRegistry, env: Environment) -> tuple[list, float, int]:
    """Score every order of ``tasks`` with the first tool per task.

    Returns (best sequence, its quality, applications). Every prefix of every
    order is a candidate, the empty one included, so the result bounds any
    schedule that stops early. Ties go to the shorter, then lexicographically
    smaller, sequence.
    """
    tasks = _sorted_tasks(tasks)
    if len(tasks) > 4:
        raise TooManyTasks(f"{len(tasks)} tasks; the exhaustive oracle is limited to 4")
    q0, _ = env.score(img)
    best_seq, best_q = [], q0
    applications = 0
    for perm in itertools.permutations(tasks):
        state = img
        for k, task in enumerate(perm, start=1):
            state = env.apply(state, registry.for_task(task)[0])
            applications += 1
            q, _ = env.score(state)
            seq = list(perm[:k])
            key = (len(seq), [t.value for t in seq])
            if q > best_q or (q == best_q and key < (len(best_seq), [t.value for t in best_seq])):
                best_seq, best_q = seq, q
    return best_seq, best_q, applications


# -- synthetic complexity bench ----------------------------------------------

@dataclass
class SyntheticEnvironment:
    """Abstract tasks with positive, order-dependent gains.

    A state is the tuple of applied tool specs. The marginal gain of task j after
    the set S is ``base_j * prod_{i in S} factor[i, j]`` with every factor in
    [0.5, 1.5], so every stage improves (the greedy run never stops early) while
    the best order still depends on interactions.
    """

    n: int
    seed: int = 0
    calls: int = 0

    def __post_init__(self):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, self.n])))
        self.base = rng.uniform(0.05, 0.15, self.n)
        self.factor = rng.uniform(0.5, 1.5, (self.n, self.n))
        self.tasks = list(TaskLabel)[: self.n]

    def registry(self, tools_per_task: int = 1) -> ToolRegistry:
        specs = {t: tuple(ToolSpec(t, f"synthetic{m}", {}) for m in range(tools_per_task)) for t in TaskLabel}
        return _SyntheticRegistry(specs)

    def apply(self, state, spec: ToolSpec):
        self.calls += 1
        return tuple(state) + (spec,)

    def score(self, state) -> tuple[float, None]:
        idx = [self.tasks.index(s.task) for s in state]
        q = 0.0
        for k, j in enumerate(idx):
            gain = self.base[j]
            for i in idx[:k]:
                gain *= self.factor[i, j]
            tool = int(state[k].tool_id.removeprefix("synthetic") or 0)
            q += gain * (1.0 - 0.1 * tool)
        return float(q), None


class _SyntheticRegistry(ToolRegistry):
    """Registry of placeholder tools; they are only ever applied by :class:`SyntheticEnvironment`."""

    def __post_init__(self):
        for task in TaskLabel:
            if not self.tools.get(task):
                raise ValueError(f"no tool registered for {task.value}")


def triangular_evals(n: int, tools_per_task: int = 1) -> int:
    """Candidate applications of a greedy run whose every stage accepts: sum_k k*m."""
    return tools_per_task * n * (n + 1) // 2


def bench_complexity(ns, trials: int = 20, tools_per_task: int = 1, seed: int = 0,
                     max_rollbacks=None) -> list[dict]:
    """Mean candidate applications of greedy and rollback search over random synthetic task sets."""
    rows = []
    for n in ns:
        greedy_counts, rollback_counts = [], []
        for trial in range(trials):
            env = SyntheticEnvironment(n, seed=seed * 1000003 + trial)
            reg = env.registry(tools_per_task)
            tasks = env.tasks
            greedy_counts.append(greedy_restore((), tasks, reg, env).eval_count)
            budget = n if max_rollbacks is None else max_rollbacks
            rollback_counts.append(rollback_restore((), tasks, reg, env, budget).eval_count)
        rows.append({
            "n": n,
            "greedy_mean": float(np.mean(greedy_counts)),
            "greedy_counts": greedy_counts,
            "triangular": triangular_evals(n, tools_per_task),
            "rollback_mean": float(np.mean(rollback_counts)),
            "rollback_counts": rollback_counts,
            "max_rollbacks": n if max_rollbacks is None else max_rollbacks,
        })
    return rows
