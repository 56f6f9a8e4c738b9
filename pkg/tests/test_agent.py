import hashlib
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qrestore.agent import (CachedEnvironment, ImageEnvironment, MissingRecipe, Strategy, SyntheticEnvironment,
                            Termination, TooManyTasks, bench_complexity, exhaustive_best_order, greedy_restore,
                            recipe_tasks, restore_end_to_end, rollback_restore, run_strategy, triangular_evals)
from qrestore.calibration import CalibrationMissing, QualityContext
from qrestore.corpus import pristine_crops
from qrestore.degrade import DegradationKind as K, DegradationStep, NOISE_SIGMAS, Recipe, apply_step, recipe_rng
from qrestore.restore import TaskLabel, default_registry, tasks_from_vector

EPS = 1e-4


class TableEnvironment:
    """State = tuple of applied specs; quality is a fixed pseudo-random function of that tuple."""

    def __init__(self, seed, spread=0.2):
        self.seed, self.spread, self.applied = seed, spread, 0

    def apply(self, state, spec):
        self.applied += 1
        return tuple(state) + (spec,)

    def score(self, state):
        key = json.dumps([self.seed] + [s.to_json() for s in state], sort_keys=True).encode()
        u = int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big") / 2 ** 64
        return 0.5 + self.spread * (u - 0.5) + 0.01 * len(state), None


task_sets = st.lists(st.sampled_from(list(TaskLabel)), min_size=1, max_size=5, unique=True)


def _greedy_evals_law(trace, n, registry):
    """Candidates evaluated = sum over evaluated stages of the remaining tools."""
    remaining = list(trace.tasks)
    total = 0
    for step in trace.steps:
        total += sum(len(registry.for_task(t)) for t in remaining)
        remaining.remove(step.spec.task)
    if trace.termination is Termination.NO_IMPROVEMENT:
        total += sum(len(registry.for_task(t)) for t in remaining)
    return total


@given(st.integers(0, 10 ** 6), task_sets, st.booleans())
def test_greedy_invariants(seed, tasks, one_tool):
    reg = default_registry().first_only() if one_tool else default_registry()
    env = TableEnvironment(seed)
    trace = greedy_restore((), tasks, reg, env, EPS)
    qs = [trace.initial_quality] + [s.quality_after for s in trace.steps]
    assert all(b > a + EPS for a, b in zip(qs, qs[1:]))
    assert [s.stage for s in trace.steps] == list(range(1, len(trace.steps) + 1))
    assert len({s.spec.task for s in trace.steps}) == len(trace.steps) <= len(tasks)
    assert trace.termination in (Termination.ALL_TASKS_DONE, Termination.NO_IMPROVEMENT)
    assert (trace.termination is Termination.ALL_TASKS_DONE) == (len(trace.steps) == len(tasks))
    assert trace.eval_count == _greedy_evals_law(trace, len(tasks), reg) == env.applied


@given(st.integers(0, 10 ** 6), task_sets, st.integers(0, 6))
def test_rollback_dominates_greedy(seed, tasks, budget):
    reg = default_registry()
    g = greedy_restore((), tasks, reg, TableEnvironment(seed), EPS)
    r = rollback_restore((), tasks, reg, TableEnvironment(seed), budget, EPS)
    assert r.eval_count >= g.eval_count
    assert r.final_quality >= g.final_quality
    assert r.rollbacks <= budget
    assert len({s.spec.task for s in r.steps}) == len(r.steps)
    if budget == 0:
        assert r.eval_count == g.eval_count
        assert [s.to_json() for s in r.steps] == [s.to_json() for s in g.steps]
        assert r.termination is g.termination


@given(st.integers(0, 10 ** 6), st.lists(st.sampled_from(list(TaskLabel)), min_size=1, max_size=4, unique=True))
def test_exhaustive_dominates_greedy(seed, tasks):
    reg = default_registry().first_only()
    g = greedy_restore((), tasks, reg, TableEnvironment(seed), EPS)
    order, q, apps = exhaustive_best_order((), tasks, reg, TableEnvironment(seed))
    assert q >= g.final_quality
    n = len(tasks)
    assert apps == int(np.prod(range(1, n + 1))) * n


def test_exhaustive_examples():
    reg = default_registry()
    order, _, apps = exhaustive_best_order((), [TaskLabel.DH, TaskLabel.SR, TaskLabel.LE], reg, TableEnvironment(0))
    assert apps == 18
    order, _, apps = exhaustive_best_order((), [TaskLabel.DH], reg, TableEnvironment(0, spread=0.0))
    assert order == [TaskLabel.DH] and apps == 1
    with pytest.raises(TooManyTasks):
        exhaustive_best_order((), list(TaskLabel)[:5], reg, TableEnvironment(0))


def test_empty_tasks_guard():
    t = greedy_restore((), [], default_registry(), TableEnvironment(0))
    assert t.termination is Termination.ALL_TASKS_DONE and t.eval_count == 0 and not t.steps


# -- complexity bench ----------------------------------------------------------

@pytest.mark.parametrize("m", [1, 2, 3])
def test_synthetic_greedy_follows_triangular_law(m):
    for n in range(1, 7):
        for seed in range(5):
            env = SyntheticEnvironment(n, seed)
            t = greedy_restore((), env.tasks, env.registry(m), env)
            assert t.termination is Termination.ALL_TASKS_DONE
            assert t.eval_count == triangular_evals(n, m) == sum(k * m for k in range(1, n + 1))


def test_bench_rollback_grows_faster():
    rows = bench_complexity(range(2, 7), trials=10)
    assert [r["greedy_mean"] for r in rows] == [3, 6, 10, 15, 21]
    assert all(r["rollback_mean"] > r["greedy_mean"] for r in rows)
    extra = [r["rollback_mean"] - r["greedy_mean"] for r in rows]
    assert extra[-1] > extra[0]


# -- strategies ----------------------------------------------------------------

def test_strategy_parse():
    for text in ["greedy", "rollback:3", "random:7", "reverse", "fixed:DN_M,DH"]:
        assert Strategy.parse(text).name == text
    assert Strategy.parse("Rollback").max_rollbacks == 1
    with pytest.raises(ValueError):
        Strategy.parse("beam:4")


def _recipe():
    return Recipe((DegradationStep(K.HAZE, {"t": 0.6, "airlight": [0.9] * 3}),
                   DegradationStep(K.NOISE, {"sigma": NOISE_SIGMAS["mid"]}, "mid")))


def test_reverse_and_random_orders():
    reg = default_registry()
    r = _recipe()
    assert recipe_tasks(r) == [TaskLabel.DH, TaskLabel.DN_M]
    t = run_strategy((), Strategy.parse("reverse"), recipe_tasks(r), reg, TableEnvironment(0), recipe=r)
    assert t.order == [TaskLabel.DN_M, TaskLabel.DH]
    with pytest.raises(MissingRecipe):
        run_strategy((), Strategy.parse("reverse"), recipe_tasks(r), reg, TableEnvironment(0))
    tasks = list(TaskLabel)[:5]
    a = run_strategy((), Strategy.parse("random:3"), tasks, reg, TableEnvironment(0))
    b = run_strategy((), Strategy.parse("random:3"), tasks, reg, TableEnvironment(0))
    assert a.to_json(False) == b.to_json(False)
    assert sorted(t.value for t in a.order) == sorted(t.value for t in tasks)
    f = run_strategy((), Strategy.parse("fixed:SR,DH"), [TaskLabel.SR, TaskLabel.DH], reg, TableEnvironment(0))
    assert f.order == [TaskLabel.SR, TaskLabel.DH]


class CountingEnvironment:
    def __init__(self):
        self.applied = self.scored = 0

    def apply(self, state, spec):
        self.applied += 1
        return np.clip(state + 0.01 * (1 + TaskLabel(spec.task).value.__len__()), 0, 1)

    def score(self, state):
        self.scored += 1
        return float(state.mean()), None


def test_cache_reuses_work_without_changing_results():
    img = np.zeros((4, 4, 3), np.float32)
    tasks = [TaskLabel.DH, TaskLabel.SR, TaskLabel.LE]
    reg = default_registry()
    plain = greedy_restore(img, tasks, reg, CountingEnvironment())
    inner = CountingEnvironment()
    cached = CachedEnvironment(inner)
    first = greedy_restore(img, tasks, reg, cached)
    calls = inner.applied
    second = greedy_restore(img, tasks, reg, cached)
    assert plain.to_json(False) == first.to_json(False) == second.to_json(False)
    assert second.eval_count == first.eval_count and inner.applied == calls


# -- real images -----------------------------------------------------------------

@pytest.fixture(scope="module")
def noisy_images():
    crops = [img for _, img in pristine_crops(10, seed=23)]
    step = DegradationStep(K.NOISE, {"sigma": NOISE_SIGMAS["mid"]}, "mid")
    return [(img, apply_step(img, step, recipe_rng(0, str(i)))) for i, img in enumerate(crops)]


def test_single_denoise_task_completes(noisy_images, ctx):
    env = CachedEnvironment(ImageEnvironment(ctx))
    done = [greedy_restore(noisy, [TaskLabel.DN_M], default_registry(), env).termination
            is Termination.ALL_TASKS_DONE for _, noisy in noisy_images]
    assert np.mean(done) >= 0.9


def test_cached_image_environment_matches(noisy_images, ctx):
    img = noisy_images[0][1]
    reg = default_registry()
    tasks = [TaskLabel.DN_M, TaskLabel.LE]
    plain = greedy_restore(img, tasks, reg, ImageEnvironment(ctx))
    cached = CachedEnvironment(ImageEnvironment(ctx))
    a = greedy_restore(img, tasks, reg, cached)
    b = greedy_restore(img, tasks, reg, cached)
    assert plain.to_json(False) == a.to_json(False) == b.to_json(False)
    np.testing.assert_array_equal(plain.final, b.final)


def test_end_to_end_on_clean_input(small_crops, ctx):
    img = small_crops[0]
    trace = restore_end_to_end(img, ImageEnvironment(ctx), default_registry(), lambda x: (np.zeros(10, int), None))
    assert not trace.steps and trace.eval_count == 0
    assert trace.final is img and trace.extra["perception"] == [0] * 10


def test_end_to_end_maps_bits(small_crops, ctx):
    bits = np.zeros(10, int)
    bits[[1, 5]] = 1
    trace = restore_end_to_end(small_crops[0], ImageEnvironment(ctx), default_registry(), lambda x: (bits, None))
    assert tasks_from_vector(bits) == [TaskLabel.DN_M, TaskLabel.DH]
    assert set(trace.tasks) == {TaskLabel.DN_M, TaskLabel.DH}


def test_image_environment_needs_calibration():
    with pytest.raises(CalibrationMissing):
        ImageEnvironment(QualityContext(None))
