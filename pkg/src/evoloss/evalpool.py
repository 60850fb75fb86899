"""Parallel fitness evaluation with canonical-key caching.

A pool owns worker processes for one task; jobs ship only the expression
text (plus coefficients), a task descriptor or a one-time pickled task, and
a per-job seed derived as hash(base_seed, cache key). Fitness is therefore a
pure function of the expression, so results are identical for any worker
count and batches return in submission order.

Worker count resolves from the ``EVOLOSS_WORKERS`` environment variable when
not given explicitly; ``workers=1`` evaluates inline without spawning.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .coefficients import CoeffExpr, bind
from .evolution import FitnessCache
from .expressions import CanonicalKey, Expr, canonicalize, format_expression
from .seeding import derive_seed
from .training import (
    FailureKind,
    FitnessReport,
    FitnessTask,
    TaskDescriptor,
    build_task,
    fitness_of,
)

log = logging.getLogger("evoloss.evalpool")


class InfrastructureError(RuntimeError):
    """A worker failed for reasons unrelated to the candidate's fitness."""


@dataclass(frozen=True)
class EvalJob:
    job_id: int | str
    expression: Expr | CoeffExpr
    values: tuple[float, ...] | None = None  # coefficients when expression is a CoeffExpr
    seed: int | None = None  # derived from the cache key when omitted

    def body(self) -> Expr:
        if isinstance(self.expression, CoeffExpr):
            return bind(self.expression, self.values)
        return self.expression

    def cache_key(self) -> CanonicalKey:
        return canonicalize(self.body())


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("EVOLOSS_WORKERS", "1"))
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


# Per-process task slot, set once by the pool initializer.
_WORKER_TASK: FitnessTask | None = None


def _init_worker(task_or_descriptor) -> None:
    global _WORKER_TASK
    if isinstance(task_or_descriptor, TaskDescriptor):
        _WORKER_TASK = build_task(task_or_descriptor)
    else:
        _WORKER_TASK = task_or_descriptor


def _run_job(payload: tuple[str, int]) -> FitnessReport:
    expression_text, seed = payload
    try:
        from .expressions import parse_expression

        body = parse_expression(expression_text)
        return fitness_of(body, _WORKER_TASK, seed=seed)
    except Exception as exc:  # isolation: one bad job must not sink the batch
        return FitnessReport(
            fitness=0.0,
            failure=FailureKind.WORKER_ERROR,
            error=f"{type(exc).__name__}: {exc}",
        )


class EvaluationPool:
    """Evaluates batches of jobs against one fitness task.

    The cache (if any) is the only shared mutable state; the coordinating
    thread consults it before dispatch and records each new key exactly
    once. Duplicate keys inside a batch are evaluated once and fanned out.
    """

    def __init__(
        self,
        task: FitnessTask | TaskDescriptor,
        workers: int | None = None,
        cache: FitnessCache | None = None,
        base_seed: int = 0,
    ):
        self.workers = resolve_workers(workers)
        self.cache = cache
        self.base_seed = base_seed
        self._task_spec = task
        self._task: FitnessTask | None = None
        self._executor: ProcessPoolExecutor | None = None

    def _local_task(self) -> FitnessTask:
        if self._task is None:
            self._task = (
                build_task(self._task_spec)
                if isinstance(self._task_spec, TaskDescriptor)
                else self._task_spec
            )
        return self._task

    def _ensure_executor(self) -> ProcessPoolExecutor:
        if self._executor is None:
            self._executor = ProcessPoolExecutor(
                max_workers=self.workers,
                initializer=_init_worker,
                initargs=(self._task_spec,),
            )
        return self._executor

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self) -> "EvaluationPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def job_seed(self, key: CanonicalKey) -> int:
        return derive_seed(self.base_seed, key)

    def evaluate_batch(self, jobs: Sequence[EvalJob]) -> list[FitnessReport]:
        """Reports aligned with ``jobs`` regardless of completion order."""
        reports: dict[int, FitnessReport] = {}
        pending: dict[CanonicalKey, list[int]] = {}
        dispatch: list[tuple[CanonicalKey, str, int]] = []
        started = time.perf_counter()

        for i, job in enumerate(jobs):
            key = job.cache_key()
            cached = self.cache.lookup(key) if self.cache is not None else None
            if cached is not None:
                self.cache.hits += 1
                reports[i] = FitnessReport(fitness=cached)
                log.info("job=%s cached=yes fitness=%.4f", job.job_id, cached)
                continue
            if key in pending:
                # duplicate within the batch: evaluated once, fanned out, and
                # counted as a hit like a sequential lookup would see it
                if self.cache is not None:
                    self.cache.hits += 1
                pending[key].append(i)
                continue
            if self.cache is not None:
                self.cache.misses += 1
            pending[key] = [i]
            seed = job.seed if job.seed is not None else self.job_seed(key)
            dispatch.append((key, format_expression(job.body()), seed))

        if dispatch:
            payloads = [(text, seed) for _, text, seed in dispatch]
            if self.workers == 1:
                task = self._local_task()
                results = [self._run_inline(task, p) for p in payloads]
            else:
                executor = self._ensure_executor()
                results = list(executor.map(_run_job, payloads))
            for (key, _, _), report in zip(dispatch, results):
                if self.cache is not None and report.failure is not FailureKind.WORKER_ERROR:
                    self.cache.put(key, report.fitness)
                for i in pending[key]:
                    reports[i] = report

        for i, job in enumerate(jobs):
            report = reports[i]
            log.info(
                "job=%s failure=%s fitness=%.4f",
                job.job_id,
                report.failure.value,
                report.fitness,
            )
        log.debug(
            "batch of %d jobs (%d dispatched) in %.2fs",
            len(jobs),
            len(dispatch),
            time.perf_counter() - started,
        )
        return [reports[i] for i in range(len(jobs))]

    @staticmethod
    def _run_inline(task: FitnessTask, payload: tuple[str, int]) -> FitnessReport:
        from .expressions import parse_expression

        text, seed = payload
        try:
            return fitness_of(parse_expression(text), task, seed=seed)
        except Exception as exc:
            return FitnessReport(
                fitness=0.0,
                failure=FailureKind.WORKER_ERROR,
                error=f"{type(exc).__name__}: {exc}",
            )

    # Oracle adapter for the genetic algorithm: values only, errors raised.
    def evaluate_many(self, exprs: Sequence[Expr]) -> list[float]:
        jobs = [EvalJob(job_id=i, expression=e) for i, e in enumerate(exprs)]
        reports = self.evaluate_batch(jobs)
        for job, report in zip(jobs, reports):
            if report.failure is FailureKind.WORKER_ERROR:
                raise InfrastructureError(
                    f"evaluation of job {job.job_id} failed: {report.error}"
                )
        return [r.fitness for r in reports]

    def __call__(self, expr: Expr) -> float:
        return self.evaluate_many([expr])[0]


def evaluate_batch(
    jobs: Sequence[EvalJob],
    workers: int,
    cache: FitnessCache | None,
    task: FitnessTask | TaskDescriptor,
    base_seed: int = 0,
) -> list[FitnessReport]:
    """One-shot convenience wrapper around a transient pool."""
    with EvaluationPool(task, workers=workers, cache=cache, base_seed=base_seed) as pool:
        return pool.evaluate_batch(jobs)
