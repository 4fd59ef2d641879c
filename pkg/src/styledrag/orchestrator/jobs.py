"""Serialized job queue backing the CLI batch commands and the service."""

from __future__ import annotations

import itertools
import json
import logging
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field, asdict
from pathlib import Path

from ..errors import NotFoundError, ParameterError, StyleDragError

__all__ = ["Job", "JobQueue", "JobCancelled", "JOB_KINDS", "InputValidationError"]

log = logging.getLogger(__name__)

JOB_KINDS = ("personalize", "generate", "insert", "bootstrap_round",
             "evaluate", "full_pipeline")


class JobCancelled(StyleDragError, RuntimeError):
    """Raised inside an executor when a cooperative cancel was requested."""


class InputValidationError(StyleDragError, ValueError):
    """Job inputs failed validation; details carry field paths."""

    def __init__(self, details):
        self.details = list(details)
        super().__init__("invalid job inputs: " +
                         "; ".join(f"{d['field']}: {d['message']}" for d in self.details))


@dataclass
class Job:
    id: str
    kind: str
    state: str = "queued"            # queued -> running -> done | failed
    inputs: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    progress: float = 0.0
    error: dict | None = None
    created: float = 0.0
    started: float | None = None
    finished: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


def _validate_inputs(kind: str, inputs: dict) -> list:
    problems = []

    def need(f, typ=None):
        if f not in inputs or inputs[f] in (None, ""):
            problems.append({"field": f, "message": "required"})
        elif typ is not None and not isinstance(inputs[f], typ):
            problems.append({"field": f, "message": f"expected {typ.__name__}"})

    if kind in ("personalize", "full_pipeline", "generate"):
        need("subject_asset", str)
        need("class_noun", str)
    if kind in ("generate", "full_pipeline"):
        need("target_asset", str)
    if kind == "insert":
        need("subject_asset", str)
        need("target_asset", str)
    if kind in ("insert", "full_pipeline"):
        need("placement", dict)
        placement = inputs.get("placement")
        if isinstance(placement, dict):
            for f in ("x", "y"):
                if f not in placement:
                    problems.append({"field": f"placement.{f}", "message": "required"})
    if kind == "bootstrap_round":
        need("policy", dict)
    if kind == "evaluate":
        need("entries", list)
    return problems


class JobQueue:
    """FIFO queue with a configurable number of worker threads (default 1).

    Executors receive (job, inputs, context, progress, cancel_check);
    cancel_check raises JobCancelled when a stop was requested, and is
    meant to be called at stage boundaries.
    """

    def __init__(self, executors: dict, context=None, width: int = 1, store_dir=None):
        self.executors = dict(executors)
        self.context = context
        self.store_dir = Path(store_dir) if store_dir else None
        self._jobs: dict[str, Job] = {}
        self._cancel_flags: dict[str, threading.Event] = {}
        self._lock = threading.Lock()
        self._queue: queue.Queue = queue.Queue()
        self._running = True
        self._counter = itertools.count()
        self._workers = [threading.Thread(target=self._worker, daemon=True,
                                          name=f"job-worker-{i}")
                         for i in range(max(1, width))]
        for w in self._workers:
            w.start()

    # -- public API -------------------------------------------------------

    def submit(self, kind: str, inputs: dict) -> Job:
        if kind not in JOB_KINDS:
            raise ParameterError(f"unknown job kind {kind!r}; known: {JOB_KINDS}")
        problems = _validate_inputs(kind, inputs)
        if problems:
            raise InputValidationError(problems)
        if kind not in self.executors:
            raise ParameterError(f"no executor registered for kind {kind!r}")
        job = Job(id=uuid.uuid4().hex[:12], kind=kind, inputs=dict(inputs),
                  created=time.time())
        with self._lock:
            self._jobs[job.id] = job
            self._cancel_flags[job.id] = threading.Event()
        self._persist(job)
        self._queue.put(job.id)
        return self.status(job.id)

    def status(self, job_id: str) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise NotFoundError(f"unknown job id {job_id!r}")
            return Job(**job.to_json())

    def list_jobs(self) -> list:
        with self._lock:
            return [Job(**j.to_json()) for j in self._jobs.values()]

    def cancel(self, job_id: str) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise NotFoundError(f"unknown job id {job_id!r}")
            if job.state == "queued":
                job.state = "failed"
                job.error = {"code": "cancelled", "message": "cancelled while queued",
                             "details": {}}
                job.finished = time.time()
            elif job.state == "running":
                self._cancel_flags[job_id].set()
        self._persist(self._jobs[job_id])
        return self.status(job_id)

    def wait(self, job_id: str, timeout: float = 600.0, poll: float = 0.02) -> Job:
        deadline = time.time() + timeout
        while time.time() < deadline:
            job = self.status(job_id)
            if job.state in ("done", "failed"):
                return job
            time.sleep(poll)
        raise TimeoutError(f"job {job_id} still {self.status(job_id).state} after {timeout}s")

    def shutdown(self):
        self._running = False
        for _ in self._workers:
            self._queue.put(None)
        for w in self._workers:
            w.join(timeout=2.0)

    # -- internals ----------------------------------------------------------

    def _persist(self, job: Job):
        if self.store_dir is None:
            return
        self.store_dir.mkdir(parents=True, exist_ok=True)
        (self.store_dir / f"{job.id}.json").write_text(
            json.dumps(job.to_json(), indent=2, sort_keys=True))

    def _worker(self):
        while self._running:
            job_id = self._queue.get()
            if job_id is None:
                break
            with self._lock:
                job = self._jobs[job_id]
                if job.state != "queued":
                    continue
                job.state = "running"
                job.started = time.time()
            self._persist(job)
            flag = self._cancel_flags[job_id]

            def cancel_check():
                if flag.is_set():
                    raise JobCancelled(f"job {job_id} cancelled")

            def progress(fraction, stage=""):
                with self._lock:
                    job.progress = float(fraction)
                self._persist(job)

            try:
                artifacts = self.executors[job.kind](
                    job.inputs, self.context, progress, cancel_check) or {}
                with self._lock:
                    job.artifacts = dict(artifacts)
                    job.progress = 1.0
                    job.state = "done"
                    job.finished = time.time()
            except JobCancelled:
                with self._lock:
                    job.state = "failed"
                    job.error = {"code": "cancelled", "message": "cancelled while running",
                                 "details": {}}
                    job.finished = time.time()
            except Exception as exc:  # executor failures become job failures
                log.exception("job %s (%s) failed", job_id, job.kind)
                with self._lock:
                    job.state = "failed"
                    job.error = {"code": type(exc).__name__, "message": str(exc),
                                 "details": getattr(exc, "details", {}) or {}}
                    job.finished = time.time()
            self._persist(job)
