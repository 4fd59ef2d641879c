"""Pipeline orchestration: end-to-end runs, job queue, HTTP service, CLI."""

from .pipeline import (ModelHub, PipelineConfig, RunState, load_run, magic_insert,
                       personalize_cached, save_run)
from .jobs import Job, JobQueue, JobCancelled, InputValidationError, JOB_KINDS
from .workspace import AssetStore, Workspace, build_executors

__all__ = [
    "ModelHub", "PipelineConfig", "RunState", "load_run", "magic_insert",
    "personalize_cached", "save_run",
    "Job", "JobQueue", "JobCancelled", "InputValidationError", "JOB_KINDS",
    "AssetStore", "Workspace", "build_executors",
]
