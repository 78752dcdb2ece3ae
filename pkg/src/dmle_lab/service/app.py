"""FastAPI service wrapping the experiment engine.

Matrix runs and verification suites execute as background jobs on a
small thread pool; clients submit, then poll /jobs/{id}. The engine
itself stays deterministic, so the service adds orchestration only.
"""

from __future__ import annotations

import itertools
import threading
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__, data, verification
from ..matrix import MatrixConfig, run_matrix
from ..service import schemas
from .. import acquisition as acq_mod
from .. import selection as sel_mod


def matrix_config(req: schemas.MatrixRequest) -> MatrixConfig:
    problems = req.validate_choices()
    if problems:
        raise ValueError("; ".join(problems))
    name = req.dataset_name()
    spec = data.DatasetSpec(
        name=name,
        path=req.dataset[4:] if name == "csv" else None,
        data_dir=req.data_dir,
        size=req.dataset_size,
        n_samples=req.arcs_n,
        noise=req.arcs_noise,
        seed=req.dataset_seed)
    estimators = ["dmle", "imle"] if req.estimator == "both" else [req.estimator]
    return MatrixConfig(
        dataset=spec,
        acquisition=acq_mod.AcquisitionKind(req.acquisition, req.bald_samples),
        selection=sel_mod.SelectionConfig(req.selection, req.k, req.beta),
        estimators=estimators,
        cycles=req.cycles,
        seeds=req.seeds,
        base_seed=req.base_seed,
        epochs_per_cycle=req.epochs_per_cycle,
        exact_z=req.exact_z,
        ssrs_smooth=req.ssrs_smooth,
        hidden_dims=req.hidden_dims,
        out_dir=req.out_dir,
        workers=req.workers,
        timings_in_curve=req.timings_in_curve)


@dataclass
class Job:
    job_id: str
    kind: str
    status: str = "queued"
    result: dict | None = None
    error: str | None = None


@dataclass
class JobStore:
    jobs: dict[str, Job] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    counter: itertools.count = field(default_factory=itertools.count)

    def create(self, kind: str) -> Job:
        with self.lock:
            job = Job(job_id=f"job-{next(self.counter):04d}", kind=kind)
            self.jobs[job.job_id] = job
            return job

    def get(self, job_id: str) -> Job | None:
        with self.lock:
            return self.jobs.get(job_id)

    def finish(self, job_id: str, result: dict | None, error: str | None):
        with self.lock:
            job = self.jobs[job_id]
            job.status = "failed" if error else "done"
            job.result = result
            job.error = error

    def start(self, job_id: str):
        with self.lock:
            self.jobs[job_id].status = "running"


def _matrix_job(config: MatrixConfig) -> dict:
    report = run_matrix(config)
    return {
        "out_dir": report.out_dir,
        "group": report.group,
        "cells": [{"estimator": c.estimator, "seed": c.seed, "dir": c.rel_dir,
                   "status": c.status, "final_test_acc": c.final_test_acc,
                   "error": c.error} for c in report.cells],
        "comparison": report.comparison,
        "failed": report.failed,
    }


def _verify_job(suite: str, out_dir: str) -> dict:
    reports = verification.run_suite(suite)
    text = verification.report_text(reports)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"verification-{suite}.txt").write_text(text)
    return {"suite": suite, "passed": all(r.passed for r in reports),
            "text": text}


def create_app() -> FastAPI:
    app = FastAPI(title="dmle-lab", version=__version__)
    store = JobStore()
    executor = ThreadPoolExecutor(max_workers=2)

    def submit(kind: str, fn) -> schemas.JobCreated:
        job = store.create(kind)

        def work():
            store.start(job.job_id)
            try:
                store.finish(job.job_id, fn(), None)
            except Exception as exc:
                store.finish(job.job_id, None,
                             f"{type(exc).__name__}: {exc}\n"
                             f"{traceback.format_exc(limit=4)}")
        executor.submit(work)
        return schemas.JobCreated(job_id=job.job_id)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/datasets/preview", response_model=schemas.DatasetPreview)
    def preview(req: schemas.MatrixRequest):
        try:
            config = matrix_config(req)
            dataset = data.build_dataset(config.dataset)
        except (ValueError, data.DataError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return schemas.DatasetPreview(
            name=config.dataset.name,
            n_samples=dataset.n_samples,
            n_features=dataset.n_features,
            n_classes=dataset.n_classes,
            split_sizes={k: int(v.size) for k, v in dataset.splits.items()},
            provenance=dataset.provenance)

    @app.post("/matrices", response_model=schemas.JobCreated)
    def submit_matrix(req: schemas.MatrixRequest):
        try:
            config = matrix_config(req)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return submit("matrix", lambda: _matrix_job(config))

    @app.post("/verify", response_model=schemas.JobCreated)
    def submit_verify(req: schemas.VerifyRequest):
        if req.suite not in verification.SUITES:
            raise HTTPException(
                status_code=422,
                detail=f"suite {req.suite!r}: valid values are "
                       f"{', '.join(verification.SUITES)}")
        return submit("verify", lambda: _verify_job(req.suite, req.out_dir))

    @app.get("/jobs/{job_id}", response_model=schemas.JobStatus)
    def job_status(job_id: str):
        job = store.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no such job {job_id!r}")
        return schemas.JobStatus(job_id=job.job_id, kind=job.kind,
                                 status=job.status, result=job.result,
                                 error=job.error)

    @app.get("/jobs", response_model=list[schemas.JobStatus])
    def list_jobs():
        with store.lock:
            jobs = list(store.jobs.values())
        return [schemas.JobStatus(job_id=j.job_id, kind=j.kind, status=j.status,
                                  result=None, error=j.error) for j in jobs]

    return app
