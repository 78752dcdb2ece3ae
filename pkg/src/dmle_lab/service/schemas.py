"""Request/response models for the experiment service.

MatrixRequest is a flat mirror of the CLI flags, so the same shape works
as the JSON config-file format, the API payload, and the CLI state.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

from .. import acquisition, selection
from ..data import DATASET_NAMES

ESTIMATOR_CHOICES = ("imle", "dmle", "both")


class MatrixRequest(BaseModel):
    dataset: str = "two-arcs"
    acquisition: str = "entropy"
    selection: str = "ssms"
    estimator: str = "both"
    k: int = Field(1, ge=1)
    beta: float = Field(1.0, ge=0.0)
    cycles: int = Field(10, ge=1)
    seeds: int = Field(8, ge=1)
    base_seed: int = 0
    epochs_per_cycle: int = Field(30, ge=0)
    exact_z: bool = False
    ssrs_smooth: bool = False
    out_dir: str = "out"
    workers: int = Field(1, ge=1)
    timings_in_curve: bool = False
    bald_samples: int = Field(10, ge=2)
    hidden_dims: list[int] | None = None
    dataset_size: int | None = None
    dataset_seed: int = 0
    data_dir: str | None = None
    arcs_n: int = 1000
    arcs_noise: float = 0.15

    def dataset_name(self) -> str:
        return "csv" if self.dataset.startswith("csv:") else self.dataset

    def validate_choices(self) -> list[str]:
        problems = []
        name = self.dataset_name()
        if name not in DATASET_NAMES:
            problems.append(f"dataset {self.dataset!r}: valid values are "
                            f"{', '.join(DATASET_NAMES[:-1])} or csv:<path>")
        if self.acquisition not in acquisition.KINDS:
            problems.append(f"acquisition {self.acquisition!r}: valid values are "
                            f"{', '.join(acquisition.KINDS)}")
        if self.selection not in selection.STRATEGIES:
            problems.append(f"selection {self.selection!r}: valid values are "
                            f"{', '.join(selection.STRATEGIES)}")
        if self.estimator not in ESTIMATOR_CHOICES:
            problems.append(f"estimator {self.estimator!r}: valid values are "
                            f"{', '.join(ESTIMATOR_CHOICES)}")
        return problems


class VerifyRequest(BaseModel):
    suite: str = "all"
    out_dir: str = "out"


class JobCreated(BaseModel):
    job_id: str


class JobStatus(BaseModel):
    job_id: str
    kind: str
    status: str                    # queued | running | done | failed
    result: dict | None = None
    error: str | None = None


class HealthResponse(BaseModel):
    status: str
    version: str


class DatasetPreview(BaseModel):
    name: str
    n_samples: int
    n_features: int
    n_classes: int
    split_sizes: dict[str, int]
    provenance: str
