import time
import warnings

import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from dmle_lab import __version__
from dmle_lab.service import create_app


@pytest.fixture
def client():
    return TestClient(create_app())


def wait_for(client, job_id, timeout_s=120.0):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        status = client.get(f"/jobs/{job_id}").json()
        if status["status"] in ("done", "failed"):
            return status
        time.sleep(0.05)
    raise TimeoutError(job_id)


def tiny_payload(out_dir, **overrides):
    payload = {
        "dataset": "two-arcs", "arcs_n": 100, "cycles": 3, "k": 2,
        "seeds": 2, "epochs_per_cycle": 3, "estimator": "both",
        "out_dir": str(out_dir),
    }
    payload.update(overrides)
    return payload


class TestHealth:
    def test_health_reports_version(self, client):
        body = client.get("/health").json()
        assert body == {"status": "ok", "version": __version__}


class TestDatasetPreview:
    def test_two_arcs_preview(self, client):
        body = client.post("/datasets/preview",
                           json={"dataset": "two-arcs", "arcs_n": 150}).json()
        assert body["n_samples"] == 150
        assert body["n_features"] == 2
        assert body["split_sizes"]["train"] == 105

    def test_unknown_dataset_is_422_naming_valid_values(self, client):
        response = client.post("/datasets/preview", json={"dataset": "cifar"})
        assert response.status_code == 422
        assert "iris" in response.json()["detail"]


class TestMatrixJobs:
    def test_matrix_job_lifecycle(self, client, tmp_path):
        created = client.post("/matrices", json=tiny_payload(tmp_path))
        assert created.status_code == 200
        job = wait_for(client, created.json()["job_id"])
        assert job["status"] == "done"
        result = job["result"]
        assert len(result["cells"]) == 4
        assert all(c["status"] == "ok" for c in result["cells"])
        assert result["comparison"]["n_effective"] >= 0
        assert not result["failed"]
        assert (tmp_path / result["group"] / "comparison.json").exists()

    def test_invalid_selection_rejected_at_submit(self, client, tmp_path):
        response = client.post("/matrices",
                               json=tiny_payload(tmp_path, selection="topq"))
        assert response.status_code == 422
        assert "topk" in response.json()["detail"]

    def test_failing_cells_reported_in_result(self, client, tmp_path):
        created = client.post("/matrices",
                              json=tiny_payload(tmp_path, cycles=500))
        job = wait_for(client, created.json()["job_id"])
        assert job["status"] == "done"
        assert job["result"]["failed"]

    def test_job_listing_and_missing_job(self, client, tmp_path):
        created = client.post("/matrices", json=tiny_payload(tmp_path))
        wait_for(client, created.json()["job_id"])
        listing = client.get("/jobs").json()
        assert any(j["job_id"] == created.json()["job_id"] for j in listing)
        assert client.get("/jobs/job-9999").status_code == 404


class TestVerifyJobs:
    def test_theorems_suite_passes_and_writes_report(self, client, tmp_path):
        created = client.post("/verify", json={"suite": "theorems",
                                               "out_dir": str(tmp_path)})
        job = wait_for(client, created.json()["job_id"])
        assert job["status"] == "done"
        assert job["result"]["passed"] is True
        report = (tmp_path / "verification-theorems.txt").read_text()
        assert report == job["result"]["text"]
        assert "overall: PASS" in report

    def test_unknown_suite_rejected(self, client):
        response = client.post("/verify", json={"suite": "everything"})
        assert response.status_code == 422
        assert "gumbel" in response.json()["detail"]

    def test_verify_report_is_reproducible(self, client, tmp_path):
        ids = []
        for _ in range(2):
            created = client.post("/verify", json={"suite": "theorems",
                                                   "out_dir": str(tmp_path)})
            ids.append(wait_for(client, created.json()["job_id"]))
        assert ids[0]["result"]["text"] == ids[1]["result"]["text"]
