import time

import pytest

from backend.Common import config


@pytest.fixture
def client(tmp_path, monkeypatch):
    from api import app as app_module

    monkeypatch.setattr(config, "DEFAULT_OUTPUT_DIR", str(tmp_path))
    app_module.app.config["TESTING"] = True
    with app_module.app.test_client() as c:
        yield c


def wait_for(client, job_id, timeout=60.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        payload = client.get(f"/api/job/{job_id}").get_json()
        if payload["status"] != "processing":
            return payload
        time.sleep(0.1)
    raise AssertionError(f"job {job_id} still processing after {timeout}s")


def test_home_lists_commands(client):
    payload = client.get("/").get_json()
    assert payload["status"] == "running"
    assert set(payload["commands"]) == {"powerflow", "modal", "sweep", "bode", "simulate"}


@pytest.mark.parametrize("body,fragment", [
    ([1, 2], "JSON object"),
    ({"command": "eigs"}, "Available"),
    ({"command": "bode", "params": {}}, "unit"),
    ({"command": "powerflow", "params": [1]}, "params"),
])
def test_bad_submissions_rejected(client, body, fragment):
    response = client.post("/api/jobs", json=body)
    assert response.status_code == 400
    assert fragment in response.get_json()["error"]


def test_unknown_job(client):
    assert client.get("/api/job/missing").status_code == 404
    assert client.get("/api/job/missing/files/record.csv").status_code == 404


def test_powerflow_job_round_trip(client, tmp_path):
    response = client.post("/api/jobs", json={"command": "powerflow", "params": {"tol": 1e-9}})
    assert response.status_code == 202
    job_id = response.get_json()["job_id"]

    payload = wait_for(client, job_id)
    assert payload["status"] == "complete", payload
    assert "powerflow.json" in payload["files"]
    assert "manifest.json" in payload["files"]
    assert payload["manifest"]["params"]["tol"] == 1e-9
    assert (tmp_path / "jobs" / job_id / "powerflow.json").exists()

    download = client.get(f"/api/job/{job_id}/files/powerflow.txt")
    assert download.status_code == 200
    assert b"BUSES" in download.data
    assert client.get(f"/api/job/{job_id}/files/secret.txt").status_code == 404


def test_failed_job_reports_exit_code(client):
    response = client.post("/api/jobs", json={"command": "simulate", "params": {"scenario": "missing.json"}})
    payload = wait_for(client, response.get_json()["job_id"])
    assert payload["status"] == "error"
    assert payload["exit_code"] == 1
    assert "missing.json" in payload["error"]


def test_files_of_running_job_conflict(client):
    from api import app as app_module

    with app_module.jobs_lock:
        app_module.jobs["running"] = {"status": "processing", "command": "sweep", "created_at": "now",
                                      "output_dir": "unused", "files": []}
    try:
        assert client.get("/api/job/running/files/sweep.csv").status_code == 409
    finally:
        app_module.jobs.pop("running", None)
