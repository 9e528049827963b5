from flask import Flask, request, jsonify, send_file
from flask_cors import CORS
import logging
import os
import sys
from uuid import uuid4
import threading
from datetime import datetime

# Add parent directory to path so we can import backend module
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from backend.Common import config
from backend.Common.errors import InputError, SimulatorError
from backend.unified_engine import COMMANDS, run_job

config.setup_logging()
logger = logging.getLogger(__name__)

app = Flask(__name__)
CORS(app)

jobs = {}  # In-memory job store
jobs_lock = threading.Lock()

REQUIRED_PARAMS = {
    "bode": ["unit"],
    "simulate": ["scenario"],
}


@app.route("/api/jobs", methods=["POST"])
def submit_job():
    """
    Queue a command.

    Accepts JSON: {"command": "powerflow|modal|sweep|bode|simulate", "params": {...}}
    """
    logger.info(f"\n{'=' * 80}")
    logger.info("JOB SUBMISSION")
    logger.info(f"{'=' * 80}")

    body = request.get_json(silent=True)
    if not isinstance(body, dict):
        return jsonify({"error": "Request body must be a JSON object"}), 400

    command = str(body.get("command", "")).lower()
    params = body.get("params") or {}
    if command not in COMMANDS:
        logger.error(f"Invalid command: {command}")
        return jsonify({"error": f"Invalid command: {command}. Available: {list(COMMANDS.keys())}"}), 400
    if not isinstance(params, dict):
        return jsonify({"error": "params must be a JSON object"}), 400
    missing = [p for p in REQUIRED_PARAMS.get(command, []) if params.get(p) is None]
    if missing:
        return jsonify({"error": f"Missing parameters for {command}: {missing}"}), 400

    job_id = str(uuid4())
    output_dir = os.path.join(config.DEFAULT_OUTPUT_DIR, "jobs", job_id)
    with jobs_lock:
        jobs[job_id] = {
            "status": "processing",
            "progress": 0,
            "command": command,
            "params": params,
            "output_dir": output_dir,
            "created_at": datetime.now().isoformat(),
        }
    logger.info(f"Job created: {job_id} ({command})")

    thread = threading.Thread(target=process_job, args=(job_id, command, params, output_dir))
    thread.daemon = True
    thread.start()

    return jsonify({"job_id": job_id, "status": "processing"}), 202


def process_job(job_id, command, params, output_dir):
    """Run the command in a background thread and store the outcome."""
    try:
        logger.info(f"[{job_id}] running {command}")
        jobs[job_id]["progress"] = 10
        result = run_job(command, params, output_dir)
        with jobs_lock:
            jobs[job_id]["summary"] = result["summary"]
            jobs[job_id]["files"] = [os.path.basename(p) for p in result["outputs"]]
            jobs[job_id]["manifest"] = result["manifest"]
            jobs[job_id]["status"] = "complete"
            jobs[job_id]["completed_at"] = datetime.now().isoformat()
            jobs[job_id]["progress"] = 100
        logger.info(f"[{job_id}] ✓ Job completed successfully")
    except Exception as e:
        logger.error(f"[{job_id}] ❌ Job failed: {type(e).__name__}: {e}", exc_info=not isinstance(e, InputError))
        with jobs_lock:
            jobs[job_id]["status"] = "error"
            jobs[job_id]["error"] = str(e)
            jobs[job_id]["exit_code"] = e.exit_code if isinstance(e, SimulatorError) else 2
            jobs[job_id]["failed_at"] = datetime.now().isoformat()


@app.route("/api/job/<job_id>", methods=["GET"])
def get_job(job_id):
    """Job status; summary and file list once complete."""
    if job_id not in jobs:
        return jsonify({"error": "Job not found"}), 404
    job = jobs[job_id]
    payload = {
        "job_id": job_id,
        "status": job["status"],
        "progress": job.get("progress", 0),
        "command": job["command"],
        "created_at": job["created_at"],
    }
    if job["status"] == "complete":
        payload.update({"summary": job["summary"], "files": job["files"], "manifest": job["manifest"]})
    elif job["status"] == "error":
        payload.update({"error": job["error"], "exit_code": job["exit_code"]})
    return jsonify(payload)


@app.route("/api/job/<job_id>/files/<name>", methods=["GET"])
def get_job_file(job_id, name):
    """Download one output file of a completed job."""
    job = jobs.get(job_id)
    if job is None:
        return jsonify({"error": "Job not found"}), 404
    if job["status"] != "complete":
        return jsonify({"error": f"Job is {job['status']}"}), 409
    if name not in job["files"]:
        return jsonify({"error": f"Unknown file: {name}. Available: {job['files']}"}), 404
    return send_file(os.path.abspath(os.path.join(job["output_dir"], name)), as_attachment=True,
                     download_name=name)


@app.route("/", methods=["GET"])
def home():
    """API info endpoint"""
    return jsonify({
        "message": "Generalized PSS Simulator API",
        "status": "running",
        "version": config.TOOL_VERSION,
        "endpoints": {
            "submit": "/api/jobs",
            "job_status": "/api/job/<job_id>",
            "job_file": "/api/job/<job_id>/files/<name>",
        },
        "commands": list(COMMANDS.keys()),
        "output_dir": config.DEFAULT_OUTPUT_DIR,
    })


if __name__ == "__main__":
    app.run(debug=True, port=5000, threaded=True)
