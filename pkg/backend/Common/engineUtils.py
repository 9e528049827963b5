# common/engineUtils.py
# Shared across all commands: case/scenario loading, result writers, run manifests


import hashlib
import json
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from backend.Common import config
from backend.Common.errors import InputError

logger = logging.getLogger(__name__)

CASES_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "cases")
BUNDLED_CASE = os.path.join(CASES_DIR, "two_area.json")


# -----------------------------------------------------------------------------
# Loading
# -----------------------------------------------------------------------------

def _format_validation_error(path, error: ValidationError):
    lines = []
    for item in error.errors():
        where = ".".join(str(p) for p in item["loc"]) or "<root>"
        lines.append(f"  {where}: {item['msg']}")
    return f"{path}: schema violation\n" + "\n".join(lines)


def read_json_document(path):
    """Parse a JSON file; syntax errors become InputError with line/column."""
    if not os.path.isfile(path):
        raise InputError(f"File not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")


def parse_model(model_cls, payload, source="<input>"):
    try:
        return model_cls.model_validate(payload)
    except ValidationError as e:
        raise InputError(_format_validation_error(source, e))


def load_case(path):
    from backend.Models.grid_model import NetworkCase

    case = parse_model(NetworkCase, read_json_document(path), path)
    logger.info(f"Loaded case '{case.name}' from {path}: {len(case.buses)} buses, "
                f"{len(case.branches)} branches, {len(case.generators)} generators")
    return case


def load_scenario(path):
    from backend.sim_engine import Scenario

    scenario = parse_model(Scenario, read_json_document(path), path)
    logger.info(f"Loaded scenario '{scenario.name}' from {path}: {len(scenario.events)} events")
    return scenario


def resolve_case_path(scenario, scenario_path=None, override=None):
    """Case file for a scenario: explicit override, then the scenario's own reference, then the bundled case."""
    if override:
        return override
    if scenario.case:
        if os.path.isabs(scenario.case):
            return scenario.case
        base = os.path.dirname(os.path.abspath(scenario_path)) if scenario_path else os.getcwd()
        candidate = os.path.join(base, scenario.case)
        if os.path.isfile(candidate):
            return candidate
        bundled = os.path.join(CASES_DIR, scenario.case)
        if os.path.isfile(bundled):
            return bundled
        raise InputError(f"Scenario references missing case file: {scenario.case}")
    return BUNDLED_CASE


# -----------------------------------------------------------------------------
# Writers
# -----------------------------------------------------------------------------

def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, complex):
        return {"real": value.real, "imag": value.imag}
    if isinstance(value, float) and not np.isfinite(value):
        return None if np.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    return value


def write_json(path, payload):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(payload), f, indent=2, sort_keys=True)
    logger.debug(f"wrote {path}")
    return path


def write_csv(path, frame: pd.DataFrame):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.12g")
    logger.debug(f"wrote {path} ({len(frame)} rows)")
    return path


def write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


def response_frame(points):
    """Frequency-response CSV layout: freq_hz, gain_db, phase_deg plus the raw complex value."""
    return pd.DataFrame({
        "freq_hz": [p.freq_hz for p in points],
        "omega_rad": [p.omega_rad for p in points],
        "gain_db": [p.gain_db for p in points],
        "phase_deg": [p.phase_deg for p in points],
        "real": [p.complex_value.real for p in points],
        "imag": [p.complex_value.imag for p in points],
    })


def power_flow_table(case, solution):
    """Human-readable bus and branch tables."""
    buses = pd.DataFrame({
        "bus": solution.bus_ids,
        "kind": [b.kind for b in case.buses],
        "area": [b.area for b in case.buses],
        "v_pu": np.abs(solution.voltages),
        "angle_deg": np.degrees(np.angle(solution.voltages)),
    })
    gens = pd.DataFrame([{"generator": g.id, "bus": g.bus, "p_pu": solution.p_gen[g.id],
                          "q_pu": solution.q_gen[g.id]} for g in case.online_generators()])
    flows = pd.DataFrame(solution.branch_flows)
    lines = [
        f"Power flow: {case.name}",
        f"Converged in {solution.iterations} iterations, max mismatch {solution.max_mismatch:.3e} pu",
        "",
        "BUSES",
        buses.to_string(index=False, float_format=lambda v: f"{v:.5f}"),
        "",
        "GENERATORS",
        gens.to_string(index=False, float_format=lambda v: f"{v:.5f}"),
        "",
        "BRANCHES",
        flows.to_string(index=False, float_format=lambda v: f"{v:.5f}") if not flows.empty else "(none)",
        "",
    ]
    return "\n".join(lines)


def write_audit_csv(path, audit):
    """Per-datagram delivery log of the emulated channels."""
    frame = pd.DataFrame([{
        "sensor_id": r.sensor_id, "seq": r.seq, "sample_time": r.sample_time,
        "delivery_time": r.delivery_time, "dropped": r.dropped, "value": r.value,
    } for r in audit], columns=["sensor_id", "seq", "sample_time", "delivery_time", "dropped", "value"])
    return write_csv(path, frame)


# -----------------------------------------------------------------------------
# Run manifest
# -----------------------------------------------------------------------------

class RunManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    command: str
    inputs: List[str] = Field(default_factory=list)
    params: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    output_dir: str
    tool_version: str = config.TOOL_VERSION
    config_hash: str
    outputs: List[str] = Field(default_factory=list)


def config_hash(command, input_paths, params):
    """sha256 over command, input file contents and canonical parameters."""
    digest = hashlib.sha256()
    digest.update(command.encode("utf-8"))
    for path in input_paths:
        with open(path, "rb") as f:
            digest.update(f.read())
    digest.update(json.dumps(_jsonable(params), sort_keys=True).encode("utf-8"))
    return digest.hexdigest()


def build_manifest(command, input_paths, params, output_dir, outputs, seed=None):
    return RunManifest(
        command=command,
        inputs=[os.path.basename(p) for p in input_paths],
        params=_jsonable(params),
        seed=seed,
        output_dir=os.path.abspath(output_dir),
        config_hash=config_hash(command, input_paths, params),
        outputs=sorted(outputs),
    )


def write_manifest(output_dir, manifest: RunManifest):
    return write_json(os.path.join(output_dir, "manifest.json"), manifest.model_dump(mode="json"))
