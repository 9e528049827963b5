"""
Unified job runner shared by the CLI and the job API.
Routes a command name to its handler, writes the outputs and a run manifest.
"""

import logging
import os
import time

import numpy as np
import pandas as pd

from backend.Common import config
from backend.Common.engineUtils import (BUNDLED_CASE, build_manifest, load_case, load_scenario,
                                        power_flow_table, resolve_case_path, response_frame,
                                        write_audit_csv, write_csv, write_json, write_manifest,
                                        write_text)
from backend.Common.errors import InputError
from backend.Models.generalized_pss import PssConfig
from backend.Models.grid_model import PF_MAX_ITER, PF_TOL, area_interchange, solve_power_flow
from backend.Models.wams_channel import DELAY_PRESETS

logger = logging.getLogger(__name__)


def parse_grid(spec):
    """'start:step:stop' or comma list (or an already parsed sequence) -> list of floats."""
    if isinstance(spec, (list, tuple, np.ndarray)):
        return [float(v) for v in spec]
    text = str(spec).strip()
    try:
        if ":" in text:
            start, step, stop = (float(p) for p in text.split(":"))
            if step <= 0 or stop < start:
                raise InputError(f"Invalid grid {spec}: need step > 0 and stop >= start")
            count = int(round((stop - start) / step)) + 1
            return [round(start + i * step, 12) for i in range(count)]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise InputError(f"Invalid grid: {spec}. Use 'start:step:stop' or 'a,b,c'")


def _pss_overrides(case, params):
    """Apply --beta1/--beta2/--gain to the selected units; None leaves the case blocks alone."""
    keys = ("beta1", "beta2", "gain")
    if all(params.get(k) is None for k in keys) and params.get("units") is None:
        return case.pss
    units = params.get("units")
    units = [g.id for g in case.online_generators()] if units is None else [int(u) for u in units]
    for u in units:
        case.generator(u)
    update = {}
    if params.get("beta1") is not None:
        update["beta1"] = float(params["beta1"])
    if params.get("beta2") is not None:
        update["beta2"] = float(params["beta2"])
    if params.get("gain") is not None:
        update["gain_k"] = float(params["gain"])
    template = PssConfig()
    try:
        cfg = PssConfig.model_validate({**template.model_dump(), **update})
    except ValueError as e:
        raise InputError(f"Invalid stabilizer settings: {e}")
    return {u: cfg for u in units}


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------

def cmd_powerflow(params, output_dir):
    case_path = params.get("case") or BUNDLED_CASE
    case = load_case(case_path)
    solution = solve_power_flow(case, tol=float(params.get("tol") or PF_TOL),
                                max_iter=int(params.get("max_iter") or PF_MAX_ITER))
    payload = solution.to_dict()
    payload["tie_flow_area1_to_area2"] = area_interchange(case, solution, 1, 2)
    outputs = [
        write_json(os.path.join(output_dir, "powerflow.json"), payload),
        write_text(os.path.join(output_dir, "powerflow.txt"), power_flow_table(case, solution)),
    ]
    summary = {"iterations": solution.iterations, "max_mismatch": solution.max_mismatch,
               "tie_flow": payload["tie_flow_area1_to_area2"]}
    return [case_path], outputs, summary


def cmd_modal(params, output_dir):
    from backend.linear_analysis import classify_modes, eigensolve, find_mode, linearize, mode_shapes
    from backend.sim_engine import initialize

    case_path = params.get("case") or BUNDLED_CASE
    case = load_case(case_path)
    system = initialize(case, pss=_pss_overrides(case, params))
    results = classify_modes(eigensolve(linearize(system)))
    oscillatory = [r for r in results if r.eigenvalue.imag >= 0]
    payload = {
        "case": case.name,
        "n_states": system.n_states,
        "modes": [r.to_dict() for r in oscillatory],
        "mode_shapes": mode_shapes(results),
    }
    outputs = [write_json(os.path.join(output_dir, "modal.json"), payload)]
    summary = {}
    for cls in ("inter_area", "frequency_regulation"):
        mode = find_mode(results, cls)
        if mode is not None:
            summary[cls] = {"frequency_hz": mode.frequency, "damping_ratio": mode.damping_ratio}
    return [case_path], outputs, summary


def cmd_sweep(params, output_dir):
    from backend.linear_analysis import beta_sweep

    case_path = params.get("case") or BUNDLED_CASE
    case = load_case(case_path)
    grid = parse_grid(params.get("grid", "0:0.1:1"))
    if not grid:
        raise InputError("sweep grid is empty")
    result = beta_sweep(case, params.get("param", "beta1"), grid,
                        fixed_other=float(params.get("fixed", 0.0)),
                        gain_k=float(params.get("gain", 25.0)),
                        units=params.get("units"),
                        max_workers=params.get("workers"))
    rows = []
    for value, modes in zip(result.grid, result.points):
        for r in modes:
            if r.eigenvalue.imag < 0:
                continue
            rows.append({"value": value, "real": r.eigenvalue.real, "imag": r.eigenvalue.imag,
                         "frequency_hz": r.frequency, "damping_ratio": r.damping_ratio,
                         "classification": r.classification})
    tracks = []
    for name, tr in result.tracks.items():
        for value, lam, flag in zip(result.grid, tr["values"], tr["ambiguous"]):
            tracks.append({"track": name, "label": tr["label"], "value": value,
                           "real": None if lam is None else lam.real,
                           "imag": None if lam is None else lam.imag, "ambiguous": flag})
    outputs = [
        write_json(os.path.join(output_dir, "sweep.json"), result.to_dict()),
        write_csv(os.path.join(output_dir, "sweep.csv"), pd.DataFrame(rows)),
        write_csv(os.path.join(output_dir, "tracks.csv"),
                  pd.DataFrame(tracks, columns=["track", "label", "value", "real", "imag", "ambiguous"])),
    ]
    summary = {"points": len(grid), "tracks": sorted(result.tracks),
               "ambiguous_steps": int(sum(sum(tr["ambiguous"]) for tr in result.tracks.values()))}
    return [case_path], outputs, summary


def _deviation_summary(points, reference):
    from backend.linear_analysis import max_deviation

    low = max_deviation(points, reference, 0.0, 0.2)
    high = max_deviation(points, reference, 0.5, np.inf)
    return {"deviation_below_0p2hz": {"gain_db": low[0], "phase_deg": low[1]},
            "deviation_above_0p5hz": {"gain_db": high[0], "phase_deg": high[1]}}


def cmd_bode(params, output_dir):
    from backend.linear_analysis import (build_open_loop_system, compensation, delayed_response,
                                         linearize, log_frequency_grid, open_loop_response)

    case_path = params.get("case") or BUNDLED_CASE
    case = load_case(case_path)
    if params.get("unit") is None:
        raise InputError(f"bode needs --unit. Available: {[g.id for g in case.online_generators()]}")
    unit = int(params["unit"])
    beta1 = float(params.get("beta1", 1.0))
    beta2 = float(params.get("beta2", 1.0))
    delays = params.get("delays") or [0.0]
    grid = log_frequency_grid(float(params.get("f_min", 0.01)), float(params.get("f_max", 10.0)),
                              int(params.get("points", 400)))

    system = build_open_loop_system(case, unit, beta1, beta2,
                                    uncompensated=bool(params.get("uncompensated", False)))
    model = linearize(system, studied_unit=unit)
    if len(delays) != 1 and len(delays) != model.gamma.size:
        raise InputError(f"expected 1 or {model.gamma.size} delays (one per sensor), got {len(delays)}")
    delay_vec = delays[0] if len(delays) == 1 else delays
    response = delayed_response(model, delay_vec, grid)
    reference = open_loop_response(model, grid)
    outputs = [write_csv(os.path.join(output_dir, "response.csv"), response_frame(response))]
    summary = {"unit": unit, "points": len(response), "delays": delays}

    if any(d > 0 for d in delays):
        outputs.append(write_csv(os.path.join(output_dir, "response_nodelay.csv"), response_frame(reference)))
        summary.update(_deviation_summary(response, reference))

    if params.get("preset_delays"):
        summary["presets"] = {}
        for tau in DELAY_PRESETS:
            points = delayed_response(model, tau, grid)
            outputs.append(write_csv(os.path.join(output_dir, f"response_tau_{tau:g}.csv"), response_frame(points)))
            summary["presets"][f"{tau:g}"] = _deviation_summary(points, reference)

    if not params.get("uncompensated", False):
        plain = build_open_loop_system(case, unit, 1.0, 1.0, uncompensated=True)
        base = open_loop_response(linearize(plain, studied_unit=unit), grid)
        outputs.append(write_csv(os.path.join(output_dir, "compensation.csv"),
                                 pd.DataFrame(compensation(reference, base))))
    return [case_path], outputs, summary



def cmd_simulate(params, output_dir):
    from backend.sim_engine import run

    scenario_path = params.get("scenario")
    if not scenario_path:
        raise InputError("simulate needs a scenario file")
    scenario = load_scenario(scenario_path)
    case_path = resolve_case_path(scenario, scenario_path, params.get("case"))
    case = load_case(case_path)

    update = {}
    if params.get("seed") is not None:
        update["seed"] = int(params["seed"])
    if params.get("record"):
        update["record"] = list(dict.fromkeys(list(scenario.record) + list(params["record"])))
    if params.get("t_end") is not None:
        update["t_end"] = float(params["t_end"])
    if params.get("delay_mean") is not None:
        wams = scenario.wams or case.wams
        if wams is None:
            raise InputError("--delay-mean needs a WAMS block in the scenario or case")
        update["wams"] = wams.with_delay(delay_mean=float(params["delay_mean"]))
    if update:
        from backend.sim_engine import Scenario
        try:
            scenario = Scenario.model_validate({**scenario.model_dump(), **update})
        except ValueError as e:
            raise InputError(f"Invalid scenario override: {e}")

    record = run(scenario, case=case)
    outputs = [
        write_csv(os.path.join(output_dir, "record.csv"), record.to_frame()),
        write_json(os.path.join(output_dir, "metrics.json"), record.metrics),
    ]
    if record.audit:
        outputs.append(write_audit_csv(os.path.join(output_dir, "audit.csv"), record.audit))
    return [scenario_path, case_path], outputs, dict(record.metrics)


COMMANDS = {
    "powerflow": cmd_powerflow,
    "modal": cmd_modal,
    "sweep": cmd_sweep,
    "bode": cmd_bode,
    "simulate": cmd_simulate,
}


def get_command(command: str):
    """
    Look up a command handler.

    Raises:
        InputError: unknown command name
    """
    command = (command or "").lower()
    if command not in COMMANDS:
        raise InputError(f"Unknown command: {command}. Available: {list(COMMANDS.keys())}")
    return COMMANDS[command]


def run_job(command: str, params: dict = None, output_dir: str = None):
    """
    Universal job runner.

    Args:
        command: one of COMMANDS
        params: command parameters (paths, betas, grid, ...)
        output_dir: destination directory, default <PSSIM_OUTPUT_DIR>/<command>

    Returns:
        {"command", "outputs", "summary", "manifest"}
    """
    handler = get_command(command)
    params = dict(params or {})
    output_dir = output_dir or os.path.join(config.DEFAULT_OUTPUT_DIR, command)
    os.makedirs(output_dir, exist_ok=True)

    logger.info(f"\n{'=' * 80}")
    logger.info(f"RUNNING {command.upper()} -> {output_dir}")
    logger.info(f"params: {params}")
    logger.info(f"{'=' * 80}")
    started = time.perf_counter()

    inputs, outputs, summary = handler(params, output_dir)
    manifest = build_manifest(command, inputs, params, output_dir,
                              [os.path.basename(p) for p in outputs], seed=params.get("seed"))
    outputs.append(write_manifest(output_dir, manifest))

    logger.info(f"✓ {command} finished in {time.perf_counter() - started:.2f}s, {len(outputs)} files")
    return {"command": command, "outputs": outputs, "summary": summary,
            "manifest": manifest.model_dump(mode="json")}
