"""
pssim command line.

    python -m backend.cli powerflow --case backend/cases/two_area.json
    python -m backend.cli modal --beta1 1 --beta2 0 --gain 25
    python -m backend.cli sweep --param beta1 --grid 0:0.1:1 --fixed 0 --gain 25
    python -m backend.cli bode --unit 1 --beta1 1 --beta2 0.5 --delay 1.25
    python -m backend.cli simulate backend/cases/trip_g3.json --seed 7

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

import json
import logging

import click

from backend.Common import config
from backend.Common.errors import SimulatorError
from backend.unified_engine import run_job

logger = logging.getLogger(__name__)

case_option = click.option("--case", "case", type=click.Path(dir_okay=False), default=None,
                           help="Case JSON (default: bundled two-area case).")
out_option = click.option("--out", "out", type=click.Path(file_okay=False), default=None,
                          help="Output directory (default: $PSSIM_OUTPUT_DIR/<command>).")


def _invoke(ctx, command, params, out):
    try:
        result = run_job(command, params, out)
    except SimulatorError as e:
        click.echo(f"error: {e}", err=True)
        ctx.exit(e.exit_code)
    click.echo(json.dumps(result["summary"], indent=2, sort_keys=True, default=str))
    for path in result["outputs"]:
        click.echo(f"  wrote {path}")


@click.group()
@click.option("--log-level", default=None, help="Overrides PSSIM_LOG_LEVEL.")
@click.option("--workers", type=int, default=None, help="Overrides PSSIM_MAX_WORKERS.")
@click.option("--no-progress", is_flag=True, help="Disable progress bars.")
def cli(log_level, workers, no_progress):
    """Generalized delta-omega stabilizer simulator."""
    config.setup_logging(log_level)
    if workers is not None:
        config.set_max_workers(workers)
    if no_progress:
        config.SHOW_PROGRESS = False


@cli.command()
@case_option
@click.option("--tol", type=float, default=None, help="Mismatch tolerance, pu.")
@click.option("--max-iter", type=int, default=None)
@out_option
@click.pass_context
def powerflow(ctx, case, tol, max_iter, out):
    """Solve the power flow and write voltages and flows."""
    params = {"case": case}
    if tol is not None:
        params["tol"] = tol
    if max_iter is not None:
        params["max_iter"] = max_iter
    _invoke(ctx, "powerflow", params, out)


@cli.command()
@case_option
@click.option("--beta1", type=float, default=None)
@click.option("--beta2", type=float, default=None)
@click.option("--gain", type=float, default=None)
@click.option("--unit", "units", type=int, multiple=True, help="Units carrying the stabilizer (default all).")
@out_option
@click.pass_context
def modal(ctx, case, beta1, beta2, gain, units, out):
    """Linearize at the operating point and report classified modes."""
    params = {"case": case, "beta1": beta1, "beta2": beta2, "gain": gain}
    if units:
        params["units"] = list(units)
    _invoke(ctx, "modal", params, out)


@cli.command()
@case_option
@click.option("--param", type=click.Choice(["beta1", "beta2"]), default="beta1")
@click.option("--grid", default="0:0.1:1", help="'start:step:stop' or 'a,b,c'.")
@click.option("--fixed", type=float, default=0.0, help="Value of the other beta.")
@click.option("--gain", type=float, default=25.0)
@out_option
@click.pass_context
def sweep(ctx, case, param, grid, fixed, gain, out):
    """Root-locus sweep of beta1 or beta2 on every stabilizer in unison."""
    _invoke(ctx, "sweep", {"case": case, "param": param, "grid": grid, "fixed": fixed, "gain": gain}, out)


@cli.command()
@case_option
@click.option("--unit", type=int, required=True, help="Studied generator.")
@click.option("--beta1", type=float, default=1.0)
@click.option("--beta2", type=float, default=1.0)
@click.option("--delay", "delays", type=float, multiple=True, help="One delay for all sensors or one per sensor, s.")
@click.option("--uncompensated", is_flag=True, help="Washout only, beta1 = beta2 = 1.")
@click.option("--preset-delays", is_flag=True, help="Also write the response at each preset WAMS delay.")
@click.option("--f-min", type=float, default=0.01)
@click.option("--f-max", type=float, default=10.0)
@click.option("--points", type=int, default=400)
@out_option
@click.pass_context
def bode(ctx, case, unit, beta1, beta2, delays, uncompensated, preset_delays, f_min, f_max, points, out):
    """Open-loop stabilizer response, optionally with sensor delays."""
    params = {"case": case, "unit": unit, "beta1": beta1, "beta2": beta2, "delays": list(delays),
              "uncompensated": uncompensated, "preset_delays": preset_delays,
              "f_min": f_min, "f_max": f_max, "points": points}
    _invoke(ctx, "bode", params, out)


@cli.command()
@click.argument("scenario", type=click.Path(dir_okay=False))
@case_option
@click.option("--seed", type=int, default=None)
@click.option("--record", multiple=True, help="Extra relative speed, e.g. omega2-omega4.")
@click.option("--delay-mean", type=float, default=None, help="Override every channel's mean delay, s.")
@click.option("--t-end", type=float, default=None)
@out_option
@click.pass_context
def simulate(ctx, scenario, case, seed, record, delay_mean, t_end, out):
    """Run a time-domain scenario."""
    params = {"scenario": scenario, "case": case, "seed": seed, "record": list(record),
              "delay_mean": delay_mean, "t_end": t_end}
    _invoke(ctx, "simulate", params, out)


if __name__ == "__main__":
    cli()
