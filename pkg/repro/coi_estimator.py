"""
Center-of-inertia estimate from sensor frequencies.

1. Ideal channels, a sensor at every generator bus: during the G3 trip the
   estimate tracks the exact inertia-weighted speed once the filters settle.
2. Sensor blackout: the estimator holds its last value, flags staleness and
   recovers when datagrams return.
"""

import numpy as np
import pandas as pd

from _common import Checks, base_parser, bundled_case, prepare, trip_scenario

from backend.Common.engineUtils import write_csv, write_json
from backend.Models.wams_channel import ChannelEmulator, CoiEstimator, Datagram, SensorChannel
from backend.sim_engine import run

TRACKING_LIMIT = 5e-4


def tracking_run(case, settle):
    wams = case.wams.with_delay(delay_mean=0.0, jitter_std=0.0, drop_prob=0.0).model_copy(
        update={"coi_source": "sensors", "mode": "sampled"})
    scenario = trip_scenario(name="coi_tracking", wams=wams)
    record = run(scenario, case=case)
    t = record.time
    event = scenario.event_time
    mask = (t >= settle) & ~((t >= event) & (t < event + settle))
    error = np.abs(record["coi_estimate"] - record["coi_exact"])
    return record, float(np.max(error[mask]))


def blackout_run(n_sensors, f0, period, cutoff, blackout_start, blackout, t_end, dt=0.01):
    channels = [SensorChannel(sensor_id=k + 1, bus=k + 1, report_period=period) for k in range(n_sensors)]
    emulators = [ChannelEmulator(ch) for ch in channels]
    estimator = CoiEstimator([ch.sensor_id for ch in channels], np.full(n_sensors, 1.0 / n_sensors), f0,
                             staleness_cutoff=cutoff)
    next_sample = np.zeros(n_sensors)
    rows = []
    for t in np.arange(0.0, t_end + 1e-9, dt):
        silent = blackout_start <= t < blackout_start + blackout
        for j, emulator in enumerate(emulators):
            if t >= next_sample[j] - 1e-9:
                if not silent:
                    value = f0 * (1.0 + 1e-3 * np.sin(2 * np.pi * 0.5 * t + j))
                    emulator.send(Datagram(sample_time=float(t), sensor_id=channels[j].sensor_id,
                                           seq=emulator.next_seq(), value=float(value)))
                next_sample[j] += period
            estimator.receive_all(emulator.deliver(t))
        rows.append({"time": float(t), "estimate": estimator.estimate(t), "stale": estimator.stale,
                     "silent": silent})
    return pd.DataFrame(rows)


def main():
    parser = base_parser("COI estimator tracking and blackout hold")
    parser.add_argument("--settle", type=float, default=0.5, help="Filter settle window after start and events, s")
    parser.add_argument("--blackout", type=float, default=2.0)
    parser.add_argument("--cutoff", type=float, default=1.0, help="Staleness cutoff for the blackout run, s")
    args = parser.parse_args()
    out = prepare(args, "coi_estimator")
    checks = Checks("coi_estimator", out)

    case = bundled_case()
    record, worst = tracking_run(case, args.settle)
    checks.check("trip run completed", record.status == "completed", record.status)
    checks.check("estimate tracks exact COI within 5e-4 pu", worst < TRACKING_LIMIT, f"max error {worst:.2e}")
    write_csv(out / "tracking.csv", pd.DataFrame({"time": record.time, "coi_exact": record["coi_exact"],
                                                  "coi_estimate": record["coi_estimate"]}))

    start, f0 = 3.0, case.f0
    period = case.wams.sensors[0].report_period
    resume = start + args.blackout + period
    frame = blackout_run(len(case.wams.sensors), f0, period, args.cutoff,
                         start, args.blackout, t_end=start + args.blackout + 2.0)
    stale = frame[frame["stale"]]
    checks.check("staleness flagged during the blackout", not stale.empty)
    if not stale.empty:
        held = stale["estimate"].to_numpy()
        checks.check("estimate held while stale", bool(np.all(held == held[0])), f"{len(held)} held steps")
        first_possible = start - period + args.cutoff - 1e-9
        inside = (stale["time"] >= first_possible) & (stale["time"] < resume + 1e-9)
        checks.check("staleness only during the blackout", bool(inside.all()))
    after = frame[frame["time"] >= resume + 0.05]
    checks.check("estimator recovers after the blackout", not after["stale"].any())
    write_csv(out / "blackout.csv", frame)
    write_json(out / "coi_estimator.json", {"max_tracking_error": worst, "settle": args.settle,
                                            "blackout": args.blackout, "cutoff": args.cutoff,
                                            "stale_steps": int(len(stale))})
    return checks.finish()


if __name__ == "__main__":
    raise SystemExit(main())
