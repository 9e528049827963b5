"""
Loss of G3 with beta2 fixed and beta1 raised: the inter-area swing between
G2 and G4 settles faster while G4's post-event terminal voltage hardly moves.
Writes relative_speed.csv, voltages.csv and metrics.json.
"""

import pandas as pd

from _common import Checks, base_parser, bundled_case, is_monotonic, prepare, trip_scenario, uniform_pss

from backend.Common.engineUtils import write_csv, write_json
from backend.sim_engine import run_many, settling_time, steady_state_value

VOLTAGE_SPREAD_LIMIT = 1e-3
RELATIVE_SPEED = "omega2-omega4"


def main():
    parser = base_parser("Inter-area settling and G4 voltage after losing G3 for increasing beta1")
    parser.add_argument("--beta1", type=float, nargs="+", default=[0.33, 0.67, 1.0])
    parser.add_argument("--beta2", type=float, default=0.33)
    parser.add_argument("--gain", type=float, default=18.0)
    parser.add_argument("--band", type=float, default=1e-4, help="Settling band on omega2-omega4, pu")
    args = parser.parse_args()
    out = prepare(args, "trip_beta1")
    checks = Checks("trip_beta1", out)

    case = bundled_case()
    base = trip_scenario()
    record_signals = sorted(set(base.record) | {RELATIVE_SPEED})
    scenarios = [base.model_copy(update={"name": f"trip_beta1_{b1}", "record": record_signals,
                                         "pss": uniform_pss(case, b1, args.beta2, args.gain)})
                 for b1 in args.beta1]
    records = run_many(scenarios, case)
    event_time = base.event_time

    settle = [settling_time(r, RELATIVE_SPEED, event_time, args.band) for r in records]
    vt4 = [steady_state_value(r, "vt_4") for r in records]
    for b1, s, v in zip(args.beta1, settle, vt4):
        print(f"  beta1={b1:.2f}: settling {s:.2f}s, G4 steady terminal voltage {v:.5f} pu")

    checks.check("all runs completed", all(r.status == "completed" for r in records))
    spread = max(vt4) - min(vt4)
    checks.check("G4 steady-state voltage spread within 1e-3 pu", spread <= VOLTAGE_SPREAD_LIMIT, f"{spread:.2e}")
    checks.check("omega2-omega4 settling time decreases with beta1", is_monotonic(settle),
                 [round(s, 3) for s in settle])

    speeds = pd.DataFrame({"time": records[0].time})
    voltages = pd.DataFrame({"time": records[0].time})
    for b1, r in zip(args.beta1, records):
        speeds[f"beta1_{b1}"] = pd.Series(r[RELATIVE_SPEED])
        voltages[f"beta1_{b1}"] = pd.Series(r["vt_4"])
    write_csv(out / "relative_speed.csv", speeds)
    write_csv(out / "voltages.csv", voltages)
    write_json(out / "metrics.json", {"beta2": args.beta2, "gain_k": args.gain, "band": args.band,
                                      "runs": [{"beta1": b1, "settling_time": s, "vt4_steady": v, **r.metrics}
                                               for b1, s, v, r in zip(args.beta1, settle, vt4, records)]})
    return checks.finish()


if __name__ == "__main__":
    raise SystemExit(main())
