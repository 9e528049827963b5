"""
Loss of G3 with beta1 fixed and beta2 raised: the frequency nadir improves,
strongly at first and then modestly. Writes coi.csv and nadirs.json.
"""

import pandas as pd

from _common import Checks, base_parser, bundled_case, is_monotonic, prepare, trip_scenario, uniform_pss

from backend.Common.engineUtils import write_csv, write_json
from backend.sim_engine import run_many


def main():
    parser = base_parser("Frequency nadir after losing G3 for increasing beta2")
    parser.add_argument("--beta1", type=float, default=0.33)
    parser.add_argument("--beta2", type=float, nargs="+", default=[0.0, 0.33, 0.67])
    parser.add_argument("--gain", type=float, default=18.0)
    parser.add_argument("--t-end", type=float, default=None)
    args = parser.parse_args()
    out = prepare(args, "trip_beta2")
    checks = Checks("trip_beta2", out)

    case = bundled_case()
    base = trip_scenario()
    if args.t_end is not None:
        base = base.model_copy(update={"t_end": args.t_end})
    scenarios = [base.model_copy(update={"name": f"trip_beta2_{b2}",
                                         "pss": uniform_pss(case, args.beta1, b2, args.gain)})
                 for b2 in args.beta2]
    records = run_many(scenarios, case)

    nadirs = [r.metrics["frequency_nadir"] for r in records]
    for b2, r in zip(args.beta2, records):
        print(f"  beta2={b2:.2f}: nadir {r.metrics['frequency_nadir']:.6f} pu at {r.metrics['nadir_time']:.2f}s "
              f"({r.status})")
    checks.check("all runs completed", all(r.status == "completed" for r in records))
    checks.check("nadir strictly increasing in beta2", is_monotonic(nadirs, decreasing=False),
                 [round(n, 6) for n in nadirs])
    if len(nadirs) >= 3:
        first, second = nadirs[1] - nadirs[0], nadirs[2] - nadirs[1]
        checks.check("first beta2 increment helps more than the second", first > second,
                     f"{first:.2e} vs {second:.2e}")

    frame = pd.DataFrame({"time": records[0].time})
    for b2, r in zip(args.beta2, records):
        frame[f"coi_beta2_{b2}"] = pd.Series(r["coi_exact"])
    write_csv(out / "coi.csv", frame)
    write_json(out / "nadirs.json", {"beta1": args.beta1, "gain_k": args.gain,
                                     "runs": [{"beta2": b2, **r.metrics} for b2, r in zip(args.beta2, records)]})
    return checks.finish()


if __name__ == "__main__":
    raise SystemExit(main())
