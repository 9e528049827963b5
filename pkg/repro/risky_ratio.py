"""
beta2/beta1 > 1 under a long delay: the delayed loop response flips phase
against the undelayed one at low frequency, yet the trip run stays bounded
because the loop gain there is small.
"""

from _common import (DELAYED_TRIP_SCENARIO, Checks, base_parser, bundled_case, prepare, trip_scenario,
                     uniform_pss)

from backend.Common.engineUtils import response_frame, write_csv, write_json
from backend.linear_analysis import (build_open_loop_system, delayed_response, linearize, log_frequency_grid,
                                     open_loop_response, phase_crossings)
from backend.Models.generalized_pss import PssConfig
from backend.sim_engine import run

CROSSING_BAND_HZ = (0.1, 0.2)


def main():
    parser = base_parser("Phase reversal with beta2 > beta1 and a long WAMS delay")
    parser.add_argument("--beta1", type=float, default=0.5)
    parser.add_argument("--beta2", type=float, default=1.0)
    parser.add_argument("--gain", type=float, default=9.0)
    parser.add_argument("--delay", type=float, default=1.25)
    parser.add_argument("--unit", type=int, default=1)
    parser.add_argument("--points", type=int, default=400)
    args = parser.parse_args()
    out = prepare(args, "risky_ratio")
    checks = Checks("risky_ratio", out)

    case = bundled_case()
    grid = log_frequency_grid(0.01, 10.0, args.points)
    template = PssConfig(gain_k=args.gain)
    model = linearize(build_open_loop_system(case, args.unit, args.beta1, args.beta2, template=template),
                      studied_unit=args.unit)
    reference = open_loop_response(model, grid)
    delayed = delayed_response(model, args.delay, grid)
    crossings = phase_crossings(delayed, reference)
    lo, hi = CROSSING_BAND_HZ
    inside = [f for f in crossings if lo <= f <= hi]
    checks.check(f"phase reversal between {lo} and {hi} Hz", bool(inside),
                 f"crossings at {[round(f, 3) for f in crossings[:8]]} Hz")

    base = trip_scenario(DELAYED_TRIP_SCENARIO)
    scenario = base.model_copy(update={"name": "risky_ratio",
                                       "pss": uniform_pss(case, args.beta1, args.beta2, args.gain),
                                       "wams": base.wams.with_delay(delay_mean=args.delay)})
    record = run(scenario, case=case)
    checks.check("closed-loop trip run stays bounded", record.status == "completed" and not record.unstable,
                 f"status={record.status}, nadir={record.metrics.get('frequency_nadir', float('nan')):.5f}")

    write_csv(out / "response_tau_0.csv", response_frame(reference))
    write_csv(out / f"response_tau_{args.delay}.csv", response_frame(delayed))
    write_csv(out / "trip.csv", record.to_frame())
    write_json(out / "metrics.json", {"crossings_hz": crossings, "trip": record.metrics,
                                      "beta1": args.beta1, "beta2": args.beta2, "delay": args.delay})
    return checks.finish()


if __name__ == "__main__":
    raise SystemExit(main())
