"""
Equal weights reduce the generalized stabilizer to a conventional one:
beta1 = beta2 = 1/3 with K = 18 must produce the same stabilizer output as a
plain delta-omega stabilizer with K = 6 during the G3 trip.
"""

import time

import numpy as np
import pandas as pd

from _common import Checks, base_parser, bundled_case, prepare, trip_scenario, uniform_pss

from backend.Common.engineUtils import write_csv, write_json
from backend.Models.generalized_pss import PssConfig, equivalent_standard_gain, standard_config
from backend.sim_engine import run

SUP_NORM_LIMIT = 1e-12
RUNTIME_LIMIT = 10.0


def main():
    parser = base_parser("Generalized stabilizer with equal weights vs a conventional delta-omega stabilizer")
    parser.add_argument("--beta", type=float, default=1.0 / 3.0)
    parser.add_argument("--gain", type=float, default=18.0)
    args = parser.parse_args()
    out = prepare(args, "generalization_identity")
    checks = Checks("generalization_identity", out)

    case = bundled_case()
    base = trip_scenario()
    generalized_pss = uniform_pss(case, args.beta, args.beta, args.gain)
    k_eq = equivalent_standard_gain(PssConfig(beta1=args.beta, beta2=args.beta, gain_k=args.gain))
    standard_pss = {u: standard_config(k_eq) for u in generalized_pss}
    print(f"beta={args.beta:.6f}, K={args.gain} -> equivalent conventional gain {k_eq:.6f}")

    started = time.perf_counter()
    generalized = run(base.model_copy(update={"name": "generalized", "pss": generalized_pss}), case=case)
    elapsed = time.perf_counter() - started
    standard = run(base.model_copy(update={"name": "standard", "pss": standard_pss}), case=case)

    frame = pd.DataFrame({"time": generalized.time})
    worst = 0.0
    for unit in sorted(generalized_pss):
        a, b = generalized[f"vs_{unit}"], standard[f"vs_{unit}"]
        worst = max(worst, float(np.max(np.abs(a - b))))
        frame[f"vs_{unit}_generalized"] = a
        frame[f"vs_{unit}_standard"] = b
    checks.check("both runs completed", generalized.status == standard.status == "completed")
    checks.check("stabilizer outputs agree to 1e-12", worst <= SUP_NORM_LIMIT, f"sup-norm {worst:.3e}")
    checks.runtime("single trip run", elapsed, RUNTIME_LIMIT, args.check_runtime)

    write_csv(out / "outputs.csv", frame)
    write_json(out / "identity.json", {"beta": args.beta, "gain_k": args.gain, "equivalent_gain": k_eq,
                                       "sup_norm": worst, "runtime_s": elapsed})
    return checks.finish()


if __name__ == "__main__":
    raise SystemExit(main())
