"""
Ranges of the scaled delayed-entry coefficients gamma_hat_k for the three
beta2/beta1 classes, checked over random weight/tuning draws.
"""

import numpy as np
import pandas as pd

from _common import Checks, base_parser, prepare

from backend.Common.engineUtils import write_csv, write_json
from backend.linear_analysis import gamma_coefficients, gamma_hat_interval, in_interval
from backend.Models.generalized_pss import PssConfig


def main():
    parser = base_parser("gamma_hat range classes over random draws")
    parser.add_argument("--draws", type=int, default=10_000)
    parser.add_argument("--sensors", type=int, default=4)
    parser.add_argument("--f0", type=float, default=60.0)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()
    out = prepare(args, "gamma_table")
    checks = Checks("gamma_table", out)

    rng = np.random.default_rng(args.seed)
    counts = {"below_one": 0, "one": 0, "above_one": 0}
    mismatches = 0
    for i in range(args.draws):
        alpha = rng.random(args.sensors) + 1e-3
        alpha /= alpha.sum()
        beta1 = float(rng.uniform(1e-3, 1.0))
        beta2 = beta1 if i % 10 == 0 else float(rng.uniform(0.0, 1.0))
        coeffs = gamma_coefficients(PssConfig(beta1=beta1, beta2=beta2), alpha, f0=args.f0)
        counts[coeffs.ratio_class] += 1
        for a, g in zip(alpha, coeffs.gamma_hat):
            if not in_interval(g, gamma_hat_interval(a, args.f0, coeffs.ratio_class)):
                mismatches += 1
        if coeffs.ratio_class == "one" and np.any(coeffs.gamma_hat != 0.0):
            mismatches += 1

    checks.check(f"{args.draws} draws match their range class", mismatches == 0, f"{mismatches} mismatches")
    checks.check("every ratio class was drawn", all(c > 0 for c in counts.values()), counts)

    rows = []
    for ratio_class in counts:
        low, high, low_closed, high_closed = gamma_hat_interval(1.0, args.f0, ratio_class)
        rows.append({"ratio_class": ratio_class, "draws": counts[ratio_class],
                     "low": "-inf" if np.isinf(low) else f"{low:g}", "low_closed": low_closed,
                     "high_over_alpha": f"{high:g}", "high_closed": high_closed})
    write_csv(out / "gamma_table.csv", pd.DataFrame(rows))
    write_json(out / "gamma_table.json", {"draws": args.draws, "seed": args.seed, "counts": counts,
                                          "mismatches": mismatches})
    return checks.finish()


if __name__ == "__main__":
    raise SystemExit(main())
