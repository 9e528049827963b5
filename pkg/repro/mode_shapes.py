"""
Classified modes of the two-area case with and without stabilizers, plus the
speed shapes of the inter-area and frequency-regulation modes.
"""

import numpy as np
import pandas as pd

from _common import Checks, base_parser, bundled_case, prepare

from backend.Common.engineUtils import write_csv, write_json
from backend.linear_analysis import (IN_PHASE_DEG, SHAPE_SIGNIFICANCE, find_mode, modal_point, mode_shapes,
                                     phase_spread)

UNDAMPED_RATIO_LIMIT = 0.02


def shape_rows(tag, report):
    rows = []
    for cls, mode in report.items():
        for entry in mode["mode_shape"]:
            rows.append({"run": tag, "mode": cls, "frequency_hz": mode["frequency_hz"],
                         "damping_ratio": mode["damping_ratio"], **entry})
    return rows


def main():
    parser = base_parser("Mode shapes and damping with/without the generalized stabilizer")
    parser.add_argument("--gain", type=float, default=25.0)
    parser.add_argument("--beta1", type=float, default=1.0)
    parser.add_argument("--beta2", type=float, default=0.0)
    args = parser.parse_args()
    out = prepare(args, "mode_shapes")
    checks = Checks("mode_shapes", out)

    case = bundled_case()
    bare = modal_point(case, 1.0, 1.0, args.gain, units=[])
    tuned = modal_point(case, args.beta1, args.beta2, args.gain)

    bare_ia = find_mode(bare, "inter_area")
    tuned_ia = find_mode(tuned, "inter_area")
    bare_fr = find_mode(bare, "frequency_regulation")

    if bare_ia is None or tuned_ia is None:
        checks.check("inter-area mode found", False, "missing from classification")
    else:
        checks.check("inter-area mode weakly damped without stabilizers",
                     bare_ia.damping_ratio < UNDAMPED_RATIO_LIMIT,
                     f"zeta={bare_ia.damping_ratio:.4f} at {bare_ia.frequency:.3f} Hz")
        checks.check(f"beta1={args.beta1}, beta2={args.beta2} adds inter-area damping",
                     tuned_ia.damping_ratio > bare_ia.damping_ratio,
                     f"zeta {bare_ia.damping_ratio:.4f} -> {tuned_ia.damping_ratio:.4f}")
    if bare_fr is None:
        checks.check("frequency-regulation mode found", False, "missing from classification")
    else:
        shape = bare_fr.mode_shape[np.abs(bare_fr.mode_shape) >= SHAPE_SIGNIFICANCE]
        phases = np.degrees(np.angle(shape))
        spread = phase_spread(bare_fr.mode_shape)
        checks.check("frequency-regulation mode has all speeds in phase",
                     spread <= IN_PHASE_DEG,
                     f"phases {np.round(phases, 1).tolist()} deg, spread {spread:.1f} deg")

    reports = {"no_pss": mode_shapes(bare), "tuned": mode_shapes(tuned)}
    write_json(out / "mode_shapes.json", {
        "gain_k": args.gain, "beta1": args.beta1, "beta2": args.beta2, "reports": reports,
        "modes": {"no_pss": [m.to_dict() for m in bare if m.eigenvalue.imag >= 0],
                  "tuned": [m.to_dict() for m in tuned if m.eigenvalue.imag >= 0]},
    })
    write_csv(out / "mode_shapes.csv",
              pd.DataFrame(shape_rows("no_pss", reports["no_pss"]) + shape_rows("tuned", reports["tuned"])))
    return checks.finish()


if __name__ == "__main__":
    raise SystemExit(main())
