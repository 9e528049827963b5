"""
Open stabilizer loop of one unit: the uncompensated plant (washout only,
beta1 = beta2 = 1), the compensated loop for a chosen tuning, and the
compensation between them. The loop is opened at unity gain, so with equal
weights the compensation is exactly the lead-lag stages, and the phase at the inter-area peak
barely moves as beta1 changes.
"""

import numpy as np
import pandas as pd

from _common import Checks, base_parser, bundled_case, prepare

from backend.Common.engineUtils import response_frame, write_csv, write_json
from backend.linear_analysis import (build_open_loop_system, compensation, linearize, log_frequency_grid,
                                     open_loop_response)
from backend.Models.generalized_pss import PssConfig

GAIN_TOL_DB = 0.01
PHASE_TOL_DEG = 0.1
CHECK_BAND_HZ = (0.1, 3.0)
INTER_AREA_PEAK_BAND = (0.4, 1.0)
PEAK_PHASE_LIMIT_DEG = 10.0


def peak_phase(points, band):
    """Frequency and phase of the largest gain inside a band."""
    inside = [p for p in points if band[0] <= p.freq_hz <= band[1]]
    peak = max(inside, key=lambda p: p.gain_db)
    return peak.freq_hz, peak.phase_deg


def leadlag_response(cfg: PssConfig, omega):
    s = 1j * omega
    value = 1.0 + 0j
    for t_num, t_den in cfg.leadlag_stages:
        value = value * (1 + s * t_num) / (1 + s * t_den)
    return value


def loop(case, unit, grid, beta1=1.0, beta2=1.0, template=None, uncompensated=False):
    system = build_open_loop_system(case, unit, beta1, beta2, template=template, uncompensated=uncompensated)
    return open_loop_response(linearize(system, studied_unit=unit), grid)


def main():
    parser = base_parser("Uncompensated and compensated stabilizer loop of one unit")
    parser.add_argument("--unit", type=int, default=1)
    parser.add_argument("--beta1", type=float, default=1.0)
    parser.add_argument("--beta2", type=float, default=0.5)
    parser.add_argument("--gain", type=float, default=25.0)
    parser.add_argument("--points", type=int, default=200)
    parser.add_argument("--peak-beta1", type=float, nargs="+", default=[0.5, 0.75, 1.0])
    args = parser.parse_args()
    out = prepare(args, "bode_compensation")
    checks = Checks("bode_compensation", out)

    case = bundled_case()
    grid = log_frequency_grid(0.01, 10.0, args.points)
    template = PssConfig(gain_k=args.gain)

    plain = loop(case, args.unit, grid, uncompensated=True)
    standard = loop(case, args.unit, grid, template=template)
    tuned = loop(case, args.unit, grid, args.beta1, args.beta2, template=template)

    lo, hi = CHECK_BAND_HZ
    gain_err, phase_err = 0.0, 0.0
    for entry in compensation(standard, plain):
        if lo <= entry["freq_hz"] <= hi:
            expected = leadlag_response(template, 2 * np.pi * entry["freq_hz"])
            gain_err = max(gain_err, abs(entry["gain_db"] - 20 * np.log10(abs(expected))))
            phase_err = max(phase_err, abs(entry["phase_deg"] - np.degrees(np.angle(expected))))
    checks.check("equal-weight compensation equals the lead-lag stages",
                 gain_err < GAIN_TOL_DB and phase_err < PHASE_TOL_DEG,
                 f"max error {gain_err:.2e} dB / {phase_err:.2e} deg")
    checks.check("uncompensated loop has no skipped frequency points", len(plain) == len(grid))

    peaks = []
    for b1 in args.peak_beta1:
        points = loop(case, args.unit, grid, b1, args.beta2, template=template)
        peaks.append((b1,) + peak_phase(points, INTER_AREA_PEAK_BAND))
    drift = max(abs((phase - peaks[0][2] + 180.0) % 360.0 - 180.0) for _, _, phase in peaks)
    checks.check(f"phase at the inter-area peak moves < {PEAK_PHASE_LIMIT_DEG} deg across beta1",
                 drift < PEAK_PHASE_LIMIT_DEG,
                 ", ".join(f"beta1={b1}: {f:.3f} Hz / {ph:.1f} deg" for b1, f, ph in peaks))

    write_csv(out / "uncompensated.csv", response_frame(plain))
    write_csv(out / "compensated_standard.csv", response_frame(standard))
    write_csv(out / "compensated_tuned.csv", response_frame(tuned))
    write_csv(out / "compensation.csv", pd.DataFrame(compensation(tuned, plain)))
    write_json(out / "settings.json", {"unit": args.unit, "beta1": args.beta1, "beta2": args.beta2,
                                       "gain_k": args.gain, "points": args.points})
    return checks.finish()


if __name__ == "__main__":
    raise SystemExit(main())
