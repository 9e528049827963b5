"""
Mode sensitivity to the stabilizer weights on the two-area case.

beta1 sweep at beta2 = 0 moves the inter-area mode and leaves the
frequency-regulation mode alone; the beta2 sweep does the opposite.
Writes locus.csv (tracked eigenvalues per grid point) and sweeps.json.
"""

import time

import numpy as np
import pandas as pd

from _common import Checks, base_parser, bundled_case, is_monotonic, prepare, relative_variation

from backend.Common.engineUtils import write_csv, write_json
from backend.linear_analysis import beta_sweep

SWEEP_RUNTIME_LIMIT = 60.0
INTER_AREA_BAND = (0.61, 0.91)
FREQUENCY_REGULATION_MAX_HZ = 0.1
VARIATION_LIMIT = 0.05


def track_values(sweep, label):
    track = sweep.track_of(label)
    if track is None:
        return None
    return track["values"]


def locus_rows(sweep):
    rows = []
    for name, track in sweep.tracks.items():
        for value, eig in zip(sweep.grid, track["values"]):
            rows.append({"param": sweep.param, "value": value, "track": name, "label": track["label"],
                         "real": np.nan if eig is None else eig.real,
                         "imag": np.nan if eig is None else eig.imag,
                         "freq_hz": np.nan if eig is None else abs(eig.imag) / (2 * np.pi)})
    return rows


def check_sweep(checks, sweep, moving, steady):
    moving_values = track_values(sweep, moving)
    steady_values = track_values(sweep, steady)
    for label, values in ((moving, moving_values), (steady, steady_values)):
        if values is None or any(v is None for v in values):
            checks.check(f"{sweep.param}: {label} tracked over the whole grid", False,
                         "track missing or ambiguous")
            return
    moving_real = [v.real for v in moving_values]
    steady_real = [v.real for v in steady_values]
    checks.check(f"{sweep.param}: {moving} real part decreases monotonically",
                 is_monotonic(moving_real), f"{moving_real[0]:.4f} -> {moving_real[-1]:.4f}")
    variation = relative_variation(steady_real)
    checks.check(f"{sweep.param}: {steady} real part varies < {VARIATION_LIMIT:.0%}",
                 variation < VARIATION_LIMIT, f"{variation:.3%}")


def main():
    parser = base_parser("beta1/beta2 eigenvalue sweeps on the two-area case")
    parser.add_argument("--gain", type=float, default=25.0)
    parser.add_argument("--points", type=int, default=11)
    args = parser.parse_args()
    out = prepare(args, "beta_sweep_locus")
    checks = Checks("beta_sweep_locus", out)

    case = bundled_case()
    grid = list(np.linspace(0.0, 1.0, args.points))
    started = time.perf_counter()
    sweep1 = beta_sweep(case, "beta1", grid, fixed_other=0.0, gain_k=args.gain)
    sweep2 = beta_sweep(case, "beta2", grid, fixed_other=0.0, gain_k=args.gain)
    elapsed = time.perf_counter() - started

    print(f"Sweeps over {args.points} points at K={args.gain}")
    check_sweep(checks, sweep1, "inter_area", "frequency_regulation")
    check_sweep(checks, sweep2, "frequency_regulation", "inter_area")

    inter_area = track_values(sweep1, "inter_area")
    if inter_area and inter_area[0] is not None:
        f_ia = abs(inter_area[0].imag) / (2 * np.pi)
        lo, hi = INTER_AREA_BAND
        checks.check("inter-area frequency inside 0.76 +- 0.15 Hz", lo <= f_ia <= hi, f"{f_ia:.3f} Hz")
    freq_reg = track_values(sweep2, "frequency_regulation")
    if freq_reg and freq_reg[0] is not None:
        f_fr = abs(freq_reg[0].imag) / (2 * np.pi)
        checks.check(f"frequency-regulation mode below {FREQUENCY_REGULATION_MAX_HZ} Hz",
                     f_fr < FREQUENCY_REGULATION_MAX_HZ, f"{f_fr:.3f} Hz")
    checks.runtime("both sweeps", elapsed, SWEEP_RUNTIME_LIMIT, args.check_runtime)

    write_csv(out / "locus.csv", pd.DataFrame(locus_rows(sweep1) + locus_rows(sweep2)))
    write_json(out / "sweeps.json", {"beta1": sweep1.to_dict(), "beta2": sweep2.to_dict()})
    return checks.finish()


if __name__ == "__main__":
    raise SystemExit(main())
