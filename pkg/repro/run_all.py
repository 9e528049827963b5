"""
Run every repro script in sequence and print a pass/fail table.

    python repro/run_all.py --out results/repro
    python repro/run_all.py --only gamma_table coi_estimator
"""

import argparse
import subprocess
import sys
import time
from pathlib import Path

REPRO_DIR = Path(__file__).resolve().parent

SCRIPTS = [
    "gamma_table",
    "generalization_identity",
    "mode_shapes",
    "beta_sweep_locus",
    "bode_compensation",
    "trip_beta2",
    "trip_beta1",
    "delay_robustness",
    "risky_ratio",
    "coi_estimator",
]


def main():
    parser = argparse.ArgumentParser(description="Run all repro scripts")
    parser.add_argument("--out", type=str, default=str(REPRO_DIR / "results"))
    parser.add_argument("--only", nargs="+", default=None, help=f"Subset of: {', '.join(SCRIPTS)}")
    parser.add_argument("--check-runtime", action="store_true")
    parser.add_argument("--log-level", type=str, default="WARNING")
    args = parser.parse_args()

    selected = args.only or SCRIPTS
    unknown = [s for s in selected if s not in SCRIPTS]
    if unknown:
        parser.error(f"Unknown script(s): {unknown}. Available: {SCRIPTS}")

    results = []
    for name in selected:
        print(f"\n{'=' * 80}")
        print(f"RUNNING {name}")
        print(f"{'=' * 80}")
        command = [sys.executable, str(REPRO_DIR / f"{name}.py"), "--out", args.out, "--log-level", args.log_level]
        if args.check_runtime:
            command.append("--check-runtime")
        started = time.perf_counter()
        code = subprocess.run(command, cwd=str(REPRO_DIR.parent)).returncode
        results.append((name, code, time.perf_counter() - started))

    print(f"\n{'=' * 80}")
    print(f"{'script':<28}{'result':<10}{'seconds':>10}")
    for name, code, elapsed in results:
        print(f"{name:<28}{'PASS' if code == 0 else f'FAIL({code})':<10}{elapsed:>10.1f}")
    failed = [name for name, code, _ in results if code != 0]
    print(f"{'=' * 80}")
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
