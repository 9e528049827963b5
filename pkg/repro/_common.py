"""Shared plumbing for the repro scripts: paths, argument parsing, the bundled case, pass/fail bookkeeping."""

import argparse
import os
import sys
import time
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from backend.Common import config
from backend.Common.engineUtils import BUNDLED_CASE, CASES_DIR, load_case, load_scenario, write_json
from backend.Models.generalized_pss import PssConfig

DEFAULT_RESULTS = PROJECT_ROOT / "repro" / "results"
TRIP_SCENARIO = os.path.join(CASES_DIR, "trip_g3.json")
DELAYED_TRIP_SCENARIO = os.path.join(CASES_DIR, "trip_g3_delayed.json")


def base_parser(description):
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--out", type=str, default=str(DEFAULT_RESULTS), help="Results root folder")
    parser.add_argument("--log-level", type=str, default="WARNING")
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--check-runtime", action="store_true",
                        help="Fail when a run exceeds its wall-clock envelope")
    return parser


def prepare(args, name):
    """Configure logging/progress for a script and return its output folder."""
    config.setup_logging(args.log_level.upper())
    config.SHOW_PROGRESS = False
    if args.workers is not None:
        config.set_max_workers(args.workers)
    out = Path(args.out) / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def bundled_case():
    return load_case(BUNDLED_CASE)


def trip_scenario(path=TRIP_SCENARIO, **update):
    scenario = load_scenario(path)
    return scenario.model_copy(update=update) if update else scenario


def uniform_pss(case, beta1, beta2, gain_k, template: PssConfig = None):
    template = template or PssConfig()
    cfg = template.model_copy(update={"beta1": beta1, "beta2": beta2, "gain_k": gain_k})
    return {g.id: cfg for g in case.online_generators()}


def is_monotonic(values, decreasing=True, strict=True):
    diffs = [b - a for a, b in zip(values, values[1:])]
    if decreasing:
        return all(d < 0 for d in diffs) if strict else all(d <= 0 for d in diffs)
    return all(d > 0 for d in diffs) if strict else all(d >= 0 for d in diffs)


def relative_variation(values):
    values = [abs(v) for v in values]
    return (max(values) - min(values)) / max(values) if max(values) > 0 else 0.0


class Checks:
    """Collects named pass/fail checks, prints them and writes checks.json."""

    def __init__(self, name, out):
        self.name = name
        self.out = Path(out)
        self.items = []
        self.started = time.perf_counter()

    def check(self, label, passed, detail=""):
        self.items.append({"check": label, "passed": bool(passed), "detail": str(detail)})
        print(f"  [{'PASS' if passed else 'FAIL'}] {label} {detail}")
        return bool(passed)

    def runtime(self, label, seconds, limit, enforce):
        if enforce:
            return self.check(label, seconds < limit, f"{seconds:.2f}s (limit {limit}s)")
        print(f"  [INFO] {label} {seconds:.2f}s (limit {limit}s, not enforced)")
        return True

    @property
    def passed(self):
        return all(item["passed"] for item in self.items)

    def finish(self):
        elapsed = time.perf_counter() - self.started
        write_json(self.out / "checks.json", {"script": self.name, "passed": self.passed,
                                               "elapsed_s": elapsed, "checks": self.items})
        print(f"\n{'=' * 80}")
        print(f"{self.name}: {'PASSED' if self.passed else 'FAILED'} "
              f"({sum(i['passed'] for i in self.items)}/{len(self.items)} checks, {elapsed:.1f}s)")
        print(f"Results in: {self.out}")
        print(f"{'=' * 80}")
        return 0 if self.passed else 1
